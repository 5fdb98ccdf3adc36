//! Mesh types, the MSQ1 sequence format, vertex offsets and region masks.
//!
//! Coordinates are unit-less model units. A [`MeshSequence`] holds `T x V x 3`
//! float32 positions laid out frame-major, then vertex-major, then x/y/z.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::binio::{put_f32s, ByteReader};
use crate::error::{Error, Result};

pub const MSQ_MAGIC: &[u8; 4] = b"MSQ1";
pub const MSQ_VERSION: u16 = 1;

/// Neutral face geometry to which predicted offsets are added.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh {
    vertices: Array2<f32>,
}

impl TemplateMesh {
    pub fn new(vertices: Array2<f32>) -> Result<Self> {
        if vertices.ncols() != 3 {
            return Err(Error::Dimension(format!(
                "template vertices must be V x 3, got {} columns",
                vertices.ncols()
            )));
        }
        if vertices.nrows() == 0 {
            return Err(Error::Input("template needs at least one vertex".into()));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("template has non-finite coordinates".into()));
        }
        Ok(Self { vertices })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn vertices(&self) -> ArrayView2<'_, f32> {
        self.vertices.view()
    }

    /// The template repeated for `frames` frames.
    pub fn repeat(&self, frames: usize, frame_rate: u16) -> Result<MeshSequence> {
        let v = self.vertex_count();
        let mut out = Array3::<f32>::zeros((frames, v, 3));
        for mut frame in out.axis_iter_mut(Axis(0)) {
            frame.assign(&self.vertices);
        }
        MeshSequence::new(out, frame_rate)
    }

    /// Stored on disk as a single-frame MSQ1 file.
    pub fn to_sequence(&self) -> MeshSequence {
        let v = self.vertex_count();
        let data = self
            .vertices
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((1, v, 3))
            .expect("template reshape");
        MeshSequence {
            frame_rate: 0,
            vertices: data,
        }
    }

    pub fn from_sequence(seq: &MeshSequence) -> Result<Self> {
        if seq.frame_count() != 1 {
            return Err(Error::Input(format!(
                "template file must hold exactly one frame, found {}",
                seq.frame_count()
            )));
        }
        Self::new(seq.vertices.index_axis(Axis(0), 0).to_owned())
    }
}

/// `T` frames of `V` vertex positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSequence {
    frame_rate: u16,
    vertices: Array3<f32>,
}

impl MeshSequence {
    pub fn new(vertices: Array3<f32>, frame_rate: u16) -> Result<Self> {
        let (t, v, c) = vertices.dim();
        if c != 3 {
            return Err(Error::Dimension(format!(
                "mesh sequence must be T x V x 3, got last axis {c}"
            )));
        }
        if t == 0 {
            return Err(Error::Input("mesh sequence needs at least one frame".into()));
        }
        if v == 0 {
            return Err(Error::Input("mesh sequence needs at least one vertex".into()));
        }
        if vertices.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("mesh sequence has non-finite coordinates".into()));
        }
        Ok(Self {
            frame_rate,
            vertices,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.vertices.dim().0
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.dim().1
    }

    pub fn frame_rate(&self) -> u16 {
        self.frame_rate
    }

    pub fn vertices(&self) -> &Array3<f32> {
        &self.vertices
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<()> {
        let (t, v, _) = self.vertices.dim();
        let mut buf = Vec::with_capacity(16 + t * v * 12);
        buf.extend_from_slice(MSQ_MAGIC);
        buf.extend_from_slice(&MSQ_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.frame_rate.to_le_bytes());
        buf.extend_from_slice(&dim_u32(t, "T")?.to_le_bytes());
        buf.extend_from_slice(&dim_u32(v, "V")?.to_le_bytes());
        put_f32s(&mut buf, self.vertices.iter().copied());
        sink.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut source: R) -> Result<Self> {
        let mut buf = Vec::new();
        source.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MSQ_MAGIC)?;
        let at = r.position();
        let version = r.u16("version")?;
        if version != MSQ_VERSION {
            return Err(Error::format(at, format!("unsupported MSQ version {version}")));
        }
        let frame_rate = r.u16("frame rate")?;
        let at = r.position();
        let t = r.u32("frame count")? as usize;
        let v = r.u32("vertex count")? as usize;
        if t == 0 || v == 0 {
            return Err(Error::format(at, format!("empty dimensions T={t} V={v}")));
        }
        let count = t
            .checked_mul(v)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Error::format(at, "dimensions overflow"))?;
        let payload = r.finite_f32s(count, "vertex payload")?;
        r.finish("vertex payload")?;
        let vertices = Array3::from_shape_vec((t, v, 3), payload).expect("shape checked above");
        Ok(Self {
            frame_rate,
            vertices,
        })
    }
}

fn dim_u32(n: usize, name: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Dimension(format!("{name}={n} exceeds u32")))
}

pub fn write_mesh_sequence<W: Write>(seq: &MeshSequence, sink: W) -> Result<()> {
    seq.write_to(sink)
}

pub fn read_mesh_sequence<R: Read>(source: R) -> Result<MeshSequence> {
    MeshSequence::read_from(source)
}

/// Per-frame displacement of every vertex from the template.
///
/// Offsets are held in f64 so that `from_offsets(to_offsets(seq))` restores
/// the f32 positions exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetSequence {
    offsets: Array3<f64>,
}

impl OffsetSequence {
    pub fn new(offsets: Array3<f64>) -> Result<Self> {
        let (t, v, c) = offsets.dim();
        if c != 3 || t == 0 || v == 0 {
            return Err(Error::Dimension(format!(
                "offsets must be T x V x 3 with T, V >= 1, got {t} x {v} x {c}"
            )));
        }
        if offsets.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("offsets contain non-finite values".into()));
        }
        Ok(Self { offsets })
    }

    /// Builds offsets from a flat `T x 3V` matrix, the layout the decoder emits.
    pub fn from_flat(flat: Array2<f64>) -> Result<Self> {
        let (t, w) = flat.dim();
        if w % 3 != 0 {
            return Err(Error::Dimension(format!("offset width {w} is not a multiple of 3")));
        }
        let offsets = flat
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t, w / 3, 3))
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(offsets)
    }

    pub fn frame_count(&self) -> usize {
        self.offsets.dim().0
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.dim().1
    }

    pub fn offsets(&self) -> &Array3<f64> {
        &self.offsets
    }

    /// `T x V` matrix of per-vertex displacement norms.
    pub fn magnitudes(&self) -> Array2<f64> {
        self.offsets
            .map_axis(Axis(2), |d| d.iter().map(|x| x * x).sum::<f64>().sqrt())
    }
}

pub fn to_offsets(seq: &MeshSequence, template: &TemplateMesh) -> Result<OffsetSequence> {
    check_vertex_count(seq.vertex_count(), template.vertex_count())?;
    let mut offsets = seq.vertices.mapv(f64::from);
    for mut frame in offsets.axis_iter_mut(Axis(0)) {
        frame.zip_mut_with(&template.vertices, |o, &t| *o -= f64::from(t));
    }
    OffsetSequence::new(offsets)
}

pub fn from_offsets(
    offsets: &OffsetSequence,
    template: &TemplateMesh,
    frame_rate: u16,
) -> Result<MeshSequence> {
    check_vertex_count(offsets.vertex_count(), template.vertex_count())?;
    let mut out = Array3::<f32>::zeros(offsets.offsets.dim());
    for (mut dst, src) in out
        .axis_iter_mut(Axis(0))
        .zip(offsets.offsets.axis_iter(Axis(0)))
    {
        ndarray::Zip::from(&mut dst)
            .and(&src)
            .and(&template.vertices)
            .for_each(|d, &o, &t| *d = (o + f64::from(t)) as f32);
    }
    MeshSequence::new(out, frame_rate)
}

fn check_vertex_count(seq: usize, template: usize) -> Result<()> {
    if seq != template {
        return Err(Error::Dimension(format!(
            "sequence has {seq} vertices, template has {template}"
        )));
    }
    Ok(())
}

/// Disjoint upper/lower face vertex sets used for region-split metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    upper: Vec<usize>,
    lower: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionMaskFile {
    upper: Vec<usize>,
    lower: Vec<usize>,
}

impl RegionMask {
    pub fn new(upper: Vec<usize>, lower: Vec<usize>, vertex_count: usize) -> Result<Self> {
        let up: BTreeSet<usize> = upper.iter().copied().collect();
        let lo: BTreeSet<usize> = lower.iter().copied().collect();
        if up.len() != upper.len() || lo.len() != lower.len() {
            return Err(Error::Config("region mask lists contain duplicates".into()));
        }
        if up.is_empty() || lo.is_empty() {
            return Err(Error::Config("region mask regions must be non-empty".into()));
        }
        if let Some(v) = up.intersection(&lo).next() {
            return Err(Error::Config(format!(
                "vertex {v} appears in both upper and lower regions"
            )));
        }
        if let Some(&v) = up.iter().chain(lo.iter()).find(|&&v| v >= vertex_count) {
            return Err(Error::Config(format!(
                "vertex index {v} out of range for V={vertex_count}"
            )));
        }
        Ok(Self { upper, lower })
    }

    pub fn upper(&self) -> &[usize] {
        &self.upper
    }

    pub fn lower(&self) -> &[usize] {
        &self.lower
    }

    pub fn from_json<R: Read>(source: R, vertex_count: usize) -> Result<Self> {
        let file: RegionMaskFile = serde_json::from_reader(source)?;
        Self::new(file.upper, file.lower, vertex_count)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RegionMaskFile {
            upper: self.upper.clone(),
            lower: self.lower.clone(),
        })
        .expect("mask serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn seq_from(values: Vec<f32>, t: usize, v: usize) -> MeshSequence {
        MeshSequence::new(Array3::from_shape_vec((t, v, 3), values).unwrap(), 25).unwrap()
    }

    #[test]
    fn single_vertex_layout() {
        let seq = seq_from(vec![0.0; 3], 1, 1);
        let bytes = seq.to_bytes();
        assert_eq!(bytes.len(), 8 + 8 + 12);
        assert_eq!(&bytes[..4], b"MSQ1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 25);
        assert_eq!(MeshSequence::from_bytes(&bytes).unwrap(), seq);
    }

    #[test]
    fn zero_frames_rejected() {
        assert!(MeshSequence::new(Array3::zeros((0, 2, 3)), 25).is_err());
    }

    #[test]
    fn truncated_payload() {
        let seq = seq_from((0..12).map(|x| x as f32).collect(), 2, 2);
        let bytes = seq.to_bytes();
        let err = MeshSequence::from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 16, .. }), "{err}");
    }

    #[test]
    fn nan_payload_names_offset() {
        let seq = seq_from(vec![1.0; 6], 1, 2);
        let mut bytes = seq.to_bytes();
        bytes[16 + 8..16 + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        match MeshSequence::from_bytes(&bytes).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 24),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = seq_from(vec![0.0; 3], 1, 1).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            MeshSequence::from_bytes(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn identity_offsets() {
        let template = TemplateMesh::new(array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.25]]).unwrap();
        let seq = template.repeat(4, 25).unwrap();
        let off = to_offsets(&seq, &template).unwrap();
        assert!(off.offsets().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_template_offsets_equal_positions() {
        let template = TemplateMesh::new(Array2::zeros((2, 3))).unwrap();
        let seq = seq_from((0..12).map(|x| x as f32 * 0.5 - 2.0).collect(), 2, 2);
        let off = to_offsets(&seq, &template).unwrap();
        for (o, s) in off.offsets().iter().zip(seq.vertices().iter()) {
            assert_eq!(*o, f64::from(*s));
        }
    }

    #[test]
    fn offsets_vertex_mismatch() {
        let template = TemplateMesh::new(Array2::zeros((3, 3))).unwrap();
        let seq = seq_from(vec![0.0; 6], 1, 2);
        assert!(matches!(to_offsets(&seq, &template), Err(Error::Dimension(_))));
    }

    #[test]
    fn region_mask_validation() {
        assert!(RegionMask::new(vec![0, 1], vec![2, 3], 4).is_ok());
        assert!(RegionMask::new(vec![0, 1], vec![1, 2], 4).is_err());
        assert!(RegionMask::new(vec![], vec![1], 4).is_err());
        assert!(RegionMask::new(vec![0], vec![4], 4).is_err());
        let mask = RegionMask::new(vec![3, 0], vec![1], 4).unwrap();
        let back = RegionMask::from_json(mask.to_json().as_bytes(), 4).unwrap();
        assert_eq!(back, mask);
        assert!(RegionMask::from_json(&br#"{"upper":[0],"lower":[1],"extra":[]}"#[..], 4).is_err());
    }

    proptest! {
        #[test]
        fn msq_round_trip_is_bit_exact(
            t in 1usize..5, v in 1usize..6, fr in 0u16..100,
            seed in proptest::collection::vec(-1e3f32..1e3, 90)
        ) {
            let n = t * v * 3;
            let values: Vec<f32> = seed.iter().cycle().take(n).copied().collect();
            let seq = MeshSequence::new(Array3::from_shape_vec((t, v, 3), values).unwrap(), fr).unwrap();
            let bytes = seq.to_bytes();
            let back = MeshSequence::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, seq);
        }

        #[test]
        fn offsets_invert_exactly(
            values in proptest::collection::vec(-100f32..100.0, 24),
            tpl in proptest::collection::vec(-100f32..100.0, 6),
        ) {
            let template = TemplateMesh::new(Array2::from_shape_vec((2, 3), tpl).unwrap()).unwrap();
            let seq = seq_from(values, 4, 2);
            let off = to_offsets(&seq, &template).unwrap();
            let back = from_offsets(&off, &template, 25).unwrap();
            prop_assert_eq!(back, seq);
        }
    }
}
