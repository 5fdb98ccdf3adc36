//! Per-frame fusion of the audio and text embeddings.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Outer product of the constant-augmented embeddings.
    Tensor,
    Concat,
    AudioOnly,
    TextOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::AudioOnly,
        FusionMode::TextOnly,
        FusionMode::Concat,
        FusionMode::Tensor,
    ];

    /// Decoder input width for embeddings of size `audio` and `text`.
    pub fn width(self, audio: usize, text: usize) -> usize {
        match self {
            FusionMode::Tensor => (audio + 1) * (text + 1),
            FusionMode::Concat => audio + text,
            FusionMode::AudioOnly => audio + 1,
            FusionMode::TextOnly => text + 1,
        }
    }

    pub fn uses_audio(self) -> bool {
        self != FusionMode::TextOnly
    }

    pub fn uses_text(self) -> bool {
        self != FusionMode::AudioOnly
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            FusionMode::AudioOnly => "Audio Only",
            FusionMode::TextOnly => "Text Only",
            FusionMode::Concat => "Audio+Text (C)",
            FusionMode::Tensor => "Audio+Text (TF)",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Tensor => "tensor",
            FusionMode::Concat => "concat",
            FusionMode::AudioOnly => "audio_only",
            FusionMode::TextOnly => "text_only",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tensor" | "tf" => Ok(FusionMode::Tensor),
            "concat" | "c" => Ok(FusionMode::Concat),
            "audio" | "audio_only" => Ok(FusionMode::AudioOnly),
            "text" | "text_only" => Ok(FusionMode::TextOnly),
            other => Err(Error::Config(format!(
                "unknown fusion mode {other:?} (expected tensor, concat, audio or text)"
            ))),
        }
    }
}

/// Flattened `[h_a; 1] (x) [h_l; 1]`, row-major with audio entries indexing rows.
pub fn tensor_fuse(h_a: ArrayView1<f64>, h_l: ArrayView1<f64>) -> Array1<f64> {
    let (da, dl) = (h_a.len(), h_l.len());
    let mut out = Array1::<f64>::zeros((da + 1) * (dl + 1));
    for i in 0..=da {
        let a = if i < da { h_a[i] } else { 1.0 };
        for j in 0..=dl {
            let l = if j < dl { h_l[j] } else { 1.0 };
            out[i * (dl + 1) + j] = a * l;
        }
    }
    out
}

pub fn concat_fuse(h_a: ArrayView1<f64>, h_l: ArrayView1<f64>) -> Array1<f64> {
    h_a.iter().chain(h_l.iter()).copied().collect()
}

fn augment(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(&x);
    out
}

/// Fuses whole sequences. Absent modalities are passed as `None`.
pub(crate) fn fuse_sequences(
    mode: FusionMode,
    h_a: Option<&Array2<f64>>,
    h_l: Option<&Array2<f64>>,
) -> Array2<f64> {
    match mode {
        FusionMode::Tensor => {
            let (a, l) = (h_a.expect("audio"), h_l.expect("text"));
            let (da, dl) = (a.ncols(), l.ncols());
            let mut out = Array2::<f64>::zeros((a.nrows(), (da + 1) * (dl + 1)));
            for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                row.assign(&tensor_fuse(a.row(t), l.row(t)));
            }
            out
        }
        FusionMode::Concat => {
            ndarray::concatenate(Axis(1), &[h_a.expect("audio").view(), h_l.expect("text").view()])
                .expect("matching frames")
        }
        FusionMode::AudioOnly => augment(h_a.expect("audio").view()),
        FusionMode::TextOnly => augment(h_l.expect("text").view()),
    }
}

/// Splits the gradient on the fused sequence back onto each embedding.
pub(crate) fn fuse_backward(
    mode: FusionMode,
    h_a: Option<&Array2<f64>>,
    h_l: Option<&Array2<f64>>,
    d_fused: &Array2<f64>,
) -> (Option<Array2<f64>>, Option<Array2<f64>>) {
    match mode {
        FusionMode::Tensor => {
            let (a, l) = (h_a.expect("audio"), h_l.expect("text"));
            let (frames, da, dl) = (a.nrows(), a.ncols(), l.ncols());
            let mut ga = Array2::<f64>::zeros((frames, da));
            let mut gl = Array2::<f64>::zeros((frames, dl));
            for t in 0..frames {
                let row = d_fused.row(t).to_owned();
                let g = row
                    .view()
                    .into_shape_with_order((da + 1, dl + 1))
                    .expect("fused width");
                let a_aug = |i: usize| if i < da { a[[t, i]] } else { 1.0 };
                let l_aug = |j: usize| if j < dl { l[[t, j]] } else { 1.0 };
                for i in 0..da {
                    ga[[t, i]] = (0..=dl).map(|j| g[[i, j]] * l_aug(j)).sum();
                }
                for j in 0..dl {
                    gl[[t, j]] = (0..=da).map(|i| g[[i, j]] * a_aug(i)).sum();
                }
            }
            (Some(ga), Some(gl))
        }
        FusionMode::Concat => {
            let da = h_a.expect("audio").ncols();
            (
                Some(d_fused.slice(ndarray::s![.., ..da]).to_owned()),
                Some(d_fused.slice(ndarray::s![.., da..]).to_owned()),
            )
        }
        FusionMode::AudioOnly => {
            let da = h_a.expect("audio").ncols();
            (Some(d_fused.slice(ndarray::s![.., ..da]).to_owned()), None)
        }
        FusionMode::TextOnly => {
            let dl = h_l.expect("text").ncols();
            (None, Some(d_fused.slice(ndarray::s![.., ..dl]).to_owned()))
        }
    }
}
