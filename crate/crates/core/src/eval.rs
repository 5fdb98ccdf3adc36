//! Region errors, modality/vertex correlation maps, embedding export and the
//! modality/fusion ablation.
//!
//! Region errors are a vertex-space proxy for action-unit error: the mean
//! Euclidean distance between predicted and true vertices over a region.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::mesh::{MeshSequence, OffsetSequence, RegionMask};
use crate::model::{one_hot, FusionMode, ModelParams};
use crate::text::WordAlignment;
use crate::train::{train, TrainConfig};

/// Per-utterance region errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceError {
    pub id: String,
    pub frames: usize,
    pub upper_mae: f64,
    pub lower_mae: f64,
}

/// Region MAEs pooled over frames of all listed utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionErrorReport {
    pub upper_mae: f64,
    pub lower_mae: f64,
    pub utterances: Vec<UtteranceError>,
}

impl RegionErrorReport {
    /// Pools per-utterance errors weighted by frame count, sorted by id.
    pub fn pooled(mut utterances: Vec<UtteranceError>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Input("no utterances to pool".into()));
        }
        utterances.sort_by(|a, b| a.id.cmp(&b.id));
        let frames: usize = utterances.iter().map(|u| u.frames).sum();
        let weighted = |f: fn(&UtteranceError) -> f64| {
            utterances.iter().map(|u| f(u) * u.frames as f64).sum::<f64>() / frames as f64
        };
        Ok(Self {
            upper_mae: weighted(|u| u.upper_mae),
            lower_mae: weighted(|u| u.lower_mae),
            utterances,
        })
    }

    /// `utterance,frames,upper_mae,lower_mae` rows followed by an `ALL` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# metric=mean euclidean vertex distance (model units)\n");
        s.push_str("utterance,frames,upper_mae,lower_mae\n");
        for u in &self.utterances {
            let _ = writeln!(s, "{},{},{},{}", u.id, u.frames, u.upper_mae, u.lower_mae);
        }
        let frames: usize = self.utterances.iter().map(|u| u.frames).sum();
        let _ = writeln!(s, "ALL,{frames},{},{}", self.upper_mae, self.lower_mae);
        s
    }
}

fn region_errors(pred: ArrayView3<f64>, truth: ArrayView3<f64>, mask: &RegionMask) -> Result<(f64, f64)> {
    if pred.dim() != truth.dim() {
        return Err(Error::Dimension(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let (frames, vertices, _) = pred.dim();
    if mask.upper().is_empty() || mask.lower().is_empty() {
        return Err(Error::Config("region mask has an empty region".into()));
    }
    if let Some(&v) = mask.upper().iter().chain(mask.lower()).find(|&&v| v >= vertices) {
        return Err(Error::Dimension(format!("mask vertex {v} out of range for {vertices} vertices")));
    }
    if frames == 0 {
        return Err(Error::Input("sequences have no frames".into()));
    }
    let mean = |region: &[usize]| {
        let mut total = 0.0;
        for t in 0..frames {
            for &v in region {
                let mut d2 = 0.0;
                for k in 0..3 {
                    let d = pred[[t, v, k]] - truth[[t, v, k]];
                    d2 += d * d;
                }
                total += d2.sqrt();
            }
        }
        total / (frames * region.len()) as f64
    };
    Ok((mean(mask.upper()), mean(mask.lower())))
}

/// Region MAEs of one predicted mesh sequence.
pub fn region_mae(pred: &MeshSequence, truth: &MeshSequence, mask: &RegionMask) -> Result<RegionErrorReport> {
    let p = pred.vertices().mapv(f64::from);
    let t = truth.vertices().mapv(f64::from);
    let (upper, lower) = region_errors(p.view(), t.view(), mask)?;
    let u = UtteranceError {
        id: String::new(),
        frames: pred.frame_count(),
        upper_mae: upper,
        lower_mae: lower,
    };
    RegionErrorReport::pooled(vec![u])
}

/// Region MAEs between flat `T x 3V` offset matrices.
pub fn region_mae_offsets(pred: &Array2<f64>, truth: &Array2<f64>, mask: &RegionMask) -> Result<(f64, f64)> {
    let shape = |a: &Array2<f64>| -> Result<Array3<f64>> { Ok(OffsetSequence::from_flat(a.clone())?.offsets().clone()) };
    region_errors(shape(pred)?.view(), shape(truth)?.view(), mask)
}

/// Predicts every sample and pools region errors against its target.
pub fn evaluate_samples(params: &ModelParams, samples: &[Sample], mask: &RegionMask) -> Result<RegionErrorReport> {
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let speaker = one_hot(s.speaker, params.config.speakers)?;
        let pred = params.predict_offsets(s.audio.view(), s.text.view(), speaker.as_slice().expect("contiguous"))?;
        let (upper_mae, lower_mae) = region_mae_offsets(&pred, &s.target, mask)?;
        rows.push(UtteranceError {
            id: s.id.clone(),
            frames: s.frame_count(),
            upper_mae,
            lower_mae,
        });
    }
    RegionErrorReport::pooled(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Modality::Audio),
            "text" => Ok(Modality::Text),
            _ => Err(Error::Config(format!("unknown modality {s:?}; expected audio or text"))),
        }
    }
}

/// How per-dimension |r| values collapse into one score per vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Max,
}

impl Reduction {
    pub fn as_str(self) -> &'static str {
        match self {
            Reduction::Mean => "mean",
            Reduction::Max => "max",
        }
    }
}

impl std::str::FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "max" => Ok(Reduction::Max),
            _ => Err(Error::Config(format!("unknown reduction {s:?}; expected mean or max"))),
        }
    }
}

/// Per-vertex |Pearson r| between a feature set and offset magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub modality: Option<Modality>,
    pub reduction: Reduction,
    /// One score in `[0, 1]` per vertex.
    pub scores: Vec<f64>,
}

impl CorrelationMap {
    pub fn region_mean(&self, region: &[usize]) -> f64 {
        region.iter().map(|&v| self.scores[v]).sum::<f64>() / region.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let modality = self.modality.map_or("unspecified", Modality::as_str);
        let mut s = format!(
            "# modality={modality} reduction={} offsets=magnitude\nvertex,score\n",
            self.reduction.as_str()
        );
        for (v, score) in self.scores.iter().enumerate() {
            let _ = writeln!(s, "{v},{score}");
        }
        s
    }
}

/// Centres a series and scales it to unit norm; constant series map to zeros.
fn standardize(series: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let x: Vec<f64> = series.collect();
    if x.iter().all(|&v| v == x[0]) {
        return vec![0.0; x.len()];
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = centred.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; x.len()];
    }
    centred.into_iter().map(|v| v / norm).collect()
}

/// For each vertex, reduces |corr(features[.., d], ||offsets[.., v]||)| over `d`.
pub fn pearson_map(
    features: ArrayView2<f64>,
    offsets: &OffsetSequence,
    reduction: Reduction,
) -> Result<CorrelationMap> {
    let (frames, dims) = features.dim();
    if frames < 3 {
        return Err(Error::Input(format!("correlation needs at least 3 frames, got {frames}")));
    }
    if dims == 0 {
        return Err(Error::Input("feature matrix has no dimensions".into()));
    }
    if offsets.frame_count() != frames {
        return Err(Error::Length {
            audio: frames,
            text: offsets.frame_count(),
        });
    }
    let magnitudes = offsets.magnitudes();
    let vertices = magnitudes.ncols();
    let mut zf = Array2::<f64>::zeros((frames, dims));
    for d in 0..dims {
        let z = standardize(features.column(d).iter().copied());
        zf.column_mut(d).iter_mut().zip(z).for_each(|(dst, v)| *dst = v);
    }
    let mut zm = Array2::<f64>::zeros((frames, vertices));
    for v in 0..vertices {
        let z = standardize(magnitudes.column(v).iter().copied());
        zm.column_mut(v).iter_mut().zip(z).for_each(|(dst, x)| *dst = x);
    }
    let r = zf.t().dot(&zm);
    let scores = (0..vertices)
        .map(|v| {
            let col = r.column(v);
            let abs = col.iter().map(|x| x.abs().min(1.0));
            match reduction {
                Reduction::Mean => abs.sum::<f64>() / dims as f64,
                Reduction::Max => abs.fold(0.0, f64::max),
            }
        })
        .collect();
    Ok(CorrelationMap {
        modality: None,
        reduction,
        scores,
    })
}

/// Encoder output for `modality` and the predicted offsets on one sample.
pub fn encoded_features(
    params: &ModelParams,
    sample: &Sample,
    modality: Modality,
) -> Result<(Array2<f64>, OffsetSequence)> {
    let speaker = one_hot(sample.speaker, params.config.speakers)?;
    let trace = params.trace(sample.audio.view(), sample.text.view(), speaker.as_slice().expect("contiguous"))?;
    let features = match modality {
        Modality::Audio => trace.audio_embedding(),
        Modality::Text => trace.text_embedding(),
    }
    .ok_or_else(|| {
        Error::Config(format!(
            "a {} model has no {} encoder",
            params.config.fusion,
            modality.as_str()
        ))
    })?
    .clone();
    Ok((features, OffsetSequence::from_flat(trace.offsets)?))
}

/// Correlation map over the frames of all samples, stacked in order.
pub fn model_correlation(
    params: &ModelParams,
    samples: &[Sample],
    modality: Modality,
    reduction: Reduction,
) -> Result<CorrelationMap> {
    let mut features = Vec::new();
    let mut offsets = Vec::new();
    for s in samples {
        let (f, o) = encoded_features(params, s, modality)?;
        features.push(f);
        offsets.push(o.offsets().clone());
    }
    if features.is_empty() {
        return Err(Error::Input("no samples to correlate".into()));
    }
    let stack2 = |a: &[Array2<f64>]| ndarray::concatenate(ndarray::Axis(0), &a.iter().map(|x| x.view()).collect::<Vec<_>>());
    let stack3 = |a: &[Array3<f64>]| ndarray::concatenate(ndarray::Axis(0), &a.iter().map(|x| x.view()).collect::<Vec<_>>());
    let f = stack2(&features).map_err(|e| Error::Dimension(e.to_string()))?;
    let o = OffsetSequence::new(stack3(&offsets).map_err(|e| Error::Dimension(e.to_string()))?)?;
    let mut map = pearson_map(f.view(), &o, reduction)?;
    map.modality = Some(modality);
    Ok(map)
}

/// Writes `frame,word,e0..e{D-1}`; pause frames have an empty word.
pub fn export_embeddings<W: Write>(
    h_l: ArrayView2<f64>,
    alignment: &WordAlignment,
    frame_rate: f64,
    destination: W,
) -> Result<()> {
    let (frames, dims) = h_l.dim();
    let words = alignment.frame_words(frames, frame_rate);
    let mut w = csv::Writer::from_writer(destination);
    let mut header = vec!["frame".to_string(), "word".to_string()];
    header.extend((0..dims).map(|d| format!("e{d}")));
    w.write_record(&header)?;
    for (t, word) in words.iter().enumerate() {
        let mut record = vec![
            t.to_string(),
            word.map(|i| alignment.entries()[i].word.clone()).unwrap_or_default(),
        ];
        record.extend(h_l.row(t).iter().map(|&v| (v as f32).to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`export_embeddings`].
pub fn import_embeddings<R: Read>(source: R) -> Result<(Vec<Option<String>>, Array2<f64>)> {
    let mut r = csv::Reader::from_reader(source);
    let dims = r.headers()?.len().checked_sub(2).ok_or_else(|| Error::Input("missing columns".into()))?;
    let mut words = Vec::new();
    let mut values = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let frame: usize = record[0]
            .parse()
            .map_err(|_| Error::Input(format!("row {row}: bad frame index {:?}", &record[0])))?;
        if frame != row {
            return Err(Error::Input(format!("row {row}: frame index {frame} out of order")));
        }
        words.push((!record[1].is_empty()).then(|| record[1].to_string()));
        for field in record.iter().skip(2) {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::Input(format!("row {row}: bad value {field:?}")))?;
            values.push(f64::from(v));
        }
    }
    let frames = words.len();
    let h = Array2::from_shape_vec((frames, dims), values).map_err(|e| Error::Dimension(e.to_string()))?;
    Ok((words, h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub variant: FusionMode,
    pub upper_mae: f64,
    pub lower_mae: f64,
    pub final_loss: f64,
    /// SHA-256 of the saved checkpoint manifest, when checkpoints are kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub variant: FusionMode,
    pub upper_mean: f64,
    pub upper_std: f64,
    pub lower_mean: f64,
    pub lower_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// Seed-major, variants in table order within each seed.
    pub rows: Vec<AblationRow>,
    pub summary: Vec<AblationSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationTable {
    pub fn from_rows(rows: Vec<AblationRow>) -> Self {
        let summary = FusionMode::ALL
            .iter()
            .filter(|m| rows.iter().any(|r| r.variant == **m))
            .map(|&variant| {
                let of = |f: fn(&AblationRow) -> f64| -> Vec<f64> {
                    rows.iter().filter(|r| r.variant == variant).map(f).collect()
                };
                let (upper_mean, upper_std) = mean_std(&of(|r| r.upper_mae));
                let (lower_mean, lower_std) = mean_std(&of(|r| r.lower_mae));
                AblationSummary {
                    variant,
                    upper_mean,
                    upper_std,
                    lower_mean,
                    lower_std,
                }
            })
            .collect();
        Self { rows, summary }
    }

    pub fn summary_for(&self, variant: FusionMode) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    /// Methods with mean ± sample standard deviation of region MAE.
    pub fn to_text(&self) -> String {
        let seeds = self.rows.len() / self.summary.len().max(1);
        let mut s = format!("Region vertex MAE over {seeds} seed(s), mean ± std\n");
        let _ = writeln!(s, "{:<18} | {:>21} | {:>21}", "Methods", "Upper Face", "Lower Face");
        let _ = writeln!(s, "{:-<18}-+-{:->21}-+-{:->21}", "", "", "");
        for r in &self.summary {
            let _ = writeln!(
                s,
                "{:<18} | {:>10.6} ± {:<8.6} | {:>10.6} ± {:<8.6}",
                r.variant.label(),
                r.upper_mean,
                r.upper_std,
                r.lower_mean,
                r.lower_std
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,method,upper_mae,lower_mae,final_loss,checkpoint_sha256\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.seed,
                r.variant.label(),
                r.upper_mae,
                r.lower_mae,
                r.final_loss,
                r.checkpoint_sha256.as_deref().unwrap_or("")
            );
        }
        s
    }
}

/// Hex SHA-256 of a checkpoint directory's manifest file.
pub fn manifest_sha256(dir: &Path) -> Result<String> {
    let bytes = std::fs::read(dir.join(crate::model::checkpoint::MANIFEST_FILE))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Trains and evaluates every fusion variant for each seed. Only the fusion
/// mode and seed change between runs; data and shuffling follow the seed.
pub fn run_ablation(
    base: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    mask: &RegionMask,
    seeds: &[u64],
) -> Result<AblationTable> {
    run_ablation_saving(base, train_set, test_set, mask, seeds, None)
}

/// As [`run_ablation`], also saving each run under `root/seed_{seed}_{variant}`.
pub fn run_ablation_saving(
    base: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    mask: &RegionMask,
    seeds: &[u64],
    root: Option<&Path>,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if test_set.is_empty() {
        return Err(Error::Input("ablation test set is empty".into()));
    }
    let mut rows = Vec::with_capacity(seeds.len() * FusionMode::ALL.len());
    for &seed in seeds {
        for variant in FusionMode::ALL {
            let mut config = base.clone();
            config.seed = seed;
            config.model.fusion = variant;
            config.checkpoint_dir = root.map(|r| r.join(format!("seed_{seed}_{variant}")));
            config.checkpoint_every = None;
            let dir = config.checkpoint_dir.clone();
            let outcome = train(config, train_set)?;
            let report = evaluate_samples(&outcome.params, test_set, mask)?;
            log::info!(
                "seed {seed} {}: upper {:.6} lower {:.6}",
                variant.label(),
                report.upper_mae,
                report.lower_mae
            );
            rows.push(AblationRow {
                seed,
                variant,
                upper_mae: report.upper_mae,
                lower_mae: report.lower_mae,
                final_loss: *outcome.epoch_losses.last().expect("at least one epoch"),
                checkpoint_sha256: dir.map(|d| manifest_sha256(&d)).transpose()?,
            });
        }
    }
    Ok(AblationTable::from_rows(rows))
}
