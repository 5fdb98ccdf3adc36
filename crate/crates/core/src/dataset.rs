//! Corpus manifests and conversion of utterances into model-ready samples.
//!
//! A manifest lists utterances with paths relative to the manifest's own
//! directory, plus the shared template mesh and region mask.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::{load_audio, MelExtractor};
use crate::error::{Error, Result};
use crate::mesh::{to_offsets, MeshSequence, RegionMask, TemplateMesh};
use crate::text::{
    expand_to_frames, load_alignment, smooth_frames, EmbeddingProvider, WordAlignment, SMOOTH_FUTURE,
    SMOOTH_PAST,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// One utterance: audio, word alignment, optional ground-truth meshes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub id: String,
    pub audio: String,
    pub alignment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
    pub speaker_index: usize,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub frame_rate: u16,
    pub vertex_count: usize,
    pub speakers: usize,
    pub template: String,
    pub regions: String,
    pub utterances: Vec<Utterance>,
    /// Free-form provenance written by the corpus generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

impl CorpusManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// A loaded manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: CorpusManifest,
}

/// Model-ready features for one utterance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub speaker: usize,
    /// `T x 128` mel features.
    pub audio: Array2<f64>,
    /// `T x D` smoothed text features.
    pub text: Array2<f64>,
    /// `T x 3V` ground-truth offsets (empty width when no meshes are known).
    pub target: Array2<f64>,
    pub alignment: WordAlignment,
}

impl Sample {
    pub fn frame_count(&self) -> usize {
        self.audio.nrows()
    }
}

impl Corpus {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let bytes = fs::read(manifest_path)?;
        let manifest: CorpusManifest = serde_json::from_slice(&bytes)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let corpus = Self { root, manifest };
        corpus.validate()?;
        Ok(corpus)
    }

    fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        let mut ids = std::collections::BTreeSet::new();
        for u in &m.utterances {
            if !ids.insert(&u.id) {
                return Err(Error::Config(format!("duplicate utterance id {:?}", u.id)));
            }
            if u.speaker_index >= m.speakers {
                return Err(Error::Config(format!(
                    "utterance {} has speaker {} but the corpus declares {} speakers",
                    u.id, u.speaker_index, m.speakers
                )));
            }
            let mut files = vec![&u.audio, &u.alignment];
            files.extend(u.mesh.as_ref());
            for f in files {
                if !self.path(f).is_file() {
                    return Err(Error::Config(format!("utterance {}: missing file {f}", u.id)));
                }
            }
        }
        Ok(())
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn template(&self) -> Result<TemplateMesh> {
        let seq = MeshSequence::read_from(fs::File::open(self.path(&self.manifest.template))?)?;
        let t = TemplateMesh::from_sequence(&seq)?;
        if t.vertex_count() != self.manifest.vertex_count {
            return Err(Error::Dimension(format!(
                "template has {} vertices, manifest declares {}",
                t.vertex_count(),
                self.manifest.vertex_count
            )));
        }
        Ok(t)
    }

    pub fn mask(&self) -> Result<RegionMask> {
        RegionMask::from_json(
            fs::File::open(self.path(&self.manifest.regions))?,
            self.manifest.vertex_count,
        )
    }

    pub fn split(&self, split: Split) -> Vec<&Utterance> {
        self.manifest
            .utterances
            .iter()
            .filter(|u| u.split == split)
            .collect()
    }

    pub fn utterance(&self, id: &str) -> Result<&Utterance> {
        self.manifest
            .utterances
            .iter()
            .find(|u| u.id == id)
            .ok_or_else(|| Error::Input(format!("no utterance {id:?} in manifest")))
    }

    pub fn prepare(
        &self,
        utterance: &Utterance,
        template: &TemplateMesh,
        provider: &dyn EmbeddingProvider,
        extractor: &MelExtractor,
    ) -> Result<Sample> {
        let mesh = match &utterance.mesh {
            Some(m) => Some(MeshSequence::read_from(fs::File::open(self.path(m))?)?),
            None => None,
        };
        prepare_sample(
            &utterance.id,
            utterance.speaker_index,
            &self.path(&utterance.audio),
            &self.path(&utterance.alignment),
            mesh.as_ref(),
            template,
            self.manifest.frame_rate,
            provider,
            extractor,
        )
    }

    pub fn prepare_all(
        &self,
        utterances: &[&Utterance],
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<Sample>> {
        let template = self.template()?;
        let extractor = MelExtractor::new();
        utterances
            .iter()
            .map(|u| self.prepare(u, &template, provider, &extractor))
            .collect()
    }
}

/// Builds features for one utterance. The frame count comes from the mesh
/// sequence when present, otherwise from the audio length.
#[allow(clippy::too_many_arguments)]
pub fn prepare_sample(
    id: &str,
    speaker: usize,
    audio_path: &Path,
    alignment_path: &Path,
    mesh: Option<&MeshSequence>,
    template: &TemplateMesh,
    frame_rate: u16,
    provider: &dyn EmbeddingProvider,
    extractor: &MelExtractor,
) -> Result<Sample> {
    let clip = load_audio(std::io::BufReader::new(fs::File::open(audio_path)?))?;
    let alignment = load_alignment(fs::File::open(alignment_path)?)?;
    let hop = MelExtractor::hop(u32::from(frame_rate))?;
    let frames = match mesh {
        Some(m) => m.frame_count(),
        None => {
            let n = clip.resample(crate::audio::SAMPLE_RATE).samples().len();
            (n / hop).max(1)
        }
    };
    let mel = extractor.extract(&clip, u32::from(frame_rate), frames)?;
    let text = expand_to_frames(&alignment, provider, id, frames, f64::from(frame_rate))?;
    let text = smooth_frames(&text, SMOOTH_PAST, SMOOTH_FUTURE);
    let target = match mesh {
        Some(m) => {
            let off = to_offsets(m, template)?;
            let (t, v, _) = off.offsets().dim();
            off.offsets()
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((t, 3 * v))
                .map_err(|e| Error::Dimension(e.to_string()))?
        }
        None => Array2::zeros((frames, 0)),
    };
    Ok(Sample {
        id: id.to_string(),
        speaker,
        audio: mel.into_inner(),
        text: text.into_inner(),
        target,
        alignment,
    })
}
