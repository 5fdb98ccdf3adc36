//! Deterministic synthetic audio + transcript + mesh corpus.
//!
//! Each word is a carrier tone under a smooth amplitude envelope. Lower-face
//! vertices follow that envelope (a mouth-opening analogue); upper-face
//! vertices follow a per-word expressiveness coefficient ramped over the word
//! and decaying afterwards. Lower motion is therefore recoverable from audio,
//! while upper motion depends on word identity.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{write_wav, AudioClip, SAMPLE_RATE};
use crate::dataset::{CorpusManifest, Split, Utterance, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::mesh::{MeshSequence, RegionMask, TemplateMesh};
use crate::text::{WordAlignment, WordEntry};

const LOWER_DIRECTION: [f64; 3] = [0.0, -0.6, 0.15];
const UPPER_DIRECTION: [f64; 3] = [0.0, 0.4, 0.1];
/// Seconds for the upper-face response to fall by 1/e after a word ends.
const UPPER_DECAY: f64 = 0.12;
const PERMUTATIONS: usize = 999;
const MIN_ENVELOPE_CORRELATION: f64 = 0.8;
const MIN_PERMUTATION_P: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Grid rows; the top half is the upper face.
    pub rows: usize,
    pub cols: usize,
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    /// Trailing utterances of each speaker marked as the test split.
    pub test_per_speaker: usize,
    pub duration_range: (f64, f64),
    pub word_duration_range: (f64, f64),
    pub pause_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    pub vocabulary: Vec<String>,
    pub expressive: Vec<String>,
    pub expressive_coefficient: f64,
    pub plain_coefficient: f64,
    /// Carrier frequency is `carrier_base + carrier_step * (hash(word) % carrier_classes)`.
    pub carrier_base: f64,
    pub carrier_step: f64,
    pub carrier_classes: u64,
    /// Per-speaker pitch shift in Hz (style).
    pub speaker_pitch: Vec<f64>,
    /// Per-speaker mouth-opening gain (style).
    pub speaker_gain: Vec<f64>,
    pub frame_rate: u16,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let plain = ["the", "a", "room", "table", "is", "of", "you", "have"];
        let expressive = ["thank", "wonderful", "excellent", "amazing", "terrible", "wow", "love", "sir"];
        Self {
            rows: 26,
            cols: 13,
            speakers: 2,
            utterances_per_speaker: 8,
            test_per_speaker: 2,
            duration_range: (3.2, 4.4),
            word_duration_range: (0.22, 0.5),
            pause_range: (0.04, 0.3),
            amplitude_range: (0.15, 0.9),
            vocabulary: plain.iter().chain(expressive.iter()).map(|s| s.to_string()).collect(),
            expressive: expressive.iter().map(|s| s.to_string()).collect(),
            expressive_coefficient: 1.0,
            plain_coefficient: 0.2,
            carrier_base: 160.0,
            carrier_step: 20.0,
            carrier_classes: 6,
            speaker_pitch: vec![0.0, 30.0],
            speaker_gain: vec![1.0, 0.7],
            frame_rate: 25,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Default spec with `speakers` speakers, pitch shifts 30 Hz apart and
    /// mouth gains spread evenly from 1.0 down to 0.7.
    pub fn with_speakers(speakers: usize) -> Self {
        let spread = speakers.saturating_sub(1).max(1) as f64;
        Self {
            speakers,
            speaker_pitch: (0..speakers).map(|i| 30.0 * i as f64).collect(),
            speaker_gain: (0..speakers).map(|i| 1.0 - 0.3 * i as f64 / spread).collect(),
            ..Self::default()
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.rows < 2 || self.rows % 2 != 0 || self.cols == 0 {
            return bad("grid needs an even number of rows (>= 2) and at least one column");
        }
        if self.speakers == 0 || self.utterances_per_speaker == 0 {
            return bad("need at least one speaker and one utterance per speaker");
        }
        if self.test_per_speaker >= self.utterances_per_speaker {
            return bad("test split must leave training utterances");
        }
        if self.vocabulary.is_empty() {
            return bad("vocabulary must be non-empty");
        }
        if let Some(w) = self.expressive.iter().find(|w| !self.vocabulary.contains(w)) {
            return Err(Error::Config(format!("expressive word {w:?} not in vocabulary")));
        }
        if self.speaker_pitch.len() != self.speakers || self.speaker_gain.len() != self.speakers {
            return bad("speaker_pitch and speaker_gain need one entry per speaker");
        }
        let ranges = [
            self.duration_range,
            self.word_duration_range,
            self.pause_range,
            self.amplitude_range,
        ];
        if ranges.iter().any(|&(lo, hi)| !(lo >= 0.0 && hi >= lo && hi.is_finite())) {
            return bad("ranges must satisfy 0 <= lo <= hi");
        }
        if self.word_duration_range.0 <= 0.0 || self.duration_range.0 < 2.0 * self.word_duration_range.1 {
            return bad("utterances must fit at least one word");
        }
        if self.frame_rate == 0 || SAMPLE_RATE % u32::from(self.frame_rate) != 0 {
            return bad("frame rate must divide 16000");
        }
        if self.carrier_classes == 0 {
            return bad("carrier_classes must be positive");
        }
        Ok(())
    }

    pub fn coefficient(&self, word: &str) -> f64 {
        if self.expressive.iter().any(|w| w == word) {
            self.expressive_coefficient
        } else {
            self.plain_coefficient
        }
    }

    pub fn carrier(&self, word: &str) -> f64 {
        let digest = Sha256::digest(word.as_bytes());
        let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        self.carrier_base + self.carrier_step * (h % self.carrier_classes) as f64
    }

    /// Neutral face: a gently curved grid, row 0 at the top.
    pub fn template(&self) -> TemplateMesh {
        let (rows, cols) = (self.rows, self.cols);
        let v = Array2::from_shape_fn((rows * cols, 3), |(i, k)| {
            let (r, c) = (i / cols, i % cols);
            let x = (c as f64 - (cols as f64 - 1.0) / 2.0) * 0.1;
            let y = ((rows as f64 - 1.0) / 2.0 - r as f64) * 0.1;
            let z = 0.4 - 0.8 * x * x - 0.3 * y * y;
            [x, y, z][k] as f32
        });
        TemplateMesh::new(v).expect("finite grid")
    }

    pub fn mask(&self) -> RegionMask {
        let half = self.rows / 2 * self.cols;
        RegionMask::new((0..half).collect(), (half..self.vertex_count()).collect(), self.vertex_count())
            .expect("halves are disjoint")
    }

    /// Displacement weight of vertex `index`: strongest at the brow line for
    /// the upper half and at the chin centre for the lower half.
    fn vertex_weight(&self, index: usize) -> f64 {
        let (r, c) = (index / self.cols, index % self.cols);
        let half = self.rows / 2;
        let centre = (self.cols as f64 - 1.0) / 2.0;
        let lateral = 1.0 - (c as f64 - centre).abs() / (centre + 1.0);
        let depth = if half > 1 { 1.0 / (half - 1) as f64 } else { 0.0 };
        if r < half {
            0.3 + 0.7 * (1.0 - r as f64 * depth)
        } else {
            (0.3 + 0.7 * (r - half) as f64 * depth) * lateral
        }
    }
}

/// One spoken word with its loudness.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedWord {
    pub word: String,
    pub start: f64,
    pub end: f64,
    pub amplitude: f64,
}

/// Rendered artifacts for one utterance.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub audio: AudioClip,
    pub alignment: WordAlignment,
    pub meshes: MeshSequence,
    /// Per-frame lower and upper drive signals before vertex weighting.
    pub lower_signal: Vec<f64>,
    pub upper_signal: Vec<f64>,
}

fn envelope(tau: f64, duration: f64) -> f64 {
    if (0.0..duration).contains(&tau) {
        (PI * tau / duration).sin().powi(2)
    } else {
        0.0
    }
}

fn upper_response(time: f64, w: &TimedWord) -> f64 {
    if time < w.start {
        0.0
    } else if time < w.end {
        (time - w.start) / (w.end - w.start)
    } else {
        (-(time - w.end) / UPPER_DECAY).exp()
    }
}

/// Deterministic generator for utterance `index` of the corpus.
pub fn utterance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"lexiface-synth");
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Samples a duration, word sequence, timings and loudness.
pub fn plan_utterance<R: Rng>(spec: &SynthSpec, rng: &mut R) -> (usize, Vec<TimedWord>) {
    let fps = f64::from(spec.frame_rate);
    let duration = rng.random_range(spec.duration_range.0..=spec.duration_range.1);
    let frames = ((duration * fps).floor() as usize).max(1);
    let total = frames as f64 / fps;
    let mut words = Vec::new();
    let mut t = rng.random_range(spec.pause_range.0..=spec.pause_range.1);
    loop {
        let word = spec.vocabulary[rng.random_range(0..spec.vocabulary.len())].clone();
        let len = rng.random_range(spec.word_duration_range.0..=spec.word_duration_range.1);
        if t + len > total - 0.05 {
            break;
        }
        let amplitude = rng.random_range(spec.amplitude_range.0..=spec.amplitude_range.1);
        words.push(TimedWord {
            word,
            start: t,
            end: t + len,
            amplitude,
        });
        t += len + rng.random_range(spec.pause_range.0..=spec.pause_range.1);
    }
    (frames, words)
}

/// Renders audio, alignment and meshes for a planned utterance.
pub fn render_utterance(
    spec: &SynthSpec,
    frames: usize,
    words: &[TimedWord],
    speaker: usize,
    template: &TemplateMesh,
) -> Result<SynthUtterance> {
    let fps = f64::from(spec.frame_rate);
    let sr = f64::from(SAMPLE_RATE);
    let hop = (SAMPLE_RATE / u32::from(spec.frame_rate)) as usize;
    let mut samples = vec![0.0; frames * hop];
    for w in words {
        let f = spec.carrier(&w.word) + spec.speaker_pitch[speaker];
        let first = (w.start * sr).ceil() as usize;
        let last = ((w.end * sr).ceil() as usize).min(samples.len());
        for (n, s) in samples.iter_mut().enumerate().take(last).skip(first) {
            let t = n as f64 / sr;
            let tau = t - w.start;
            *s += w.amplitude * envelope(tau, w.end - w.start) * (2.0 * PI * f * tau).sin();
        }
    }
    let audio = AudioClip::new(SAMPLE_RATE, samples)?;

    let gain = spec.speaker_gain[speaker];
    let centres: Vec<f64> = (0..frames).map(|f| crate::text::frame_center(f, fps)).collect();
    let lower_signal: Vec<f64> = centres
        .iter()
        .map(|&t| {
            words
                .iter()
                .map(|w| w.amplitude * envelope(t - w.start, w.end - w.start))
                .sum::<f64>()
                * gain
        })
        .collect();
    let upper_signal: Vec<f64> = centres
        .iter()
        .map(|&t| words.iter().map(|w| spec.coefficient(&w.word) * upper_response(t, w)).sum())
        .collect();

    let v = spec.vertex_count();
    let half = spec.rows / 2 * spec.cols;
    let base = template.vertices();
    let mut vertices = Array3::<f32>::zeros((frames, v, 3));
    for f in 0..frames {
        for i in 0..v {
            let (dir, drive) = if i < half {
                (UPPER_DIRECTION, upper_signal[f])
            } else {
                (LOWER_DIRECTION, lower_signal[f])
            };
            let w = spec.vertex_weight(i);
            for k in 0..3 {
                vertices[[f, i, k]] = (f64::from(base[[i, k]]) + w * drive * dir[k]) as f32;
            }
        }
    }
    let meshes = MeshSequence::new(vertices, spec.frame_rate)?;
    let alignment = WordAlignment::new(
        words
            .iter()
            .map(|w| WordEntry {
                word: w.word.clone(),
                start: w.start,
                end: w.end,
            })
            .collect(),
    )?;
    Ok(SynthUtterance {
        audio,
        alignment,
        meshes,
        lower_signal,
        upper_signal,
    })
}

/// Root-mean-square of the audio over each frame's hop, centred on the frame.
pub fn frame_rms(audio: &AudioClip, frames: usize, frame_rate: u16) -> Vec<f64> {
    let hop = (audio.sample_rate() / u32::from(frame_rate)) as usize;
    let s = audio.samples();
    (0..frames)
        .map(|f| {
            let lo = (f * hop).min(s.len());
            let hi = ((f + 1) * hop).min(s.len());
            if hi == lo {
                return 0.0;
            }
            (s[lo..hi].iter().map(|x| x * x).sum::<f64>() / (hi - lo) as f64).sqrt()
        })
        .collect()
}

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// What the generator verified about the couplings it planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    /// Minimum over utterances of |r| between lower-face motion and audio RMS.
    pub min_lower_envelope_correlation: f64,
    /// Permutation-test p-value for correlation between word loudness and the
    /// coefficient-normalised upper-face response.
    pub upper_amplitude_permutation_p: f64,
}

pub struct GeneratedCorpus {
    pub manifest: CorpusManifest,
    pub template: TemplateMesh,
    pub mask: RegionMask,
    pub report: CouplingReport,
}

fn permutation_p<R: Rng>(x: &[f64], y: &[f64], rng: &mut R) -> f64 {
    use rand::seq::SliceRandom;
    let observed = pearson(x, y).unwrap_or(0.0).abs();
    let mut shuffled = y.to_vec();
    let mut hits = 0;
    for _ in 0..PERMUTATIONS {
        shuffled.shuffle(rng);
        if pearson(x, &shuffled).unwrap_or(0.0).abs() >= observed {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (PERMUTATIONS + 1) as f64
}

/// Generates the corpus into `out_dir` and returns its manifest.
pub fn generate_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let template = spec.template();
    let mask = spec.mask();
    let utt_dir = out_dir.join("utterances");
    fs::create_dir_all(&utt_dir)?;
    fs::write(out_dir.join("template.msq"), template.to_sequence().to_bytes())?;
    fs::write(out_dir.join("regions.json"), mask.to_json())?;

    let mut utterances = Vec::new();
    let mut min_corr = f64::INFINITY;
    let mut loudness = Vec::new();
    let mut upper_response_per_word = Vec::new();
    let mut index = 0;
    for speaker in 0..spec.speakers {
        for k in 0..spec.utterances_per_speaker {
            let mut rng = utterance_rng(spec.seed, index);
            index += 1;
            let (frames, words) = plan_utterance(spec, &mut rng);
            if words.is_empty() {
                return Err(Error::Config("utterance duration too short for any word".into()));
            }
            let u = render_utterance(spec, frames, &words, speaker, &template)?;

            let rms = frame_rms(&u.audio, frames, spec.frame_rate);
            let r = pearson(&u.lower_signal, &rms).unwrap_or(0.0).abs();
            if r <= MIN_ENVELOPE_CORRELATION {
                return Err(Error::Config(format!(
                    "lower-face motion correlates only {r:.3} with audio RMS in utterance {index}"
                )));
            }
            min_corr = min_corr.min(r);
            let fps = f64::from(spec.frame_rate);
            for w in &words {
                let in_word: Vec<f64> = (0..frames)
                    .filter(|&f| (w.start..w.end).contains(&crate::text::frame_center(f, fps)))
                    .map(|f| u.upper_signal[f] / spec.coefficient(&w.word))
                    .collect();
                if !in_word.is_empty() {
                    loudness.push(w.amplitude);
                    upper_response_per_word.push(in_word.iter().sum::<f64>() / in_word.len() as f64);
                }
            }

            let id = format!("s{speaker}_u{k:02}");
            let audio = format!("utterances/{id}.wav");
            let alignment = format!("utterances/{id}.align.json");
            let mesh = format!("utterances/{id}.msq");
            let mut wav = Vec::new();
            write_wav(&u.audio, &mut wav)?;
            fs::write(out_dir.join(&audio), wav)?;
            fs::write(out_dir.join(&alignment), u.alignment.to_json())?;
            fs::write(out_dir.join(&mesh), u.meshes.to_bytes())?;
            let split = if k >= spec.utterances_per_speaker - spec.test_per_speaker {
                Split::Test
            } else {
                Split::Train
            };
            utterances.push(Utterance {
                id,
                audio,
                alignment,
                mesh: Some(mesh),
                speaker_index: speaker,
                split,
            });
        }
    }

    let mut perm_rng = utterance_rng(spec.seed, usize::MAX);
    let p = permutation_p(&loudness, &upper_response_per_word, &mut perm_rng);
    if p < MIN_PERMUTATION_P {
        return Err(Error::Config(format!(
            "upper-face response depends on loudness (permutation p = {p:.4})"
        )));
    }
    let report = CouplingReport {
        min_lower_envelope_correlation: min_corr,
        upper_amplitude_permutation_p: p,
    };
    let manifest = CorpusManifest {
        format_version: MANIFEST_VERSION,
        frame_rate: spec.frame_rate,
        vertex_count: spec.vertex_count(),
        speakers: spec.speakers,
        template: "template.msq".into(),
        regions: "regions.json".into(),
        utterances,
        generator: Some(serde_json::json!({
            "spec": spec,
            "coupling": report,
        })),
    };
    fs::write(out_dir.join("manifest.json"), manifest.to_json())?;
    Ok(GeneratedCorpus {
        manifest,
        template,
        mask,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::to_offsets;

    #[test]
    fn default_spec_shapes() {
        let spec = SynthSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.vertex_count(), 338);
        let mask = spec.mask();
        assert_eq!(mask.upper().len(), 169);
        assert_eq!(mask.lower().len(), 169);
    }

    #[test]
    fn speaker_styles() {
        let s = SynthSpec::with_speakers(2);
        assert_eq!(s, SynthSpec::default());
        let s = SynthSpec::with_speakers(4);
        s.validate().unwrap();
        assert_eq!(s.speaker_gain[3], 0.7);
        assert_eq!(s.speaker_pitch[3], 90.0);
    }

    #[test]
    fn invalid_specs() {
        let mut s = SynthSpec::default();
        s.expressive.push("zebra".into());
        assert!(s.validate().is_err());
        let mut s = SynthSpec::default();
        s.rows = 13;
        assert!(s.validate().is_err());
        let mut s = SynthSpec::default();
        s.vocabulary.clear();
        s.expressive.clear();
        assert!(s.validate().is_err());
    }

    fn words(list: &[&str]) -> Vec<TimedWord> {
        list.iter()
            .enumerate()
            .map(|(i, w)| TimedWord {
                word: w.to_string(),
                start: 0.2 + i as f64 * 0.5,
                end: 0.2 + i as f64 * 0.5 + 0.3,
                amplitude: 0.5,
            })
            .collect()
    }

    fn region_mean(u: &SynthUtterance, spec: &SynthSpec, tpl: &TemplateMesh, upper: bool) -> f64 {
        let off = to_offsets(&u.meshes, tpl).unwrap();
        let mag = off.magnitudes();
        let mask = spec.mask();
        let idx = if upper { mask.upper() } else { mask.lower() };
        let mut s = 0.0;
        for row in mag.rows() {
            s += idx.iter().map(|&v| row[v]).sum::<f64>();
        }
        s / (mag.nrows() * idx.len()) as f64
    }

    #[test]
    fn expressive_words_move_upper_face_more() {
        let spec = SynthSpec::default();
        let tpl = spec.template();
        let expressive = render_utterance(&spec, 75, &words(&["wow", "love", "thank", "sir"]), 0, &tpl).unwrap();
        let plain = render_utterance(&spec, 75, &words(&["the", "room", "is", "a"]), 0, &tpl).unwrap();
        let ratio = region_mean(&expressive, &spec, &tpl, true) / region_mean(&plain, &spec, &tpl, true);
        assert!(ratio >= 3.0, "ratio {ratio}");
        assert!((ratio - 5.0).abs() < 1e-3, "ratio {ratio}");
        // Lower-face motion does not depend on word identity.
        let lo = region_mean(&expressive, &spec, &tpl, false) / region_mean(&plain, &spec, &tpl, false);
        assert!((lo - 1.0).abs() < 1e-4, "{lo}");
    }

    #[test]
    fn pauses_leave_lower_face_at_rest() {
        let spec = SynthSpec::default();
        let tpl = spec.template();
        let w = words(&["the", "wow"]);
        let u = render_utterance(&spec, 50, &w, 1, &tpl).unwrap();
        let off = to_offsets(&u.meshes, &tpl).unwrap().magnitudes();
        let fps = 25.0;
        for f in 0..50 {
            let t = crate::text::frame_center(f, fps);
            // Two frames past a word's end, and before the first word.
            let in_pause = w.iter().all(|x| t < x.start || t >= x.end + 2.0 / fps);
            if in_pause && w.iter().all(|x| !(x.start..x.end).contains(&t)) {
                let lower_max = spec.mask().lower().iter().map(|&v| off[[f, v]]).fold(0.0, f64::max);
                assert!(lower_max < 1e-6, "frame {f}: {lower_max}");
            }
        }
    }

    #[test]
    fn lower_motion_tracks_loudness() {
        let spec = SynthSpec::default();
        let tpl = spec.template();
        let mut rng = utterance_rng(5, 0);
        let (frames, w) = plan_utterance(&spec, &mut rng);
        let u = render_utterance(&spec, frames, &w, 0, &tpl).unwrap();
        let rms = frame_rms(&u.audio, frames, 25);
        assert!(pearson(&u.lower_signal, &rms).unwrap() > 0.8);
        assert_eq!(u.audio.samples().len(), frames * 640);
    }

    #[test]
    fn pearson_degenerate() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
    }
}
