//! Word alignments, per-word embedding providers, and per-frame text features.

use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{put_f32s, ByteReader};
use crate::error::{Error, Result};

/// Width of a contextual word vector (GPT-2 small hidden size).
pub const EMBEDDING_DIM: usize = 768;
pub const SMOOTH_PAST: usize = 8;
pub const SMOOTH_FUTURE: usize = 7;

pub const WEM_MAGIC: &[u8; 4] = b"WEM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordEntry {
    pub word: String,
    pub start: f64,
    pub end: f64,
}

/// Sorted, non-overlapping word intervals in seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordAlignment {
    entries: Vec<WordEntry>,
}

/// Gentle exports `{"words": [...]}` with extra per-word keys; unaligned words lack times.
#[derive(Deserialize)]
struct GentleWord {
    word: String,
    start: Option<f64>,
    end: Option<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AlignmentFile {
    Plain(Vec<WordEntry>),
    Gentle { words: Vec<GentleWord> },
}

impl WordAlignment {
    /// Sorts by start time and validates every interval.
    pub fn new(mut entries: Vec<WordEntry>) -> Result<Self> {
        for (index, e) in entries.iter().enumerate() {
            let bad = |message: &str| Error::Alignment {
                index,
                word: e.word.clone(),
                message: message.into(),
            };
            if !e.start.is_finite() || !e.end.is_finite() {
                return Err(bad("non-finite timestamp"));
            }
            if e.start < 0.0 {
                return Err(bad("negative start time"));
            }
            if e.end <= e.start {
                return Err(bad("end must be after start"));
            }
        }
        entries.sort_by(|a, b| a.start.total_cmp(&b.start));
        for (index, pair) in entries.windows(2).enumerate() {
            if pair[1].start < pair[0].end {
                return Err(Error::Alignment {
                    index: index + 1,
                    word: pair[1].word.clone(),
                    message: format!(
                        "overlaps {:?} ({}..{})",
                        pair[0].word, pair[0].start, pair[0].end
                    ),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[WordEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json<R: Read>(source: R) -> Result<Self> {
        let file: AlignmentFile = serde_json::from_reader(source)?;
        let entries = match file {
            AlignmentFile::Plain(entries) => entries,
            AlignmentFile::Gentle { words } => words
                .into_iter()
                .filter_map(|w| match (w.start, w.end) {
                    (Some(start), Some(end)) => Some(WordEntry {
                        word: w.word,
                        start,
                        end,
                    }),
                    _ => None,
                })
                .collect(),
        };
        Self::new(entries)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("alignment serializes")
    }

    /// Index of the word whose `[start, end)` contains `time`, if any.
    pub fn word_at(&self, time: f64) -> Option<usize> {
        let idx = self.entries.partition_point(|e| e.start <= time);
        if idx == 0 {
            return None;
        }
        let e = &self.entries[idx - 1];
        (time < e.end).then_some(idx - 1)
    }

    /// Word index covering each frame centre `(f + 0.5) / frame_rate`.
    pub fn frame_words(&self, frames: usize, frame_rate: f64) -> Vec<Option<usize>> {
        (0..frames)
            .map(|f| self.word_at(frame_center(f, frame_rate)))
            .collect()
    }
}

pub fn frame_center(frame: usize, frame_rate: f64) -> f64 {
    (frame as f64 + 0.5) / frame_rate
}

pub fn load_alignment<R: Read>(source: R) -> Result<WordAlignment> {
    WordAlignment::from_json(source)
}

/// Identifies one word occurrence for contextual lookup.
#[derive(Debug, Clone, Copy)]
pub struct WordKey<'a> {
    pub utterance: &'a str,
    pub index: u32,
    pub word: &'a str,
}

/// Source of per-word feature vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, key: WordKey<'_>) -> Result<Vec<f64>>;
}

/// Deterministic stand-in for a language model: each word string maps to
/// seeded standard-normal entries.
#[derive(Debug, Clone)]
pub struct PseudoEmbeddings {
    seed: u64,
    dimension: usize,
}

impl PseudoEmbeddings {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dimension: EMBEDDING_DIM,
        }
    }

    pub fn with_dimension(seed: u64, dimension: usize) -> Self {
        Self { seed, dimension }
    }

    pub fn vector(&self, word: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(b"lexiface-pseudo-embedding");
        hasher.update(self.seed.to_le_bytes());
        hasher.update(word.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }
}

impl EmbeddingProvider for PseudoEmbeddings {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, key: WordKey<'_>) -> Result<Vec<f64>> {
        Ok(self.vector(key.word))
    }
}

pub fn pseudo_embedding_provider(seed: u64) -> PseudoEmbeddings {
    PseudoEmbeddings::new(seed)
}

/// Precomputed contextual vectors keyed by (utterance id, word position).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FileEmbeddings {
    entries: Vec<(String, u32, Vec<f32>)>,
    index: HashMap<(String, u32), usize>,
}

impl FileEmbeddings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, utterance: &str, word_index: u32, vector: Vec<f32>) -> Result<()> {
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::Dimension(format!(
                "embedding has {} values, expected {EMBEDDING_DIM}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("embedding contains non-finite values".into()));
        }
        if utterance.len() > u16::MAX as usize {
            return Err(Error::Input("utterance id longer than 65535 bytes".into()));
        }
        let key = (utterance.to_string(), word_index);
        if self.index.contains_key(&key) {
            return Err(Error::Input(format!(
                "duplicate embedding for utterance {utterance:?} word {word_index}"
            )));
        }
        self.index.insert(key, self.entries.len());
        self.entries.push((utterance.to_string(), word_index, vector));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, utterance: &str, word_index: u32) -> Option<&[f32]> {
        self.index
            .get(&(utterance.to_string(), word_index))
            .map(|&i| self.entries[i].2.as_slice())
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + self.entries.len() * (EMBEDDING_DIM * 4 + 16));
        buf.extend_from_slice(WEM_MAGIC);
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, idx, v) in &self.entries {
            buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            buf.extend_from_slice(&idx.to_le_bytes());
            put_f32s(&mut buf, v.iter().copied());
        }
        sink.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut source: R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        let mut r = ByteReader::new(&bytes);
        r.magic(WEM_MAGIC)?;
        let count = r.u32("entry count")?;
        let mut out = Self::new();
        for _ in 0..count {
            let len = r.u16("utterance id length")? as usize;
            let at = r.position();
            let id = std::str::from_utf8(r.take(len, "utterance id")?)
                .map_err(|_| Error::format(at, "utterance id is not UTF-8"))?;
            let at = r.position();
            let idx = r.u32("word index")?;
            let v = r.finite_f32s(EMBEDDING_DIM, "embedding vector")?;
            out.insert(id, idx, v)
                .map_err(|e| Error::format(at, e.to_string()))?;
        }
        r.finish("embedding entries")?;
        Ok(out)
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn dimension(&self) -> usize {
        EMBEDDING_DIM
    }

    fn embed(&self, key: WordKey<'_>) -> Result<Vec<f64>> {
        self.get(key.utterance, key.index)
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
            .ok_or_else(|| Error::Lookup {
                utterance: key.utterance.to_string(),
                index: key.index,
            })
    }
}

pub fn file_embedding_provider<R: Read>(source: R) -> Result<FileEmbeddings> {
    FileEmbeddings::read_from(source)
}

/// Where word vectors come from: `pseudo`, `pseudo:SEED` or `file:PATH`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    Pseudo(u64),
    File(std::path::PathBuf),
}

impl EmbeddingSource {
    pub fn open(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            EmbeddingSource::Pseudo(seed) => Box::new(PseudoEmbeddings::new(*seed)),
            EmbeddingSource::File(path) => {
                let file = std::fs::File::open(path)?;
                Box::new(FileEmbeddings::read_from(std::io::BufReader::new(file))?)
            }
        })
    }
}

impl std::str::FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "pseudo" {
            return Ok(EmbeddingSource::Pseudo(0));
        }
        if let Some(seed) = s.strip_prefix("pseudo:") {
            return seed
                .parse()
                .map(EmbeddingSource::Pseudo)
                .map_err(|_| Error::Config(format!("bad pseudo-embedding seed {seed:?}")));
        }
        match s.strip_prefix("file:") {
            Some(path) if !path.is_empty() => Ok(EmbeddingSource::File(path.into())),
            _ => Err(Error::Config(format!(
                "unknown embedding source {s:?}; expected pseudo, pseudo:SEED or file:PATH"
            ))),
        }
    }
}

impl std::fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmbeddingSource::Pseudo(seed) => write!(f, "pseudo:{seed}"),
            EmbeddingSource::File(path) => write!(f, "file:{}", path.display()),
        }
    }
}

/// `T x dimension` per-frame text features.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFrames {
    values: Array2<f64>,
}

impl TextFrames {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("text features contain non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn frame_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// Repeats each word's vector over the frames whose centre falls inside the
/// word; frames in pauses stay zero.
pub fn expand_to_frames(
    alignment: &WordAlignment,
    provider: &dyn EmbeddingProvider,
    utterance: &str,
    frames: usize,
    frame_rate: f64,
) -> Result<TextFrames> {
    if frames == 0 {
        return Err(Error::Input("frame count must be at least 1".into()));
    }
    if !(frame_rate > 0.0) {
        return Err(Error::Input("frame rate must be positive".into()));
    }
    let dim = provider.dimension();
    let mut values = Array2::<f64>::zeros((frames, dim));
    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
    for (f, word) in alignment.frame_words(frames, frame_rate).into_iter().enumerate() {
        let Some(w) = word else { continue };
        if !cache.contains_key(&w) {
            let e = &alignment.entries[w];
            let v = provider.embed(WordKey {
                utterance,
                index: w as u32,
                word: &e.word,
            })?;
            if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Dimension(format!(
                    "provider returned {} values for {:?}, expected {dim} finite values",
                    v.len(),
                    e.word
                )));
            }
            cache.insert(w, v);
        }
        values
            .row_mut(f)
            .iter_mut()
            .zip(&cache[&w])
            .for_each(|(d, s)| *d = *s);
    }
    Ok(TextFrames { values })
}

/// Mean over the window `[t - past, t + future]` clipped to the sequence.
pub fn smooth_frames(frames: &TextFrames, past: usize, future: usize) -> TextFrames {
    let (t_len, dim) = frames.values.dim();
    let mut out = Array2::<f64>::zeros((t_len, dim));
    for t in 0..t_len {
        let lo = t.saturating_sub(past);
        let hi = (t + future).min(t_len - 1);
        let mut row = out.row_mut(t);
        for s in lo..=hi {
            row += &frames.values.row(s);
        }
        row /= (hi - lo + 1) as f64;
    }
    TextFrames { values: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(word: &str, start: f64, end: f64) -> WordEntry {
        WordEntry {
            word: word.into(),
            start,
            end,
        }
    }

    #[test]
    fn load_empty_and_single() {
        assert!(load_alignment(&b"[]"[..]).unwrap().is_empty());
        let a = load_alignment(&br#"[{"word":"hi","start":0.0,"end":0.12}]"#[..]).unwrap();
        assert_eq!(a.entries(), &[entry("hi", 0.0, 0.12)]);
    }

    #[test]
    fn overlapping_entries_rejected() {
        let err = load_alignment(
            &br#"[{"word":"a","start":0.0,"end":0.3},{"word":"b","start":0.2,"end":0.5}]"#[..],
        )
        .unwrap_err();
        match err {
            Error::Alignment { index, word, .. } => {
                assert_eq!(index, 1);
                assert_eq!(word, "b");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn invalid_times_rejected() {
        assert!(WordAlignment::new(vec![entry("x", -0.1, 0.2)]).is_err());
        assert!(WordAlignment::new(vec![entry("x", 0.3, 0.3)]).is_err());
        assert!(WordAlignment::new(vec![entry("x", 0.0, f64::NAN)]).is_err());
    }

    #[test]
    fn unsorted_input_is_sorted() {
        let a = WordAlignment::new(vec![entry("b", 0.5, 0.6), entry("a", 0.0, 0.5)]).unwrap();
        assert_eq!(a.entries()[0].word, "a");
    }

    #[test]
    fn gentle_export_accepted() {
        let json = br#"{"transcript":"hi there","words":[
            {"word":"hi","start":0.1,"end":0.3,"case":"success"},
            {"word":"there","case":"not-found-in-audio"}]}"#;
        let a = load_alignment(&json[..]).unwrap();
        assert_eq!(a.entries(), &[entry("hi", 0.1, 0.3)]);
    }

    #[test]
    fn empty_alignment_gives_zero_frames() {
        let p = PseudoEmbeddings::new(1);
        let tf = expand_to_frames(&WordAlignment::default(), &p, "u", 10, 25.0).unwrap();
        assert_eq!(tf.values().dim(), (10, EMBEDDING_DIM));
        assert!(tf.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_word_covers_first_three_frames() {
        let p = PseudoEmbeddings::new(1);
        let a = WordAlignment::new(vec![entry("hi", 0.0, 0.12)]).unwrap();
        let tf = expand_to_frames(&a, &p, "u", 8, 25.0).unwrap();
        let v = p.vector("hi");
        for f in 0..8 {
            let row: Vec<f64> = tf.values().row(f).to_vec();
            if f < 3 {
                assert_eq!(row, v);
            } else {
                assert!(row.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn adjacent_words_partition_frames() {
        let p = PseudoEmbeddings::new(3);
        let a = WordAlignment::new(vec![entry("one", 0.0, 0.2), entry("two", 0.2, 0.4)]).unwrap();
        let words = a.frame_words(10, 25.0);
        assert_eq!(words, [0, 0, 0, 0, 0, 1, 1, 1, 1, 1].map(Some).to_vec());
        let tf = expand_to_frames(&a, &p, "u", 10, 25.0).unwrap();
        assert_eq!(tf.values().row(4).to_vec(), p.vector("one"));
        assert_eq!(tf.values().row(5).to_vec(), p.vector("two"));
    }

    #[test]
    fn words_past_end_are_dropped() {
        let p = PseudoEmbeddings::new(3);
        let a = WordAlignment::new(vec![entry("long", 0.1, 10.0)]).unwrap();
        let tf = expand_to_frames(&a, &p, "u", 5, 25.0).unwrap();
        assert_eq!(tf.frame_count(), 5);
    }

    #[test]
    fn smoothing_constant_and_impulse() {
        let c = TextFrames::new(Array2::from_elem((30, 2), 0.75)).unwrap();
        let s = smooth_frames(&c, SMOOTH_PAST, SMOOTH_FUTURE);
        assert!(s.values().iter().all(|&v| (v - 0.75).abs() < 1e-15));

        let mut imp = Array2::zeros((64, 1));
        imp[[20, 0]] = 1.0;
        let s = smooth_frames(&TextFrames::new(imp).unwrap(), SMOOTH_PAST, SMOOTH_FUTURE);
        for t in 0..64 {
            let expect = if (13..=28).contains(&t) { 1.0 / 16.0 } else { 0.0 };
            assert_eq!(s.values()[[t, 0]], expect, "frame {t}");
        }

        let one = TextFrames::new(Array2::from_elem((1, 3), 2.5)).unwrap();
        assert_eq!(smooth_frames(&one, 8, 7), one);
    }

    #[test]
    fn pseudo_provider_determinism_and_moments() {
        let p = PseudoEmbeddings::new(42);
        assert_eq!(p.vector("hello"), PseudoEmbeddings::new(42).vector("hello"));
        assert_ne!(p.vector("a"), p.vector("b"));
        assert_ne!(p.vector("a"), PseudoEmbeddings::new(43).vector("a"));

        let sample: Vec<f64> = (0..14)
            .flat_map(|i| p.vector(&format!("w{i}")))
            .take(10_000)
            .collect();
        assert_eq!(sample.len(), 10_000);
        let mean = sample.iter().sum::<f64>() / sample.len() as f64;
        let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / sample.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn file_provider_lookup() {
        let mut f = FileEmbeddings::new();
        let v1: Vec<f32> = (0..EMBEDDING_DIM).map(|i| i as f32 * 0.5).collect();
        let v2: Vec<f32> = (0..EMBEDDING_DIM).map(|i| -(i as f32)).collect();
        f.insert("s1", 0, v1.clone()).unwrap();
        f.insert("s2", 3, v2.clone()).unwrap();
        assert!(f.insert("s1", 0, v1.clone()).is_err());

        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        let back = file_embedding_provider(&bytes[..]).unwrap();
        assert_eq!(back, f);

        // The same surface word resolves by position, not string.
        let got1 = back.embed(WordKey { utterance: "s1", index: 0, word: "room" }).unwrap();
        let got2 = back.embed(WordKey { utterance: "s2", index: 3, word: "room" }).unwrap();
        assert_eq!(got1, v1.iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
        assert_eq!(got2, v2.iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
        assert!(matches!(
            back.embed(WordKey { utterance: "s1", index: 1, word: "x" }),
            Err(Error::Lookup { index: 1, .. })
        ));
    }

    #[test]
    fn file_provider_rejects_truncation() {
        let mut f = FileEmbeddings::new();
        f.insert("u", 0, vec![0.0; EMBEDDING_DIM]).unwrap();
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        assert!(FileEmbeddings::read_from(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn embedding_sources_parse() {
        assert_eq!("pseudo".parse::<EmbeddingSource>().unwrap(), EmbeddingSource::Pseudo(0));
        assert_eq!("pseudo:7".parse::<EmbeddingSource>().unwrap().to_string(), "pseudo:7");
        assert_eq!(
            "file:a/b.wem".parse::<EmbeddingSource>().unwrap(),
            EmbeddingSource::File("a/b.wem".into())
        );
        for bad in ["bert", "file:", "pseudo:x"] {
            assert!(bad.parse::<EmbeddingSource>().is_err(), "{bad}");
        }
    }

    fn random_alignment(bounds: &[f64]) -> WordAlignment {
        let mut times: Vec<f64> = bounds.to_vec();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let entries = times
            .chunks_exact(2)
            .enumerate()
            .map(|(i, w)| entry(["a", "b", "c"][i % 3], w[0], w[1]))
            .collect();
        WordAlignment::new(entries).unwrap()
    }

    proptest! {
        #[test]
        fn expansion_has_requested_length(
            bounds in proptest::collection::vec(0.0f64..6.0, 0..12),
            frames in 1usize..160,
        ) {
            let a = random_alignment(&bounds);
            let p = PseudoEmbeddings::with_dimension(5, 4);
            let tf = expand_to_frames(&a, &p, "u", frames, 25.0).unwrap();
            prop_assert_eq!(tf.values().dim(), (frames, 4));
            let words = a.frame_words(frames, 25.0);
            for (f, w) in words.iter().enumerate() {
                let expect = w.map(|i| p.vector(&a.entries()[i].word)).unwrap_or_else(|| vec![0.0; 4]);
                prop_assert_eq!(tf.values().row(f).to_vec(), expect);
            }
        }

        #[test]
        fn smoothing_is_linear_and_bounded(
            x in proptest::collection::vec(-5.0f64..5.0, 40),
            y in proptest::collection::vec(-5.0f64..5.0, 40),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let fx = TextFrames::new(Array2::from_shape_vec((20, 2), x).unwrap()).unwrap();
            let fy = TextFrames::new(Array2::from_shape_vec((20, 2), y).unwrap()).unwrap();
            let combo = TextFrames::new(&fx.values() * a + &fy.values() * b).unwrap();
            let sx = smooth_frames(&fx, SMOOTH_PAST, SMOOTH_FUTURE);
            let sy = smooth_frames(&fy, SMOOTH_PAST, SMOOTH_FUTURE);
            let sc = smooth_frames(&combo, SMOOTH_PAST, SMOOTH_FUTURE);
            for ((c, u), v) in sc.values().iter().zip(sx.values().iter()).zip(sy.values().iter()) {
                prop_assert!((c - (a * u + b * v)).abs() < 1e-12);
            }
            for col in 0..2 {
                let column = fx.values().column(col).to_vec();
                let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(sx.values().column(col).iter().all(|&s| s >= lo - 1e-12 && s <= hi + 1e-12));
            }
        }
    }
}
