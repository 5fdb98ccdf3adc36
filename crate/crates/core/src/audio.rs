//! Audio loading and per-video-frame log-mel features.
//!
//! All audio is resampled to 16 kHz, then analysed with a 1024-sample Hann
//! window centred on every hop (`16000 / fps` samples) with reflection padding.
//! Power spectra pass through 128 triangular HTK-mel filters spanning 0 Hz to
//! Nyquist and are converted to dB against a fixed reference of 1.0, floored
//! at -80 dB.

use std::io::{Cursor, Read, Write};
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::binio::{put_f32s, ByteReader};
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 1024;
pub const N_MELS: usize = 128;
pub const DB_FLOOR: f64 = -80.0;
pub const DB_REFERENCE: f64 = 1.0;
const POWER_AMIN: f64 = 1e-10;

pub const MFQ_MAGIC: &[u8; 4] = b"MFQ1";
pub const MFQ_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    sample_rate: u32,
    samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("audio contains non-finite samples".into()));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Linear-interpolation resampling. Output length is `floor(N * target / rate)`.
    pub fn resample(&self, target: u32) -> AudioClip {
        if target == self.sample_rate || self.samples.is_empty() {
            return AudioClip {
                sample_rate: target,
                samples: self.samples.clone(),
            };
        }
        let n = self.samples.len();
        let out_len = (n as u64 * u64::from(target) / u64::from(self.sample_rate)) as usize;
        let ratio = f64::from(self.sample_rate) / f64::from(target);
        let samples = (0..out_len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let left = pos.floor() as usize;
                let frac = pos - left as f64;
                let a = self.samples[left.min(n - 1)];
                let b = self.samples[(left + 1).min(n - 1)];
                a + (b - a) * frac
            })
            .collect();
        AudioClip {
            sample_rate: target,
            samples,
        }
    }
}

/// Reads 16-bit PCM mono RIFF/WAVE audio, scaling samples by 1/32768.
pub fn load_audio<R: Read>(source: R) -> Result<AudioClip> {
    let reader = hound::WavReader::new(source).map_err(wav_error)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            0,
            format!(
                "expected 16-bit PCM, found {:?} with {} bits",
                spec.sample_format, spec.bits_per_sample
            ),
        ));
    }
    if spec.channels != 1 {
        return Err(Error::format(
            0,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_error)?;
    AudioClip::new(spec.sample_rate, samples)
}

/// Writes 16-bit PCM mono WAV, clamping to the representable range.
pub fn write_wav<W: Write>(clip: &AudioClip, mut sink: W) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).map_err(wav_error)?;
        for &s in &clip.samples {
            let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(q).map_err(wav_error)?;
        }
        writer.finalize().map_err(wav_error)?;
    }
    sink.write_all(&cursor.into_inner())?;
    Ok(())
}

fn wav_error(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::format(0, format!("WAV: {other}")),
    }
}

/// `T x 128` log-mel features in dB, one row per video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrames {
    values: Array2<f64>,
}

impl MelFrames {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() != N_MELS {
            return Err(Error::Dimension(format!(
                "mel frames need {N_MELS} channels, got {}",
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < DB_FLOOR) {
            return Err(Error::Input("mel values must be finite and above the dB floor".into()));
        }
        Ok(Self { values })
    }

    pub fn frame_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed window, FFT plan and filter bank.
pub struct MelExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// `N_MELS x (N_FFT/2 + 1)` row-major filter weights.
    filters: Array2<f64>,
    band_edges: Vec<f64>,
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MelExtractor {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let window = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect();

        let nyquist = f64::from(SAMPLE_RATE) / 2.0;
        let (mel_lo, mel_hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
        let band_edges: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let bins = N_FFT / 2 + 1;
        let mut filters = Array2::<f64>::zeros((N_MELS, bins));
        for m in 0..N_MELS {
            let (lo, center, hi) = (band_edges[m], band_edges[m + 1], band_edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * f64::from(SAMPLE_RATE) / N_FFT as f64;
                let rise = (f - lo) / (center - lo);
                let fall = (hi - f) / (hi - center);
                filters[[m, k]] = rise.min(fall).max(0.0);
            }
        }
        Self {
            fft,
            window,
            filters,
            band_edges,
        }
    }

    /// `(lower, center, upper)` frequencies in Hz of mel channel `m`.
    pub fn band(&self, m: usize) -> (f64, f64, f64) {
        (self.band_edges[m], self.band_edges[m + 1], self.band_edges[m + 2])
    }

    pub fn hop(frame_rate: u32) -> Result<usize> {
        if frame_rate == 0 || SAMPLE_RATE % frame_rate != 0 {
            return Err(Error::Input(format!(
                "frame rate {frame_rate} does not divide {SAMPLE_RATE} Hz"
            )));
        }
        Ok((SAMPLE_RATE / frame_rate) as usize)
    }

    /// Power spectrum (|X|^2) of the window centred on sample `center`.
    pub fn power_spectrum(&self, samples: &[f64], center: usize) -> Vec<f64> {
        let half = (N_FFT / 2) as isize;
        let mut buf: Vec<Complex<f64>> = (0..N_FFT)
            .map(|n| {
                let idx = center as isize - half + n as isize;
                Complex::new(samples[reflect(idx, samples.len())] * self.window[n], 0.0)
            })
            .collect();
        self.fft.process(&mut buf);
        buf[..N_FFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn extract(&self, audio: &AudioClip, frame_rate: u32, target_frames: usize) -> Result<MelFrames> {
        if audio.samples.is_empty() {
            return Err(Error::Input("audio clip is empty".into()));
        }
        if target_frames == 0 {
            return Err(Error::Input("target frame count must be at least 1".into()));
        }
        let hop = Self::hop(frame_rate)?;
        let clip = audio.resample(SAMPLE_RATE);
        let samples = clip.samples();
        if samples.is_empty() {
            return Err(Error::Input("audio clip is empty after resampling".into()));
        }
        let raw_frames = samples.len() / hop;
        let mut values = Array2::from_elem((target_frames, N_MELS), DB_FLOOR);
        for f in 0..raw_frames.min(target_frames) {
            let power = self.power_spectrum(samples, f * hop);
            for m in 0..N_MELS {
                let e: f64 = self
                    .filters
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                values[[f, m]] = power_to_db(e);
            }
        }
        Ok(MelFrames { values })
    }
}

pub fn power_to_db(power: f64) -> f64 {
    (10.0 * (power.max(POWER_AMIN) / DB_REFERENCE).log10()).max(DB_FLOOR)
}

/// Number of analysis frames before padding or truncation.
pub fn raw_frame_count(samples: usize, hop: usize) -> usize {
    samples / hop
}

/// numpy-style "reflect" indexing (edge sample not repeated), folded periodically.
fn reflect(idx: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = idx.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

pub fn mel_features(audio: &AudioClip, frame_rate: u32, target_frames: usize) -> Result<MelFrames> {
    MelExtractor::new().extract(audio, frame_rate, target_frames)
}

/// Writes the MFQ1 feature cache.
///
/// Layout: "MFQ1", u16 version, u16 frame rate, u32 T, u32 channels, then the
/// extraction parameters (u32 sample rate, u32 FFT size, u32 hop, f32 dB floor,
/// f32 dB reference) and `T x channels` float32 LE.
pub fn write_feature_cache<W: Write>(mel: &MelFrames, frame_rate: u16, mut sink: W) -> Result<()> {
    let (t, c) = mel.values.dim();
    let mut buf = Vec::with_capacity(36 + t * c * 4);
    buf.extend_from_slice(MFQ_MAGIC);
    buf.extend_from_slice(&MFQ_VERSION.to_le_bytes());
    buf.extend_from_slice(&frame_rate.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(c as u32).to_le_bytes());
    buf.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    buf.extend_from_slice(&(N_FFT as u32).to_le_bytes());
    let hop = if frame_rate == 0 { 0 } else { SAMPLE_RATE / u32::from(frame_rate) };
    buf.extend_from_slice(&hop.to_le_bytes());
    buf.extend_from_slice(&(DB_FLOOR as f32).to_le_bytes());
    buf.extend_from_slice(&(DB_REFERENCE as f32).to_le_bytes());
    put_f32s(&mut buf, mel.values.iter().map(|&v| v as f32));
    sink.write_all(&buf)?;
    Ok(())
}

/// Reads an MFQ1 cache, rejecting files produced with different extraction parameters.
pub fn read_feature_cache<R: Read>(mut source: R) -> Result<(MelFrames, u16)> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes);
    r.magic(MFQ_MAGIC)?;
    let at = r.position();
    let version = r.u16("version")?;
    if version != MFQ_VERSION {
        return Err(Error::format(at, format!("unsupported MFQ version {version}")));
    }
    let frame_rate = r.u16("frame rate")?;
    let t = r.u32("frame count")? as usize;
    let c = r.u32("channel count")? as usize;
    let at = r.position();
    let sr = r.u32("sample rate")?;
    let n_fft = r.u32("fft size")?;
    let _hop = r.u32("hop")?;
    let floor = f32::from_le_bytes(r.take(4, "dB floor")?.try_into().unwrap());
    let reference = f32::from_le_bytes(r.take(4, "dB reference")?.try_into().unwrap());
    if sr != SAMPLE_RATE
        || n_fft as usize != N_FFT
        || floor != DB_FLOOR as f32
        || reference != DB_REFERENCE as f32
    {
        return Err(Error::format(at, "feature cache was built with different extraction parameters"));
    }
    let payload = r.finite_f32s(t * c, "feature payload")?;
    r.finish("feature payload")?;
    let values = Array2::from_shape_vec((t, c), payload)
        .expect("shape checked")
        .mapv(f64::from);
    Ok((MelFrames::new(values)?, frame_rate))
}
