//! The audio-text network: dilated-convolution audio encoder with speaker
//! conditioning, FC/LSTM text encoder, fusion, and a BLSTM decoder that
//! regresses per-vertex offsets.

pub mod checkpoint;
pub mod fusion;
pub mod layers;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{MeshSequence, OffsetSequence, TemplateMesh};
pub use fusion::{concat_fuse, tensor_fuse, FusionMode};
pub use layers::{BiLstm, DilatedConv, Linear, Lstm, LEAKY_SLOPE};
use layers::{leaky_relu, leaky_relu_backward, BiLstmCache, LstmCache};

pub const DILATIONS: [usize; 4] = [1, 2, 4, 8];
pub const KERNEL_SIZE: usize = 3;

/// Architecture dimensions. The conv stack keeps `mel_channels` filters so the
/// residual additions line up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mel_channels: usize,
    pub text_dim: usize,
    pub text_hidden: usize,
    /// d_l: width of the text embedding.
    pub text_embed: usize,
    /// d_a: width of the audio embedding.
    pub audio_embed: usize,
    pub decoder_hidden: usize,
    pub decoder_lstm: usize,
    pub speakers: usize,
    pub vertices: usize,
    pub dilations: Vec<usize>,
    pub kernel_size: usize,
    pub fusion: FusionMode,
}

impl ModelConfig {
    /// Full-size network for `speakers` identities and `vertices` mesh vertices.
    pub fn standard(speakers: usize, vertices: usize, fusion: FusionMode) -> Self {
        Self {
            mel_channels: crate::audio::N_MELS,
            text_dim: crate::text::EMBEDDING_DIM,
            text_hidden: 128,
            text_embed: 64,
            audio_embed: 128,
            decoder_hidden: 128,
            decoder_lstm: 128,
            speakers,
            vertices,
            dilations: DILATIONS.to_vec(),
            kernel_size: KERNEL_SIZE,
            fusion,
        }
    }

    pub fn fused_width(&self) -> usize {
        self.fusion.width(self.audio_embed, self.text_embed)
    }

    pub fn output_width(&self) -> usize {
        3 * self.vertices
    }

    /// Frames on either side that can influence one audio embedding frame.
    pub fn receptive_radius(&self) -> usize {
        self.dilations.iter().map(|d| d * (self.kernel_size / 2)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.mel_channels,
            self.text_dim,
            self.text_hidden,
            self.text_embed,
            self.audio_embed,
            self.decoder_hidden,
            self.decoder_lstm,
            self.speakers,
            self.vertices,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config("convolution kernel size must be odd".into()));
        }
        if self.dilations.is_empty() || self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Config("dilations must be positive".into()));
        }
        Ok(())
    }
}

/// Every learnable tensor of the network. The same struct doubles as the
/// gradient set and the Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub audio_conv: Vec<DilatedConv>,
    pub audio_fc: Linear,
    pub text_fc1: Linear,
    pub text_fc2: Linear,
    pub text_lstm: Lstm,
    pub dec_fc1: Linear,
    pub dec_lstm: [BiLstm; 2],
    pub dec_fc2: Linear,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        Ok(Self {
            audio_conv: c
                .dilations
                .iter()
                .map(|&d| DilatedConv::zeros(c.mel_channels, c.mel_channels, c.kernel_size, d))
                .collect(),
            audio_fc: Linear::zeros(c.mel_channels + c.speakers, c.audio_embed),
            text_fc1: Linear::zeros(c.text_dim, c.text_hidden),
            text_fc2: Linear::zeros(c.text_hidden, c.text_embed),
            text_lstm: Lstm::zeros(c.text_embed, c.text_embed),
            dec_fc1: Linear::zeros(c.fused_width(), c.decoder_hidden),
            dec_lstm: [
                BiLstm::zeros(c.decoder_hidden, c.decoder_lstm),
                BiLstm::zeros(2 * c.decoder_lstm, c.decoder_lstm),
            ],
            dec_fc2: Linear::zeros(2 * c.decoder_lstm, c.output_width()),
            config: config.clone(),
        })
    }

    /// Uniform `[-a, a]` initialisation with `a = sqrt(1 / fan_in)` per tensor.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let audio_conv = c
            .dilations
            .iter()
            .map(|&d| DilatedConv::init(c.mel_channels, c.mel_channels, c.kernel_size, d, &mut rng))
            .collect();
        let audio_fc = Linear::init(c.mel_channels + c.speakers, c.audio_embed, &mut rng);
        let text_fc1 = Linear::init(c.text_dim, c.text_hidden, &mut rng);
        let text_fc2 = Linear::init(c.text_hidden, c.text_embed, &mut rng);
        let text_lstm = Lstm::init(c.text_embed, c.text_embed, &mut rng);
        let dec_fc1 = Linear::init(c.fused_width(), c.decoder_hidden, &mut rng);
        let dec_lstm = [
            BiLstm::init(c.decoder_hidden, c.decoder_lstm, &mut rng),
            BiLstm::init(2 * c.decoder_lstm, c.decoder_lstm, &mut rng),
        ];
        let dec_fc2 = Linear::init(2 * c.decoder_lstm, c.output_width(), &mut rng);
        Ok(Self {
            config: config.clone(),
            audio_conv,
            audio_fc,
            text_fc1,
            text_fc2,
            text_lstm,
            dec_fc1,
            dec_lstm,
            dec_fc2,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Tensors in a fixed order with stable dotted names.
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, conv) in self.audio_conv.iter().enumerate() {
            conv.named(&format!("audio_conv.{i}"), &mut out);
        }
        self.audio_fc.named("audio_fc", &mut out);
        self.text_fc1.named("text_fc1", &mut out);
        self.text_fc2.named("text_fc2", &mut out);
        self.text_lstm.named("text_lstm", &mut out);
        self.dec_fc1.named("dec_fc1", &mut out);
        for (i, l) in self.dec_lstm.iter().enumerate() {
            l.named(&format!("dec_lstm.{i}"), &mut out);
        }
        self.dec_fc2.named("dec_fc2", &mut out);
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, conv) in self.audio_conv.iter_mut().enumerate() {
            conv.named_mut(&format!("audio_conv.{i}"), &mut out);
        }
        self.audio_fc.named_mut("audio_fc", &mut out);
        self.text_fc1.named_mut("text_fc1", &mut out);
        self.text_fc2.named_mut("text_fc2", &mut out);
        self.text_lstm.named_mut("text_lstm", &mut out);
        self.dec_fc1.named_mut("dec_fc1", &mut out);
        for (i, l) in self.dec_lstm.iter_mut().enumerate() {
            l.named_mut(&format!("dec_lstm.{i}"), &mut out);
        }
        self.dec_fc2.named_mut("dec_fc2", &mut out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for (_, mut t) in self.named_tensors_mut() {
            t.fill(value);
        }
    }
}

pub fn one_hot(index: usize, size: usize) -> Result<Array1<f64>> {
    if index >= size {
        return Err(Error::Input(format!(
            "speaker index {index} out of range for {size} speakers"
        )));
    }
    let mut v = Array1::zeros(size);
    v[index] = 1.0;
    Ok(v)
}

fn check_one_hot(speaker: &[f64], size: usize) -> Result<()> {
    let ones = speaker.iter().filter(|&&v| v == 1.0).count();
    let zeros = speaker.iter().filter(|&&v| v == 0.0).count();
    if speaker.len() != size || ones != 1 || zeros != size - 1 {
        return Err(Error::Input(format!(
            "speaker vector must be one-hot of length {size}, got {speaker:?}"
        )));
    }
    Ok(())
}

/// One dilated convolution (pre-activation) with `weights` shaped `F x C x k`.
pub fn dilated_conv1d(
    input: ArrayView2<f64>,
    weights: &Array3<f64>,
    bias: &Array1<f64>,
    dilation: usize,
) -> Result<Array2<f64>> {
    let (filters, channels, kernel) = weights.dim();
    if input.nrows() == 0 {
        return Err(Error::Input("convolution input needs at least one frame".into()));
    }
    if input.ncols() != channels || bias.len() != filters || kernel % 2 == 0 || dilation == 0 {
        return Err(Error::Dimension(format!(
            "conv weights {filters}x{channels}x{kernel} (dilation {dilation}), bias {}, input {}x{}",
            bias.len(),
            input.nrows(),
            input.ncols()
        )));
    }
    let conv = DilatedConv {
        weight: weights.clone(),
        bias: bias.clone(),
        dilation,
    };
    Ok(conv.forward(input))
}

struct AudioTrace {
    /// Input to each residual block, plus the stack output as the last entry.
    stages: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    concat: Array2<f64>,
    embedding: Array2<f64>,
}

struct TextTrace {
    input: Array2<f64>,
    pre1: Array2<f64>,
    act1: Array2<f64>,
    pre2: Array2<f64>,
    lstm: LstmCache,
}

/// Everything a backward pass needs, recorded by [`ModelParams::trace`].
pub struct ForwardTrace {
    audio: Option<AudioTrace>,
    text: Option<TextTrace>,
    fused: Array2<f64>,
    dec1: Array2<f64>,
    lstm1: BiLstmCache,
    lstm2: BiLstmCache,
    /// `T x 3V` predicted offsets.
    pub offsets: Array2<f64>,
}

impl ForwardTrace {
    pub fn audio_embedding(&self) -> Option<&Array2<f64>> {
        self.audio.as_ref().map(|a| &a.embedding)
    }

    pub fn text_embedding(&self) -> Option<&Array2<f64>> {
        self.text.as_ref().map(|t| &t.lstm.hidden)
    }

    pub fn fused(&self) -> &Array2<f64> {
        &self.fused
    }

    pub fn frame_count(&self) -> usize {
        self.offsets.nrows()
    }
}

/// Gradients with respect to the network inputs.
#[derive(Debug, Clone, Default)]
pub struct InputGradients {
    pub audio: Option<Array2<f64>>,
    pub text: Option<Array2<f64>>,
}

impl ModelParams {
    fn check_inputs(&self, audio: ArrayView2<f64>, text: ArrayView2<f64>, speaker: &[f64]) -> Result<()> {
        let c = &self.config;
        if audio.nrows() != text.nrows() {
            return Err(Error::Length {
                audio: audio.nrows(),
                text: text.nrows(),
            });
        }
        if audio.nrows() == 0 {
            return Err(Error::Input("sequences need at least one frame".into()));
        }
        if c.fusion.uses_audio() {
            if audio.ncols() != c.mel_channels {
                return Err(Error::Dimension(format!(
                    "audio features have {} channels, model expects {}",
                    audio.ncols(),
                    c.mel_channels
                )));
            }
            check_one_hot(speaker, c.speakers)?;
        }
        if c.fusion.uses_text() && text.ncols() != c.text_dim {
            return Err(Error::Dimension(format!(
                "text features have {} dims, model expects {}",
                text.ncols(),
                c.text_dim
            )));
        }
        Ok(())
    }

    fn audio_forward(&self, mel: ArrayView2<f64>, speaker: &[f64]) -> AudioTrace {
        let frames = mel.nrows();
        let mut x = mel.to_owned();
        let mut stages = Vec::with_capacity(self.audio_conv.len() + 1);
        let mut pre = Vec::with_capacity(self.audio_conv.len());
        for conv in &self.audio_conv {
            let z = conv.forward(x.view());
            let next = &x + &leaky_relu(&z);
            stages.push(x);
            pre.push(z);
            x = next;
        }
        let c = x.ncols();
        let mut concat = Array2::<f64>::zeros((frames, c + speaker.len()));
        concat.slice_mut(ndarray::s![.., ..c]).assign(&x);
        for mut row in concat.slice_mut(ndarray::s![.., c..]).rows_mut() {
            row.iter_mut().zip(speaker).for_each(|(d, s)| *d = *s);
        }
        stages.push(x);
        let embedding = self.audio_fc.forward(concat.view());
        AudioTrace {
            stages,
            pre,
            concat,
            embedding,
        }
    }

    fn text_forward(&self, text: ArrayView2<f64>) -> TextTrace {
        let pre1 = self.text_fc1.forward(text);
        let act1 = leaky_relu(&pre1);
        let pre2 = self.text_fc2.forward(act1.view());
        let lstm = self.text_lstm.forward(pre2.view(), false);
        TextTrace {
            input: text.to_owned(),
            pre1,
            act1,
            pre2,
            lstm,
        }
    }

    /// Runs the network and records the activations for [`Self::backward`].
    pub fn trace(&self, audio: ArrayView2<f64>, text: ArrayView2<f64>, speaker: &[f64]) -> Result<ForwardTrace> {
        self.check_inputs(audio, text, speaker)?;
        let mode = self.config.fusion;
        let audio_trace = mode.uses_audio().then(|| self.audio_forward(audio, speaker));
        let text_trace = mode.uses_text().then(|| self.text_forward(text));
        let fused = fusion::fuse_sequences(
            mode,
            audio_trace.as_ref().map(|a| &a.embedding),
            text_trace.as_ref().map(|t| &t.lstm.hidden),
        );
        self.decode_trace(fused, audio_trace, text_trace)
    }

    fn decode_trace(
        &self,
        fused: Array2<f64>,
        audio: Option<AudioTrace>,
        text: Option<TextTrace>,
    ) -> Result<ForwardTrace> {
        if fused.ncols() != self.dec_fc1.input_dim() {
            return Err(Error::Dimension(format!(
                "fused width {} does not match decoder input {}",
                fused.ncols(),
                self.dec_fc1.input_dim()
            )));
        }
        let dec1 = self.dec_fc1.forward(fused.view());
        let lstm1 = self.dec_lstm[0].run(dec1.view());
        let lstm2 = self.dec_lstm[1].run(lstm1.output.view());
        let offsets = self.dec_fc2.forward(lstm2.output.view());
        Ok(ForwardTrace {
            audio,
            text,
            fused,
            dec1,
            lstm1,
            lstm2,
            offsets,
        })
    }

    /// Accumulates d(loss)/d(param) into `grads` given d(loss)/d(offsets).
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_offsets: &Array2<f64>,
        grads: &mut ModelParams,
        want_inputs: bool,
    ) -> InputGradients {
        let d_l2 = self
            .dec_fc2
            .backward(trace.lstm2.output.view(), d_offsets, &mut grads.dec_fc2, true)
            .expect("input grad");
        let d_l1 = self.dec_lstm[1]
            .backprop(trace.lstm1.output.view(), &trace.lstm2, &d_l2, &mut grads.dec_lstm[1], true)
            .expect("input grad");
        let d_dec1 = self.dec_lstm[0]
            .backprop(trace.dec1.view(), &trace.lstm1, &d_l1, &mut grads.dec_lstm[0], true)
            .expect("input grad");
        let d_fused = self
            .dec_fc1
            .backward(trace.fused.view(), &d_dec1, &mut grads.dec_fc1, true)
            .expect("input grad");
        let (d_ha, d_hl) = fusion::fuse_backward(
            self.config.fusion,
            trace.audio.as_ref().map(|a| &a.embedding),
            trace.text.as_ref().map(|t| &t.lstm.hidden),
            &d_fused,
        );

        let mut inputs = InputGradients::default();
        if let (Some(a), Some(d)) = (&trace.audio, d_ha) {
            let d_concat = self
                .audio_fc
                .backward(a.concat.view(), &d, &mut grads.audio_fc, true)
                .expect("input grad");
            let c = self.config.mel_channels;
            let mut dx = d_concat.slice(ndarray::s![.., ..c]).to_owned();
            for (k, conv) in self.audio_conv.iter().enumerate().rev() {
                let d_pre = leaky_relu_backward(&a.pre[k], &dx);
                let d_in = conv.backward(a.stages[k].view(), &d_pre, &mut grads.audio_conv[k]);
                dx += &d_in;
            }
            if want_inputs {
                inputs.audio = Some(dx);
            }
        }
        if let (Some(t), Some(d)) = (&trace.text, d_hl) {
            let d_pre2 = self
                .text_lstm
                .backward(t.pre2.view(), &t.lstm, &d, &mut grads.text_lstm, true)
                .expect("input grad");
            let d_act1 = self
                .text_fc2
                .backward(t.act1.view(), &d_pre2, &mut grads.text_fc2, true)
                .expect("input grad");
            let d_pre1 = leaky_relu_backward(&t.pre1, &d_act1);
            inputs.text = self
                .text_fc1
                .backward(t.input.view(), &d_pre1, &mut grads.text_fc1, want_inputs);
        }
        inputs
    }

    /// `T x 3V` offsets for the given inputs.
    pub fn predict_offsets(&self, audio: ArrayView2<f64>, text: ArrayView2<f64>, speaker: &[f64]) -> Result<Array2<f64>> {
        Ok(self.trace(audio, text, speaker)?.offsets)
    }

    /// Predicted meshes: offsets added to `template`.
    pub fn forward(
        &self,
        audio: ArrayView2<f64>,
        text: ArrayView2<f64>,
        speaker: &[f64],
        template: &TemplateMesh,
        frame_rate: u16,
    ) -> Result<MeshSequence> {
        check_template(&self.config, template)?;
        let offsets = self.predict_offsets(audio, text, speaker)?;
        offsets_to_mesh(offsets, template, frame_rate)
    }
}

fn check_template(config: &ModelConfig, template: &TemplateMesh) -> Result<()> {
    if template.vertex_count() != config.vertices {
        return Err(Error::Dimension(format!(
            "template has {} vertices, model predicts {}",
            template.vertex_count(),
            config.vertices
        )));
    }
    Ok(())
}

fn offsets_to_mesh(offsets: Array2<f64>, template: &TemplateMesh, frame_rate: u16) -> Result<MeshSequence> {
    let offsets = OffsetSequence::from_flat(offsets)?;
    crate::mesh::from_offsets(&offsets, template, frame_rate)
}

/// Audio embedding `H^a` (`T x d_a`).
pub fn audio_encode(params: &ModelParams, mel: ArrayView2<f64>, speaker: &[f64]) -> Result<Array2<f64>> {
    let c = &params.config;
    if mel.ncols() != c.mel_channels {
        return Err(Error::Dimension(format!(
            "audio features have {} channels, model expects {}",
            mel.ncols(),
            c.mel_channels
        )));
    }
    check_one_hot(speaker, c.speakers)?;
    Ok(params.audio_forward(mel, speaker).embedding)
}

/// Text embedding `H^l` (`T x d_l`).
pub fn text_encode(params: &ModelParams, text: ArrayView2<f64>) -> Result<Array2<f64>> {
    if text.ncols() != params.config.text_dim {
        return Err(Error::Dimension(format!(
            "text features have {} dims, model expects {}",
            text.ncols(),
            params.config.text_dim
        )));
    }
    Ok(params.text_forward(text).lstm.hidden)
}

/// Per-frame fusion of two embedding sequences according to `mode`.
pub fn fuse(mode: FusionMode, h_a: &Array2<f64>, h_l: &Array2<f64>) -> Result<Array2<f64>> {
    if h_a.nrows() != h_l.nrows() {
        return Err(Error::Length {
            audio: h_a.nrows(),
            text: h_l.nrows(),
        });
    }
    Ok(fusion::fuse_sequences(mode, Some(h_a), Some(h_l)))
}

/// Decoder alone: fused frames to meshes.
pub fn decode(
    params: &ModelParams,
    fused: &Array2<f64>,
    template: &TemplateMesh,
    frame_rate: u16,
) -> Result<MeshSequence> {
    check_template(&params.config, template)?;
    let trace = params.decode_trace(fused.clone(), None, None)?;
    offsets_to_mesh(trace.offsets, template, frame_rate)
}

/// Mean of the per-frame rows of a `T x D` sequence.
pub fn mean_over_time(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny(fusion: FusionMode) -> ModelConfig {
        ModelConfig {
            mel_channels: 4,
            text_dim: 6,
            text_hidden: 5,
            text_embed: 3,
            audio_embed: 5,
            decoder_hidden: 4,
            decoder_lstm: 3,
            speakers: 2,
            vertices: 4,
            dilations: DILATIONS.to_vec(),
            kernel_size: 3,
            fusion,
        }
    }

    fn inputs(frames: usize, c: &ModelConfig) -> (Array2<f64>, Array2<f64>) {
        let a = Array2::from_shape_fn((frames, c.mel_channels), |(t, k)| ((t * 7 + k * 3) % 11) as f64 * 0.2 - 1.0);
        let l = Array2::from_shape_fn((frames, c.text_dim), |(t, k)| ((t * 5 + k) % 7) as f64 * 0.3 - 0.9);
        (a, l)
    }

    #[test]
    fn zero_weights_audio_embedding_is_bias() {
        let c = tiny(FusionMode::Tensor);
        let mut p = ModelParams::zeros(&c).unwrap();
        p.audio_fc.bias = Array1::from(vec![0.5, -1.0, 2.0, 0.0, 3.0]);
        let (a, _) = inputs(7, &c);
        let h = audio_encode(&p, a.view(), &[0.0, 1.0]).unwrap();
        for row in h.rows() {
            assert_eq!(row, p.audio_fc.bias);
        }
    }

    #[test]
    fn zero_text_encoder_outputs_zero() {
        let c = tiny(FusionMode::Tensor);
        let p = ModelParams::zeros(&c).unwrap();
        let (_, l) = inputs(9, &c);
        assert!(text_encode(&p, l.view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_output_layer_passes_template_through() {
        for mode in FusionMode::ALL {
            let c = tiny(mode);
            let mut p = ModelParams::init(&c, 1).unwrap();
            p.dec_fc2.weight.fill(0.0);
            p.dec_fc2.bias.fill(0.0);
            let template = TemplateMesh::new(Array2::from_shape_fn((4, 3), |(v, k)| (v * 3 + k) as f32 * 0.1)).unwrap();
            let (a, l) = inputs(6, &c);
            let out = p.forward(a.view(), l.view(), &[1.0, 0.0], &template, 25).unwrap();
            assert_eq!(out, template.repeat(6, 25).unwrap());
        }
    }

    #[test]
    fn shape_contract() {
        let mut c = tiny(FusionMode::Tensor);
        c.vertices = 100;
        let p = ModelParams::init(&c, 2).unwrap();
        let (a, l) = inputs(40, &c);
        let template = TemplateMesh::new(Array2::zeros((100, 3))).unwrap();
        let out = p.forward(a.view(), l.view(), &[1.0, 0.0], &template, 25).unwrap();
        assert_eq!(out.vertices().dim(), (40, 100, 3));
    }

    #[test]
    fn length_mismatch_reports_both() {
        let c = tiny(FusionMode::Tensor);
        let p = ModelParams::init(&c, 2).unwrap();
        let (a, _) = inputs(5, &c);
        let (_, l) = inputs(6, &c);
        match p.trace(a.view(), l.view(), &[1.0, 0.0]) {
            Err(Error::Length { audio: 5, text: 6 }) => {}
            Err(e) => panic!("unexpected {e}"),
            Ok(_) => panic!("expected error"),
        }
    }

    #[test]
    fn invalid_one_hot_rejected() {
        let c = tiny(FusionMode::Tensor);
        let p = ModelParams::init(&c, 2).unwrap();
        let (a, _) = inputs(5, &c);
        for bad in [vec![1.0, 1.0], vec![0.5, 0.5], vec![1.0], vec![0.0, 0.0]] {
            assert!(matches!(audio_encode(&p, a.view(), &bad), Err(Error::Input(_))));
        }
        assert!(one_hot(2, 2).is_err());
    }

    #[test]
    fn speaker_changes_audio_embedding() {
        let c = tiny(FusionMode::Tensor);
        let p = ModelParams::init(&c, 5).unwrap();
        let (a, _) = inputs(5, &c);
        let h0 = audio_encode(&p, a.view(), &[1.0, 0.0]).unwrap();
        let h1 = audio_encode(&p, a.view(), &[0.0, 1.0]).unwrap();
        assert_ne!(h0, h1);
    }

    #[test]
    fn forward_is_deterministic() {
        let c = tiny(FusionMode::Tensor);
        let p = ModelParams::init(&c, 9).unwrap();
        let (a, l) = inputs(8, &c);
        let x = p.predict_offsets(a.view(), l.view(), &[0.0, 1.0]).unwrap();
        let y = p.predict_offsets(a.view(), l.view(), &[0.0, 1.0]).unwrap();
        assert_eq!(x, y);
        assert_eq!(ModelParams::init(&c, 9).unwrap(), p);
    }

    #[test]
    fn decode_rejects_wrong_width() {
        let c = tiny(FusionMode::Tensor);
        let p = ModelParams::init(&c, 9).unwrap();
        let template = TemplateMesh::new(Array2::zeros((4, 3))).unwrap();
        assert!(matches!(
            decode(&p, &Array2::zeros((3, 5)), &template, 25),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn unused_encoder_gets_zero_gradient() {
        let c = tiny(FusionMode::AudioOnly);
        let p = ModelParams::init(&c, 4).unwrap();
        let (a, l) = inputs(6, &c);
        let trace = p.trace(a.view(), l.view(), &[1.0, 0.0]).unwrap();
        let mut g = p.zeros_like();
        let d = Array2::from_elem(trace.offsets.raw_dim(), 1.0);
        p.backward(&trace, &d, &mut g, false);
        assert!(g.text_fc1.weight.iter().all(|&v| v == 0.0));
        assert!(g.text_lstm.w_hh.iter().all(|&v| v == 0.0));
        assert!(g.audio_conv[0].weight.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn named_tensors_are_unique_and_complete() {
        let p = ModelParams::init(&tiny(FusionMode::Tensor), 0).unwrap();
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert_eq!(names.len(), 4 * 2 + 2 * 3 + 3 + 2 + 2 * 2 * 3 + 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn forward_is_pure_and_local(seed in 0u64..1000, frames in 1usize..40, k in 0usize..40) {
            let c = tiny(FusionMode::Concat);
            let p = ModelParams::init(&c, seed).unwrap();
            let (a, l) = inputs(frames, &c);
            let h = audio_encode(&p, a.view(), &[1.0, 0.0]).unwrap();
            prop_assert_eq!(&h, &audio_encode(&p, a.view(), &[1.0, 0.0]).unwrap());
            prop_assert_eq!(
                p.predict_offsets(a.view(), l.view(), &[1.0, 0.0]).unwrap(),
                p.predict_offsets(a.view(), l.view(), &[1.0, 0.0]).unwrap()
            );
            let k = k % frames;
            let mut moved = a.clone();
            moved.row_mut(k).mapv_inplace(|v| v + 0.5);
            let h2 = audio_encode(&p, moved.view(), &[1.0, 0.0]).unwrap();
            let radius = c.receptive_radius();
            for t in 0..frames {
                if t.abs_diff(k) > radius {
                    prop_assert_eq!(h.row(t), h2.row(t));
                }
            }
        }
    }
}
