//! Sum-of-squares vertex loss, Adam, and the seeded training loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::mesh::MeshSequence;
use crate::model::checkpoint::{save_checkpoint, CheckpointMeta, OptimizerRecord};
use crate::model::{ModelConfig, ModelParams};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 100;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// `sum_t sum_v ||pred - truth||^2` over all frames and vertices.
pub fn mse_loss(pred: &MeshSequence, truth: &MeshSequence) -> Result<f64> {
    if pred.vertices().dim() != truth.vertices().dim() {
        return Err(Error::Dimension(format!(
            "prediction is {:?}, ground truth is {:?}",
            pred.vertices().dim(),
            truth.vertices().dim()
        )));
    }
    Ok(pred
        .vertices()
        .iter()
        .zip(truth.vertices().iter())
        .map(|(&p, &t)| {
            let d = f64::from(p) - f64::from(t);
            d * d
        })
        .sum())
}

/// Loss on flat `T x 3V` offsets and its gradient. With `normalize`, the sum
/// is divided by `T * V`.
pub fn offset_loss(pred: &Array2<f64>, target: &Array2<f64>, normalize: bool) -> (f64, Array2<f64>) {
    let scale = if normalize {
        1.0 / (pred.nrows() * (pred.ncols() / 3)) as f64
    } else {
        1.0
    };
    let mut grad = Array2::<f64>::zeros(pred.raw_dim());
    let mut loss = 0.0;
    Zip::from(&mut grad).and(pred).and(target).for_each(|g, &p, &t| {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d * scale;
    });
    (loss * scale, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: ModelParams,
    pub second: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before anything is modified.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) -> Result<()> {
    if params.config != grads.config || params.config != state.first.config {
        return Err(Error::Dimension("parameter, gradient and optimizer shapes differ".into()));
    }
    for (name, g) in grads.named_tensors() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient in {name}")));
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powf(state.step as f64);
    let c2 = 1.0 - b2.powf(state.step as f64);
    let grads = grads.named_tensors();
    let firsts = state.first.named_tensors_mut();
    let seconds = state.second.named_tensors_mut();
    for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in params
        .named_tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(firsts)
        .zip(seconds)
    {
        Zip::from(&mut p)
            .and(&g)
            .and(&mut m)
            .and(&mut v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Divide the summed loss by `T * V`.
    pub normalize_loss: bool,
    pub frame_rate: u16,
    /// Recorded in the checkpoint manifest.
    pub embeddings: String,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 1,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            normalize_loss: true,
            frame_rate: 25,
            embeddings: "pseudo:0".into(),
            checkpoint_dir: None,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "batch size {} unsupported; only 1 is implemented",
                self.batch_size
            )));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Holds the parameters, optimizer state and shuffling generator.
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    grads: ModelParams,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config.model, config.seed)?;
        let adam = AdamState::new(&params);
        let grads = params.zeros_like();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            config,
            params,
            adam,
            grads,
            rng,
        })
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        let c = &self.params.config;
        if sample.speaker >= c.speakers {
            return Err(Error::Input(format!(
                "utterance {} has speaker {} but the model knows {}",
                sample.id, sample.speaker, c.speakers
            )));
        }
        if sample.target.ncols() != c.output_width() {
            return Err(Error::Dimension(format!(
                "utterance {} has {} vertices, model predicts {}",
                sample.id,
                sample.target.ncols() / 3,
                c.vertices
            )));
        }
        Ok(())
    }

    /// Loss of the current parameters on `sample`, without updating.
    pub fn evaluate(&self, sample: &Sample) -> Result<f64> {
        self.check_sample(sample)?;
        let speaker = crate::model::one_hot(sample.speaker, self.params.config.speakers)?;
        let pred = self.params.predict_offsets(
            sample.audio.view(),
            sample.text.view(),
            speaker.as_slice().expect("contiguous"),
        )?;
        Ok(offset_loss(&pred, &sample.target, self.config.normalize_loss).0)
    }

    /// Forward, loss, backward and one Adam update. Returns the pre-update loss.
    pub fn step(&mut self, sample: &Sample) -> Result<f64> {
        self.check_sample(sample)?;
        let speaker = crate::model::one_hot(sample.speaker, self.params.config.speakers)?;
        let trace = self.params.trace(
            sample.audio.view(),
            sample.text.view(),
            speaker.as_slice().expect("contiguous"),
        )?;
        let (loss, d_offsets) = offset_loss(&trace.offsets, &sample.target, self.config.normalize_loss);
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss on utterance {}", sample.id)));
        }
        self.grads.fill(0.0);
        self.params.backward(&trace, &d_offsets, &mut self.grads, false);
        adam_step(&mut self.params, &self.grads, &mut self.adam, self.config.learning_rate)
            .map_err(|e| Error::Training(format!("utterance {}: {e}", sample.id)))?;
        Ok(loss)
    }

    /// One pass over `data` in a freshly shuffled order; returns the mean loss.
    pub fn run_epoch(&mut self, data: &[Sample]) -> Result<f64> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for &i in &order {
            total += self.step(&data[i])?;
        }
        Ok(total / data.len() as f64)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            seed: self.config.seed,
            frame_rate: self.config.frame_rate,
            embeddings: self.config.embeddings.clone(),
            optimizer: Some(OptimizerRecord {
                learning_rate: self.config.learning_rate,
                beta1: self.adam.beta1,
                beta2: self.adam.beta2,
                epsilon: self.adam.epsilon,
                steps: self.adam.step,
            }),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.params, &self.meta())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Mean loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
}

/// Trains for `config.epochs` epochs, writing checkpoints if a directory is set.
pub fn train(config: TrainConfig, dataset: &[Sample]) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut trainer = Trainer::new(config)?;
    let mut epoch_losses = Vec::with_capacity(trainer.config.epochs);
    for epoch in 1..=trainer.config.epochs {
        let loss = trainer.run_epoch(dataset)?;
        info!("epoch {epoch}: mean loss {loss:.6e}");
        epoch_losses.push(loss);
        if let (Some(dir), Some(every)) = (&trainer.config.checkpoint_dir, trainer.config.checkpoint_every) {
            if epoch % every == 0 && epoch != trainer.config.epochs {
                trainer.save(&dir.join(format!("epoch_{epoch:04}")))?;
            }
        }
    }
    if let Some(dir) = &trainer.config.checkpoint_dir {
        trainer.save(dir)?;
        write_loss_csv(&dir.join("loss.csv"), &epoch_losses)?;
    }
    Ok(TrainOutcome {
        params: trainer.params,
        adam: trainer.adam,
        epoch_losses,
    })
}

/// `epoch,mean_loss` rows, epochs counted from 1.
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "epoch,mean_loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{},{l:e}", i + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::model::{FusionMode, DILATIONS};
    use ndarray::{Array1, Array3};

    fn seq(values: Vec<f32>, t: usize) -> MeshSequence {
        MeshSequence::new(Array3::from_shape_vec((t, 1, 3), values).unwrap(), 25).unwrap()
    }

    #[test]
    fn loss_examples() {
        let a = seq(vec![1.0, 2.0, 3.0], 1);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_loss(&seq(vec![1.0, 0.0, 0.0], 1), &seq(vec![0.0; 3], 1)).unwrap(), 1.0);
        let p = seq(vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0], 2);
        assert_eq!(mse_loss(&p, &seq(vec![0.0; 6], 2)).unwrap(), 5.0);
        assert!(mse_loss(&p, &a).is_err());
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            mel_channels: 2,
            text_dim: 3,
            text_hidden: 2,
            text_embed: 2,
            audio_embed: 2,
            decoder_hidden: 2,
            decoder_lstm: 2,
            speakers: 1,
            vertices: 1,
            dilations: DILATIONS.to_vec(),
            kernel_size: 3,
            fusion: FusionMode::Tensor,
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = ModelParams::init(&tiny(), 3).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &before.zeros_like(), &mut state, 1e-4).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ModelParams::zeros(&tiny()).unwrap();
        let mut g = p.zeros_like();
        g.dec_fc2.bias = Array1::from(vec![3.0, -0.5, 0.0]);
        let mut state = AdamState::new(&p);
        let lr = 1e-4;
        adam_step(&mut p, &g, &mut state, lr).unwrap();
        let b = &p.dec_fc2.bias;
        assert!(b[0] < 0.0 && b[0].abs() <= lr * (1.0 + 1e-6) && b[0].abs() > lr * 0.999);
        assert!(b[1] > 0.0 && b[1].abs() <= lr * (1.0 + 1e-6));
        assert_eq!(b[2], 0.0);

        let first = b[0].abs();
        let prev = b[0];
        adam_step(&mut p, &g, &mut state, lr).unwrap();
        let second = (p.dec_fc2.bias[0] - prev).abs();
        assert!(second <= first + 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = ModelParams::zeros(&tiny()).unwrap();
        let mut g = p.zeros_like();
        g.text_fc2.weight[[0, 0]] = f64::NAN;
        let mut state = AdamState::new(&p);
        match adam_step(&mut p, &g, &mut state, 1e-4) {
            Err(Error::Training(msg)) => assert!(msg.contains("text_fc2.weight"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(state.step, 0);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(tiny());
        assert!(c.validate().is_ok());
        c.epochs = 0;
        assert!(c.validate().is_err());
        c.epochs = 1;
        c.batch_size = 2;
        assert!(c.validate().is_err());
        c.batch_size = 1;
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train(TrainConfig::new(tiny()), &[]).is_err());
    }

    #[test]
    fn normalized_loss_gradient() {
        let pred = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let target = Array2::zeros((2, 3));
        let (raw, graw) = offset_loss(&pred, &target, false);
        let (norm, gnorm) = offset_loss(&pred, &target, true);
        assert_eq!(raw, 14.0);
        assert_eq!(norm, 7.0);
        assert_eq!(graw[[0, 2]], 6.0);
        assert_eq!(gnorm[[0, 2]], 3.0);
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_and_zero_only_on_equality(
            p in proptest::collection::vec(-2.0f32..2.0, 12),
            q in proptest::collection::vec(-2.0f32..2.0, 12),
        ) {
            let (a, b) = (seq(p.clone(), 4), seq(q.clone(), 4));
            let l = mse_loss(&a, &b).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, p == q);
            prop_assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
            let pa = Array2::from_shape_vec((4, 3), p.iter().map(|&v| f64::from(v)).collect()).unwrap();
            let qa = Array2::from_shape_vec((4, 3), q.iter().map(|&v| f64::from(v)).collect()).unwrap();
            let (n, _) = offset_loss(&pa, &qa, true);
            prop_assert!((n - l / 4.0).abs() <= 1e-9 * l.max(1.0));
        }
    }
}
