use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradnet::{AdamState, ParamStore, Tape, Tensor};
use crate::mvae::model::{select_rows, MvaeModel, Noise};
use crate::mvae::FusionKind;
use crate::scalar::Scalar;

const SPLIT_STREAM: u64 = 0;
const VALIDATION_STREAM: u64 = 1;
const EPOCH_STREAM_OFFSET: u64 = 16;

/// Per-epoch record of a training run. Entry `k` describes epoch `k + 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub initial_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// gPoE weights after each epoch, `[epoch][modality][latent]`.
    pub alpha: Vec<Vec<Vec<f64>>>,
    /// Epoch whose parameters were kept; 0 means the starting parameters.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }

    pub fn best_val_loss(&self) -> f64 {
        match self.best_epoch {
            0 => self.initial_val_loss,
            e => self.val_loss[e - 1],
        }
    }
}

/// Patience-based early stopping on a validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize, initial_loss: f64) -> Self {
        Self {
            patience,
            best_loss: initial_loss,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// Everything needed to continue an interrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState<T> {
    pub epochs_done: usize,
    pub max_epochs: usize,
    pub stopping: EarlyStopping,
    pub best_params: ParamStore<T>,
    pub optimizer: AdamState<T>,
    pub history: TrainingHistory,
    pub finished: bool,
}

/// Controls for [`run_training`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainOptions {
    /// Overrides the configured epoch budget.
    pub max_epochs: Option<usize>,
    /// Interrupts the run after this epoch, leaving a resumable state.
    pub stop_after_epoch: Option<usize>,
}

struct Split<T> {
    train: Vec<usize>,
    val_channels: Vec<Tensor<T>>,
    val_noise: Noise<T>,
}

fn split_cohort<T: Scalar>(model: &MvaeModel<T>, channels: &[Tensor<T>]) -> Result<Split<T>> {
    let n = channels[0].rows();
    if n == 0 {
        return Err(Error::Empty("training cohort has no subjects".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "training needs at least two subjects for a validation split".into(),
        ));
    }
    let cfg = model.config();
    let n_val = ((cfg.validation_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(cfg.seed, SPLIT_STREAM));
    let (val, train) = order.split_at(n_val);
    let mut val = val.to_vec();
    let mut train = train.to_vec();
    val.sort_unstable();
    train.sort_unstable();
    let val_channels: Vec<Tensor<T>> = channels.iter().map(|c| select_rows(c, &val)).collect();
    let val_noise = Noise::standard(
        &mut stream_rng(cfg.seed, VALIDATION_STREAM),
        val.len(),
        model.latent_dim(),
        model.n_channels(),
    );
    Ok(Split {
        train,
        val_channels,
        val_noise,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} became {v}")))
    }
}

fn alpha_snapshot<T: Scalar>(model: &MvaeModel<T>) -> Option<Vec<Vec<f64>>> {
    if model.fusion() != FusionKind::Gpoe || model.alpha_logits_id().is_none() {
        return None;
    }
    model.get_alpha().ok().map(|a| {
        a.rows()
            .iter()
            .map(|r| r.iter().map(|v| v.as_f64()).collect())
            .collect()
    })
}

/// Trains `model` on per-modality healthy data, or continues `resume`.
///
/// On completion the best-validation parameters are restored. When
/// interrupted through `stop_after_epoch` the model keeps its current
/// parameters so the returned state resumes the same trajectory.
pub fn run_training<T: Scalar>(
    model: &mut MvaeModel<T>,
    data: &[Tensor<T>],
    options: TrainOptions,
    resume: Option<TrainState<T>>,
) -> Result<TrainState<T>> {
    let channels = model.channel_inputs(data)?;
    let split = split_cohort(model, &channels)?;
    let cfg = model.config().clone();
    let mut batch = cfg.batch_size;
    if batch > split.train.len() {
        log::warn!(
            "batch size {batch} exceeds the {} training subjects; using {}",
            split.train.len(),
            split.train.len()
        );
        batch = split.train.len();
    }
    let mut state = match resume {
        Some(s) => s,
        None => {
            let initial = finite(
                model
                    .loss_channels(&split.val_channels, &split.val_noise)?
                    .as_f64(),
                "initial validation loss",
            )?;
            TrainState {
                epochs_done: 0,
                max_epochs: options.max_epochs.unwrap_or(cfg.max_epochs),
                stopping: EarlyStopping::new(cfg.early_stopping_patience, initial),
                best_params: model.params().clone(),
                optimizer: AdamState::new(model.params(), T::lit(cfg.learning_rate)),
                history: TrainingHistory {
                    initial_val_loss: initial,
                    ..TrainingHistory::default()
                },
                finished: false,
            }
        }
    };
    if let Some(m) = options.max_epochs {
        state.max_epochs = m;
    }
    while !state.finished && state.epochs_done < state.max_epochs {
        let epoch = state.epochs_done + 1;
        let mut rng = stream_rng(cfg.seed, EPOCH_STREAM_OFFSET + epoch as u64);
        let mut order = split.train.clone();
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(batch) {
            let batch_channels: Vec<Tensor<T>> =
                channels.iter().map(|c| select_rows(c, chunk)).collect();
            let noise = Noise::standard(
                &mut rng,
                chunk.len(),
                model.latent_dim(),
                model.n_channels(),
            );
            let mut tape = Tape::new();
            let loss = model.loss_on_tape(&mut tape, model.params(), &batch_channels, &noise)?;
            let value = finite(tape.scalar_value(loss)?.as_f64(), "training loss")?;
            weighted += value * chunk.len() as f64;
            tape.backward(loss, model.params_mut())?;
            state.optimizer.step(model.params_mut())?;
            model.params_mut().zero_grads();
        }
        let train_loss = weighted / order.len() as f64;
        let val_loss = finite(
            model
                .loss_channels(&split.val_channels, &split.val_noise)?
                .as_f64(),
            "validation loss",
        )?;
        state.history.train_loss.push(train_loss);
        state.history.val_loss.push(val_loss);
        if let Some(a) = alpha_snapshot(model) {
            state.history.alpha.push(a);
        }
        state.epochs_done = epoch;
        log::debug!("epoch {epoch}: train {train_loss:.6} validation {val_loss:.6}");
        match state.stopping.observe(epoch, val_loss) {
            StopDecision::Improved => state.best_params = model.params().clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                state.history.stopped_early = true;
                state.finished = true;
            }
        }
        if options.stop_after_epoch.is_some_and(|s| epoch >= s) && !state.finished {
            return Ok(state);
        }
    }
    state.finished = true;
    state.history.best_epoch = state.stopping.best_epoch;
    model.params_mut().copy_values_from(&state.best_params)?;
    Ok(state)
}

/// Trains with the configured budget and returns the history.
pub fn train<T: Scalar>(model: &mut MvaeModel<T>, data: &[Tensor<T>]) -> Result<TrainingHistory> {
    Ok(run_training(model, data, TrainOptions::default(), None)?.history)
}

/// Continues optimisation on a new healthy cohort with a fresh optimizer.
pub fn fine_tune<T: Scalar>(
    model: &mut MvaeModel<T>,
    data: &[Tensor<T>],
    max_epochs: usize,
) -> Result<TrainingHistory> {
    let options = TrainOptions {
        max_epochs: Some(max_epochs),
        stop_after_epoch: None,
    };
    Ok(run_training(model, data, options, None)?.history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvae::ModelConfig;
    use rand::Rng;

    fn config(fusion: FusionKind) -> ModelConfig {
        ModelConfig {
            latent_dim: 3,
            fusion,
            encoder_layers: vec![8, 8],
            decoder_layers: vec![8, 8],
            max_epochs: 60,
            batch_size: 32,
            learning_rate: 1e-2,
            early_stopping_patience: 15,
            seed: 4,
            ..ModelConfig::default()
        }
    }

    // Two modalities driven by a shared 2-d latent.
    fn synthetic(n: usize, seed: u64, shift: f64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0: Vec<f64> = (0..2 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w1: Vec<f64> = (0..2 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..n {
            let z: Vec<f64> = crate::fusion::standard_normal_vec(&mut noise_rng, 2);
            let z = [z[0] + shift, z[1]];
            for j in 0..6 {
                a.push(z[0] * w0[j] + z[1] * w0[6 + j] + 0.1 * noise_rng.random_range(-1.0..1.0));
            }
            for j in 0..4 {
                b.push(z[0] * w1[j] + z[1] * w1[4 + j] + 0.1 * noise_rng.random_range(-1.0..1.0));
            }
        }
        vec![
            Tensor::matrix(n, 6, a).unwrap(),
            Tensor::matrix(n, 4, b).unwrap(),
        ]
    }

    #[test]
    fn early_stopping_contract() {
        let mut s = EarlyStopping::new(1, 10.0);
        assert_eq!(s.observe(1, 5.0), StopDecision::Improved);
        assert_eq!(s.observe(2, 5.0), StopDecision::Stop);
        assert_eq!(s.best_epoch, 1);
        let mut s = EarlyStopping::new(3, 1.0);
        assert_eq!(s.observe(1, 2.0), StopDecision::Continue);
        assert_eq!(s.observe(2, 0.5), StopDecision::Improved);
        assert_eq!(s.observe(3, 0.6), StopDecision::Continue);
        assert_eq!(s.observe(4, 0.6), StopDecision::Continue);
        assert_eq!(s.observe(5, 0.6), StopDecision::Stop);
    }

    #[test]
    fn stopped_run_restores_best_parameters() {
        let data = synthetic(120, 1, 0.0);
        let mut cfg = config(FusionKind::Poe);
        cfg.early_stopping_patience = 1;
        cfg.learning_rate = 0.05;
        let mut model = MvaeModel::new(cfg, &[6, 4]).unwrap();
        let state = run_training(&mut model, &data, TrainOptions::default(), None).unwrap();
        assert_eq!(model.params(), &state.best_params);
        let h = &state.history;
        if h.stopped_early {
            let last = h.val_loss.len() - 1;
            assert!(h.val_loss[last] >= h.best_val_loss());
            assert_eq!(h.best_epoch, last);
        }
    }

    #[test]
    fn identical_seeds_give_identical_histories() {
        let data = synthetic(100, 2, 0.0);
        let run = || {
            let mut model = MvaeModel::new(config(FusionKind::Gpoe), &[6, 4]).unwrap();
            let h = train(&mut model, &data).unwrap();
            (h, model.params().clone())
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert_eq!(h1.alpha.len(), h1.epochs_run());
    }

    #[test]
    fn training_reduces_validation_loss() {
        let data = synthetic(300, 3, 0.0);
        for fusion in FusionKind::ALL {
            let mut model = MvaeModel::new(config(fusion), &[6, 4]).unwrap();
            let h = train(&mut model, &data).unwrap();
            assert!(
                h.best_val_loss() < 0.9 * h.initial_val_loss,
                "{fusion}: {} vs {}",
                h.best_val_loss(),
                h.initial_val_loss
            );
        }
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let data = synthetic(100, 4, 0.0);
        let mut full = MvaeModel::new(config(FusionKind::Moe), &[6, 4]).unwrap();
        let full_state = run_training(&mut full, &data, TrainOptions::default(), None).unwrap();

        let mut part = MvaeModel::new(config(FusionKind::Moe), &[6, 4]).unwrap();
        let options = TrainOptions {
            stop_after_epoch: Some(4),
            ..TrainOptions::default()
        };
        let state = run_training(&mut part, &data, options, None).unwrap();
        assert_eq!(state.epochs_done, 4);
        assert!(!state.finished);
        let state = run_training(&mut part, &data, TrainOptions::default(), Some(state)).unwrap();
        assert_eq!(state.history, full_state.history);
        assert_eq!(part.params(), full.params());
    }

    #[test]
    fn fine_tune_budget_and_shift() {
        let data = synthetic(200, 5, 0.0);
        let mut model = MvaeModel::new(config(FusionKind::Gpoe), &[6, 4]).unwrap();
        train(&mut model, &data).unwrap();
        let before = model.params().clone();
        let h = fine_tune(&mut model, &data, 0).unwrap();
        assert_eq!(h.epochs_run(), 0);
        assert_eq!(model.params(), &before);

        let shifted = synthetic(200, 5, 1.5);
        let noise = Noise::standard(&mut ChaCha8Rng::seed_from_u64(9), 200, 3, 2);
        let pre = model.loss(&shifted, &noise).unwrap();
        fine_tune(&mut model, &shifted, 20).unwrap();
        let post = model.loss(&shifted, &noise).unwrap();
        assert!(post < pre, "{post} vs {pre}");
    }

    #[test]
    fn oversized_batch_is_clamped_and_tiny_cohort_rejected() {
        let data = synthetic(20, 6, 0.0);
        let mut cfg = config(FusionKind::Concat);
        cfg.batch_size = 1000;
        cfg.max_epochs = 2;
        let mut model = MvaeModel::new(cfg, &[6, 4]).unwrap();
        assert_eq!(train(&mut model, &data).unwrap().epochs_run(), 2);
        let one: Vec<Tensor<f64>> = data.iter().map(|t| select_rows(t, &[0])).collect();
        assert!(train(&mut model, &one).is_err());
    }
}
