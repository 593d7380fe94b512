use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{standard_normal_matrix, ArchitectureSpec, EncodedRows, ModelParams, LOG_SPREAD};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grad::{Adam, AdamConfig, AdamState};
use crate::schema::{validation_split, Dataset};
use crate::stream_rng;
use crate::transform::{BundleFitOptions, MixtureFitOptions, TransformBundle};

// Seed-stream tags.
const STREAM_FIT_ENCODE: u64 = 1;
const STREAM_VAL_ENCODE: u64 = 2;
const STREAM_VAL_NOISE: u64 = 3;
const STREAM_EPOCH_BASE: u64 = 1 << 32;

// Bounds on the per-column output spread, as in the reference tabular VAE.
const MIN_LOG_SPREAD: f64 = -4.605_170_185_988_091; // ln 0.01
const MAX_LOG_SPREAD: f64 = 0.0; // ln 1

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// One of 64, 128, 256, 512.
    pub preset: usize,
    /// Overrides `preset` when set.
    pub custom_arch: Option<ArchitectureSpec>,
    pub validation_fraction: f64,
    /// `false` trains the unconditional baseline.
    pub conditioning: bool,
    pub max_modes: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 500,
            max_epochs: 300,
            patience: 10,
            learning_rate: 1e-3,
            seed: 0,
            preset: 256,
            custom_arch: None,
            validation_fraction: 0.1,
            conditioning: true,
            max_modes: 10,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn arch(&self) -> Result<ArchitectureSpec> {
        match self.custom_arch {
            Some(a) => {
                a.validate()?;
                Ok(a)
            }
            None => ArchitectureSpec::preset(self.preset),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Argument("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Argument("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if self.max_modes == 0 {
            return Err(Error::Argument("max_modes must be at least 1".into()));
        }
        self.arch()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on validation loss (strict improvement).
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, validation_loss: f64) -> StopDecision {
        if validation_loss < self.best {
            self.best = validation_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Fits transforms on `data`, holds out a validation fraction, and trains by
/// mini-batch Adam on the mean negated ELBO. Returns the parameters from the
/// epoch with the lowest validation loss.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, TrainingHistory)> {
    cfg.validate()?;
    let bundle = TransformBundle::fit(
        data,
        &BundleFitOptions {
            mixture: MixtureFitOptions {
                max_modes: cfg.max_modes,
                ..Default::default()
            },
            seed: cfg.seed,
            execution: cfg.execution,
        },
    )?;
    let (fit, val) = validation_split(data, cfg.validation_fraction, cfg.seed)?;
    let fit_rows = EncodedRows::encode(&bundle, fit.rows(), &mut stream_rng(cfg.seed, STREAM_FIT_ENCODE))?;
    let val_rows = EncodedRows::encode(&bundle, val.rows(), &mut stream_rng(cfg.seed, STREAM_VAL_ENCODE))?;
    let model = ModelParams::init(bundle, cfg.arch()?, cfg.conditioning, cfg.seed)?;
    train_encoded(model, &fit_rows, &val_rows, cfg)
}

/// Training loop over already-encoded rows, starting from `model`.
pub(crate) fn train_encoded(
    mut model: ModelParams,
    fit: &EncodedRows,
    val: &EncodedRows,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainingHistory)> {
    cfg.validate()?;
    if fit.is_empty() || val.is_empty() {
        return Err(Error::Argument("training and validation rows must be non-empty".into()));
    }
    let latent = model.arch().latent_dim;
    let val_noise = standard_normal_matrix(val.len(), latent, &mut stream_rng(cfg.seed, STREAM_VAL_NOISE));
    let adam = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..Default::default()
    });
    let mut state = AdamState::for_params(model.params());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut records = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = stream_rng(cfg.seed, STREAM_EPOCH_BASE + epoch as u64);
        let mut order: Vec<usize> = (0..fit.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let rows = fit.subset(batch);
            let noise = standard_normal_matrix(batch.len(), latent, &mut rng);
            let (loss, grads) = model
                .loss_and_grad(&rows, &noise, true, cfg.execution)
                .map_err(|e| Error::Training {
                    epoch,
                    message: e.to_string(),
                })?;
            if !loss.elbo_negated.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "non-finite loss".into(),
                });
            }
            loss_sum += loss.elbo_negated * batch.len() as f64;
            let (mut params, next) = adam
                .step(model.params(), &grads.expect("gradients requested"), &state)
                .map_err(|e| Error::Training {
                    epoch,
                    message: e.to_string(),
                })?;
            let mut values = params.values().to_vec();
            values[LOG_SPREAD]
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = v.clamp(MIN_LOG_SPREAD, MAX_LOG_SPREAD));
            params = params.with_values(values)?;
            model = model.with_params(params)?;
            state = next;
        }
        let (val_loss, _) = model
            .loss_and_grad(val, &val_noise, false, cfg.execution)
            .map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / fit.len() as f64,
            validation_loss: val_loss.elbo_negated,
        });
        match stopper.observe(epoch, val_loss.elbo_negated) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok((
        best,
        TrainingHistory {
            epochs: records,
            best_epoch: stopper.best_epoch(),
            best_validation_loss: stopper.best(),
            stopped_early,
        },
    ))
}
