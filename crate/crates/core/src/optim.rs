//! Minibatch optimizers, early stopping and the shared training configuration.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    SgdMomentum,
    #[default]
    Adam,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidParams(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Only used by `SgdMomentum`.
    pub momentum: f64,
    /// Decoupled decay: every step also shrinks each parameter by
    /// `learning_rate * weight_decay` of its value.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation fraction must lie in (0,1), got {}",
                self.validation_fraction
            ));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta must be non-negative, got {}", self.min_delta));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0,1), got {}", self.momentum));
        }
        Ok(())
    }
}

/// Flat views over every trainable tensor, in a fixed order.
///
/// Models and their gradient sets share one layout so optimizers can walk
/// both in lockstep.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.param_count();
        if flat.len() != total {
            return Err(Error::dim("flat parameter vector", total, flat.len()));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            let n = slice.len();
            slice.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Euclidean norm over all entries.
    fn global_norm(&self) -> f64 {
        self.param_slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
    steps: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new<P: Parameters + ?Sized>(config: &TrainConfig, model: &P) -> Self {
        let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Optimizer {
            kind: config.optimizer,
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            steps: 0,
            first: zeros(),
            second: match config.optimizer {
                OptimizerKind::Adam => zeros(),
                OptimizerKind::SgdMomentum => Vec::new(),
            },
        }
    }

    pub fn step<P, G>(&mut self, model: &mut P, grads: &G)
    where
        P: Parameters + ?Sized,
        G: Parameters + ?Sized,
    {
        self.steps += 1;
        let grads = grads.param_slices();
        let mut params = model.param_slices_mut();
        if self.weight_decay > 0.0 {
            let keep = 1.0 - self.learning_rate * self.weight_decay;
            for p in params.iter_mut() {
                p.iter_mut().for_each(|v| *v *= keep);
            }
        }
        assert_eq!(params.len(), grads.len(), "gradient layout differs from model");
        match self.kind {
            OptimizerKind::SgdMomentum => {
                for ((p, g), vel) in params.into_iter().zip(grads).zip(&mut self.first) {
                    for i in 0..p.len() {
                        vel[i] = self.momentum * vel[i] - self.learning_rate * g[i];
                        p[i] += vel[i];
                    }
                }
            }
            OptimizerKind::Adam => {
                let bias1 = 1.0 - ADAM_BETA1.powi(self.steps);
                let bias2 = 1.0 - ADAM_BETA2.powi(self.steps);
                let step_size = self.learning_rate * bias2.sqrt() / bias1;
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for i in 0..p.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        p[i] -= step_size * m[i] / (v[i].sqrt() + ADAM_EPS * bias2.sqrt());
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Stops once the validation loss has failed to improve on the best value by
/// `min_delta` for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Returns `true` when `loss` is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta || (self.best.is_infinite() && loss.is_finite()) {
            self.best = loss;
            self.wait = 0;
            true
        } else {
            self.wait += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.wait >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Shared epoch loop: shuffled minibatches over `0..n_train`, one optimizer
/// step per batch, validation after every epoch, early stopping, and the
/// best-validation parameters returned.
pub(crate) fn train_loop<M, G, B, V>(
    mut model: M,
    config: &TrainConfig,
    n_train: usize,
    mut batch_loss: B,
    mut validation_loss: V,
) -> Result<(M, TrainHistory)>
where
    M: Parameters + Clone,
    G: Parameters,
    B: FnMut(&M, &[usize]) -> Result<(f64, G)>,
    V: FnMut(&M) -> Result<f64>,
{
    let mut optimizer = Optimizer::new(config, &model);
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut rng = epoch_rng(config.seed);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut best = model.clone();
    let mut history = TrainHistory::default();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (loss, grads) = batch_loss(&model, chunk)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            weighted += loss * chunk.len() as f64;
            optimizer.step(&mut model, &grads);
        }
        let train_loss = weighted / n_train as f64;
        let val = validation_loss(&model)?;
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6e} validation {val:.6e}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss: val,
        });
        if stopper.observe(val) {
            best = model.clone();
            history.best_epoch = epoch;
            history.best_validation_loss = val;
        }
        if stopper.should_stop() {
            history.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    Ok((best, history))
}

/// Seeded shuffle of `0..n` split into (train, validation).
///
/// The validation share is `round(n * fraction)` clamped to `[1, n-1]`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least 2 rows to split, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Per-epoch shuffling stream, independent of the split stream.
pub(crate) fn epoch_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::phasefield::splitmix64(seed ^ 0x5EED_0F_E90C))
}

/// Weight initialization stream, independent of split and shuffling.
pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::phasefield::splitmix64(seed ^ 0x1217_1A11_2E00))
}
