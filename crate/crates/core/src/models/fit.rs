use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::optim::{AdamConfig, AdamState};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Minibatch Adam settings for weighted likelihood maximisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without an improvement larger than `tol` before stopping.
    pub patience: usize,
    pub tol: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::GRIDWORLD_MODEL,
            max_epochs: 300,
            patience: 5,
            tol: 1e-6,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_adam(adam: AdamConfig) -> Self {
        Self { adam, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Weighted objective of the returned parameters (weights normalised to sum 1).
    pub objective: f64,
    pub epochs: usize,
    pub stopped_early: bool,
}

/// A sum of per-item terms, each differentiable in a shared parameter vector.
pub(crate) trait ItemObjective {
    fn n_params(&self) -> usize;
    fn n_items(&self) -> usize;
    /// Value of item `i`; when `grad` is given, adds `scale * d value / d params`.
    fn item(&self, params: &[f64], i: usize, scale: f64, grad: Option<&mut [f64]>) -> f64;
}

fn objective<O: ItemObjective>(obj: &O, params: &[f64], active: &[usize], w: &[f64]) -> f64 {
    active.iter().map(|&i| w[i] * obj.item(params, i, 0.0, None)).sum()
}

/// Maximises `sum_i w_i item_i(params) / sum_i w_i`, returning the best
/// parameters seen at an epoch boundary.
pub(crate) fn maximize<O: ItemObjective>(
    obj: &O,
    weights: &[f64],
    params0: Vec<f64>,
    cfg: &FitConfig,
) -> Result<(Vec<f64>, FitReport)> {
    cfg.validate()?;
    if weights.len() != obj.n_items() {
        return Err(Error::DimensionMismatch {
            expected: obj.n_items(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("fit weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
    let mut active: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();

    let mut params = params0;
    let mut best = objective(obj, &params, &active, &w);
    if !best.is_finite() {
        return Err(Error::NonFinite("model objective"));
    }
    let mut best_params = params.clone();
    let mut adam = AdamState::new(cfg.adam, obj.n_params());
    let mut grad = vec![0.0; obj.n_params()];
    let mut rng = rng_from_seed(cfg.seed);
    let mut stale = 0;
    let mut epochs = 0;
    let mut stopped_early = false;

    while epochs < cfg.max_epochs {
        epochs += 1;
        active.shuffle(&mut rng);
        for batch in active.chunks(cfg.batch_size) {
            let scale = active.len() as f64 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                obj.item(&params, i, scale * w[i], Some(&mut grad));
            }
            adam.step(&mut params, &grad, true)?;
        }
        let value = objective(obj, &params, &active, &w);
        if !value.is_finite() {
            return Err(Error::NonFinite("model objective"));
        }
        if value > best + cfg.tol {
            stale = 0;
        } else {
            stale += 1;
        }
        if value > best {
            best = value;
            best_params.copy_from_slice(&params);
        }
        if stale >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    Ok((
        best_params,
        FitReport {
            objective: best,
            epochs,
            stopped_early,
        },
    ))
}
