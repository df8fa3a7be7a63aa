use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::action_effect::flatten_aligned;
use super::fit::{maximize, FitConfig, FitReport, ItemObjective};
use crate::mdp::Dataset;
use crate::rng::SimRng;
use crate::{Error, Result};

const MIN_STD: f64 = 1e-6;

/// `s' = s - max(0, eps)`, `eps ~ N(w_mu . x, exp(w_sigma . x))` with
/// features `x = (s, a, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifiedGaussianModel {
    pub w_mu: [f64; 3],
    pub w_sigma: [f64; 3],
}

impl Default for RectifiedGaussianModel {
    fn default() -> Self {
        Self {
            w_mu: [0.0; 3],
            w_sigma: [0.0; 3],
        }
    }
}

fn features(s: f64, a: f64) -> [f64; 3] {
    [s, a, 1.0]
}

fn dot(w: &[f64; 3], x: &[f64; 3]) -> f64 {
    w[0] * x[0] + w[1] * x[1] + w[2] * x[2]
}

impl RectifiedGaussianModel {
    pub fn mean_delta(&self, s: f64, a: f64) -> f64 {
        dot(&self.w_mu, &features(s, a))
    }

    pub fn std_delta(&self, s: f64, a: f64) -> f64 {
        dot(&self.w_sigma, &features(s, a)).exp().max(MIN_STD)
    }

    pub fn sample_next(&self, s: f64, a: f64, rng: &mut SimRng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let eps = self.mean_delta(s, a) + self.std_delta(s, a) * z;
        s - eps.max(0.0)
    }

    /// Weighted MSE on `s - s'` for the mean, then the weighted residual
    /// standard deviation as a constant scale.
    pub fn fit_weighted(
        &mut self,
        dataset: &Dataset<f64, f64>,
        weights: &[Vec<f64>],
        cfg: &FitConfig,
    ) -> Result<FitReport> {
        let items: Vec<([f64; 3], f64)> = dataset
            .iter_steps()
            .map(|st| (features(st.state, st.action), st.state - st.next_state))
            .collect();
        if items.iter().any(|(x, d)| !d.is_finite() || x.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("minigolf transitions"));
        }
        let flat = flatten_aligned(dataset, weights)?;
        let obj = MseObjective { items };
        let (params, report) = maximize(&obj, &flat, self.w_mu.to_vec(), cfg)?;
        self.w_mu.copy_from_slice(&params);
        let total: f64 = flat.iter().sum();
        let var = obj
            .items
            .iter()
            .zip(&flat)
            .map(|((x, d), w)| w * (d - dot(&self.w_mu, x)).powi(2))
            .sum::<f64>()
            / total;
        self.w_sigma = [0.0, 0.0, var.sqrt().max(MIN_STD).ln()];
        Ok(report)
    }
}

struct MseObjective {
    items: Vec<([f64; 3], f64)>,
}

impl ItemObjective for MseObjective {
    fn n_params(&self) -> usize {
        3
    }

    fn n_items(&self) -> usize {
        self.items.len()
    }

    fn item(&self, params: &[f64], i: usize, scale: f64, grad: Option<&mut [f64]>) -> f64 {
        let (x, d) = &self.items[i];
        let r = d - (params[0] * x[0] + params[1] * x[1] + params[2] * x[2]);
        if let Some(g) = grad {
            for k in 0..3 {
                g[k] += scale * 2.0 * r * x[k];
            }
        }
        -r * r
    }
}
