//! Learnable transition models and weighted maximum-likelihood fitting.

mod action_effect;
mod fit;
mod gaussian;

pub use action_effect::{ActionEffectModel, Effect, EffectGeometry};
pub use fit::{FitConfig, FitReport};
pub use gaussian::RectifiedGaussianModel;

use crate::mdp::{Dataset, TabularMdp};
use crate::table::SaTable;
use crate::{Error, Result};

/// `sum_x p(x) ln(p(x) / q(x))`, `+inf` when `q` misses mass of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| if *qi > 0.0 { pi * (pi / qi).ln() } else { f64::INFINITY })
        .sum()
}

/// Per-pair `KL(p(.|s,a) || p_hat(.|s,a))`.
pub fn kl_to_true(p_true: &TabularMdp, p_hat: &TabularMdp) -> Result<SaTable> {
    if p_true.n_states() != p_hat.n_states() || p_true.n_actions() != p_hat.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: p_true.kernel().len(),
            got: p_hat.kernel().len(),
        });
    }
    let mut out = SaTable::zeros(p_true.n_states(), p_true.n_actions());
    for s in 0..p_true.n_states() {
        for a in 0..p_true.n_actions() {
            out.set(s, a, kl_divergence(p_true.next_dist(s, a), p_hat.next_dist(s, a)).max(0.0));
        }
    }
    Ok(out)
}

/// Fraction of transitions whose most likely next state under `p_hat`
/// (ties to the lowest index) is the observed one.
pub fn model_accuracy(p_hat: &TabularMdp, dataset: &Dataset<usize, usize>) -> Result<f64> {
    let n = dataset.n_transitions();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let hits = dataset
        .iter_steps()
        .filter(|st| argmax(p_hat.next_dist(st.state, st.action)) == st.next_state)
        .count();
    Ok(hits as f64 / n as f64)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
