//! Policy-gradient estimators, the exact tabular gradient and the model-bias
//! bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mdp::{check_policy_shape, exact_occupancy, Dataset, TabularMdp, Trajectory};
use crate::models::kl_to_true;
use crate::policy::{Policy, QNorm, TabularPolicy};
use crate::table::SaTable;
use crate::value::{exact_q, QTable};
use crate::weighting::{exact_eta_tabular, prefix_importance_weights};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Gamps,
    Ml,
    Reinforce,
    Pgt,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Gamps,
        EstimatorKind::Ml,
        EstimatorKind::Reinforce,
        EstimatorKind::Pgt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Gamps => "gamps",
            EstimatorKind::Ml => "ml",
            EstimatorKind::Reinforce => "reinforce",
            EstimatorKind::Pgt => "pgt",
        }
    }

    pub fn uses_model(self) -> bool {
        matches!(self, EstimatorKind::Gamps | EstimatorKind::Ml)
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator {s:?}")))
    }
}

/// A sample-mean gradient with per-component standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub stderr: Vec<f64>,
    pub estimator: EstimatorKind,
    pub n_trajectories: usize,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        QNorm::Two.norm(&self.grad)
    }
}

fn mean_over_trajectories(contribs: Vec<Vec<f64>>, dim: usize, estimator: EstimatorKind) -> Result<GradientEstimate> {
    let n = contribs.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut mean = vec![0.0; dim];
    for c in &contribs {
        mean.iter_mut().zip(c).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for c in &contribs {
        var.iter_mut()
            .zip(c.iter().zip(&mean))
            .for_each(|(v, (x, m))| *v += (x - m).powi(2));
    }
    let stderr = var
        .into_iter()
        .map(|v| if n > 1 { (v / (n as f64 - 1.0) / n as f64).sqrt() } else { 0.0 })
        .collect();
    if mean.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient estimate"));
    }
    Ok(GradientEstimate {
        grad: mean,
        stderr,
        estimator,
        n_trajectories: n,
    })
}

fn per_trajectory<S, A, F>(dataset: &Dataset<S, A>, f: F) -> Result<Vec<Vec<f64>>>
where
    S: Sync,
    A: Sync,
    F: Fn(usize, &Trajectory<S, A>) -> Result<Vec<f64>> + Sync,
{
    dataset
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| f(i, traj).map_err(|e| reindex(e, i)))
        .collect()
}

fn reindex(e: Error, trajectory: usize) -> Error {
    match e {
        Error::InvalidDataset { step, .. } => Error::InvalidDataset { trajectory, step },
        other => other,
    }
}

/// `(1/N) sum_i sum_t gamma^t rho(tau_{0:t}) score(s_t, a_t) Q(s_t, a_t)` with
/// `q_values[i][t]` the model action value at step `t` of trajectory `i`.
pub fn mvg_gradient<S, A, P, B>(
    dataset: &Dataset<S, A>,
    pi: &P,
    pi_b: &B,
    q_values: &[Vec<f64>],
    gamma: f64,
) -> Result<GradientEstimate>
where
    S: Sync,
    A: Sync,
    P: Policy<S, A>,
    B: Policy<S, A>,
{
    if q_values.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            got: q_values.len(),
        });
    }
    let dim = pi.n_params();
    let contribs = per_trajectory(dataset, |i, traj| {
        let q = &q_values[i];
        if q.len() != traj.len() {
            return Err(Error::DimensionMismatch {
                expected: traj.len(),
                got: q.len(),
            });
        }
        let rho = prefix_importance_weights(traj, pi, pi_b)?;
        let mut out = vec![0.0; dim];
        let mut score = vec![0.0; dim];
        let mut discount = 1.0;
        for (t, step) in traj.steps.iter().enumerate() {
            let c = discount * rho[t] * q[t];
            if c != 0.0 {
                pi.score_into(&step.state, &step.action, &mut score);
                out.iter_mut().zip(&score).for_each(|(o, g)| *o += c * g);
            }
            discount *= gamma;
        }
        Ok(out)
    })?;
    mean_over_trajectories(contribs, dim, EstimatorKind::Gamps)
}

/// `(1/N) sum_i rho(tau^i) (sum_t score_t) (sum_t gamma^t r_t)`.
pub fn reinforce_gradient<S, A, P, B>(dataset: &Dataset<S, A>, pi: &P, pi_b: &B, gamma: f64) -> Result<GradientEstimate>
where
    S: Sync,
    A: Sync,
    P: Policy<S, A>,
    B: Policy<S, A>,
{
    let dim = pi.n_params();
    let contribs = per_trajectory(dataset, |_, traj| {
        let rho = prefix_importance_weights(traj, pi, pi_b)?;
        let mut out = vec![0.0; dim];
        let c = rho.last().copied().unwrap_or(0.0) * crate::mdp::discounted_return(traj, gamma);
        if c != 0.0 {
            let mut score = vec![0.0; dim];
            for step in &traj.steps {
                pi.score_into(&step.state, &step.action, &mut score);
                out.iter_mut().zip(&score).for_each(|(o, g)| *o += c * g);
            }
        }
        Ok(out)
    })?;
    mean_over_trajectories(contribs, dim, EstimatorKind::Reinforce)
}

/// `(1/N) sum_i sum_t score_t sum_{l>=t} gamma^l rho(tau_{0:l}) r_l`.
pub fn pgt_gradient<S, A, P, B>(dataset: &Dataset<S, A>, pi: &P, pi_b: &B, gamma: f64) -> Result<GradientEstimate>
where
    S: Sync,
    A: Sync,
    P: Policy<S, A>,
    B: Policy<S, A>,
{
    let dim = pi.n_params();
    let contribs = per_trajectory(dataset, |_, traj| {
        let rho = prefix_importance_weights(traj, pi, pi_b)?;
        let mut tail = vec![0.0; traj.len() + 1];
        let mut discount = 1.0;
        for (t, step) in traj.steps.iter().enumerate() {
            tail[t] = discount * rho[t] * step.reward;
            discount *= gamma;
        }
        for t in (0..traj.len()).rev() {
            tail[t] += tail[t + 1];
        }
        let mut out = vec![0.0; dim];
        let mut score = vec![0.0; dim];
        for (t, step) in traj.steps.iter().enumerate() {
            if tail[t] != 0.0 {
                pi.score_into(&step.state, &step.action, &mut score);
                out.iter_mut().zip(&score).for_each(|(o, g)| *o += tail[t] * g);
            }
        }
        Ok(out)
    })?;
    mean_over_trajectories(contribs, dim, EstimatorKind::Pgt)
}

/// `J = sum_{s,a} mu(s) pi(a|s) Q(s,a)`.
pub fn expected_return<P: TabularPolicy>(mdp: &TabularMdp, policy: &P) -> Result<f64> {
    let q = exact_q(mdp, policy)?;
    Ok((0..mdp.n_states())
        .map(|s| {
            mdp.initial()[s]
                * policy
                    .action_probs(s)
                    .iter()
                    .zip(q.row(s))
                    .map(|(p, x)| p * x)
                    .sum::<f64>()
        })
        .sum())
}

/// `1/(1-gamma) sum_{s,a} delta_mu(s,a) score(s,a) Q(s,a)` for a given `Q`.
/// With the true `Q` this is the policy gradient theorem; with a model `Q`
/// it is the exact model-value-based gradient.
pub fn exact_mvg_tabular<P: TabularPolicy>(mdp: &TabularMdp, policy: &P, q: &QTable) -> Result<Vec<f64>> {
    check_policy_shape(mdp, policy)?;
    let delta = exact_occupancy(mdp, policy)?;
    let mut grad = vec![0.0; policy.n_params()];
    let mut score = vec![0.0; policy.n_params()];
    let scale = 1.0 / (1.0 - mdp.discount());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let c = scale * delta.get(s, a) * q.get(s, a);
            if c == 0.0 {
                continue;
            }
            policy.score_into(&s, &a, &mut score);
            grad.iter_mut().zip(&score).for_each(|(g, x)| *g += c * x);
        }
    }
    Ok(grad)
}

/// Exact `grad J` on the true model.
pub fn exact_gradient_tabular<P: TabularPolicy>(mdp: &TabularMdp, policy: &P) -> Result<Vec<f64>> {
    let q = exact_q(mdp, policy)?;
    exact_mvg_tabular(mdp, policy, &q)
}

/// `g . g_hat / max(||g|| ||g_hat||, 1e-8)`.
pub fn cosine_similarity(g: &[f64], g_hat: &[f64]) -> f64 {
    let dot: f64 = g.iter().zip(g_hat).map(|(a, b)| a * b).sum();
    let denom = QNorm::Two.norm(g) * QNorm::Two.norm(g_hat);
    dot / denom.max(1e-8)
}

/// Gradient error of the model-value gradient and the two KL upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `||grad J - grad^MVG J||_q`.
    pub lhs: f64,
    /// `gamma sqrt(2) Z R_max / (1-gamma)^2 * sqrt(E_eta[KL])`.
    pub rhs_theorem1: f64,
    /// `gamma sqrt(2) K R_max / (1-gamma)^2 * sqrt(E_delta_mu[KL])`.
    pub rhs_proposition: f64,
    /// `rhs_theorem1 / (1-gamma)`: the eta bound when the action value is
    /// written as `Q = 1/(1-gamma) E_{delta_{s,a}}[r]`.
    pub rhs_theorem1_rescaled: f64,
    pub z: f64,
    pub k: f64,
    pub eta_kl: f64,
    pub delta_kl: f64,
}

/// Evaluates the bound triple for the true MDP and an estimated kernel `p_hat`
/// sharing its rewards.
pub fn mvg_bias_bound<P: TabularPolicy>(
    mdp: &TabularMdp,
    p_hat: &TabularMdp,
    policy: &P,
    q: QNorm,
) -> Result<BoundReport> {
    let true_grad = exact_gradient_tabular(mdp, policy)?;
    let q_hat = exact_q(p_hat, policy)?;
    let mvg = exact_mvg_tabular(mdp, policy, &q_hat)?;
    let diff: Vec<f64> = true_grad.iter().zip(&mvg).map(|(a, b)| a - b).collect();
    let lhs = q.norm(&diff);

    let kl = kl_to_true(mdp, p_hat)?;
    let delta = exact_occupancy(mdp, policy)?;
    let delta_kl = expect_kl(&delta, &kl);
    let mut k: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            k = k.max(q.norm(&policy.score(&s, &a)));
        }
    }
    let gamma = mdp.discount();
    let c = gamma * std::f64::consts::SQRT_2 * mdp.r_max() / (1.0 - gamma).powi(2);
    let (z, eta_kl) = match exact_eta_tabular(mdp, policy, q) {
        Ok(eta) => (eta.z, expect_kl(&eta.table, &kl)),
        Err(Error::ZeroScoreMass) => (0.0, 0.0),
        Err(e) => return Err(e),
    };
    let rhs_theorem1 = if z == 0.0 { 0.0 } else { c * z * eta_kl.sqrt() };
    let rhs_proposition = if k == 0.0 { 0.0 } else { c * k * delta_kl.sqrt() };
    Ok(BoundReport {
        lhs,
        rhs_theorem1,
        rhs_proposition,
        rhs_theorem1_rescaled: rhs_theorem1 / (1.0 - gamma),
        z,
        k,
        eta_kl,
        delta_kl,
    })
}

/// `E_d[KL]`, skipping pairs with no mass so infinite KL off-support is ignored.
fn expect_kl(d: &SaTable, kl: &SaTable) -> f64 {
    d.values()
        .iter()
        .zip(kl.values())
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, k)| w * k)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert!((cosine_similarity(&[1.0, -2.0], &[-1.0, 2.0]) + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn estimator_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
    }
}
