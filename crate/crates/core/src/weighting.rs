//! Importance weights, gradient-aware transition weights and the eta
//! distribution they target.

use rayon::prelude::*;

use crate::mdp::{check_policy_shape, exact_occupancy, sa_occupancy_from, Dataset, TabularMdp, Trajectory};
use crate::policy::{Policy, QNorm, TabularPolicy};
use crate::table::SaTable;
use crate::{Error, Result};

const LOG_CLAMP: f64 = 700.0;

fn clamped_exp(log_w: f64) -> f64 {
    if log_w == f64::NEG_INFINITY {
        0.0
    } else {
        log_w.clamp(-LOG_CLAMP, LOG_CLAMP).exp()
    }
}

fn prefix_weights_indexed<S, A, P, B>(
    index: usize,
    traj: &Trajectory<S, A>,
    pi: &P,
    pi_b: &B,
) -> Result<Vec<f64>>
where
    P: Policy<S, A>,
    B: Policy<S, A>,
{
    let mut log_w = 0.0;
    traj.steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            let lb = pi_b.log_prob(&step.state, &step.action);
            if lb == f64::NEG_INFINITY || lb.is_nan() {
                return Err(Error::InvalidDataset { trajectory: index, step: t });
            }
            log_w += pi.log_prob(&step.state, &step.action) - lb;
            Ok(clamped_exp(log_w))
        })
        .collect()
}

/// `rho(tau_{0:t}) = prod_{k<=t} pi(a_k|s_k) / pi_b(a_k|s_k)` for every prefix.
pub fn prefix_importance_weights<S, A, P, B>(traj: &Trajectory<S, A>, pi: &P, pi_b: &B) -> Result<Vec<f64>>
where
    P: Policy<S, A>,
    B: Policy<S, A>,
{
    prefix_weights_indexed(0, traj, pi, pi_b)
}

fn gamps_from_prefix<S, A, P: Policy<S, A>>(
    traj: &Trajectory<S, A>,
    rho: &[f64],
    pi: &P,
    gamma: f64,
    q: QNorm,
) -> Vec<f64> {
    let mut score = vec![0.0; pi.n_params()];
    let mut score_mass = 0.0;
    let mut discount = 1.0;
    traj.steps
        .iter()
        .zip(rho)
        .map(|(step, r)| {
            pi.score_into(&step.state, &step.action, &mut score);
            score_mass += q.norm(&score);
            let w = discount * r * score_mass;
            discount *= gamma;
            w
        })
        .collect()
}

/// `omega_t = gamma^t rho(tau_{0:t}) sum_{l<=t} ||score(s_l, a_l)||_q`.
pub fn gamps_transition_weights<S, A, P, B>(
    traj: &Trajectory<S, A>,
    pi: &P,
    pi_b: &B,
    gamma: f64,
    q: QNorm,
) -> Result<Vec<f64>>
where
    P: Policy<S, A>,
    B: Policy<S, A>,
{
    let rho = prefix_importance_weights(traj, pi, pi_b)?;
    Ok(gamps_from_prefix(traj, &rho, pi, gamma, q))
}

/// `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    let sum: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    if sq == 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok(sum * sum / sq)
}

/// Per-transition weights aligned with a dataset, plus the prefix
/// importance weights they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    pub weights: Vec<Vec<f64>>,
    pub prefix: Vec<Vec<f64>>,
}

impl WeightedDataset {
    /// Gradient-aware weights for target policy `pi`.
    pub fn gamps<S, A, P, B>(dataset: &Dataset<S, A>, pi: &P, pi_b: &B, gamma: f64, q: QNorm) -> Result<Self>
    where
        S: Sync,
        A: Sync,
        P: Policy<S, A>,
        B: Policy<S, A>,
    {
        let (weights, prefix) = dataset
            .trajectories
            .par_iter()
            .enumerate()
            .map(|(i, traj)| {
                let rho = prefix_weights_indexed(i, traj, pi, pi_b)?;
                Ok((gamps_from_prefix(traj, &rho, pi, gamma, q), rho))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self { weights, prefix })
    }

    /// Unit weight on every transition (maximum likelihood); prefix weights
    /// are still computed for diagnostics.
    pub fn uniform<S, A, P, B>(dataset: &Dataset<S, A>, pi: &P, pi_b: &B) -> Result<Self>
    where
        S: Sync,
        A: Sync,
        P: Policy<S, A>,
        B: Policy<S, A>,
    {
        let prefix = dataset
            .trajectories
            .par_iter()
            .enumerate()
            .map(|(i, traj)| prefix_weights_indexed(i, traj, pi, pi_b))
            .collect::<Result<Vec<_>>>()?;
        let weights = prefix.iter().map(|p| vec![1.0; p.len()]).collect();
        Ok(Self { weights, prefix })
    }

    pub fn flat(&self) -> Vec<f64> {
        self.weights.iter().flatten().copied().collect()
    }

    /// ESS of the per-trajectory full-prefix importance weights.
    pub fn full_prefix_ess(&self) -> Result<f64> {
        let last: Vec<f64> = self.prefix.iter().map(|p| p.last().copied().unwrap_or(0.0)).collect();
        effective_sample_size(&last)
    }
}

/// `eta` together with its normaliser `Z = E_{delta_mu}[||score||_q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaDistribution {
    pub table: SaTable,
    pub z: f64,
}

/// Exact `eta(s,a) = sum_{s',a'} nu(s',a') delta_{s',a'}(s,a)` with
/// `nu = delta_mu ||score||_q / Z`. By linearity this is the occupancy
/// measure started from `nu`, so it costs one linear solve.
pub fn exact_eta_tabular<P: TabularPolicy>(mdp: &TabularMdp, policy: &P, q: QNorm) -> Result<EtaDistribution> {
    check_policy_shape(mdp, policy)?;
    let delta = exact_occupancy(mdp, policy)?;
    let mut nu = vec![0.0; delta.values().len()];
    let na = mdp.n_actions();
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let d = delta.get(s, a);
            if d > 0.0 {
                nu[s * na + a] = d * q.norm(&policy.score(&s, &a));
            }
        }
    }
    let z: f64 = nu.iter().sum();
    if z <= 0.0 {
        return Err(Error::ZeroScoreMass);
    }
    nu.iter_mut().for_each(|x| *x /= z);
    let table = sa_occupancy_from(mdp, policy, &nu)?;
    let table = table.normalized().ok_or(Error::ZeroScoreMass)?;
    Ok(EtaDistribution { table, z })
}

/// Normalised sum of `omega_t` per visited `(s,a)`.
pub fn empirical_eta<P, B>(
    dataset: &Dataset<usize, usize>,
    pi: &P,
    pi_b: &B,
    gamma: f64,
    q: QNorm,
    n_states: usize,
    n_actions: usize,
) -> Result<SaTable>
where
    P: Policy<usize, usize>,
    B: Policy<usize, usize>,
{
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let weighted = WeightedDataset::gamps(dataset, pi, pi_b, gamma, q)?;
    let mut table = SaTable::zeros(n_states, n_actions);
    for (traj, ws) in dataset.trajectories.iter().zip(&weighted.weights) {
        for (step, w) in traj.steps.iter().zip(ws) {
            table.add(step.state, step.action, *w);
        }
    }
    table.normalized().ok_or(Error::ZeroWeights)
}

/// Importance-weighted trajectory estimate of `E_eta[f]` given the exact
/// normaliser `z`: per trajectory `(1-gamma)^2 / Z * sum_t omega_t f(s_t,a_t)`.
/// Returns the sample mean and its standard error.
pub fn eta_expectation_estimate<P, B>(
    dataset: &Dataset<usize, usize>,
    pi: &P,
    pi_b: &B,
    gamma: f64,
    q: QNorm,
    z: f64,
    f: &SaTable,
) -> Result<(f64, f64)>
where
    P: Policy<usize, usize>,
    B: Policy<usize, usize>,
{
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let weighted = WeightedDataset::gamps(dataset, pi, pi_b, gamma, q)?;
    let scale = (1.0 - gamma).powi(2) / z;
    let samples: Vec<f64> = dataset
        .trajectories
        .iter()
        .zip(&weighted.weights)
        .map(|(traj, ws)| {
            scale
                * traj
                    .steps
                    .iter()
                    .zip(ws)
                    .map(|(st, w)| w * f.get(st.state, st.action))
                    .sum::<f64>()
        })
        .collect();
    Ok(mean_and_stderr(&samples))
}

pub(crate) fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
