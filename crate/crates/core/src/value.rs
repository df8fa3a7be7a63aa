//! Action values under a transition model: exact tabular solves and
//! Monte-Carlo rollouts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::mdp::{check_policy_shape, Environment, StepOutcome, TabularMdp};
use crate::policy::{Policy, TabularPolicy};
use crate::rng::{stream, SimRng};
use crate::table::SaTable;
use crate::{Error, Result};

pub type QTable = SaTable;

/// Solves `(I - gamma P Pi) Q = r` exactly, with one round of iterative
/// refinement.
pub fn exact_q<P: TabularPolicy>(mdp: &TabularMdp, policy: &P) -> Result<QTable> {
    check_policy_shape(mdp, policy)?;
    let a = mdp.sa_resolvent_matrix(policy);
    let r = mdp.rewards();
    let mut q = linalg::solve(a.clone(), r)?;
    let aq = &a * nalgebra::DVector::from_column_slice(&q);
    let resid: Vec<f64> = r.iter().zip(aq.iter()).map(|(ri, x)| ri - x).collect();
    let corr = linalg::solve(a, &resid)?;
    q.iter_mut().zip(corr).for_each(|(x, c)| *x += c);
    SaTable::from_values(mdp.n_states(), mdp.n_actions(), q)
}

/// `max |r + gamma P Pi Q - Q|`.
pub fn bellman_residual<P: TabularPolicy>(mdp: &TabularMdp, policy: &P, q: &QTable) -> f64 {
    let v: Vec<f64> = (0..mdp.n_states())
        .map(|s| {
            policy
                .action_probs(s)
                .iter()
                .zip(q.row(s))
                .map(|(p, x)| p * x)
                .sum()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let next: f64 = mdp.next_dist(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
            let target = mdp.reward(s, a) + mdp.discount() * next;
            worst = worst.max((target - q.get(s, a)).abs());
        }
    }
    worst
}

/// `V(s) = sum_a pi(a|s) Q(s,a)`.
pub fn state_values<P: TabularPolicy>(policy: &P, q: &QTable) -> Vec<f64> {
    (0..q.n_states())
        .map(|s| policy.action_probs(s).iter().zip(q.row(s)).map(|(p, x)| p * x).sum())
        .collect()
}

/// Rollout count `m` and horizon `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutQConfig {
    pub m: usize,
    pub h: usize,
}

impl Default for RolloutQConfig {
    fn default() -> Self {
        Self { m: 10, h: 20 }
    }
}

impl RolloutQConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.h == 0 {
            return Err(Error::InvalidArgument("rollout count and horizon must be positive".into()));
        }
        Ok(())
    }
}

/// One-step generative model with a known reward, used for imaginary rollouts.
pub trait Simulator<S, A>: Sync {
    fn simulate(&self, s: &S, a: &A, rng: &mut SimRng) -> StepOutcome<S>;
}

impl Simulator<usize, usize> for TabularMdp {
    fn simulate(&self, s: &usize, a: &usize, rng: &mut SimRng) -> StepOutcome<usize> {
        Environment::step(self, s, a, rng).expect("tabular step is infallible")
    }
}

/// Discounted return of each of the `m` rollouts started with `(s, a)`.
/// Rollout `j` draws from stream `j` of a seed taken from `rng`.
pub fn mc_q_samples<S, A, M, P>(
    model: &M,
    policy: &P,
    s: &S,
    a: &A,
    config: RolloutQConfig,
    gamma: f64,
    rng: &mut SimRng,
) -> Vec<f64>
where
    S: Clone,
    A: Clone,
    M: Simulator<S, A>,
    P: Policy<S, A>,
{
    let base: u64 = rng.random();
    (0..config.m)
        .map(|j| {
            let mut r = stream(base, j as u64);
            let mut state = s.clone();
            let mut action = a.clone();
            let mut total = 0.0;
            let mut discount = 1.0;
            for t in 0..config.h {
                if t > 0 {
                    action = policy.sample_action(&state, &mut r);
                }
                let out = model.simulate(&state, &action, &mut r);
                total += discount * out.reward;
                if out.done {
                    break;
                }
                discount *= gamma;
                state = out.next_state;
            }
            total
        })
        .collect()
}

/// `(1/M) sum_j sum_{t<H} gamma^t r_t^j` with the first pair forced to `(s, a)`.
pub fn mc_q<S, A, M, P>(
    model: &M,
    policy: &P,
    s: &S,
    a: &A,
    config: RolloutQConfig,
    gamma: f64,
    rng: &mut SimRng,
) -> f64
where
    S: Clone,
    A: Clone,
    M: Simulator<S, A>,
    P: Policy<S, A>,
{
    let samples = mc_q_samples(model, policy, s, a, config, gamma, rng);
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Mean squared difference over all pairs.
pub fn q_mse(q_hat: &QTable, q_ref: &QTable) -> Result<f64> {
    if q_hat.values().len() != q_ref.values().len() || q_hat.n_actions() != q_ref.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: q_ref.values().len(),
            got: q_hat.values().len(),
        });
    }
    let n = q_ref.values().len() as f64;
    Ok(q_hat
        .values()
        .iter()
        .zip(q_ref.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}
