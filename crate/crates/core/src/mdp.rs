//! MDP abstractions, trajectory collection and exact tabular occupancies.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::policy::{Policy, TabularPolicy};
use crate::rng::{stream, SimRng};
use crate::table::SaTable;
use crate::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Finite MDP with an explicit kernel `p(s'|s,a)`, reward table `r(s,a)`,
/// initial distribution and discount.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Row-major `[s][a][s']`.
    kernel: Vec<f64>,
    reward: Vec<f64>,
    initial: Vec<f64>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        initial: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("empty state or action space".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidArgument(format!("discount {discount} outside [0, 1)")));
        }
        check_len(kernel.len(), n_states * n_actions * n_states)?;
        check_len(reward.len(), n_states * n_actions)?;
        check_len(initial.len(), n_states)?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward table"));
        }
        let mdp = Self {
            n_states,
            n_actions,
            kernel,
            reward,
            initial,
            discount,
        };
        mdp.check_kernel()?;
        let mu_sum: f64 = mdp.initial.iter().sum();
        if (mu_sum - 1.0).abs() > ROW_SUM_TOL || mdp.initial.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "initial distribution sums to {mu_sum}"
            )));
        }
        Ok(mdp)
    }

    /// Random instance: Dirichlet(1) kernel rows and initial distribution,
    /// rewards uniform in `[-1, 1]`.
    pub fn random(n_states: usize, n_actions: usize, discount: f64, rng: &mut SimRng) -> Result<Self> {
        let mut kernel = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            kernel.extend(random_simplex(n_states, rng));
        }
        let reward = (0..n_states * n_actions)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let initial = random_simplex(n_states, rng);
        Self::new(n_states, n_actions, kernel, reward, initial, discount)
    }

    /// Same MDP with a different kernel (rewards, initial distribution and discount kept).
    pub fn with_kernel(&self, kernel: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            kernel,
            self.reward.clone(),
            self.initial.clone(),
            self.discount,
        )
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.kernel.clone(),
            self.reward.clone(),
            self.initial.clone(),
            discount,
        )
    }

    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.kernel.clone(),
            reward,
            self.initial.clone(),
            self.discount,
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// `p(.|s,a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.kernel[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// `R_max = max |r(s,a)|`.
    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    fn check_kernel(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.next_dist(s, a);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::KernelNotNormalized {
                        state: s,
                        action: a,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }

    /// `I - gamma * M` where `M[(s,a),(s',a')] = p(s'|s,a) pi(a'|s')`.
    pub(crate) fn sa_resolvent_matrix<P: TabularPolicy>(&self, policy: &P) -> DMatrix<f64> {
        let (ns, na) = (self.n_states, self.n_actions);
        let n = ns * na;
        let probs: Vec<Vec<f64>> = (0..ns).map(|s| policy.action_probs(s)).collect();
        let mut m = DMatrix::<f64>::identity(n, n);
        for s in 0..ns {
            for a in 0..na {
                let row = s * na + a;
                for (s2, p) in self.next_dist(s, a).iter().enumerate() {
                    if *p == 0.0 {
                        continue;
                    }
                    for (a2, pa) in probs[s2].iter().enumerate() {
                        m[(row, s2 * na + a2)] -= self.discount * p * pa;
                    }
                }
            }
        }
        m
    }
}

fn check_len(got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn random_simplex(n: usize, rng: &mut SimRng) -> Vec<f64> {
    // Exponential spacings give a uniform draw on the simplex.
    let raw: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let z: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|x| x / z).collect();
    // Push the rounding residue onto the largest entry so rows sum to 1 tightly.
    let residue = 1.0 - out.iter().sum::<f64>();
    let imax = out
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    out[imax] += residue;
    out
}

/// One environment transition as seen by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step<S, A> {
    pub state: S,
    pub action: A,
    pub reward: f64,
    pub next_state: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome<S> {
    pub next_state: S,
    pub reward: f64,
    pub done: bool,
}

/// A simulator that can be reset and stepped.
pub trait Environment: Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;
    type Action: Clone + Send + Sync + std::fmt::Debug;

    fn initial_state(&self, rng: &mut SimRng) -> Self::State;

    fn step(
        &self,
        state: &Self::State,
        action: &Self::Action,
        rng: &mut SimRng,
    ) -> std::result::Result<StepOutcome<Self::State>, String>;
}

impl Environment for TabularMdp {
    type State = usize;
    type Action = usize;

    fn initial_state(&self, rng: &mut SimRng) -> usize {
        sample_categorical(&self.initial, rng)
    }

    fn step(&self, s: &usize, a: &usize, rng: &mut SimRng) -> std::result::Result<StepOutcome<usize>, String> {
        if *s >= self.n_states || *a >= self.n_actions {
            return Err(format!("state {s} / action {a} out of range"));
        }
        let next_state = sample_categorical(self.next_dist(*s, *a), rng);
        Ok(StepOutcome {
            next_state,
            reward: self.reward(*s, *a),
            done: false,
        })
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// A single episode together with the behavior policy's log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S, A> {
    pub steps: Vec<Step<S, A>>,
    /// `log pi_b(a_t | s_t)` for every step.
    pub behavior_logps: Vec<f64>,
    /// Whether the episode ended in an absorbing state (as opposed to the horizon cap).
    pub terminal: bool,
}

impl<S, A> Trajectory<S, A> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<S, A> {
    pub trajectories: Vec<Trajectory<S, A>>,
    /// Identifies the policy that generated every trajectory.
    pub behavior_policy_id: String,
}

impl<S, A> Dataset<S, A> {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn iter_steps(&self) -> impl Iterator<Item = &Step<S, A>> {
        self.trajectories.iter().flat_map(|t| t.steps.iter())
    }
}

const DATASET_FORMAT: &str = "gamps-dataset";
const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    version: u32,
    behavior_policy_id: String,
    trajectories: usize,
}

impl<S: Serialize, A: Serialize> Dataset<S, A> {
    /// Newline-delimited JSON: a versioned header line, then one trajectory per line.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            behavior_policy_id: self.behavior_policy_id.clone(),
            trajectories: self.trajectories.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for traj in &self.trajectories {
            serde_json::to_writer(&mut w, traj)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<S: DeserializeOwned, A: DeserializeOwned> Dataset<S, A> {
    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("missing header line".into()))??;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let mut trajectories = Vec::with_capacity(header.trajectories);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let traj: Trajectory<S, A> = serde_json::from_str(&line)?;
            if traj.steps.len() != traj.behavior_logps.len() || traj.steps.is_empty() {
                return Err(Error::Format("trajectory with mismatched or empty steps".into()));
            }
            trajectories.push(traj);
        }
        if trajectories.len() != header.trajectories {
            return Err(Error::Format(format!(
                "header announces {} trajectories, found {}",
                header.trajectories,
                trajectories.len()
            )));
        }
        Ok(Self {
            trajectories,
            behavior_policy_id: header.behavior_policy_id,
        })
    }
}

/// Rolls out `policy` from a sampled initial state for at most `horizon` steps.
pub fn sample_trajectory<E, P>(
    env: &E,
    policy: &P,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<Trajectory<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    let s0 = env.initial_state(rng);
    sample_trajectory_from(env, policy, s0, horizon, rng)
}

/// Like [`sample_trajectory`] with a fixed initial state.
pub fn sample_trajectory_from<E, P>(
    env: &E,
    policy: &P,
    initial: E::State,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<Trajectory<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut steps = Vec::with_capacity(horizon.min(256));
    let mut logps = Vec::with_capacity(horizon.min(256));
    let mut state = initial;
    let mut terminal = false;
    for t in 0..horizon {
        let action = policy.sample_action(&state, rng);
        let logp = policy.log_prob(&state, &action);
        let out = env
            .step(&state, &action, rng)
            .map_err(|reason| Error::EnvStep { step: t, reason })?;
        steps.push(Step {
            state,
            action,
            reward: out.reward,
            next_state: out.next_state.clone(),
        });
        logps.push(logp);
        state = out.next_state;
        if out.done {
            terminal = true;
            break;
        }
    }
    Ok(Trajectory {
        steps,
        behavior_logps: logps,
        terminal,
    })
}

/// `n` independent trajectories; trajectory `i` uses stream `i` of `seed`.
pub fn collect_dataset<E, P>(
    env: &E,
    policy: &P,
    n: usize,
    horizon: usize,
    seed: u64,
    behavior_policy_id: impl Into<String>,
) -> Result<Dataset<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let trajectories = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            sample_trajectory(env, policy, horizon, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        trajectories,
        behavior_policy_id: behavior_policy_id.into(),
    })
}

/// `sum_t gamma^t r_t`.
pub fn discounted_return<S, A>(traj: &Trajectory<S, A>, gamma: f64) -> f64 {
    discounted_sum(traj.rewards(), gamma)
}

pub(crate) fn discounted_sum(rewards: impl Iterator<Item = f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// Discounted state-action distribution started from an arbitrary
/// state-action distribution `init`, solved as one linear system.
pub(crate) fn sa_occupancy_from<P: TabularPolicy>(
    mdp: &TabularMdp,
    policy: &P,
    init: &[f64],
) -> Result<SaTable> {
    let a = mdp.sa_resolvent_matrix(policy);
    let rhs: Vec<f64> = init.iter().map(|x| (1.0 - mdp.discount) * x).collect();
    let values = linalg::solve_transposed(a, &rhs)?;
    // Clip LU round-off so the table is a proper distribution.
    let values = values.into_iter().map(|v| v.max(0.0)).collect();
    SaTable::from_values(mdp.n_states, mdp.n_actions, values)
}

/// `delta_mu(s,a) = (1-gamma) sum_t gamma^t Pr(s_t = s, a_t = a)`.
pub fn exact_occupancy<P: TabularPolicy>(mdp: &TabularMdp, policy: &P) -> Result<SaTable> {
    check_policy_shape(mdp, policy)?;
    let init = initial_sa(mdp, policy);
    sa_occupancy_from(mdp, policy, &init)
}

pub(crate) fn initial_sa<P: TabularPolicy>(mdp: &TabularMdp, policy: &P) -> Vec<f64> {
    let mut init = vec![0.0; mdp.n_states * mdp.n_actions];
    for s in 0..mdp.n_states {
        for (a, pa) in policy.action_probs(s).into_iter().enumerate() {
            init[s * mdp.n_actions + a] = mdp.initial[s] * pa;
        }
    }
    init
}

pub(crate) fn check_policy_shape<P: TabularPolicy>(mdp: &TabularMdp, policy: &P) -> Result<()> {
    if policy.n_states() != mdp.n_states {
        return Err(Error::DimensionMismatch {
            expected: mdp.n_states,
            got: policy.n_states(),
        });
    }
    if policy.n_actions() != mdp.n_actions {
        return Err(Error::DimensionMismatch {
            expected: mdp.n_actions,
            got: policy.n_actions(),
        });
    }
    Ok(())
}

/// Normalised `gamma^t`-discounted visit counts.
pub fn empirical_occupancy(
    dataset: &Dataset<usize, usize>,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> Result<SaTable> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut table = SaTable::zeros(n_states, n_actions);
    for traj in &dataset.trajectories {
        let mut discount = 1.0;
        for step in &traj.steps {
            if step.state >= n_states || step.action >= n_actions {
                return Err(Error::InvalidArgument(format!(
                    "step ({}, {}) outside a {n_states}x{n_actions} table",
                    step.state, step.action
                )));
            }
            table.add(step.state, step.action, discount);
            discount *= gamma;
        }
    }
    table.normalized().ok_or(Error::EmptyDataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::TabularSoftmaxPolicy;
    use crate::rng::rng_from_seed;

    #[test]
    fn discounted_return_of_three_unit_penalties() {
        let traj = Trajectory {
            steps: (0..3)
                .map(|i| Step {
                    state: i,
                    action: 0usize,
                    reward: -1.0,
                    next_state: i + 1,
                })
                .collect(),
            behavior_logps: vec![0.0; 3],
            terminal: true,
        };
        assert!((discounted_return(&traj, 0.99) + 2.9701).abs() < 1e-12);
    }

    #[test]
    fn single_pair_mdp_has_unit_occupancy() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![0.5], vec![1.0], 0.9).unwrap();
        let pi = TabularSoftmaxPolicy::uniform(1, 1);
        let occ = exact_occupancy(&mdp, &pi).unwrap();
        assert!((occ.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unnormalised_kernel() {
        let err = TabularMdp::new(1, 1, vec![0.9], vec![0.0], vec![1.0], 0.9).unwrap_err();
        assert!(matches!(err, Error::KernelNotNormalized { .. }));
    }

    #[test]
    fn empirical_occupancy_single_step() {
        let ds = Dataset {
            trajectories: vec![Trajectory {
                steps: vec![Step {
                    state: 1usize,
                    action: 2usize,
                    reward: 0.0,
                    next_state: 0,
                }],
                behavior_logps: vec![0.0],
                terminal: true,
            }],
            behavior_policy_id: "x".into(),
        };
        let occ = empirical_occupancy(&ds, 3, 3, 0.9).unwrap();
        assert_eq!(occ.get(1, 2), 1.0);
        assert!((occ.sum() - 1.0).abs() < 1e-15);
        let empty: Dataset<usize, usize> = Dataset {
            trajectories: vec![],
            behavior_policy_id: "x".into(),
        };
        assert!(matches!(empirical_occupancy(&empty, 3, 3, 0.9), Err(Error::EmptyDataset)));
    }

    #[test]
    fn collection_is_seed_deterministic() {
        let mut rng = rng_from_seed(1);
        let mdp = TabularMdp::random(4, 2, 0.9, &mut rng).unwrap();
        let pi = TabularSoftmaxPolicy::random(4, 2, 1.0, &mut rng);
        let a = collect_dataset(&mdp, &pi, 20, 15, 99, "pi").unwrap();
        let b = collect_dataset(&mdp, &pi, 20, 15, 99, "pi").unwrap();
        assert_eq!(a, b);
        let c = collect_dataset(&mdp, &pi, 20, 15, 100, "pi").unwrap();
        assert_ne!(a, c);
        assert!(matches!(collect_dataset(&mdp, &pi, 0, 15, 1, "pi"), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn ndjson_round_trip() {
        let mut rng = rng_from_seed(5);
        let mdp = TabularMdp::random(3, 2, 0.9, &mut rng).unwrap();
        let pi = TabularSoftmaxPolicy::random(3, 2, 1.0, &mut rng);
        let ds = collect_dataset(&mdp, &pi, 5, 7, 3, "pi-hash").unwrap();
        let mut buf = Vec::new();
        ds.write_ndjson(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"version\":1"));
        assert_eq!(text.lines().count(), 6);
        let back: Dataset<usize, usize> = Dataset::read_ndjson(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }
}
