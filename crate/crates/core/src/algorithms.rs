//! The batch policy-search loop and its baselines.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{Minigolf, MinigolfModelSimulator, TwoAreasGridworld};
use crate::gradient::{mvg_gradient, pgt_gradient, reinforce_gradient, EstimatorKind, GradientEstimate};
use crate::mdp::{collect_dataset, discounted_return, Dataset, Environment};
use crate::models::{ActionEffectModel, FitConfig, FitReport, RectifiedGaussianModel};
use crate::optim::{AdamConfig, AdamState, StepSchedule};
use crate::policy::{Policy, QNorm, RbfGaussianPolicy, TabularSoftmaxPolicy};
use crate::rng::{derive_seed, stream};
use crate::value::{exact_q, mc_q, RolloutQConfig};
use crate::weighting::WeightedDataset;
use crate::{Error, Result, TabularMdp};

const FIT_STREAM: u64 = 0x4649_5400;
const Q_STREAM: u64 = 0x5100;
const EVAL_STREAM: u64 = 0x4556_414c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub grad_steps: usize,
    pub policy_adam: AdamConfig,
    /// Overrides the policy learning rate per iteration when present.
    pub schedule: Option<StepSchedule>,
    pub model_fit: FitConfig,
    pub rollout: RolloutQConfig,
    pub q_norm: QNorm,
    pub gamma: f64,
    /// Stop once the full-trajectory ESS falls below this fraction of N.
    pub ess_stop_fraction: f64,
    pub estimator: EstimatorKind,
    pub eval_episodes: usize,
    pub eval_horizon: usize,
    pub seed: u64,
    /// Record wall-clock time per iteration (makes logs non-reproducible).
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::gridworld()
    }
}

impl TrainConfig {
    pub fn gridworld() -> Self {
        Self {
            iterations: 15,
            grad_steps: 1,
            policy_adam: AdamConfig::GRIDWORLD_POLICY,
            schedule: None,
            model_fit: FitConfig::with_adam(AdamConfig::GRIDWORLD_MODEL),
            rollout: RolloutQConfig::default(),
            q_norm: QNorm::Two,
            gamma: 0.99,
            ess_stop_fraction: 0.1,
            estimator: EstimatorKind::Gamps,
            eval_episodes: 1000,
            eval_horizon: 50,
            seed: 0,
            record_wall_time: false,
        }
    }

    pub fn minigolf() -> Self {
        Self {
            iterations: 30,
            policy_adam: AdamConfig::MINIGOLF_POLICY,
            model_fit: FitConfig::with_adam(AdamConfig::MINIGOLF_MODEL),
            eval_horizon: 20,
            ..Self::gridworld()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.grad_steps == 0 || self.eval_episodes == 0 || self.eval_horizon == 0 {
            return Err(Error::InvalidArgument(
                "iterations, gradient steps and evaluation sizes must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.ess_stop_fraction) {
            return Err(Error::InvalidArgument("ESS stop fraction must lie in [0, 1]".into()));
        }
        self.policy_adam.validate()?;
        self.model_fit.validate()?;
        self.rollout.validate()?;
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// True-environment return of the policy after this iteration's update.
    pub mean_return: f64,
    pub std_return: f64,
    pub grad_norm: f64,
    pub ess: f64,
    pub fit: Option<FitReport>,
    pub wall_time_ms: u64,
    /// Set on the entry where the ESS criterion halted training; no update was made.
    pub ess_stop: bool,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub estimator: EstimatorKind,
    pub initial_return: f64,
    pub initial_std: f64,
    pub records: Vec<IterationRecord>,
}

impl RunLog {
    pub fn final_params(&self) -> Option<&[f64]> {
        self.records.last().map(|r| r.params.as_slice())
    }

    pub fn final_return(&self) -> f64 {
        self.records.last().map_or(self.initial_return, |r| r.mean_return)
    }

    pub fn best_return(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.mean_return)
            .fold(self.initial_return, f64::max)
    }

    pub fn stopped_by_ess(&self) -> bool {
        self.records.iter().any(|r| r.ess_stop)
    }

    pub const CSV_HEADER: &'static str = "iteration,mean_return,std_return,grad_norm,ess,fit_objective,wall_time_ms,ess_stop";

    /// Row 0 is the initial policy; row `k` is the policy after update `k`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(w, "0,{},{},,,,0,0", self.initial_return, self.initial_std)?;
        for r in &self.records {
            let fit = r.fit.map(|f| f.objective.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.iteration + 1,
                r.mean_return,
                r.std_return,
                r.grad_norm,
                r.ess,
                fit,
                r.wall_time_ms,
                u8::from(r.ess_stop)
            )?;
        }
        Ok(())
    }
}

/// Fits a transition model from weighted data and turns it into action
/// values at every dataset step.
pub trait ModelCritic: Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;
    type Action: Clone + Send + Sync + std::fmt::Debug;
    type Policy: Policy<Self::State, Self::Action>;
    type Model;

    fn fit(
        &self,
        dataset: &Dataset<Self::State, Self::Action>,
        weights: &[Vec<f64>],
        cfg: &FitConfig,
    ) -> Result<(Self::Model, FitReport)>;

    fn q_values(
        &self,
        model: &Self::Model,
        policy: &Self::Policy,
        dataset: &Dataset<Self::State, Self::Action>,
        gamma: f64,
        rollout: RolloutQConfig,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>>;
}

/// Action-effect model exported to a tabular kernel and solved exactly.
pub struct GridworldCritic<'a> {
    pub env: &'a TwoAreasGridworld,
}

impl GridworldCritic<'_> {
    pub fn exported_mdp(&self, model: &ActionEffectModel) -> Result<TabularMdp> {
        self.env.true_mdp().with_kernel(model.export_kernel(self.env))
    }
}

impl ModelCritic for GridworldCritic<'_> {
    type State = usize;
    type Action = usize;
    type Policy = TabularSoftmaxPolicy;
    type Model = ActionEffectModel;

    fn fit(&self, dataset: &Dataset<usize, usize>, weights: &[Vec<f64>], cfg: &FitConfig) -> Result<(ActionEffectModel, FitReport)> {
        let mut model = ActionEffectModel::new(4);
        let report = model.fit_weighted(self.env, dataset, weights, cfg)?;
        Ok((model, report))
    }

    fn q_values(
        &self,
        model: &ActionEffectModel,
        policy: &TabularSoftmaxPolicy,
        dataset: &Dataset<usize, usize>,
        gamma: f64,
        _rollout: RolloutQConfig,
        _seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        let mdp = self.exported_mdp(model)?.with_discount(gamma)?;
        let q = exact_q(&mdp, policy)?;
        Ok(dataset
            .trajectories
            .iter()
            .map(|t| t.steps.iter().map(|st| q.get(st.state, st.action)).collect())
            .collect())
    }
}

/// Rectified-Gaussian model with Monte-Carlo rollouts.
pub struct MinigolfCritic<'a> {
    pub env: &'a Minigolf,
}

impl ModelCritic for MinigolfCritic<'_> {
    type State = f64;
    type Action = f64;
    type Policy = RbfGaussianPolicy;
    type Model = RectifiedGaussianModel;

    fn fit(&self, dataset: &Dataset<f64, f64>, weights: &[Vec<f64>], cfg: &FitConfig) -> Result<(RectifiedGaussianModel, FitReport)> {
        let mut model = RectifiedGaussianModel::default();
        let report = model.fit_weighted(dataset, weights, cfg)?;
        Ok((model, report))
    }

    fn q_values(
        &self,
        model: &RectifiedGaussianModel,
        policy: &RbfGaussianPolicy,
        dataset: &Dataset<f64, f64>,
        gamma: f64,
        rollout: RolloutQConfig,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        let sim = MinigolfModelSimulator { env: self.env, model };
        Ok(dataset
            .trajectories
            .par_iter()
            .enumerate()
            .map(|(i, traj)| {
                traj.steps
                    .iter()
                    .enumerate()
                    .map(|(t, st)| {
                        let mut rng = stream(derive_seed(seed, i as u64), t as u64);
                        mc_q(&sim, policy, &st.state, &st.action, rollout, gamma, &mut rng)
                    })
                    .collect()
            })
            .collect())
    }
}

/// How model-fitting weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitWeighting {
    GradientAware,
    Uniform,
}

/// Monte-Carlo mean and standard deviation of discounted returns in the
/// true environment; episode `i` uses stream `i` of `seed`.
pub fn evaluate_policy<E, P>(env: &E, policy: &P, n_episodes: usize, horizon: usize, gamma: f64, seed: u64) -> Result<(f64, f64)>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    let data = collect_dataset(env, policy, n_episodes, horizon, seed, "evaluation")?;
    let returns: Vec<f64> = data.trajectories.iter().map(|t| discounted_return(t, gamma)).collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Gradient-aware model-based policy search.
pub fn run_gamps<C, E>(
    critic: &C,
    env: &E,
    dataset: &Dataset<C::State, C::Action>,
    pi_b: &C::Policy,
    theta0: &C::Policy,
    cfg: &TrainConfig,
) -> Result<RunLog>
where
    C: ModelCritic,
    E: Environment<State = C::State, Action = C::Action>,
{
    run_model_based(critic, env, dataset, pi_b, theta0, cfg, FitWeighting::GradientAware)
}

/// A baseline: maximum-likelihood model (`Ml`) or model-free (`Reinforce`, `Pgt`).
pub fn run_baseline<C, E>(
    kind: EstimatorKind,
    critic: &C,
    env: &E,
    dataset: &Dataset<C::State, C::Action>,
    pi_b: &C::Policy,
    theta0: &C::Policy,
    cfg: &TrainConfig,
) -> Result<RunLog>
where
    C: ModelCritic,
    E: Environment<State = C::State, Action = C::Action>,
{
    match kind {
        EstimatorKind::Gamps => run_gamps(critic, env, dataset, pi_b, theta0, cfg),
        EstimatorKind::Ml => run_model_based(critic, env, dataset, pi_b, theta0, cfg, FitWeighting::Uniform),
        EstimatorKind::Reinforce | EstimatorKind::Pgt => run_model_free(kind, env, dataset, pi_b, theta0, cfg),
    }
}

/// Dispatches on `cfg.estimator`.
pub fn train<C, E>(
    critic: &C,
    env: &E,
    dataset: &Dataset<C::State, C::Action>,
    pi_b: &C::Policy,
    theta0: &C::Policy,
    cfg: &TrainConfig,
) -> Result<RunLog>
where
    C: ModelCritic,
    E: Environment<State = C::State, Action = C::Action>,
{
    run_baseline(cfg.estimator, critic, env, dataset, pi_b, theta0, cfg)
}

struct LoopState<P> {
    policy: P,
    adam: AdamState,
    records: Vec<IterationRecord>,
}

fn start<E, P>(env: &E, theta0: &P, cfg: &TrainConfig, kind: EstimatorKind) -> Result<(LoopState<P>, RunLog)>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    cfg.validate()?;
    let (m, s) = evaluate_policy(env, theta0, cfg.eval_episodes, cfg.eval_horizon, cfg.gamma, derive_seed(cfg.seed ^ EVAL_STREAM, 0))?;
    let state = LoopState {
        policy: theta0.clone(),
        adam: AdamState::new(cfg.policy_adam, theta0.n_params()),
        records: Vec::with_capacity(cfg.iterations),
    };
    let log = RunLog {
        estimator: kind,
        initial_return: m,
        initial_std: s,
        records: Vec::new(),
    };
    Ok((state, log))
}

fn ascend<P, S, A>(st: &mut LoopState<P>, grad: &GradientEstimate, cfg: &TrainConfig, k: usize) -> Result<()>
where
    P: Policy<S, A>,
{
    let lr = cfg.schedule.as_ref().map_or(cfg.policy_adam.lr, |s| s.at(k));
    let mut params = st.policy.params().to_vec();
    st.adam.step_with_lr(&mut params, &grad.grad, true, lr)?;
    st.policy.set_params(&params)
}

#[allow(clippy::too_many_arguments)]
fn finish_iteration<E, P>(
    env: &E,
    st: &mut LoopState<P>,
    cfg: &TrainConfig,
    k: usize,
    grad_norm: f64,
    ess: f64,
    fit: Option<FitReport>,
    started: Instant,
) -> Result<()>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    let (m, s) = evaluate_policy(
        env,
        &st.policy,
        cfg.eval_episodes,
        cfg.eval_horizon,
        cfg.gamma,
        derive_seed(cfg.seed ^ EVAL_STREAM, k as u64 + 1),
    )?;
    st.records.push(IterationRecord {
        iteration: k,
        mean_return: m,
        std_return: s,
        grad_norm,
        ess,
        fit,
        wall_time_ms: if cfg.record_wall_time { started.elapsed().as_millis() as u64 } else { 0 },
        ess_stop: false,
        params: st.policy.params().to_vec(),
    });
    Ok(())
}

fn ess_stop_record<P, S, A>(st: &LoopState<P>, k: usize, ess: f64, last: (f64, f64)) -> IterationRecord
where
    P: Policy<S, A> + Clone,
{
    IterationRecord {
        iteration: k,
        mean_return: last.0,
        std_return: last.1,
        grad_norm: 0.0,
        ess,
        fit: None,
        wall_time_ms: 0,
        ess_stop: true,
        params: st.policy.params().to_vec(),
    }
}

fn last_eval(log: &RunLog, records: &[IterationRecord]) -> (f64, f64) {
    records
        .last()
        .map_or((log.initial_return, log.initial_std), |r| (r.mean_return, r.std_return))
}

/// Weighted model fit, model action values, model-value gradient, ascent.
pub fn run_model_based<C, E>(
    critic: &C,
    env: &E,
    dataset: &Dataset<C::State, C::Action>,
    pi_b: &C::Policy,
    theta0: &C::Policy,
    cfg: &TrainConfig,
    weighting: FitWeighting,
) -> Result<RunLog>
where
    C: ModelCritic,
    E: Environment<State = C::State, Action = C::Action>,
{
    let kind = match weighting {
        FitWeighting::GradientAware => EstimatorKind::Gamps,
        FitWeighting::Uniform => EstimatorKind::Ml,
    };
    let (mut st, mut log) = start(env, theta0, cfg, kind)?;
    for k in 0..cfg.iterations {
        let started = Instant::now();
        let weights = match weighting {
            FitWeighting::GradientAware => WeightedDataset::gamps(dataset, &st.policy, pi_b, cfg.gamma, cfg.q_norm)?,
            FitWeighting::Uniform => WeightedDataset::uniform(dataset, &st.policy, pi_b)?,
        };
        let ess = weights.full_prefix_ess().unwrap_or(0.0);
        if ess < cfg.ess_stop_fraction * dataset.len() as f64 {
            let rec = ess_stop_record(&st, k, ess, last_eval(&log, &st.records));
            st.records.push(rec);
            break;
        }
        let mut fit_cfg = cfg.model_fit;
        fit_cfg.seed = derive_seed(cfg.seed ^ FIT_STREAM, k as u64);
        let (model, report) = critic.fit(dataset, &weights.weights, &fit_cfg)?;
        let mut grad_norm = 0.0;
        for j in 0..cfg.grad_steps {
            let q_seed = derive_seed(cfg.seed ^ Q_STREAM, (k * cfg.grad_steps + j) as u64);
            let q = critic.q_values(&model, &st.policy, dataset, cfg.gamma, cfg.rollout, q_seed)?;
            let mut grad = mvg_gradient(dataset, &st.policy, pi_b, &q, cfg.gamma)?;
            grad.estimator = kind;
            if j == 0 {
                grad_norm = grad.norm();
            }
            ascend(&mut st, &grad, cfg, k)?;
        }
        finish_iteration(env, &mut st, cfg, k, grad_norm, ess, Some(report), started)?;
    }
    log.records = st.records;
    Ok(log)
}

/// Importance-sampled REINFORCE or PGT ascent.
pub fn run_model_free<E, P>(
    kind: EstimatorKind,
    env: &E,
    dataset: &Dataset<E::State, E::Action>,
    pi_b: &P,
    theta0: &P,
    cfg: &TrainConfig,
) -> Result<RunLog>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    if kind.uses_model() {
        return Err(Error::InvalidArgument(format!("{} needs a model", kind.name())));
    }
    let (mut st, mut log) = start(env, theta0, cfg, kind)?;
    for k in 0..cfg.iterations {
        let started = Instant::now();
        let weights = WeightedDataset::uniform(dataset, &st.policy, pi_b)?;
        let ess = weights.full_prefix_ess().unwrap_or(0.0);
        if ess < cfg.ess_stop_fraction * dataset.len() as f64 {
            let rec = ess_stop_record(&st, k, ess, last_eval(&log, &st.records));
            st.records.push(rec);
            break;
        }
        let mut grad_norm = 0.0;
        for j in 0..cfg.grad_steps {
            let grad = match kind {
                EstimatorKind::Reinforce => reinforce_gradient(dataset, &st.policy, pi_b, cfg.gamma)?,
                _ => pgt_gradient(dataset, &st.policy, pi_b, cfg.gamma)?,
            };
            if j == 0 {
                grad_norm = grad.norm();
            }
            ascend(&mut st, &grad, cfg, k)?;
        }
        finish_iteration(env, &mut st, cfg, k, grad_norm, ess, None, started)?;
    }
    log.records = st.records;
    Ok(log)
}
