//! Experiment recipes behind each subcommand.
//!
//! Repetition `r` uses seed `master + r`. From a repetition seed `s` the
//! behavior policy is initialised with `s`, training data uses stream
//! `derive_seed(s, 1)`, validation data `derive_seed(s, 2)` and standalone
//! evaluation `derive_seed(s, 3)`; training runs use `s` as their seed.

use std::path::{Path, PathBuf};

use gamps_core::algorithms::{evaluate_policy, train as train_run, GridworldCritic, MinigolfCritic, ModelCritic, RunLog, TrainConfig};
use gamps_core::envs::{Minigolf, TwoAreasGridworld};
use gamps_core::gradient::{cosine_similarity, exact_gradient_tabular, mvg_bias_bound, mvg_gradient, BoundReport, EstimatorKind};
use gamps_core::mdp::collect_dataset;
use gamps_core::models::{model_accuracy, FitReport};
use gamps_core::rng::{derive_seed, rng_from_seed};
use gamps_core::value::{exact_q, q_mse};
use gamps_core::weighting::WeightedDataset;
use gamps_core::{Dataset, Environment, Policy, PolicyRecord, QNorm, RbfGaussianPolicy, TabularMdp, TabularSoftmaxPolicy};
use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{EnvironmentConfig, Experiment};
use crate::error::{invalid, CliResult};
use crate::output::{opt, policy_hash, write_file, Csv, Manifest};
use crate::stats;

pub const TRAIN_DATA: u64 = 1;
pub const VALIDATION_DATA: u64 = 2;
pub const EVALUATION: u64 = 3;
const BOUNDS_SUITE: u64 = 0xB0;
const BOUND_TOL: f64 = 1e-9;

/// Binds the environment, its critic and a behavior-policy factory for the
/// configured benchmark, then evaluates `$body`.
macro_rules! with_bench {
    ($exp:expr, |$critic:ident, $env:ident, $behavior:ident| $body:expr) => {
        match &$exp.environment {
            EnvironmentConfig::Gridworld(cfg) => {
                let $env = TwoAreasGridworld::new(cfg.clone()).map_err(invalid)?;
                let $critic = GridworldCritic { env: &$env };
                let $behavior = |seed: u64| $env.initial_policy(&mut rng_from_seed(seed));
                $body
            }
            EnvironmentConfig::Minigolf(cfg) => {
                let $env = Minigolf::new(cfg.clone()).map_err(invalid)?;
                let $critic = MinigolfCritic { env: &$env };
                let (x_max, centers, log_std) = (cfg.x_max, $exp.policy.rbf_centers, $exp.policy.rbf_log_std);
                let $behavior = move |_seed: u64| {
                    let mut pi = RbfGaussianPolicy::equally_spaced(0.0, x_max, centers).expect("validated policy shape");
                    pi.set_log_std(log_std);
                    pi
                };
                $body
            }
        }
    };
}

fn behavior_id<S, A, P: Policy<S, A>>(pi: &P) -> String {
    format!("{}:{}", pi.class_tag(), &policy_hash(&pi.to_record())[..16])
}

fn behavior_data<E, P>(exp: &Experiment, env: &E, pi: &P, n: usize, seed: u64, stream: u64) -> CliResult<Dataset<E::State, E::Action>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
{
    Ok(collect_dataset(env, pi, n, exp.horizon, derive_seed(seed, stream), behavior_id(pi))?)
}

// ---------------------------------------------------------------- collect

pub fn collect(exp: &Experiment) -> CliResult<Vec<PathBuf>> {
    with_bench!(exp, |_critic, env, behavior| collect_with(exp, &env, &behavior))
}

fn collect_with<E, P, F>(exp: &Experiment, env: &E, behavior: &F) -> CliResult<Vec<PathBuf>>
where
    E: Environment,
    E::State: Serialize,
    E::Action: Serialize,
    P: Policy<E::State, E::Action>,
    F: Fn(u64) -> P + Sync,
{
    let outputs = (0..exp.reps)
        .into_par_iter()
        .map(|r| {
            let seed = exp.rep_seed(r);
            let pi = behavior(seed);
            let data = behavior_data(exp, env, &pi, exp.trajectories, seed, TRAIN_DATA)?;
            let mut bytes = Vec::new();
            data.write_ndjson(&mut bytes)?;
            let manifest = Manifest::new(exp, seed, derive_seed(seed, TRAIN_DATA), exp.trajectories, pi.to_record(), &bytes);
            Ok((bytes, manifest))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut files = Vec::new();
    for (r, (bytes, manifest)) in outputs.into_iter().enumerate() {
        let path = exp.out.join(format!("dataset-{r}.ndjson"));
        files.push(write_file(&path, &bytes)?);
        let mut json = serde_json::to_vec_pretty(&manifest).map_err(anyhow::Error::from)?;
        json.push(b'\n');
        files.push(write_file(&Manifest::path_for(&path), &json)?);
    }
    Ok(files)
}

// ---------------------------------------------------------------- train

/// One training repetition.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub rep: usize,
    pub seed: u64,
    pub log: RunLog,
    pub policy_class: String,
}

/// Loads a dataset and checks its manifest against the configuration.
fn load_dataset<S, A, P, F>(exp: &Experiment, path: &Path, behavior: &F) -> CliResult<(Dataset<S, A>, P)>
where
    S: DeserializeOwned,
    A: DeserializeOwned,
    P: Policy<S, A>,
    F: Fn(u64) -> P,
{
    let bytes = std::fs::read(path).map_err(|e| invalid(format!("cannot read dataset {}: {e}", path.display())))?;
    let manifest = Manifest::read(&Manifest::path_for(path))?;
    let pi_b = behavior(manifest.seed);
    manifest.check(exp, &pi_b.to_record(), &bytes)?;
    let data = Dataset::read_ndjson(bytes.as_slice()).map_err(invalid)?;
    Ok((data, pi_b))
}

fn train_with<C, E, F>(exp: &Experiment, cfg: &TrainConfig, critic: &C, env: &E, behavior: &F, dataset: Option<&Path>) -> CliResult<Vec<TrainRun>>
where
    C: ModelCritic,
    C::State: DeserializeOwned,
    C::Action: DeserializeOwned,
    E: Environment<State = C::State, Action = C::Action>,
    F: Fn(u64) -> C::Policy + Sync,
{
    let loaded = match dataset {
        Some(path) => Some(load_dataset(exp, path, behavior)?),
        None => None,
    };
    (0..exp.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = exp.rep_seed(rep);
            let fresh;
            let (data, pi_b) = match &loaded {
                Some((d, p)) => (d, p),
                None => {
                    let pi = behavior(seed);
                    fresh = (behavior_data(exp, env, &pi, exp.trajectories, seed, TRAIN_DATA)?, pi);
                    (&fresh.0, &fresh.1)
                }
            };
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let log = train_run(critic, env, data, pi_b, pi_b, &run_cfg)?;
            Ok(TrainRun {
                rep,
                seed,
                log,
                policy_class: pi_b.class_tag().to_string(),
            })
        })
        .collect()
}

/// Training runs for every repetition under the configured estimator.
pub fn train_runs(exp: &Experiment, dataset: Option<&Path>) -> CliResult<Vec<TrainRun>> {
    with_bench!(exp, |critic, env, behavior| train_with(exp, &exp.training, &critic, &env, &behavior, dataset))
}

/// Per-iteration returns `1..=iterations`; an early stop holds its last value.
pub fn curve(log: &RunLog, iterations: usize) -> Vec<f64> {
    let mut last = log.initial_return;
    (0..iterations)
        .map(|k| {
            if let Some(r) = log.records.get(k) {
                last = r.mean_return;
            }
            last
        })
        .collect()
}

fn curve_rows(csv: &mut Csv, prefix: &[String], runs: &[&RunLog], iterations: usize) {
    let curves: Vec<Vec<f64>> = runs.iter().map(|l| curve(l, iterations)).collect();
    for k in 0..iterations {
        let xs: Vec<f64> = curves.iter().map(|c| c[k]).collect();
        let mut row = prefix.to_vec();
        row.extend([
            (k + 1).to_string(),
            xs.len().to_string(),
            stats::mean(&xs).to_string(),
            opt(stats::sample_std(&xs)),
            opt(stats::ci95(&xs)),
        ]);
        csv.row(row);
    }
}

pub fn train(exp: &Experiment, dataset: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let kind = exp.training.estimator;
    if !kind.uses_model() && exp.model_block {
        eprintln!("warning: {} does not learn a model; the model block is ignored", kind.name());
    }
    let runs = train_runs(exp, dataset)?;
    let mut files = Vec::new();
    for run in &runs {
        let mut body = Vec::new();
        run.log.write_csv(&mut body)?;
        let mut csv = Csv::comment_only(exp);
        csv.raw(&String::from_utf8_lossy(&body));
        files.push(csv.write(&exp.out.join(format!("train-{}-rep{}.csv", kind.name(), run.rep)))?);
        let record = PolicyRecord {
            class: run.policy_class.clone(),
            params: run.log.final_params().map(<[f64]>::to_vec).unwrap_or_default(),
        };
        if !record.params.is_empty() {
            let mut json = serde_json::to_vec_pretty(&record).map_err(anyhow::Error::from)?;
            json.push(b'\n');
            files.push(write_file(&exp.out.join(format!("policy-{}-rep{}.json", kind.name(), run.rep)), &json)?);
        }
    }
    let mut agg = Csv::new(exp, "iteration,reps,mean_return,std_across_reps,ci95");
    let logs: Vec<&RunLog> = runs.iter().map(|r| &r.log).collect();
    curve_rows(&mut agg, &[], &logs, exp.training.iterations);
    files.push(agg.write(&exp.out.join(format!("train-{}-aggregate.csv", kind.name())))?);
    Ok(files)
}

// ---------------------------------------------------------------- evaluate

fn read_policy(path: &Path) -> CliResult<PolicyRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read policy {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("policy record: {e}")))
}

fn evaluate_with<E, P, F>(exp: &Experiment, env: &E, behavior: &F, record: Option<&PolicyRecord>) -> CliResult<Vec<(usize, u64, f64, f64)>>
where
    E: Environment,
    P: Policy<E::State, E::Action>,
    F: Fn(u64) -> P + Sync,
{
    let t = &exp.training;
    (0..exp.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = exp.rep_seed(rep);
            let mut pi = behavior(seed);
            if let Some(rec) = record {
                pi.load_record(rec).map_err(invalid)?;
            }
            let (mean, std) = evaluate_policy(env, &pi, t.eval_episodes, t.eval_horizon, t.gamma, derive_seed(seed, EVALUATION))?;
            Ok((rep, seed, mean, std))
        })
        .collect()
}

/// Evaluates the initial policy, or the policy stored at `policy`, in the
/// true environment.
pub fn evaluate(exp: &Experiment, policy: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let record = policy.map(read_policy).transpose()?;
    let rows = with_bench!(exp, |_critic, env, behavior| evaluate_with(exp, &env, &behavior, record.as_ref()))?;
    let mut csv = Csv::new(exp, "rep,seed,episodes,mean_return,std_return");
    for (rep, seed, mean, std) in rows {
        csv.row([rep.to_string(), seed.to_string(), exp.training.eval_episodes.to_string(), mean.to_string(), std.to_string()]);
    }
    Ok(vec![csv.write(&exp.out.join("evaluate.csv"))?])
}

// ---------------------------------------------------------------- table1

/// Model and gradient quality of one fitted model on held-out data.
#[derive(Debug, Clone)]
pub struct Table1Row {
    pub rep: usize,
    pub seed: u64,
    pub method: EstimatorKind,
    /// Fraction of held-out transitions whose next cell is the model's most likely one.
    pub accuracy: f64,
    /// Mean squared error of the model action values against exact ones.
    pub q_mse: f64,
    /// Cosine between the held-out model-value gradient and the exact gradient.
    pub cosine: f64,
    pub fit: FitReport,
}

fn gridworld_only(exp: &Experiment, command: &str) -> CliResult<TwoAreasGridworld> {
    match &exp.environment {
        EnvironmentConfig::Gridworld(cfg) => TwoAreasGridworld::new(cfg.clone()).map_err(invalid),
        other => Err(invalid(format!("{command} needs the gridworld environment, got {}", other.name()))),
    }
}

fn fit_weights(method: EstimatorKind, data: &Dataset<usize, usize>, pi: &TabularSoftmaxPolicy, cfg: &TrainConfig) -> CliResult<Vec<Vec<f64>>> {
    let w = match method {
        EstimatorKind::Gamps => WeightedDataset::gamps(data, pi, pi, cfg.gamma, cfg.q_norm)?,
        _ => WeightedDataset::uniform(data, pi, pi)?,
    };
    Ok(w.weights)
}

pub fn table1_rows(exp: &Experiment) -> CliResult<Vec<Table1Row>> {
    let env = gridworld_only(exp, "table1")?;
    let critic = GridworldCritic { env: &env };
    let t = &exp.training;
    let truth = env.true_mdp().with_discount(t.gamma)?;
    let per_rep = (0..exp.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = exp.rep_seed(rep);
            let pi = env.initial_policy(&mut rng_from_seed(seed));
            let train = behavior_data(exp, &env, &pi, exp.trajectories, seed, TRAIN_DATA)?;
            let val = behavior_data(exp, &env, &pi, exp.validation_trajectories, seed, VALIDATION_DATA)?;
            let true_q = exact_q(&truth, &pi)?;
            let grad = exact_gradient_tabular(&truth, &pi)?;
            [EstimatorKind::Ml, EstimatorKind::Gamps]
                .into_iter()
                .map(|method| {
                    let weights = fit_weights(method, &train, &pi, t)?;
                    let (model, fit) = critic.fit(&train, &weights, &t.model_fit)?;
                    let p_hat = critic.exported_mdp(&model)?;
                    let q_hat = exact_q(&p_hat.with_discount(t.gamma)?, &pi)?;
                    let q_val = critic.q_values(&model, &pi, &val, t.gamma, t.rollout, seed)?;
                    let est = mvg_gradient(&val, &pi, &pi, &q_val, t.gamma)?;
                    Ok(Table1Row {
                        rep,
                        seed,
                        method,
                        accuracy: model_accuracy(&p_hat, &val)?,
                        q_mse: q_mse(&q_hat, &true_q)?,
                        cosine: cosine_similarity(&grad, &est.grad),
                        fit,
                    })
                })
                .collect::<CliResult<Vec<_>>>()
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

pub fn table1(exp: &Experiment) -> CliResult<Vec<PathBuf>> {
    let rows = table1_rows(exp)?;
    let mut runs = Csv::new(exp, "rep,seed,method,accuracy,q_mse,cosine,fit_epochs,fit_objective");
    for r in &rows {
        runs.row([
            r.rep.to_string(),
            r.seed.to_string(),
            r.method.name().to_string(),
            r.accuracy.to_string(),
            r.q_mse.to_string(),
            r.cosine.to_string(),
            r.fit.epochs.to_string(),
            r.fit.objective.to_string(),
        ]);
    }
    let mut summary = Csv::new(exp, "method,metric,n,mean,ci95");
    for method in [EstimatorKind::Ml, EstimatorKind::Gamps] {
        let of = |f: fn(&Table1Row) -> f64| -> Vec<f64> { rows.iter().filter(|r| r.method == method).map(f).collect() };
        for (metric, xs) in [
            ("accuracy", of(|r| r.accuracy)),
            ("q_mse", of(|r| r.q_mse)),
            ("cosine", of(|r| r.cosine)),
        ] {
            summary.row([
                method.name().to_string(),
                metric.to_string(),
                xs.len().to_string(),
                stats::mean(&xs).to_string(),
                opt(stats::ci95(&xs)),
            ]);
        }
    }
    Ok(vec![runs.write(&exp.out.join("table1-runs.csv"))?, summary.write(&exp.out.join("table1.csv"))?])
}

// ---------------------------------------------------------------- bounds

#[derive(Debug, Clone)]
pub struct BoundRow {
    /// `random`, `exact`, `ml` or `gamps`.
    pub source: &'static str,
    /// Suite instance or repetition index.
    pub instance: usize,
    pub lambda: Option<f64>,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub report: BoundReport,
}

impl BoundRow {
    /// `lhs <= rhs_theorem1 <= rhs_proposition` up to relative round-off.
    pub fn holds(&self) -> bool {
        let r = &self.report;
        r.lhs <= r.rhs_theorem1 * (1.0 + BOUND_TOL) + 1e-10 && r.rhs_theorem1 <= r.rhs_proposition * (1.0 + BOUND_TOL)
    }
}

fn mixed_kernel(mdp: &TabularMdp, lambda: f64, rng: &mut gamps_core::SimRng) -> CliResult<TabularMdp> {
    let other = TabularMdp::random(mdp.n_states(), mdp.n_actions(), mdp.discount(), rng)?;
    let kernel = mdp
        .kernel()
        .iter()
        .zip(other.kernel())
        .map(|(p, q)| (1.0 - lambda) * p + lambda * q)
        .collect();
    Ok(mdp.with_kernel(kernel)?)
}

fn bound_row(source: &'static str, instance: usize, lambda: Option<f64>, mdp: &TabularMdp, p_hat: &TabularMdp, pi: &TabularSoftmaxPolicy, q: QNorm) -> CliResult<BoundRow> {
    Ok(BoundRow {
        source,
        instance,
        lambda,
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        gamma: mdp.discount(),
        report: mvg_bias_bound(mdp, p_hat, pi, q)?,
    })
}

/// Random perturbed-kernel suite, the exact-model row and, on the gridworld,
/// the fitted ML and gradient-aware models of every repetition.
pub fn bounds_rows(exp: &Experiment) -> CliResult<Vec<BoundRow>> {
    let b = &exp.bounds;
    let q = exp.training.q_norm;
    let mut rng = rng_from_seed(derive_seed(exp.seed, BOUNDS_SUITE));
    let mut rows = Vec::with_capacity(b.instances + 1);
    for i in 0..b.instances {
        let ns = rng.random_range(2..=b.max_states);
        let na = rng.random_range(2..=b.max_actions);
        let gamma = rng.random_range(0.3..0.95);
        let mdp = TabularMdp::random(ns, na, gamma, &mut rng)?;
        let pi = TabularSoftmaxPolicy::random(ns, na, 1.0, &mut rng);
        let lambda = rng.random_range(b.min_lambda..=b.max_lambda);
        let p_hat = mixed_kernel(&mdp, lambda, &mut rng)?;
        if i == 0 {
            rows.push(bound_row("exact", 0, Some(0.0), &mdp, &mdp, &pi, q)?);
        }
        rows.push(bound_row("random", i, Some(lambda), &mdp, &p_hat, &pi, q)?);
    }
    if let EnvironmentConfig::Gridworld(cfg) = &exp.environment {
        let env = TwoAreasGridworld::new(cfg.clone()).map_err(invalid)?;
        let critic = GridworldCritic { env: &env };
        let t = &exp.training;
        let truth = env.true_mdp().with_discount(t.gamma)?;
        let fitted = (0..exp.reps)
            .into_par_iter()
            .map(|rep| {
                let seed = exp.rep_seed(rep);
                let pi = env.initial_policy(&mut rng_from_seed(seed));
                let data = behavior_data(exp, &env, &pi, exp.trajectories, seed, TRAIN_DATA)?;
                [(EstimatorKind::Ml, "ml"), (EstimatorKind::Gamps, "gamps")]
                    .into_iter()
                    .map(|(method, source)| {
                        let weights = fit_weights(method, &data, &pi, t)?;
                        let (model, _) = critic.fit(&data, &weights, &t.model_fit)?;
                        let p_hat = critic.exported_mdp(&model)?.with_discount(t.gamma)?;
                        bound_row(source, rep, None, &truth, &p_hat, &pi, q)
                    })
                    .collect::<CliResult<Vec<_>>>()
            })
            .collect::<CliResult<Vec<_>>>()?;
        rows.extend(fitted.into_iter().flatten());
    }
    Ok(rows)
}

pub fn bounds(exp: &Experiment) -> CliResult<Vec<PathBuf>> {
    let rows = bounds_rows(exp)?;
    let mut csv = Csv::new(
        exp,
        "source,instance,lambda,n_states,n_actions,gamma,lhs,rhs_theorem1,rhs_proposition,rhs_theorem1_rescaled,z,k,eta_kl,delta_kl,holds",
    );
    for row in &rows {
        let r = &row.report;
        csv.row([
            row.source.to_string(),
            row.instance.to_string(),
            opt(row.lambda),
            row.n_states.to_string(),
            row.n_actions.to_string(),
            row.gamma.to_string(),
            r.lhs.to_string(),
            r.rhs_theorem1.to_string(),
            r.rhs_proposition.to_string(),
            r.rhs_theorem1_rescaled.to_string(),
            r.z.to_string(),
            r.k.to_string(),
            r.eta_kl.to_string(),
            r.delta_kl.to_string(),
            u8::from(row.holds()).to_string(),
        ]);
    }
    Ok(vec![csv.write(&exp.out.join("bounds.csv"))?])
}

// ---------------------------------------------------------------- qstudy

/// Gradient-aware runs for every score norm `q`.
pub fn qstudy_runs(exp: &Experiment) -> CliResult<Vec<(QNorm, Vec<TrainRun>)>> {
    let mut out = Vec::new();
    for q in QNorm::ALL {
        let cfg = TrainConfig {
            q_norm: q,
            estimator: EstimatorKind::Gamps,
            ..exp.training.clone()
        };
        let runs = with_bench!(exp, |critic, env, behavior| train_with(exp, &cfg, &critic, &env, &behavior, None))?;
        out.push((q, runs));
    }
    Ok(out)
}

pub fn qstudy(exp: &Experiment) -> CliResult<Vec<PathBuf>> {
    let studies = qstudy_runs(exp)?;
    let mut runs_csv = Csv::new(exp, "q,rep,seed,iteration,mean_return");
    let mut agg = Csv::new(exp, "q,iteration,reps,mean_return,std_across_reps,ci95");
    for (q, runs) in &studies {
        for run in runs {
            let returns = std::iter::once(run.log.initial_return).chain(run.log.records.iter().map(|r| r.mean_return));
            for (k, ret) in returns.enumerate() {
                runs_csv.row([q.to_string(), run.rep.to_string(), run.seed.to_string(), k.to_string(), ret.to_string()]);
            }
        }
        let logs: Vec<&RunLog> = runs.iter().map(|r| &r.log).collect();
        curve_rows(&mut agg, &[q.to_string()], &logs, exp.training.iterations);
    }
    Ok(vec![runs_csv.write(&exp.out.join("qstudy-runs.csv"))?, agg.write(&exp.out.join("qstudy.csv"))?])
}
