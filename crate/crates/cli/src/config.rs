//! Experiment configuration: a TOML file whose blocks are validated up front.

use std::path::{Path, PathBuf};

use gamps_core::algorithms::TrainConfig;
use gamps_core::envs::{GridworldConfig, Minigolf, MinigolfConfig, TwoAreasGridworld};
use gamps_core::gradient::EstimatorKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvironmentConfig {
    Gridworld(GridworldConfig),
    Minigolf(MinigolfConfig),
}

impl EnvironmentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvironmentConfig::Gridworld(_) => "gridworld",
            EnvironmentConfig::Minigolf(_) => "minigolf",
        }
    }

    fn horizon(&self) -> usize {
        match self {
            EnvironmentConfig::Gridworld(c) => c.horizon,
            EnvironmentConfig::Minigolf(c) => c.horizon,
        }
    }

    fn discount(&self) -> f64 {
        match self {
            EnvironmentConfig::Gridworld(c) => c.discount,
            EnvironmentConfig::Minigolf(c) => c.discount,
        }
    }

    fn training_preset(&self) -> TrainConfig {
        let base = match self {
            EnvironmentConfig::Gridworld(_) => TrainConfig::gridworld(),
            EnvironmentConfig::Minigolf(_) => TrainConfig::minigolf(),
        };
        TrainConfig {
            gamma: self.discount(),
            eval_horizon: self.horizon(),
            ..base
        }
    }
}

/// Radial-basis Gaussian policy shape (continuous environments only; the
/// gridworld policy is set by `upper_logit_std` in its environment block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub rbf_centers: usize,
    pub rbf_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            rbf_centers: 6,
            rbf_log_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Training trajectories (gridworld 1000, minigolf 50).
    pub trajectories: Option<usize>,
    /// Held-out trajectories for model metrics (defaults to `trajectories`).
    pub validation_trajectories: Option<usize>,
    /// Collection horizon (defaults to the environment horizon).
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub instances: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub min_lambda: f64,
    pub max_lambda: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            max_states: 6,
            max_actions: 3,
            min_lambda: 0.01,
            max_lambda: 0.9,
        }
    }
}

/// The file as written by the user.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reps: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub data: DataConfig,
    /// Overrides for the model-fitting settings.
    #[serde(default)]
    pub model: toml::Table,
    /// Overrides for the environment's training preset.
    #[serde(default)]
    pub training: toml::Table,
    #[serde(default)]
    pub bounds: BoundsConfig,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    pub estimator: Option<EstimatorKind>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub seed: u64,
    pub reps: usize,
    #[serde(skip)]
    pub out: PathBuf,
    pub environment: EnvironmentConfig,
    pub policy: PolicyConfig,
    pub trajectories: usize,
    pub validation_trajectories: usize,
    pub horizon: usize,
    pub training: TrainConfig,
    pub bounds: BoundsConfig,
    /// Whether the file carried a model block.
    #[serde(skip)]
    pub model_block: bool,
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &Overrides) -> CliResult<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        Self::resolve(file, overrides)
    }

    pub fn resolve(file: ConfigFile, overrides: &Overrides) -> CliResult<Self> {
        let mut training = overlay(file.environment.training_preset(), &file.training, "training")?;
        if !file.model.is_empty() {
            training.model_fit = overlay(training.model_fit, &file.model, "model")?;
        }
        if let Some(kind) = overrides.estimator {
            training.estimator = kind;
        }
        let default_n = match file.environment {
            EnvironmentConfig::Gridworld(_) => 1000,
            EnvironmentConfig::Minigolf(_) => 50,
        };
        let trajectories = file.data.trajectories.unwrap_or(default_n);
        let exp = Experiment {
            seed: overrides.seed.unwrap_or(file.seed),
            reps: overrides.reps.or(file.reps).unwrap_or(1),
            out: overrides.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            horizon: file.data.horizon.unwrap_or_else(|| file.environment.horizon()),
            trajectories,
            validation_trajectories: file.data.validation_trajectories.unwrap_or(trajectories),
            environment: file.environment,
            policy: file.policy,
            training,
            bounds: file.bounds,
            model_block: !file.model.is_empty(),
        };
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.reps == 0 {
            return Err(invalid("reps must be at least 1"));
        }
        if self.trajectories == 0 || self.validation_trajectories == 0 {
            return Err(invalid("dataset sizes must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        match &self.environment {
            EnvironmentConfig::Gridworld(c) => TwoAreasGridworld::new(c.clone()).map(drop),
            EnvironmentConfig::Minigolf(c) => Minigolf::new(c.clone()).map(drop),
        }
        .map_err(invalid)?;
        if self.policy.rbf_centers < 2 || !self.policy.rbf_log_std.is_finite() {
            return Err(invalid("policy needs at least two centres and a finite log std"));
        }
        let b = &self.bounds;
        if b.instances == 0 || b.max_states < 2 || b.max_actions < 2 {
            return Err(invalid("bounds suite needs instances with at least two states and actions"));
        }
        if !(0.0 < b.min_lambda && b.min_lambda <= b.max_lambda && b.max_lambda <= 1.0) {
            return Err(invalid("bounds lambdas must satisfy 0 < min <= max <= 1"));
        }
        self.training.validate().map_err(invalid)
    }

    /// SHA-256 of the resolved configuration, output directory excluded.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("configuration serialises"))
    }

    /// Seed of repetition `r`.
    pub fn rep_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialises `base`, overlays `table` recursively and parses the result,
/// so unknown keys are rejected by the target type.
fn overlay<T>(base: T, table: &toml::Table, block: &str) -> CliResult<T>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut merged = toml::Table::try_from(base).map_err(|e| invalid(format!("{block}: {e}")))?;
    merge(&mut merged, table);
    merged.try_into().map_err(|e| invalid(format!("{block}: {e}")))
}

fn merge(into: &mut toml::Table, from: &toml::Table) {
    for (k, v) in from {
        match (into.get_mut(k), v) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge(dst, src),
            _ => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}
