//! CSV files with a provenance comment, dataset manifests.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use gamps_core::PolicyRecord;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, EnvironmentConfig, Experiment};
use crate::error::{invalid, CliResult};

/// Accumulates CSV text that starts with `# config_hash=... seed=...`.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(exp: &Experiment, header: &str) -> Self {
        let mut csv = Self::comment_only(exp);
        csv.text.push_str(header);
        csv.text.push('\n');
        csv
    }

    pub fn comment_only(exp: &Experiment) -> Self {
        Self {
            text: format!("# config_hash={} seed={}\n", exp.hash(), exp.seed),
        }
    }

    pub fn row<I, T>(&mut self, fields: I)
    where
        I: IntoIterator<Item = T>,
        T: Display,
    {
        let cells: Vec<String> = fields.into_iter().map(|f| f.to_string()).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    /// Appends pre-rendered CSV lines.
    pub fn raw(&mut self, lines: &str) {
        self.text.push_str(lines);
    }

    pub fn write(&self, path: &Path) -> CliResult<PathBuf> {
        write_file(path, self.text.as_bytes())
    }
}

/// Renders an optional number, empty when absent.
pub fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<PathBuf> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(path.to_path_buf())
}

const MANIFEST_FORMAT: &str = "gamps-manifest";

/// Provenance written next to every collected dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Repetition seed that produced the behavior policy.
    pub seed: u64,
    pub data_seed: u64,
    pub trajectories: usize,
    pub horizon: usize,
    pub environment: EnvironmentConfig,
    pub env_hash: String,
    pub behavior_policy: PolicyRecord,
    pub policy_hash: String,
    pub dataset_sha256: String,
}

impl Manifest {
    pub fn new(
        exp: &Experiment,
        seed: u64,
        data_seed: u64,
        trajectories: usize,
        behavior: PolicyRecord,
        dataset_bytes: &[u8],
    ) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            seed,
            data_seed,
            trajectories,
            horizon: exp.horizon,
            environment: exp.environment.clone(),
            env_hash: env_hash(&exp.environment),
            policy_hash: policy_hash(&behavior),
            behavior_policy: behavior,
            dataset_sha256: sha256_hex(dataset_bytes),
        }
    }

    /// Manifest path for a dataset path: `x.ndjson` -> `x.manifest.json`.
    pub fn path_for(dataset: &Path) -> PathBuf {
        dataset.with_extension("manifest.json")
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| invalid(format!("manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT || m.version != 1 {
            return Err(invalid(format!("unsupported manifest {} v{}", m.format, m.version)));
        }
        Ok(m)
    }

    /// Checks the manifest against the configuration, the behavior policy
    /// rebuilt from the configuration, and the dataset bytes.
    pub fn check(&self, exp: &Experiment, behavior: &PolicyRecord, dataset_bytes: &[u8]) -> CliResult<()> {
        if self.env_hash != env_hash(&exp.environment) {
            return Err(invalid("manifest mismatch: environment differs from the configuration"));
        }
        if self.policy_hash != policy_hash(behavior) {
            return Err(invalid("manifest mismatch: behavior policy differs from the configuration"));
        }
        if self.dataset_sha256 != sha256_hex(dataset_bytes) {
            return Err(invalid("manifest mismatch: dataset contents changed"));
        }
        Ok(())
    }
}

pub fn env_hash(env: &EnvironmentConfig) -> String {
    sha256_hex(&serde_json::to_vec(env).expect("environment serialises"))
}

pub fn policy_hash(record: &PolicyRecord) -> String {
    sha256_hex(&serde_json::to_vec(record).expect("policy serialises"))
}
