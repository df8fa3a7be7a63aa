//! Differentiable stochastic policies with analytic scores.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mdp::sample_categorical;
use crate::rng::SimRng;
use crate::{Error, Result};

/// A policy `pi_theta(a|s)` differentiable in a flat parameter vector.
pub trait Policy<S, A>: Clone + Send + Sync {
    fn params(&self) -> &[f64];

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    fn n_params(&self) -> usize {
        self.params().len()
    }

    /// `log pi(a|s)`; `f64::NEG_INFINITY` when the action has no mass.
    fn log_prob(&self, s: &S, a: &A) -> f64;

    /// Writes `grad_theta log pi(a|s)` into `out` (length `n_params`).
    fn score_into(&self, s: &S, a: &A, out: &mut [f64]);

    fn score(&self, s: &S, a: &A) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        self.score_into(s, a, &mut out);
        out
    }

    fn sample_action(&self, s: &S, rng: &mut SimRng) -> A;

    /// Stable class tag used in serialised parameter records.
    fn class_tag(&self) -> &'static str;

    fn to_record(&self) -> PolicyRecord {
        PolicyRecord {
            class: self.class_tag().to_string(),
            params: self.params().to_vec(),
        }
    }

    fn load_record(&mut self, record: &PolicyRecord) -> Result<()> {
        if record.class != self.class_tag() {
            return Err(Error::InvalidArgument(format!(
                "policy record class {} does not match {}",
                record.class,
                self.class_tag()
            )));
        }
        self.set_params(&record.params)
    }
}

/// Policies over a finite state and action space.
pub trait TabularPolicy: Policy<usize, usize> {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// `pi(.|s)` as a probability vector.
    fn action_probs(&self, s: usize) -> Vec<f64>;
}

/// Flat parameter record with a class tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRecord {
    pub class: String,
    pub params: Vec<f64>,
}

/// Norm used on score vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum QNorm {
    #[serde(rename = "1")]
    One,
    #[default]
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl QNorm {
    pub const ALL: [QNorm; 3] = [QNorm::One, QNorm::Two, QNorm::Inf];

    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            QNorm::One => v.iter().map(|x| x.abs()).sum(),
            QNorm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            QNorm::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

impl fmt::Display for QNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QNorm::One => "1",
            QNorm::Two => "2",
            QNorm::Inf => "inf",
        })
    }
}

impl FromStr for QNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" => Ok(QNorm::One),
            "2" => Ok(QNorm::Two),
            "inf" | "infinity" | "∞" => Ok(QNorm::Inf),
            other => Err(Error::InvalidArgument(format!("unsupported q-norm {other:?}"))),
        }
    }
}

/// `||grad log pi(a|s)||_q`.
pub fn score_qnorm<S, A, P: Policy<S, A>>(policy: &P, s: &S, a: &A, q: QNorm) -> f64 {
    q.norm(&policy.score(s, a))
}

/// Softmax over one logit per (state, action), with an optional set of
/// frozen states that play a fixed action and carry no parameters' gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
    frozen: Vec<Option<usize>>,
}

impl TabularSoftmaxPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
            frozen: vec![None; n_states],
        }
    }

    /// Logits drawn i.i.d. from `N(0, scale^2)`.
    pub fn random(n_states: usize, n_actions: usize, scale: f64, rng: &mut SimRng) -> Self {
        let logits = (0..n_states * n_actions)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            n_states,
            n_actions,
            logits,
            frozen: vec![None; n_states],
        }
    }

    pub fn from_logits(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                got: logits.len(),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            logits,
            frozen: vec![None; n_states],
        })
    }

    /// Pins state `s` to `action`; its score becomes identically zero.
    pub fn freeze(&mut self, s: usize, action: usize) {
        assert!(action < self.n_actions, "frozen action out of range");
        self.frozen[s] = Some(action);
    }

    pub fn frozen_action(&self, s: usize) -> Option<usize> {
        self.frozen[s]
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.logits[s * self.n_actions..(s + 1) * self.n_actions]
    }

    fn softmax_row(&self, s: usize) -> Vec<f64> {
        let row = self.row(s);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }
}

impl Policy<usize, usize> for TabularSoftmaxPolicy {
    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.logits.len() {
            return Err(Error::DimensionMismatch {
                expected: self.logits.len(),
                got: params.len(),
            });
        }
        self.logits.copy_from_slice(params);
        Ok(())
    }

    fn log_prob(&self, s: &usize, a: &usize) -> f64 {
        if let Some(fixed) = self.frozen[*s] {
            return if *a == fixed { 0.0 } else { f64::NEG_INFINITY };
        }
        let row = self.row(*s);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row[*a] - lse
    }

    fn score_into(&self, s: &usize, a: &usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        if self.frozen[*s].is_some() {
            return;
        }
        let probs = self.softmax_row(*s);
        let base = *s * self.n_actions;
        for (b, p) in probs.iter().enumerate() {
            out[base + b] = if b == *a { 1.0 - p } else { -p };
        }
    }

    fn sample_action(&self, s: &usize, rng: &mut SimRng) -> usize {
        match self.frozen[*s] {
            Some(fixed) => fixed,
            None => sample_categorical(&self.softmax_row(*s), rng),
        }
    }

    fn class_tag(&self) -> &'static str {
        "tabular-softmax"
    }
}

impl TabularPolicy for TabularSoftmaxPolicy {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, s: usize) -> Vec<f64> {
        match self.frozen[s] {
            Some(fixed) => {
                let mut p = vec![0.0; self.n_actions];
                p[fixed] = 1.0;
                p
            }
            None => self.softmax_row(s),
        }
    }
}

/// Gaussian policy whose mean is linear in Gaussian radial basis features
/// of a scalar state; parameters are `[mean weights..., log_std]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfGaussianPolicy {
    centers: Vec<f64>,
    bandwidth: f64,
    params: Vec<f64>,
}

impl RbfGaussianPolicy {
    /// `n_centers` equally spaced centres over `[low, high]`, bandwidth equal
    /// to the spacing, mean weights 1 and `log_std` 0.
    pub fn equally_spaced(low: f64, high: f64, n_centers: usize) -> Result<Self> {
        if n_centers < 2 || !(high > low) {
            return Err(Error::InvalidArgument(
                "need at least two centres over a non-empty range".into(),
            ));
        }
        let spacing = (high - low) / (n_centers - 1) as f64;
        let centers = (0..n_centers).map(|i| low + spacing * i as f64).collect();
        let mut params = vec![1.0; n_centers];
        params.push(0.0);
        Ok(Self {
            centers,
            bandwidth: spacing,
            params,
        })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn features(&self, s: f64) -> Vec<f64> {
        let two_h2 = 2.0 * self.bandwidth * self.bandwidth;
        self.centers
            .iter()
            .map(|c| (-(s - c) * (s - c) / two_h2).exp())
            .collect()
    }

    pub fn mean(&self, s: f64) -> f64 {
        self.features(s)
            .iter()
            .zip(&self.params)
            .map(|(f, w)| f * w)
            .sum()
    }

    pub fn log_std(&self) -> f64 {
        self.params[self.centers.len()]
    }

    pub fn std(&self) -> f64 {
        self.log_std().exp()
    }

    pub fn set_log_std(&mut self, log_std: f64) {
        let k = self.centers.len();
        self.params[k] = log_std;
    }
}

impl Policy<f64, f64> for RbfGaussianPolicy {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn log_prob(&self, s: &f64, a: &f64) -> f64 {
        let sigma = self.std();
        let z = (a - self.mean(*s)) / sigma;
        -0.5 * (2.0 * PI).ln() - self.log_std() - 0.5 * z * z
    }

    fn score_into(&self, s: &f64, a: &f64, out: &mut [f64]) {
        let phi = self.features(*s);
        let var = self.std().powi(2);
        let diff = a - self.mean(*s);
        for (o, f) in out.iter_mut().zip(&phi) {
            *o = diff / var * f;
        }
        out[phi.len()] = diff * diff / var - 1.0;
    }

    fn sample_action(&self, s: &f64, rng: &mut SimRng) -> f64 {
        let noise: f64 = rng.sample(StandardNormal);
        self.mean(*s) + self.std() * noise
    }

    fn class_tag(&self) -> &'static str {
        "rbf-gaussian"
    }
}
