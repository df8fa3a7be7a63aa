//! Adam and step-size schedules.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

impl AdamConfig {
    pub const fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub const GRIDWORLD_POLICY: Self = Self::with_lr(0.2);
    pub const GRIDWORLD_MODEL: Self = Self::with_lr(0.01);
    pub const MINIGOLF_POLICY: Self = Self {
        lr: 0.08,
        beta1: 0.0,
        beta2: 0.999,
        eps: 1e-8,
    };
    pub const MINIGOLF_MODEL: Self = Self::with_lr(0.02);

    /// Looks up a named preset.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "gridworld-policy" => Some(Self::GRIDWORLD_POLICY),
            "gridworld-model" => Some(Self::GRIDWORLD_MODEL),
            "minigolf-policy" => Some(Self::MINIGOLF_POLICY),
            "minigolf-model" => Some(Self::MINIGOLF_MODEL),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// Moment estimates and step counter for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, dim: usize) -> Self {
        Self {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// In-place version of [`adam_step`] using the configured learning rate.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], ascent: bool) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grad, ascent, lr)
    }

    pub fn step_with_lr(&mut self, params: &mut [f64], grad: &[f64], ascent: bool, lr: f64) -> Result<()> {
        let dim = self.m.len();
        for len in [params.len(), grad.len()] {
            if len != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: len });
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let sign = if ascent { 1.0 } else { -1.0 };
        for i in 0..dim {
            let g = sign * grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] += lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and state.
pub fn adam_step(
    state: &AdamState,
    params: &[f64],
    grad: &[f64],
    ascent: bool,
) -> Result<(Vec<f64>, AdamState)> {
    let mut next = state.clone();
    let mut out = params.to_vec();
    next.step(&mut out, grad, ascent)?;
    Ok((out, next))
}

/// Per-iteration step sizes; the last entry repeats once exhausted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSchedule {
    Constant(f64),
    Explicit(Vec<f64>),
}

impl StepSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSchedule::Constant(a) => *a,
            StepSchedule::Explicit(v) => v[k.min(v.len() - 1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            StepSchedule::Constant(a) => *a > 0.0,
            StepSchedule::Explicit(v) => !v.is_empty() && v.iter().all(|a| *a > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("step sizes must be positive".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let st = AdamState::new(AdamConfig::GRIDWORLD_POLICY, 3);
        let (p, st) = adam_step(&st, &[1.0, 2.0, 3.0], &[0.0; 3], true).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let st = AdamState::new(AdamConfig::with_lr(0.1), 2);
        let (p, _) = adam_step(&st, &[0.0, 0.0], &[3.0, -0.5], true).unwrap();
        assert!((p[0] - 0.1).abs() < 1e-8);
        assert!((p[1] + 0.1).abs() < 1e-7);
        let (p, _) = adam_step(&st, &[0.0, 0.0], &[3.0, -0.5], false).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let st = AdamState::new(AdamConfig::default(), 1);
        assert!(adam_step(&st, &[0.0], &[f64::NAN], true).is_err());
        assert!(adam_step(&st, &[0.0, 1.0], &[0.0], true).is_err());
    }

    #[test]
    fn presets_resolve() {
        assert_eq!(AdamConfig::preset("minigolf-policy").unwrap().beta1, 0.0);
        assert!(AdamConfig::preset("nope").is_none());
    }

    #[test]
    fn schedule_repeats_last() {
        let s = StepSchedule::Explicit(vec![0.3, 0.2]);
        assert_eq!(s.at(0), 0.3);
        assert_eq!(s.at(9), 0.2);
        assert!(StepSchedule::Constant(0.0).validate().is_err());
    }
}
