use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mdp::{Environment, StepOutcome};
use crate::models::RectifiedGaussianModel;
use crate::policy::RbfGaussianPolicy;
use crate::rng::SimRng;
use crate::value::Simulator;
use crate::Result;

/// Physical constants and episode settings, in metres and seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinigolfConfig {
    pub x_max: f64,
    pub friction_near: f64,
    pub friction_far: f64,
    pub gravity: f64,
    pub putter_length: f64,
    pub hole_diameter: f64,
    pub ball_radius: f64,
    pub noise_std: f64,
    pub horizon: usize,
    pub discount: f64,
    /// Disables the shot noise.
    pub deterministic: bool,
}

impl Default for MinigolfConfig {
    fn default() -> Self {
        Self {
            x_max: 20.0,
            friction_near: 0.131,
            friction_far: 0.19,
            gravity: 9.81,
            putter_length: 1.0,
            hole_diameter: 0.10,
            ball_radius: 0.02135,
            noise_std: 0.3,
            horizon: 20,
            discount: 0.99,
            deterministic: false,
        }
    }
}

pub const HOLE_REWARD: f64 = 0.0;
pub const MISS_REWARD: f64 = -1.0;
pub const OVERSHOOT_REWARD: f64 = -100.0;

/// One-dimensional putting task. The recorded next state is the position
/// the ball would stop at, which is `<= 0` on the terminal shot.
#[derive(Debug, Clone, PartialEq)]
pub struct Minigolf {
    cfg: MinigolfConfig,
}

impl Minigolf {
    pub fn new(cfg: MinigolfConfig) -> Result<Self> {
        let positive = [
            cfg.x_max,
            cfg.friction_near,
            cfg.friction_far,
            cfg.gravity,
            cfg.putter_length,
            cfg.ball_radius,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || cfg.horizon == 0 || !(cfg.noise_std >= 0.0) {
            return Err(crate::Error::InvalidArgument("invalid minigolf parameters".into()));
        }
        if !(2.0 * cfg.hole_diameter > cfg.ball_radius) || !(0.0..1.0).contains(&cfg.discount) {
            return Err(crate::Error::InvalidArgument("invalid minigolf parameters".into()));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &MinigolfConfig {
        &self.cfg
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    pub fn discount(&self) -> f64 {
        self.cfg.discount
    }

    pub fn friction(&self, x: f64) -> f64 {
        if x < 2.0 / 3.0 * self.cfg.x_max {
            self.cfg.friction_near
        } else {
            self.cfg.friction_far
        }
    }

    pub fn deceleration(&self, x: f64) -> f64 {
        5.0 / 7.0 * self.friction(x) * self.cfg.gravity
    }

    pub fn v_min(&self, x: f64) -> f64 {
        (2.0 * self.deceleration(x) * x).sqrt()
    }

    pub fn v_max(&self, x: f64) -> f64 {
        let (d, r, g) = (self.cfg.hole_diameter, self.cfg.ball_radius, self.cfg.gravity);
        ((2.0 * d - r).powi(2) * g / (2.0 * r) + self.v_min(x).powi(2)).sqrt()
    }

    /// Initial ball speed for nominal putter speed `a` and noise `eps`.
    pub fn shot_speed(&self, a: f64, eps: f64) -> f64 {
        (a * self.cfg.putter_length.powi(2) * (1.0 + eps)).max(0.0)
    }

    /// Where a ball hit from `x` with speed `v0` would stop.
    pub fn stop_position(&self, x: f64, v0: f64) -> f64 {
        x - v0 * v0 / (2.0 * self.deceleration(x))
    }

    /// Reward and termination of a shot from `x` that would stop at `x_next`.
    pub fn outcome(&self, x: f64, x_next: f64) -> (f64, bool) {
        if x_next > 0.0 {
            return (MISS_REWARD, false);
        }
        let d = self.deceleration(x);
        let margin = (self.v_max(x).powi(2) - self.v_min(x).powi(2)) / (2.0 * d);
        if -x_next <= margin {
            (HOLE_REWARD, true)
        } else {
            (OVERSHOOT_REWARD, true)
        }
    }

    /// Gaussian policy on six RBF features over the course.
    pub fn initial_policy(&self) -> RbfGaussianPolicy {
        RbfGaussianPolicy::equally_spaced(0.0, self.cfg.x_max, 6).expect("positive course length")
    }
}

impl Environment for Minigolf {
    type State = f64;
    type Action = f64;

    fn initial_state(&self, rng: &mut SimRng) -> f64 {
        let u: f64 = rng.random();
        self.cfg.x_max * (1.0 - u)
    }

    fn step(&self, x: &f64, a: &f64, rng: &mut SimRng) -> std::result::Result<StepOutcome<f64>, String> {
        if !(x.is_finite() && *x > 0.0) {
            return Err(format!("ball position {x} is not on the course"));
        }
        if !a.is_finite() {
            return Err(format!("non-finite action {a}"));
        }
        let eps = if self.cfg.deterministic {
            0.0
        } else {
            self.cfg.noise_std * rng.sample::<f64, _>(StandardNormal)
        };
        let next = self.stop_position(*x, self.shot_speed(*a, eps));
        let (reward, done) = self.outcome(*x, next);
        Ok(StepOutcome {
            next_state: next,
            reward,
            done,
        })
    }
}

/// A fitted model paired with the known outcome rule.
pub struct MinigolfModelSimulator<'a> {
    pub env: &'a Minigolf,
    pub model: &'a RectifiedGaussianModel,
}

impl Simulator<f64, f64> for MinigolfModelSimulator<'_> {
    fn simulate(&self, s: &f64, a: &f64, rng: &mut SimRng) -> StepOutcome<f64> {
        let next = self.model.sample_next(*s, *a, rng);
        let (reward, done) = self.env.outcome(*s, next);
        StepOutcome {
            next_state: next,
            reward,
            done,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn env(det: bool) -> Minigolf {
        Minigolf::new(MinigolfConfig {
            deterministic: det,
            ..MinigolfConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_action_leaves_ball_in_place() {
        let g = env(false);
        let out = g.step(&7.5, &0.0, &mut rng_from_seed(0)).unwrap();
        assert_eq!((out.next_state, out.reward, out.done), (7.5, -1.0, false));
    }

    #[test]
    fn v_min_regression() {
        let g = env(true);
        assert!((g.v_min(2.0) - 1.916_179_234_086_117).abs() < 1e-12);
        assert_eq!(g.friction(2.0), 0.131);
        assert_eq!(g.friction(40.0 / 3.0), 0.19);
    }

    #[test]
    fn shot_boundaries() {
        let g = env(true);
        let x = 5.0;
        let mut rng = rng_from_seed(0);
        let over = g.step(&x, &(g.v_max(x) * (1.0 + 1e-9)), &mut rng).unwrap();
        assert_eq!((over.reward, over.done), (-100.0, true));
        let hole = g.step(&x, &(0.5 * (g.v_min(x) + g.v_max(x))), &mut rng).unwrap();
        assert_eq!((hole.reward, hole.done), (0.0, true));
        let weak = g.step(&x, &(0.9 * g.v_min(x)), &mut rng).unwrap();
        assert_eq!((weak.reward, weak.done), (-1.0, false));
        assert!(weak.next_state > 0.0 && weak.next_state < x);
    }
}
