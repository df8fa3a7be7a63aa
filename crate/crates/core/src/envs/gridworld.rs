use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{sample_categorical, Environment, StepOutcome, TabularMdp};
use crate::models::{Effect, EffectGeometry};
use crate::policy::TabularSoftmaxPolicy;
use crate::rng::SimRng;
use crate::{Error, Result};

const LOWER_MAP: [Effect; 4] = [Effect::Right, Effect::Down, Effect::Left, Effect::Up];
const UPPER_MAP: [Effect; 4] = [Effect::Up, Effect::Right, Effect::Down, Effect::Left];
const N_ACTIONS: usize = 4;

/// Grid size, the deterministic upper rectangle anchored at the top-left
/// corner, and the stochastic lower-area success probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridworldConfig {
    pub width: usize,
    pub height: usize,
    pub upper_rows: usize,
    pub upper_cols: usize,
    pub success_prob: f64,
    pub step_reward: f64,
    pub horizon: usize,
    pub discount: f64,
    /// Standard deviation of the random initial upper-area logits.
    pub upper_logit_std: f64,
}

impl Default for GridworldConfig {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            upper_rows: 2,
            upper_cols: 2,
            success_prob: 0.9,
            step_reward: -1.0,
            horizon: 50,
            discount: 0.99,
            upper_logit_std: 0.115,
        }
    }
}

/// Goal in the top-left cell. The upper area is deterministic with rotated
/// action semantics and horizontal wrap-around; the lower area is sticky.
/// Moves from the upper area into the lower one are blocked.
#[derive(Debug, Clone)]
pub struct TwoAreasGridworld {
    cfg: GridworldConfig,
    mdp: TabularMdp,
    initial_states: Vec<usize>,
}

impl TwoAreasGridworld {
    pub fn new(cfg: GridworldConfig) -> Result<Self> {
        if cfg.width < 2 || cfg.height < 2 {
            return Err(Error::InvalidArgument("grid must be at least 2x2".into()));
        }
        if cfg.upper_rows == 0 || cfg.upper_cols == 0 || cfg.upper_rows > cfg.height || cfg.upper_cols > cfg.width {
            return Err(Error::InvalidArgument("upper area must be a non-empty sub-rectangle".into()));
        }
        if !(0.0..=1.0).contains(&cfg.success_prob)
            || cfg.horizon == 0
            || !cfg.step_reward.is_finite()
            || !(cfg.upper_logit_std >= 0.0)
        {
            return Err(Error::InvalidArgument("invalid gridworld parameters".into()));
        }
        let mut env = Self {
            cfg: cfg.clone(),
            mdp: TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 0.0)?,
            initial_states: Vec::new(),
        };
        let (w, h) = (cfg.width, cfg.height);
        let mut initial_states: Vec<usize> = (0..w).map(|c| env.cell(h - 1, c)).collect();
        initial_states.extend((0..h - 1).map(|r| env.cell(r, w - 1)));
        initial_states.retain(|s| *s != env.goal());
        initial_states.sort_unstable();
        let ns = env.n_states();
        let mut mu = vec![0.0; ns];
        for s in &initial_states {
            mu[*s] = 1.0 / initial_states.len() as f64;
        }
        let mut kernel = vec![0.0; ns * N_ACTIONS * ns];
        let mut reward = vec![0.0; ns * N_ACTIONS];
        for s in 0..ns {
            for a in 0..N_ACTIONS {
                let row = &mut kernel[(s * N_ACTIONS + a) * ns..(s * N_ACTIONS + a + 1) * ns];
                if env.is_absorbing(s) {
                    row[s] = 1.0;
                    continue;
                }
                reward[s * N_ACTIONS + a] = cfg.step_reward;
                if env.is_upper(s) {
                    row[env.effect_target(s, UPPER_MAP[a])] = 1.0;
                } else {
                    row[env.effect_target(s, LOWER_MAP[a])] += cfg.success_prob;
                    row[s] += 1.0 - cfg.success_prob;
                }
            }
        }
        env.mdp = TabularMdp::new(ns, N_ACTIONS, kernel, reward, mu, cfg.discount)?;
        env.initial_states = initial_states;
        Ok(env)
    }

    pub fn config(&self) -> &GridworldConfig {
        &self.cfg
    }

    pub fn true_mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn n_states(&self) -> usize {
        self.cfg.width * self.cfg.height
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    pub fn discount(&self) -> f64 {
        self.cfg.discount
    }

    pub fn goal(&self) -> usize {
        0
    }

    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.cfg.width + col
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s / self.cfg.width, s % self.cfg.width)
    }

    pub fn is_upper(&self, s: usize) -> bool {
        let (r, c) = self.coords(s);
        r < self.cfg.upper_rows && c < self.cfg.upper_cols
    }

    pub fn initial_states(&self) -> &[usize] {
        &self.initial_states
    }

    /// Action the fixed lower-area controller takes: up while possible, then left.
    pub fn lower_action(&self, s: usize) -> usize {
        let (r, _) = self.coords(s);
        let wanted = if r > 0 { Effect::Up } else { Effect::Left };
        LOWER_MAP.iter().position(|e| *e == wanted).expect("mapping covers all moves")
    }

    /// Softmax policy with `N(0, upper_logit_std^2)` logits in the upper area
    /// and frozen actions in the lower area and at the goal.
    pub fn initial_policy(&self, rng: &mut SimRng) -> TabularSoftmaxPolicy {
        let mut pi = TabularSoftmaxPolicy::random(self.n_states(), N_ACTIONS, self.cfg.upper_logit_std, rng);
        for s in 0..self.n_states() {
            if s == self.goal() {
                pi.freeze(s, 0);
            } else if !self.is_upper(s) {
                pi.freeze(s, self.lower_action(s));
            }
        }
        pi
    }
}

impl EffectGeometry for TwoAreasGridworld {
    fn n_states(&self) -> usize {
        TwoAreasGridworld::n_states(self)
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn effect_target(&self, s: usize, effect: Effect) -> usize {
        if self.is_absorbing(s) {
            return s;
        }
        let (r, c) = self.coords(s);
        let (w, h) = (self.cfg.width, self.cfg.height);
        if self.is_upper(s) {
            let uc = self.cfg.upper_cols;
            let target = match effect {
                Effect::Stay => return s,
                Effect::Left => return self.cell(r, (c + uc - 1) % uc),
                Effect::Right => return self.cell(r, (c + 1) % uc),
                Effect::Up if r > 0 => self.cell(r - 1, c),
                Effect::Down if r + 1 < h => self.cell(r + 1, c),
                _ => return s,
            };
            return if self.is_upper(target) { target } else { s };
        }
        match effect {
            Effect::Up if r > 0 => self.cell(r - 1, c),
            Effect::Down if r + 1 < h => self.cell(r + 1, c),
            Effect::Left if c > 0 => self.cell(r, c - 1),
            Effect::Right if c + 1 < w => self.cell(r, c + 1),
            _ => s,
        }
    }

    fn is_absorbing(&self, s: usize) -> bool {
        s == self.goal()
    }
}

impl Environment for TwoAreasGridworld {
    type State = usize;
    type Action = usize;

    fn initial_state(&self, rng: &mut SimRng) -> usize {
        self.initial_states[rng.random_range(0..self.initial_states.len())]
    }

    fn step(&self, s: &usize, a: &usize, rng: &mut SimRng) -> std::result::Result<StepOutcome<usize>, String> {
        if *s >= self.n_states() || *a >= N_ACTIONS {
            return Err(format!("invalid cell {s} or action {a}"));
        }
        let next = sample_categorical(self.mdp.next_dist(*s, *a), rng);
        Ok(StepOutcome {
            next_state: next,
            reward: self.mdp.reward(*s, *a),
            done: next == self.goal(),
        })
    }
}
