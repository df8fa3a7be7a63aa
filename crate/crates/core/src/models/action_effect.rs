use serde::{Deserialize, Serialize};

use super::fit::{maximize, FitConfig, FitReport, ItemObjective};
use crate::mdp::Dataset;
use crate::{Error, Result};

/// Movement outcome of an action, independent of the cell it is taken in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Effect {
    Up,
    Right,
    Down,
    Left,
    Stay,
}

impl Effect {
    pub const ALL: [Effect; 5] = [Effect::Up, Effect::Right, Effect::Down, Effect::Left, Effect::Stay];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Maps a movement effect to the resulting cell.
pub trait EffectGeometry: Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn effect_target(&self, s: usize, effect: Effect) -> usize;
    /// Absorbing cells self-loop under every action.
    fn is_absorbing(&self, s: usize) -> bool;
}

/// `p_hat(effect | a) = softmax(W[a])`; the next-state distribution follows by
/// pushing effects through the geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEffectModel {
    n_actions: usize,
    logits: Vec<f64>,
}

impl ActionEffectModel {
    /// Zero logits: uniform over effects.
    pub fn new(n_actions: usize) -> Self {
        Self {
            n_actions,
            logits: vec![0.0; n_actions * Effect::COUNT],
        }
    }

    pub fn from_logits(n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_actions * Effect::COUNT {
            return Err(Error::DimensionMismatch {
                expected: n_actions * Effect::COUNT,
                got: logits.len(),
            });
        }
        Ok(Self { n_actions, logits })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn effect_probs(&self, a: usize) -> [f64; Effect::COUNT] {
        softmax5(&self.logits[a * Effect::COUNT..(a + 1) * Effect::COUNT])
    }

    /// Most likely effect of `a`, ties to the earlier effect.
    pub fn argmax_effect(&self, a: usize) -> Effect {
        Effect::ALL[super::argmax(&self.effect_probs(a))]
    }

    /// `log sum_{e: geometry(s, e) = s'} p_hat(e | a)`.
    pub fn log_prob<G: EffectGeometry>(&self, geom: &G, s: usize, a: usize, s_next: usize) -> f64 {
        let mask = consistent_mask(geom, s, s_next);
        let p = self.effect_probs(a);
        masked_sum(&p, mask).ln()
    }

    /// Full `p_hat(s'|s,a)` laid out `[s][a][s']`.
    pub fn export_kernel<G: EffectGeometry>(&self, geom: &G) -> Vec<f64> {
        let (ns, na) = (geom.n_states(), geom.n_actions());
        let mut kernel = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                let row = &mut kernel[(s * na + a) * ns..(s * na + a + 1) * ns];
                if geom.is_absorbing(s) {
                    row[s] = 1.0;
                    continue;
                }
                let p = self.effect_probs(a);
                for e in Effect::ALL {
                    row[geom.effect_target(s, e)] += p[e.index()];
                }
            }
        }
        kernel
    }

    /// Maximises the weighted log-likelihood of the observed next cells.
    /// `weights[i][t]` weighs step `t` of trajectory `i`.
    pub fn fit_weighted<G: EffectGeometry>(
        &mut self,
        geom: &G,
        dataset: &Dataset<usize, usize>,
        weights: &[Vec<f64>],
        cfg: &FitConfig,
    ) -> Result<FitReport> {
        let obj = EffectObjective::new(geom, dataset, self.n_actions)?;
        let flat = flatten_aligned(dataset, weights)?;
        let (params, report) = maximize(&obj, &flat, self.logits.clone(), cfg)?;
        self.logits = params;
        Ok(report)
    }

    /// Weighted log-likelihood and its gradient (weights used as given).
    pub fn weighted_log_likelihood<G: EffectGeometry>(
        &self,
        geom: &G,
        dataset: &Dataset<usize, usize>,
        weights: &[Vec<f64>],
    ) -> Result<(f64, Vec<f64>)> {
        let obj = EffectObjective::new(geom, dataset, self.n_actions)?;
        let flat = flatten_aligned(dataset, weights)?;
        let mut grad = vec![0.0; self.logits.len()];
        let value = flat
            .iter()
            .enumerate()
            .map(|(i, w)| w * obj.item(&self.logits, i, *w, Some(&mut grad)))
            .sum();
        Ok((value, grad))
    }
}

pub(crate) fn flatten_aligned<S, A>(dataset: &Dataset<S, A>, weights: &[Vec<f64>]) -> Result<Vec<f64>> {
    if weights.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            got: weights.len(),
        });
    }
    let mut flat = Vec::with_capacity(dataset.n_transitions());
    for (traj, w) in dataset.trajectories.iter().zip(weights) {
        if w.len() != traj.len() {
            return Err(Error::DimensionMismatch {
                expected: traj.len(),
                got: w.len(),
            });
        }
        flat.extend_from_slice(w);
    }
    Ok(flat)
}

fn softmax5(row: &[f64]) -> [f64; Effect::COUNT] {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; Effect::COUNT];
    let mut z = 0.0;
    for (o, l) in out.iter_mut().zip(row) {
        *o = (l - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
    out
}

fn consistent_mask<G: EffectGeometry>(geom: &G, s: usize, s_next: usize) -> u8 {
    Effect::ALL
        .iter()
        .filter(|e| geom.effect_target(s, **e) == s_next)
        .fold(0u8, |m, e| m | (1 << e.index()))
}

fn masked_sum(p: &[f64; Effect::COUNT], mask: u8) -> f64 {
    (0..Effect::COUNT).filter(|i| mask & (1 << i) != 0).map(|i| p[i]).sum()
}

struct EffectObjective {
    items: Vec<(usize, u8)>,
    n_actions: usize,
}

impl EffectObjective {
    fn new<G: EffectGeometry>(geom: &G, dataset: &Dataset<usize, usize>, n_actions: usize) -> Result<Self> {
        let mut items = Vec::with_capacity(dataset.n_transitions());
        for (i, traj) in dataset.trajectories.iter().enumerate() {
            for (t, st) in traj.steps.iter().enumerate() {
                let mask = consistent_mask(geom, st.state, st.next_state);
                if mask == 0 || st.action >= n_actions {
                    return Err(Error::Format(format!(
                        "transition {} -> {} at trajectory {i}, step {t} is not a movement effect",
                        st.state, st.next_state
                    )));
                }
                items.push((st.action, mask));
            }
        }
        Ok(Self { items, n_actions })
    }
}

impl ItemObjective for EffectObjective {
    fn n_params(&self) -> usize {
        self.n_actions * Effect::COUNT
    }

    fn n_items(&self) -> usize {
        self.items.len()
    }

    fn item(&self, params: &[f64], i: usize, scale: f64, grad: Option<&mut [f64]>) -> f64 {
        let (a, mask) = self.items[i];
        let base = a * Effect::COUNT;
        let p = softmax5(&params[base..base + Effect::COUNT]);
        let pc = masked_sum(&p, mask);
        if let Some(g) = grad {
            for m in 0..Effect::COUNT {
                let inside = if mask & (1 << m) != 0 { p[m] / pc } else { 0.0 };
                g[base + m] += scale * (inside - p[m]);
            }
        }
        pc.ln()
    }
}
