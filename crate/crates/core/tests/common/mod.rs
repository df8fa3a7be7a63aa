#![allow(dead_code)]

use gamps_core::rng::SimRng;
use gamps_core::{TabularMdp, TabularSoftmaxPolicy};
use rand::Rng;

/// `||a - b|| / max(||b||, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(floor)
}

/// Central finite differences of `f` at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn random_instance(rng: &mut SimRng, max_states: usize, max_actions: usize) -> (TabularMdp, TabularSoftmaxPolicy) {
    let ns = rng.random_range(2..=max_states);
    let na = rng.random_range(2..=max_actions);
    let gamma = rng.random_range(0.3..0.95);
    let mdp = TabularMdp::random(ns, na, gamma, rng).unwrap();
    let pi = TabularSoftmaxPolicy::random(ns, na, 1.0, rng);
    (mdp, pi)
}

/// Mixes the kernel of `mdp` with a random kernel: `(1-lambda) p + lambda p'`.
pub fn perturbed(mdp: &TabularMdp, lambda: f64, rng: &mut SimRng) -> TabularMdp {
    let other = TabularMdp::random(mdp.n_states(), mdp.n_actions(), mdp.discount(), rng).unwrap();
    let kernel = mdp
        .kernel()
        .iter()
        .zip(other.kernel())
        .map(|(p, q)| (1.0 - lambda) * p + lambda * q)
        .collect();
    mdp.with_kernel(kernel).unwrap()
}

/// Per-component `|est - exact| <= k * stderr` (with a tiny absolute slack).
pub fn within_stderr(est: &[f64], stderr: &[f64], exact: &[f64], k: f64) -> bool {
    est.iter()
        .zip(stderr)
        .zip(exact)
        .all(|((e, s), x)| (e - x).abs() <= k * s + 1e-12)
}
