mod common;

use common::within_stderr;
use gamps_core::gradient::{exact_gradient_tabular, mvg_gradient, pgt_gradient, reinforce_gradient};
use gamps_core::mdp::{collect_dataset, empirical_occupancy, exact_occupancy};
use gamps_core::rng::{rng_from_seed, stream};
use gamps_core::value::{exact_q, mc_q_samples, RolloutQConfig};
use gamps_core::weighting::{empirical_eta, eta_expectation_estimate, exact_eta_tabular};
use gamps_core::*;
use rand::Rng;

fn q_at_steps(q: &SaTable, data: &Dataset<usize, usize>) -> Vec<Vec<f64>> {
    data.trajectories
        .iter()
        .map(|t| t.steps.iter().map(|s| q.get(s.state, s.action)).collect())
        .collect()
}

fn four_state(gamma: f64, seed: u64) -> (TabularMdp, TabularSoftmaxPolicy) {
    let mut rng = rng_from_seed(seed);
    let mdp = TabularMdp::random(4, 2, gamma, &mut rng).unwrap();
    let pi = TabularSoftmaxPolicy::random(4, 2, 1.0, &mut rng);
    (mdp, pi)
}

#[test]
fn empirical_occupancy_converges() {
    let (mdp, pi) = four_state(0.8, 1);
    let data = collect_dataset(&mdp, &pi, 10_000, 120, 5, "pi").unwrap();
    let emp = empirical_occupancy(&data, 4, 2, 0.8).unwrap();
    let exact = exact_occupancy(&mdp, &pi).unwrap();
    assert!(emp.total_variation(&exact) < 0.02);
}

#[test]
fn empirical_eta_converges() {
    let (mdp, pi) = four_state(0.8, 2);
    let data = collect_dataset(&mdp, &pi, 10_000, 120, 6, "pi").unwrap();
    for q in QNorm::ALL {
        let emp = empirical_eta(&data, &pi, &pi, 0.8, q, 4, 2).unwrap();
        let exact = exact_eta_tabular(&mdp, &pi, q).unwrap();
        assert!(emp.total_variation(&exact.table) < 0.05);
    }
}

#[test]
fn trajectory_estimate_of_eta_expectation() {
    let gamma = 0.7;
    let (mdp, pi) = four_state(gamma, 3);
    let data = collect_dataset(&mdp, &pi, 100_000, 90, 7, "pi").unwrap();
    let eta = exact_eta_tabular(&mdp, &pi, QNorm::Two).unwrap();
    let mut rng = rng_from_seed(8);
    for _ in 0..5 {
        let f = SaTable::from_values(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let exact = eta.table.expect(&f);
        let (est, se) = eta_expectation_estimate(&data, &pi, &pi, gamma, QNorm::Two, eta.z, &f).unwrap();
        assert!((est - exact).abs() <= 3.0 * se, "{est} vs {exact} (se {se})");
    }
}

#[test]
fn on_policy_estimators_match_the_exact_gradient() {
    let gamma = 0.7;
    let (mdp, pi) = four_state(gamma, 4);
    let data = collect_dataset(&mdp, &pi, 100_000, 90, 9, "pi").unwrap();
    let exact = exact_gradient_tabular(&mdp, &pi).unwrap();
    let q = exact_q(&mdp, &pi).unwrap();
    let mvg = mvg_gradient(&data, &pi, &pi, &q_at_steps(&q, &data), gamma).unwrap();
    let reinforce = reinforce_gradient(&data, &pi, &pi, gamma).unwrap();
    let pgt = pgt_gradient(&data, &pi, &pi, gamma).unwrap();
    for est in [mvg, reinforce, pgt] {
        assert!(within_stderr(&est.grad, &est.stderr, &exact, 3.0), "{:?}: {:?} vs {exact:?}", est.estimator, est.grad);
    }
}

#[test]
fn off_policy_mvg_is_unbiased() {
    let gamma = 0.3;
    let mut rng = rng_from_seed(10);
    let mdp = TabularMdp::random(3, 2, gamma, &mut rng).unwrap();
    let pi_b = TabularSoftmaxPolicy::random(3, 2, 0.5, &mut rng);
    let mut pi = pi_b.clone();
    let shifted: Vec<f64> = pi_b.params().iter().map(|x| x + rng.random_range(-0.3..0.3)).collect();
    pi.set_params(&shifted).unwrap();
    let data = collect_dataset(&mdp, &pi_b, 100_000, 30, 11, "b").unwrap();
    let exact = exact_gradient_tabular(&mdp, &pi).unwrap();
    let q = exact_q(&mdp, &pi).unwrap();
    let mvg = mvg_gradient(&data, &pi, &pi_b, &q_at_steps(&q, &data), gamma).unwrap();
    assert!(within_stderr(&mvg.grad, &mvg.stderr, &exact, 3.0));
    let pgt = pgt_gradient(&data, &pi, &pi_b, gamma).unwrap();
    assert!(within_stderr(&pgt.grad, &pgt.stderr, &exact, 3.0));
}

#[test]
fn rollout_action_values_match_exact_q() {
    let gamma = 0.7;
    let (mdp, pi) = four_state(gamma, 5);
    let q = exact_q(&mdp, &pi).unwrap();
    let cfg = RolloutQConfig { m: 20_000, h: 100 };
    for s in 0..4 {
        for a in 0..2 {
            let samples = mc_q_samples(&mdp, &pi, &s, &a, cfg, gamma, &mut stream(12, (s * 2 + a) as u64));
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((mean - q.get(s, a)).abs() <= 4.0 * (var / n).sqrt());
        }
    }
}

#[test]
fn sampled_actions_follow_the_policy() {
    let mut rng = rng_from_seed(13);
    let pi = TabularSoftmaxPolicy::random(1, 4, 1.0, &mut rng);
    let mut counts = [0usize; 4];
    let n = 200_000;
    for _ in 0..n {
        counts[pi.sample_action(&0, &mut rng)] += 1;
    }
    for (a, p) in pi.action_probs(0).into_iter().enumerate() {
        let freq = counts[a] as f64 / n as f64;
        assert!((freq - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
    }
}

#[test]
fn gaussian_policy_samples_have_the_policy_moments() {
    let mut pi = RbfGaussianPolicy::equally_spaced(0.0, 20.0, 5).unwrap();
    pi.set_log_std(-0.5);
    let mut rng = rng_from_seed(14);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| pi.sample_action(&7.0, &mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((mean - pi.mean(7.0)).abs() < 4.0 * pi.std() / (n as f64).sqrt());
    assert!((var.sqrt() / pi.std() - 1.0).abs() < 0.01);
}
