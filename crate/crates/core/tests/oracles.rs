mod common;

use common::{fd_gradient, random_instance, rel_err};
use gamps_core::gradient::{exact_gradient_tabular, exact_mvg_tabular, expected_return};
use gamps_core::mdp::exact_occupancy;
use gamps_core::models::{kl_divergence, kl_to_true};
use gamps_core::optim::{adam_step, AdamConfig, AdamState};
use gamps_core::rng::rng_from_seed;
use gamps_core::value::{bellman_residual, exact_q, state_values};
use gamps_core::weighting::exact_eta_tabular;
use gamps_core::*;
use proptest::prelude::*;
use rand::Rng;

/// Truncated series `(1-gamma) sum_{t<T} gamma^t Pr(s_t, a_t)` from `init`.
fn power_series<P: TabularPolicy>(mdp: &TabularMdp, pi: &P, init: &[f64], horizon: usize) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.discount();
    let mut d = init.to_vec();
    let mut acc = vec![0.0; ns * na];
    let mut disc = 1.0 - gamma;
    for _ in 0..horizon {
        acc.iter_mut().zip(&d).for_each(|(a, x)| *a += disc * x);
        let mut next_s = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let m = d[s * na + a];
                for (sp, p) in mdp.next_dist(s, a).iter().enumerate() {
                    next_s[sp] += m * p;
                }
            }
        }
        for s in 0..ns {
            for (a, p) in pi.action_probs(s).into_iter().enumerate() {
                d[s * na + a] = next_s[s] * p;
            }
        }
        disc *= gamma;
    }
    acc
}

fn initial_sa<P: TabularPolicy>(mdp: &TabularMdp, pi: &P) -> Vec<f64> {
    let na = mdp.n_actions();
    let mut v = vec![0.0; mdp.n_states() * na];
    for s in 0..mdp.n_states() {
        for (a, p) in pi.action_probs(s).into_iter().enumerate() {
            v[s * na + a] = mdp.initial()[s] * p;
        }
    }
    v
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn occupancy_matches_power_series_on_random_instances() {
    let mut rng = rng_from_seed(11);
    for _ in 0..50 {
        let (mdp, pi) = random_instance(&mut rng, 6, 3);
        let exact = exact_occupancy(&mdp, &pi).unwrap();
        let series = power_series(&mdp, &pi, &initial_sa(&mdp, &pi), 2000);
        assert!(max_abs_diff(exact.values(), &series) < 1e-8);
        assert!((exact.sum() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn two_state_chain_occupancy() {
    // 0 -> 1 -> 1 ... with a single action.
    let mdp = TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0], 0.5).unwrap();
    let pi = TabularSoftmaxPolicy::uniform(2, 1);
    let exact = exact_occupancy(&mdp, &pi).unwrap();
    let series = power_series(&mdp, &pi, &[1.0, 0.0], 60);
    assert!(max_abs_diff(exact.values(), &series) < 1e-9);
    assert!((exact.get(0, 0) - 0.5).abs() < 1e-12);
    assert!((exact.get(1, 0) - 0.5).abs() < 1e-12);
}

#[test]
fn exact_q_has_tiny_bellman_residual_and_matches_value_iteration() {
    let mut rng = rng_from_seed(12);
    for _ in 0..50 {
        let (mdp, pi) = random_instance(&mut rng, 6, 3);
        let q = exact_q(&mdp, &pi).unwrap();
        assert!(bellman_residual(&mdp, &pi, &q) < 1e-10);

        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut vi = vec![0.0; ns * na];
        for _ in 0..3000 {
            let v: Vec<f64> = (0..ns)
                .map(|s| pi.action_probs(s).iter().enumerate().map(|(a, p)| p * vi[s * na + a]).sum())
                .collect();
            for s in 0..ns {
                for a in 0..na {
                    let ev: f64 = mdp.next_dist(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                    vi[s * na + a] = mdp.reward(s, a) + mdp.discount() * ev;
                }
            }
        }
        assert!(max_abs_diff(q.values(), &vi) < 1e-9);
    }
}

#[test]
fn expected_return_is_occupancy_reward_over_one_minus_gamma() {
    let mut rng = rng_from_seed(13);
    for _ in 0..20 {
        let (mdp, pi) = random_instance(&mut rng, 5, 3);
        let delta = exact_occupancy(&mdp, &pi).unwrap();
        let via_delta: f64 = delta.values().iter().zip(mdp.rewards()).map(|(d, r)| d * r).sum::<f64>()
            / (1.0 - mdp.discount());
        let j = expected_return(&mdp, &pi).unwrap();
        assert!((j - via_delta).abs() < 1e-10 * (1.0 + j.abs()));
        let q = exact_q(&mdp, &pi).unwrap();
        let v = state_values(&pi, &q);
        let via_v: f64 = mdp.initial().iter().zip(&v).map(|(m, x)| m * x).sum();
        assert!((j - via_v).abs() < 1e-12 * (1.0 + j.abs()));
    }
}

#[test]
fn exact_gradient_matches_finite_differences() {
    let mut rng = rng_from_seed(14);
    for _ in 0..30 {
        let (mdp, pi) = random_instance(&mut rng, 5, 3);
        let g = exact_gradient_tabular(&mdp, &pi).unwrap();
        let mut p = pi.clone();
        let fd = fd_gradient(pi.params(), 1e-5, |theta| {
            p.set_params(theta).unwrap();
            expected_return(&mdp, &p).unwrap()
        });
        assert!(rel_err(&g, &fd, 1e-3) < 1e-5, "rel err {}", rel_err(&g, &fd, 1e-3));
    }
}

#[test]
fn mvg_with_true_q_is_the_exact_gradient() {
    let mut rng = rng_from_seed(15);
    let (mdp, pi) = random_instance(&mut rng, 5, 3);
    let q = exact_q(&mdp, &pi).unwrap();
    let a = exact_mvg_tabular(&mdp, &pi, &q).unwrap();
    let b = exact_gradient_tabular(&mdp, &pi).unwrap();
    assert_eq!(a, b);
}

#[test]
fn softmax_score_matches_finite_differences() {
    let mut rng = rng_from_seed(16);
    for _ in 0..20 {
        let ns = rng.random_range(1..5);
        let na = rng.random_range(2..5);
        let pi = TabularSoftmaxPolicy::random(ns, na, 2.0, &mut rng);
        for s in 0..ns {
            for a in 0..na {
                let mut p = pi.clone();
                let fd = fd_gradient(pi.params(), 1e-5, |theta| {
                    p.set_params(theta).unwrap();
                    p.log_prob(&s, &a)
                });
                let score = pi.score(&s, &a);
                assert!(rel_err(&score, &fd, 1e-3) < 1e-5);
            }
        }
    }
}

#[test]
fn rbf_score_matches_finite_differences() {
    let mut rng = rng_from_seed(17);
    for _ in 0..50 {
        let mut pi = RbfGaussianPolicy::equally_spaced(0.0, 20.0, 6).unwrap();
        let theta: Vec<f64> = (0..pi.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        pi.set_params(&theta).unwrap();
        let s = rng.random_range(0.0..20.0);
        let a = pi.mean(s) + rng.random_range(-2.0..2.0);
        let mut p = pi.clone();
        let fd = fd_gradient(pi.params(), 1e-5, |th| {
            p.set_params(th).unwrap();
            p.log_prob(&s, &a)
        });
        assert!(rel_err(&pi.score(&s, &a), &fd, 1e-3) < 1e-5);
    }
}

#[test]
fn expected_softmax_score_is_zero() {
    let mut rng = rng_from_seed(18);
    let pi = TabularSoftmaxPolicy::random(4, 3, 1.5, &mut rng);
    for s in 0..4 {
        let mut total = vec![0.0; pi.n_params()];
        for (a, p) in pi.action_probs(s).into_iter().enumerate() {
            total.iter_mut().zip(pi.score(&s, &a)).for_each(|(t, x)| *t += p * x);
        }
        assert!(total.iter().all(|x| x.abs() < 1e-14));
    }
}

#[test]
fn adam_matches_hand_rolled_recursion() {
    let cfg = AdamConfig { lr: 0.05, beta1: 0.8, beta2: 0.99, eps: 1e-7 };
    let mut rng = rng_from_seed(19);
    let mut params = vec![0.3, -1.2, 2.0];
    let mut state = AdamState::new(cfg, 3);
    let (mut m, mut v, mut theta) = (vec![0.0; 3], vec![0.0; 3], params.clone());
    for t in 1..=50 {
        let grad: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (next, next_state) = adam_step(&state, &params, &grad, false).unwrap();
        for i in 0..3 {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = m[i] / (1.0 - cfg.beta1.powi(t));
            let vh = v[i] / (1.0 - cfg.beta2.powi(t));
            theta[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        assert!(max_abs_diff(&next, &theta) < 1e-12);
        params = next;
        state = next_state;
    }
}

#[test]
fn eta_is_the_score_weighted_mixture_of_occupancies() {
    let mut rng = rng_from_seed(20);
    for _ in 0..20 {
        let (mdp, pi) = random_instance(&mut rng, 5, 3);
        for q in QNorm::ALL {
            let eta = exact_eta_tabular(&mdp, &pi, q).unwrap();
            let delta = exact_occupancy(&mdp, &pi).unwrap();
            let (ns, na) = (mdp.n_states(), mdp.n_actions());
            let mut mix = vec![0.0; ns * na];
            let mut z = 0.0;
            for s in 0..ns {
                for a in 0..na {
                    let w = delta.get(s, a) * q.norm(&pi.score(&s, &a));
                    z += w;
                    let mut point = vec![0.0; ns * na];
                    point[s * na + a] = 1.0;
                    // delta_{s,a}: start at (s,a), follow pi afterwards.
                    let from = power_series(&mdp, &pi, &point, 3000);
                    mix.iter_mut().zip(from).for_each(|(m, x)| *m += w * x);
                }
            }
            mix.iter_mut().for_each(|m| *m /= z);
            assert!((eta.z - z).abs() < 1e-10 * z);
            assert!(max_abs_diff(eta.table.values(), &mix) < 1e-8);
        }
    }
}

#[test]
fn kl_basics() {
    assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    let kl = kl_divergence(&[0.9, 0.1], &[0.5, 0.5]);
    let expected = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
    assert!((kl - expected).abs() < 1e-15);
    assert_eq!(kl_divergence(&[0.0, 1.0], &[0.5, 0.5]), 0.5f64.ln().abs());
    assert_eq!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);

    let mut rng = rng_from_seed(21);
    let (mdp, _) = random_instance(&mut rng, 4, 2);
    let table = kl_to_true(&mdp, &mdp).unwrap();
    assert!(table.values().iter().all(|x| x.abs() < 1e-15));
}

proptest! {
    #[test]
    fn softmax_probabilities_form_a_distribution(logits in proptest::collection::vec(-30.0f64..30.0, 6)) {
        let pi = TabularSoftmaxPolicy::from_logits(2, 3, logits).unwrap();
        for s in 0..2 {
            let p = pi.action_probs(s);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn qnorm_ordering(v in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
        let (l1, l2, li) = (QNorm::One.norm(&v), QNorm::Two.norm(&v), QNorm::Inf.norm(&v));
        prop_assert!(li <= l2 + 1e-12 && l2 <= l1 + 1e-12);
    }
}
