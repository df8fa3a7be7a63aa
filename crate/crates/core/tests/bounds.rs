mod common;

use common::{perturbed, random_instance};
use gamps_core::gradient::mvg_bias_bound;
use gamps_core::rng::rng_from_seed;
use gamps_core::*;
use rand::Rng;

const REL_TOL: f64 = 1e-9;

#[test]
fn bounds_hold_on_random_instances() {
    let mut rng = rng_from_seed(2024);
    for _ in 0..50 {
        let (mdp, pi) = random_instance(&mut rng, 6, 3);
        let lambda = rng.random_range(0.01..0.9);
        let p_hat = perturbed(&mdp, lambda, &mut rng);
        for q in QNorm::ALL {
            let b = mvg_bias_bound(&mdp, &p_hat, &pi, q).unwrap();
            assert!(b.lhs <= b.rhs_theorem1 * (1.0 + REL_TOL), "{b:?}");
            assert!(b.rhs_theorem1 <= b.rhs_proposition * (1.0 + REL_TOL), "{b:?}");
            assert!(b.rhs_theorem1 <= b.rhs_theorem1_rescaled);
            assert!(b.z <= b.k * (1.0 + REL_TOL));
        }
    }
}

#[test]
fn exact_model_has_no_bias() {
    let mut rng = rng_from_seed(7);
    let (mdp, pi) = random_instance(&mut rng, 5, 3);
    let b = mvg_bias_bound(&mdp, &mdp, &pi, QNorm::Two).unwrap();
    assert!(b.lhs < 1e-10);
    assert_eq!((b.rhs_theorem1, b.rhs_proposition, b.eta_kl, b.delta_kl), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn bias_grows_with_model_error() {
    let mut rng = rng_from_seed(8);
    let (mdp, pi) = random_instance(&mut rng, 5, 2);
    let mut seeded = rng_from_seed(9);
    let near = perturbed(&mdp, 0.05, &mut seeded);
    let mut seeded = rng_from_seed(9);
    let far = perturbed(&mdp, 0.6, &mut seeded);
    let a = mvg_bias_bound(&mdp, &near, &pi, QNorm::Two).unwrap();
    let b = mvg_bias_bound(&mdp, &far, &pi, QNorm::Two).unwrap();
    assert!(a.eta_kl < b.eta_kl && a.rhs_theorem1 < b.rhs_theorem1);
}
