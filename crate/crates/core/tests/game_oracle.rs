mod common;

use common::*;
use nalgebra::DVector;
use nashseek::game::{
    cournot_cost, cournot_grad, default_ne_stepsize, solve_ne_full_info, verify_ne, CournotSpec, NeSolver,
};
use proptest::prelude::*;
use rand::Rng;

fn random_point(spec: &CournotSpec, r: &mut impl Rng) -> DVector<f64> {
    let game = spec.to_game();
    DVector::from_fn(game.dim(), |j, _| r.gen_range(game.lower()[j]..=game.upper()[j]))
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(3);
    for seed in 0..10 {
        let spec = CournotSpec::random(6, 4, seed).unwrap();
        let layout = spec.layout().clone();
        let x = random_point(&spec, &mut r);
        for i in 0..6 {
            let g = cournot_grad(&spec, i, &x).unwrap();
            for (c, j) in layout.range(i).enumerate() {
                let h = 1e-5;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (cournot_cost(&spec, i, &xp).unwrap() - cournot_cost(&spec, i, &xm).unwrap()) / (2.0 * h);
                assert!((fd - g[c]).abs() < 1e-6 * (1.0 + g[c].abs()), "seed {seed} agent {i}: {fd} vs {}", g[c]);
            }
        }
    }
}

#[test]
fn equilibrium_is_a_best_response_for_every_firm() {
    for seed in 0..5 {
        let spec = CournotSpec::random(8, 5, seed).unwrap();
        let game = spec.to_game();
        let consts = spec.constants();
        let x = solve_ne_full_info(&game, default_ne_stepsize(&consts), 1e-12, 1_000_000).unwrap();
        let layout = spec.layout().clone();
        for i in 0..8 {
            // projected gradient on firm i's own cost with the others frozen
            let range = layout.range(i);
            let mut y = x.clone();
            let step = 1.0 / consts.lip_own[i];
            for _ in 0..20_000 {
                let g = cournot_grad(&spec, i, &y).unwrap();
                for (c, j) in range.clone().enumerate() {
                    y[j] = (y[j] - step * g[c]).clamp(game.lower()[j], game.upper()[j]);
                }
            }
            let br = y.rows(range.start, range.len());
            let xi = x.rows(range.start, range.len());
            assert!((br - xi).amax() < 1e-8, "seed {seed} firm {i}");
        }
    }
}

#[test]
fn decoupled_equilibria_are_clamped_minimisers() {
    let mut r = rng(17);
    for _ in 0..20 {
        let m = r.gen_range(2..7);
        let (game, closed) = decoupled_game(&mut r, m);
        let x = NeSolver { alpha: 0.1, tol: 1e-12, max_iter: 100_000 }.solve(&game).unwrap();
        assert!((&x - &closed).amax() < 1e-8);
        assert!(verify_ne(&game, &closed, 1e-10).unwrap().is_ne);
    }
}

#[test]
fn perturbed_equilibrium_fails_verification() {
    let spec = CournotSpec::random(5, 3, 2).unwrap();
    let game = spec.to_game();
    let x = solve_ne_full_info(&game, default_ne_stepsize(&spec.constants()), 1e-12, 1_000_000).unwrap();
    assert!(verify_ne(&game, &x, 1e-8).unwrap().is_ne);
    // move an interior coordinate, if there is one
    let j = (0..game.dim()).find(|&j| x[j] > game.lower()[j] + 0.2 && x[j] < game.upper()[j] - 0.2);
    if let Some(j) = j {
        let mut y = x.clone();
        y[j] += 0.1;
        assert!(!verify_ne(&game, &y, 1e-8).unwrap().is_ne);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constants_bound_sampled_differences(seed in any::<u64>(), sample in any::<u64>()) {
        let spec = CournotSpec::random(5, 4, seed % 1000).unwrap();
        let game = spec.to_game();
        let consts = spec.constants();
        let mut r = rng(sample);
        let x = random_point(&spec, &mut r);
        let y = random_point(&spec, &mut r);
        let layout = spec.layout().clone();
        for i in 0..5 {
            let range = layout.range(i);
            // own-block Lipschitz and strong monotonicity, others frozen at x
            let mut yi = x.clone();
            for j in range.clone() {
                yi[j] = y[j];
            }
            let gx = game.partial_gradient(i, x.as_view()).unwrap();
            let gyi = game.partial_gradient(i, yi.as_view()).unwrap();
            let d = (&yi - &x).rows(range.start, range.len()).into_owned();
            let dn = d.norm_squared();
            prop_assert!((&gyi - &gx).norm() <= consts.lip_own[i] * d.norm() + 1e-9);
            prop_assert!((&gyi - &gx).dot(&d) >= consts.mu[i] * dn - 1e-9);
            // cross-block Lipschitz, own block frozen
            let mut xo = y.clone();
            for j in range.clone() {
                xo[j] = x[j];
            }
            let go = game.partial_gradient(i, xo.as_view()).unwrap();
            prop_assert!((&go - &gx).norm() <= consts.lip_cross[i] * (&xo - &x).norm() + 1e-9);
            // combined bound
            let gy = game.partial_gradient(i, y.as_view()).unwrap();
            prop_assert!((&gy - &gx).norm_squared() <= consts.combined_lipschitz(i).powi(2) * (&y - &x).norm_squared() + 1e-9);
        }
    }

    #[test]
    fn projection_is_idempotent_and_feasible(seed in any::<u64>()) {
        let spec = CournotSpec::random(4, 3, seed % 1000).unwrap();
        let game = spec.to_game();
        let mut r = rng(seed);
        let v = random_vector(&mut r, game.dim(), 50.0);
        let p = game.project(&v).unwrap();
        prop_assert_eq!(game.infeasibility(&p), 0.0);
        prop_assert_eq!(game.project(&p).unwrap(), p.clone());
        // non-expansive
        let w = random_vector(&mut r, game.dim(), 50.0);
        prop_assert!((game.project(&w).unwrap() - &p).norm() <= (&w - &v).norm() + 1e-12);
    }

    #[test]
    fn toml_round_trip(seed in any::<u64>(), m in 2usize..6, n in 1usize..5) {
        let spec = CournotSpec::random(m, n, seed).unwrap();
        let back = CournotSpec::from_toml(&spec.to_toml().unwrap()).unwrap();
        let mut r = rng(seed);
        let x = random_point(&spec, &mut r);
        for i in 0..m {
            prop_assert_eq!(cournot_grad(&spec, i, &x).unwrap(), cournot_grad(&back, i, &x).unwrap());
        }
    }
}
