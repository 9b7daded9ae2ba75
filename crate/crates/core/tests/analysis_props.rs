mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use nashseek::analysis::{
    cauchy_schwarz_check, collect_traces, f_alpha, fuzz, lemma1_check, lemma1a_check, lemma2_check, lemma4_check, lemma5_check,
    lemma6_check, lemma7_check, norm_ineq_check, weighted_norm, Check, RoundTrace, WeightedNorm,
};
use nashseek::game::{default_ne_stepsize, solve_ne_full_info, CournotSpec};
use nashseek::graph::{gen_cycle, GraphSequence};
use nashseek::seeker::{round, EstimateMatrix, RunConfig};
use proptest::prelude::*;
use rand::Rng;

fn equilibrium(spec: &CournotSpec) -> DVector<f64> {
    solve_ne_full_info(&spec.to_game(), default_ne_stepsize(&spec.constants()), 1e-13, 1_000_000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lemma1_identities(seed in any::<u64>(), m in 1usize..7, n in 1usize..5) {
        let mut r = rng(seed);
        let us: Vec<DVector<f64>> = (0..m).map(|_| random_vector(&mut r, n, 10.0)).collect();
        // arbitrary real weights for part (a)
        let free: Vec<f64> = (0..m).map(|_| r.gen_range(-3.0..3.0)).collect();
        prop_assert!(lemma1a_check(&us, &free).unwrap().relative_residual() <= 1e-10);
        // weights summing to one, possibly negative
        let mut g: Vec<f64> = (0..m).map(|_| r.gen_range(-2.0..2.0)).collect();
        let s: f64 = g[..m - 1].iter().sum();
        g[m - 1] = 1.0 - s;
        let u = random_vector(&mut r, n, 10.0);
        let rep = lemma1_check(&us, &g, &u).unwrap();
        prop_assert!(rep.max_residual() <= 1e-10, "{:?}", rep);
    }

    #[test]
    fn norm_sandwich_and_cauchy_schwarz(seed in any::<u64>(), m in 1usize..8, n in 1usize..5) {
        let mut r = rng(seed);
        let pi = random_simplex(&mut r, m);
        let u = random_matrix(&mut r, m, n, 5.0);
        let v = random_matrix(&mut r, m, n, 5.0);
        let (lo, hi) = norm_ineq_check(&u, &pi).unwrap();
        prop_assert!(lo.pass && hi.pass);
        prop_assert!(cauchy_schwarz_check(&u, &v, &pi).unwrap().pass);
        let nrm = WeightedNorm::new(pi.clone()).unwrap();
        prop_assert!((nrm.inner(&u, &u).unwrap() - weighted_norm(&u, &pi).unwrap().powi(2)).abs() <= 1e-10 * (1.0 + nrm.norm_sq(&u).unwrap()));
    }

    #[test]
    fn lemma2_on_random_graphs(seed in any::<u64>(), m in 2usize..7, n in 1usize..4) {
        let mut r = rng(seed);
        let g = random_strong_graph(&mut r, m, 0.35);
        let z = random_matrix(&mut r, m, n, 3.0);
        prop_assert!(lemma2_check(&g, &z).unwrap().pass);
    }

    #[test]
    fn lemma6_on_compatible_pairs(seed in any::<u64>(), m in 2usize..7, n in 1usize..4) {
        let mut r = rng(seed);
        let g = random_strong_graph(&mut r, m, 0.35);
        let w = random_weights(&mut r, &g);
        let (phi, pi) = compatible_pair(&mut r, &w);
        let z = random_matrix(&mut r, m, n, 3.0);
        let u = random_vector(&mut r, n, 3.0);
        let rep = lemma6_check(&w, &phi, &pi, &z, &u).unwrap();
        prop_assert!(rep.pass(), "{:?}", rep);
        prop_assert!(rep.eta > 0.0 && rep.eta < 1.0);
    }

    #[test]
    fn f_alpha_support_and_lemma5(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = r.gen_range(2..6);
        let spec = CournotSpec::random(m, 3, seed % 1000).unwrap();
        let game = spec.to_game();
        let consts = spec.constants();
        let n = game.dim();
        let alphas: Vec<f64> = (0..m).map(|_| r.gen_range(0.01..0.5)).collect();
        let z = random_matrix(&mut r, m, n, 8.0);
        let y = random_matrix(&mut r, m, n, 8.0);
        let f = f_alpha(&z, &game, &alphas).unwrap();
        let layout = spec.layout();
        for i in 0..m {
            for c in 0..n {
                if !layout.range(i).contains(&c) {
                    prop_assert_eq!(f[(i, c)], 0.0);
                }
            }
        }
        prop_assert!(f_alpha(&z, &game, &vec![0.0; m]).unwrap().iter().all(|&v| v == 0.0));
        prop_assert!(lemma5_check(&game, &consts, &alphas, &z, &y, &random_simplex(&mut r, m)).unwrap().pass);
        let x = random_vector(&mut r, n, 8.0);
        let xp = random_vector(&mut r, n, 8.0);
        for i in 0..m {
            prop_assert!(lemma4_check(&game, &consts, i, &x, &xp).unwrap().pass);
        }
    }
}

#[test]
fn lemma7_at_the_equilibrium_is_zero() {
    let spec = CournotSpec::random(4, 3, 0).unwrap();
    let x = equilibrium(&spec);
    let game = spec.to_game();
    let consts = spec.constants();
    let g = gen_cycle(4).unwrap();
    let w = nashseek::mixing::build_weights(&g, 0.5).unwrap();
    let z = EstimateMatrix::consensual(spec.layout(), &x);
    let next = round(&z, &w, &game, &[0.05; 4], 0).unwrap();
    let pi = DVector::from_element(4, 0.25);
    let trace = RoundTrace { k: 0, z: z.matrix().clone(), z_next: next.matrix().clone(), w: w.into_matrix(), pi_k: pi.clone(), pi_next: pi, x_star: x };
    let rep = lemma7_check(&trace, &consts, &[0.05; 4], None).unwrap();
    assert!(rep.check.lhs < 1e-18 && rep.check.rhs.abs() < 1e-18 && rep.check.pass);
}

#[test]
fn lemma7_rejects_inconsistent_traces() {
    let t = RoundTrace {
        k: 0,
        z: DMatrix::zeros(2, 2),
        z_next: DMatrix::zeros(2, 3),
        w: DMatrix::identity(2, 2),
        pi_k: DVector::from_element(2, 0.5),
        pi_next: DVector::from_element(2, 0.5),
        x_star: DVector::zeros(2),
    };
    let consts = CournotSpec::random(2, 1, 0).unwrap().constants();
    assert!(lemma7_check(&t, &consts, &[0.1, 0.1], None).is_err());
}

fn lemma7_adversarial(seed: u64) -> Check {
    let mut r = rng(seed);
    let m = r.gen_range(2..6);
    let spec = CournotSpec::random(m, 3, seed % 500).unwrap();
    let game = spec.to_game();
    let consts = spec.constants();
    let x = equilibrium(&spec);
    let g = random_strong_graph(&mut r, m, 0.4);
    let w = random_weights(&mut r, &g);
    let (pi_next, pi_k) = compatible_pair(&mut r, &w);
    let alphas: Vec<f64> = (0..m).map(|_| r.gen_range(0.001..0.3)).collect();
    let z = EstimateMatrix::from_matrix(spec.layout(), random_matrix(&mut r, m, game.dim(), 10.0)).unwrap();
    let next = round(&z, &w, &game, &alphas, 0).unwrap();
    let trace = RoundTrace { k: 0, z: z.matrix().clone(), z_next: next.matrix().clone(), w: w.into_matrix(), pi_k, pi_next, x_star: x };
    lemma7_check(&trace, &consts, &alphas, None).unwrap().check
}

#[test]
fn lemma7_on_random_rounds() {
    let recs = fuzz(1000, 0, |s| Ok(lemma7_adversarial(s))).unwrap();
    let bad: Vec<_> = recs.iter().filter(|r| !r.check.pass).collect();
    assert!(bad.is_empty(), "{} violations, first {:?}", bad.len(), bad.first());
}

#[test]
fn lemma7_along_a_recorded_run() {
    let spec = CournotSpec::random(6, 4, 2).unwrap();
    let x = equilibrium(&spec);
    let consts = spec.constants();
    let cfg = RunConfig { mixing_delta: Some(0.15), ..RunConfig::new(spec.to_game(), GraphSequence::seeded_random(6, 2, 9, 1).unwrap(), 0.05) };
    for t in collect_traces(&cfg, &x, 200).unwrap() {
        assert!(lemma7_check(&t, &consts, &[0.05; 6], None).unwrap().check.pass, "round {}", t.k);
    }
}
