mod common;

use common::*;
use proptest::prelude::*;
use speckle_sim::prox::*;

fn prox_one(x: &[f64], lambda: f64, penalty: Penalty) -> Vec<f64> {
    let g = GroupedVector::new(x.to_vec(), x.len()).unwrap();
    prox_penalty(&g, lambda, penalty).unwrap().into_values()
}

#[test]
fn closed_forms_match_brute_force() {
    let mut r = rng(11);
    for penalty in PENALTIES {
        for _ in 0..50 {
            let x = random_group(&mut r);
            for lambda in LAMBDAS {
                let d = prox_one(&x, lambda, penalty);
                let closed = prox_objective(&d, &x, lambda, penalty);
                let brute = brute_force_prox_min(&x, lambda, penalty);
                assert!(
                    closed <= brute + 1e-6,
                    "{penalty:?} x={x:?} λ={lambda}: {closed} > {brute}"
                );
            }
        }
    }
}

#[test]
fn half_norm_example_against_brute_force() {
    let x = [3.0, 0.0];
    let d = prox_one(&x, 1.0, Penalty::L2Half);
    assert!(d[0] > 0.0 && d[1] == 0.0);
    let factor = d[0] / 3.0;
    assert!((factor - shrink_factor_l2_half(3.0, 1.0)).abs() < 1e-15);
    // dense 1-D minimisation of sqrt(t) + (t - 3)²/2
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=3_000_000 {
        let t = k as f64 * 1e-6;
        let v = t.sqrt() + (t - 3.0).powi(2) / 2.0;
        if v < best.0 {
            best = (v, t);
        }
    }
    assert!((d[0] - best.1).abs() <= 1e-5, "{} vs {}", d[0], best.1);
}

#[test]
fn two_thirds_tends_to_identity_as_lambda_vanishes() {
    let x = [0.7, -1.3, 2.0];
    let mut prev_err = f64::INFINITY;
    for lambda in [1e-2, 1e-4, 1e-6, 1e-8] {
        let d = prox_one(&x, lambda, Penalty::L2TwoThirds);
        let err: f64 = d.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        assert!(err < prev_err);
        prev_err = err;
    }
    assert!(prev_err < 1e-5);
    assert!(threshold_l2_two_thirds(1e-12) < 1e-8);
}

#[test]
fn ell_one_conjugate_is_a_clamp() {
    let x = [-3.0, -1.0, -0.25, 0.0, 0.4, 1.0, 2.5];
    for sigma in [0.1, 1.0, 7.0] {
        let out = moreau_conjugate_prox(
            |v, lam| v.iter().map(|&t| soft_threshold(t, lam)).collect(),
            &x,
            sigma,
        )
        .unwrap();
        for (o, xi) in out.iter().zip(&x) {
            assert!((o - xi.clamp(-1.0, 1.0)).abs() < 1e-14);
        }
    }
}

#[test]
fn conjugate_of_zero_function_is_zero() {
    let x = [1.5, -2.0, 0.3];
    let out = moreau_conjugate_prox(|v, _| v.to_vec(), &x, 0.7).unwrap();
    assert!(out.iter().all(|v| v.abs() < 1e-15));
}

fn group_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (1usize..=4, 1usize..=6).prop_flat_map(|(size, count)| {
        (
            prop::collection::vec(-10.0f64..10.0, size * count),
            Just(size),
        )
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

proptest! {
    #[test]
    fn convex_proxes_are_nonexpansive(
        (x, size) in group_strategy(),
        shift in prop::collection::vec(-1.0f64..1.0, 24),
        lambda in 0.01f64..10.0,
    ) {
        let y: Vec<f64> = x.iter().zip(shift.iter().cycle()).map(|(a, b)| a + b).collect();
        for penalty in [Penalty::L11, Penalty::L21] {
            let px = prox_penalty(&GroupedVector::new(x.clone(), size).unwrap(), lambda, penalty).unwrap();
            let py = prox_penalty(&GroupedVector::new(y.clone(), size).unwrap(), lambda, penalty).unwrap();
            prop_assert!(dist(px.values(), py.values()) <= dist(&x, &y) + 1e-12);
        }
    }

    #[test]
    fn group_permutation_commutes_with_prox(
        (x, size) in group_strategy(),
        lambda in 0.01f64..10.0,
        rot in 0usize..6,
    ) {
        let count = x.len() / size;
        let k = rot % count;
        let permuted: Vec<f64> = (0..count).flat_map(|g| x[((g + k) % count) * size..][..size].to_vec()).collect();
        for penalty in PENALTIES {
            let a = prox_penalty(&GroupedVector::new(x.clone(), size).unwrap(), lambda, penalty).unwrap();
            let b = prox_penalty(&GroupedVector::new(permuted.clone(), size).unwrap(), lambda, penalty).unwrap();
            for g in 0..count {
                prop_assert_eq!(b.group(g), a.group((g + k) % count));
            }
        }
    }

    #[test]
    fn group_outputs_are_zero_or_parallel(
        (x, size) in group_strategy(),
        lambda in 0.01f64..10.0,
    ) {
        for penalty in [Penalty::L21, Penalty::L2Half, Penalty::L2TwoThirds] {
            let gx = GroupedVector::new(x.clone(), size).unwrap();
            let out = prox_penalty(&gx, lambda, penalty).unwrap();
            for (o, g) in out.groups().zip(gx.groups()) {
                let ratio = if g.iter().any(|v| *v != 0.0) {
                    let (i, _) = g.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap();
                    o[i] / g[i]
                } else {
                    0.0
                };
                prop_assert!((0.0..=1.0).contains(&ratio));
                for (a, b) in o.iter().zip(g) {
                    prop_assert!((a - ratio * b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
            }
        }
    }

    #[test]
    fn soft_threshold_increases_sparsity(x in prop::collection::vec(-5.0f64..5.0, 1..20), lambda in 0.0f64..3.0) {
        let g = GroupedVector::new(x.clone(), 1).unwrap();
        let out = prox_l11(&g, lambda).unwrap();
        let zeros_in = x.iter().filter(|v| **v == 0.0).count();
        let zeros_out = out.values().iter().filter(|v| **v == 0.0).count();
        prop_assert!(zeros_out >= zeros_in);
    }

    #[test]
    fn ball_projection_is_idempotent_and_lipschitz(
        x in prop::collection::vec(-10.0f64..10.0, 5),
        z in prop::collection::vec(-10.0f64..10.0, 5),
        c in prop::collection::vec(-3.0f64..3.0, 5),
        radius in 0.0f64..8.0,
    ) {
        let px = project_l2_ball(&x, &c, radius).unwrap();
        let pz = project_l2_ball(&z, &c, radius).unwrap();
        prop_assert!(dist(&px, &c) <= radius * (1.0 + 1e-12) + 1e-12);
        let again = project_l2_ball(&px, &c, radius).unwrap();
        prop_assert!(dist(&again, &px) <= 1e-12 * (1.0 + radius));
        prop_assert!(dist(&px, &pz) <= dist(&x, &z) + 1e-12);
    }

    #[test]
    fn moreau_decomposition_for_group_l21(
        x in prop::collection::vec(-5.0f64..5.0, 6),
        sigma in 0.1f64..5.0,
    ) {
        // prox_{σ f*}(x) for f = ||·||_{2,1} is the group-wise projection onto
        // the unit ball
        let out = moreau_conjugate_prox(
            |v, lam| prox_group_l21(&GroupedVector::new(v.to_vec(), 2).unwrap(), lam).unwrap().into_values(),
            &x,
            sigma,
        ).unwrap();
        for (o, g) in out.chunks(2).zip(x.chunks(2)) {
            let n = g[0].hypot(g[1]);
            let s = if n > 1.0 { 1.0 / n } else { 1.0 };
            prop_assert!((o[0] - s * g[0]).abs() < 1e-12 && (o[1] - s * g[1]).abs() < 1e-12);
        }
    }
}
