#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speckle_sim::prox::Penalty;

pub const PENALTIES: [Penalty; 4] = [
    Penalty::L11,
    Penalty::L21,
    Penalty::L2Half,
    Penalty::L2TwoThirds,
];
pub const LAMBDAS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

/// Group of 1 to 4 entries with magnitudes spread over several decades.
pub fn random_group(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let size = rng.random_range(1..=4);
    let scale = 10f64.powf(rng.random_range(-1.5..1.5));
    random_vec(rng, size, scale)
}

pub fn prox_objective(d: &[f64], x: &[f64], lambda: f64, penalty: Penalty) -> f64 {
    let fit: f64 = d.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
    penalty.group_value(d) + fit / (2.0 * lambda)
}

/// Minimise a 1-D function on `[lo, hi]`: dense grid, then ternary search
/// around the best grid point. The endpoints are always candidates.
pub fn min_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return f(lo);
    }
    const STEPS: usize = 4000;
    let h = (hi - lo) / STEPS as f64;
    let mut best_t = lo;
    let mut best = f(lo);
    for k in 1..=STEPS {
        let t = lo + k as f64 * h;
        let v = f(t);
        if v < best {
            best = v;
            best_t = t;
        }
    }
    let (mut a, mut b) = ((best_t - h).max(lo), (best_t + h).min(hi));
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) < f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    best.min(f(0.5 * (a + b)))
}

/// Brute-force minimum of `f(d) + ||d - x||² / (2λ)` over one group.
/// For `p = 2` the minimiser lies on the segment from 0 to `x`; for `p = 1`
/// the problem separates by coordinate.
pub fn brute_force_prox_min(x: &[f64], lambda: f64, penalty: Penalty) -> f64 {
    match penalty {
        Penalty::L11 => x
            .iter()
            .map(|&xi| {
                let (lo, hi) = (xi.min(0.0), xi.max(0.0));
                min_1d(|t| t.abs() + (t - xi).powi(2) / (2.0 * lambda), lo, hi)
            })
            .sum(),
        _ => {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let q = penalty.q();
            min_1d(|t| t.powf(q) + (t - r).powi(2) / (2.0 * lambda), 0.0, r)
        }
    }
}

use speckle_sim::ops::{op_d, op_d_adjoint, stack_adjoint_convolve, stack_convolve, PsfModel};
use speckle_sim::{Grid, ImageStack};

/// Relative mismatch of `<L x, y>` and `<x, L* y>`.
pub fn adjoint_mismatch(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300)
}

/// `x ↦ (1 + D*D + ℋ*ℋ) x` on a stack of `frames` frames.
pub fn normal_operator(
    psf: &PsfModel,
    frames: usize,
    i0: f64,
) -> impl FnMut(&[f64], &mut [f64]) + '_ {
    let grid: Grid = *psf.grid();
    move |x: &[f64], y: &mut [f64]| {
        let q = ImageStack::from_vec(grid, frames, x.to_vec()).unwrap();
        let dd = op_d_adjoint(&op_d(&q, i0).unwrap(), frames, i0).unwrap();
        let hh = stack_adjoint_convolve(psf, &stack_convolve(psf, &q).unwrap()).unwrap();
        for (((o, a), b), c) in y.iter_mut().zip(x).zip(dd.data()).zip(hh.data()) {
            *o = a + b + c;
        }
    }
}
