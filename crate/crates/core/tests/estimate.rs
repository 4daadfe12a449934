mod common;

use std::f64::consts::PI;

use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use speckle_sim::datagen::{gen_speckle, make_psf, make_star, modulate, SpeckleSpec, DEFAULT_NA};
use speckle_sim::estimate::*;
use speckle_sim::{Grid, Image, ImageStack};

fn star_stack(n: usize, frames: usize, seed: u64) -> (Image, ImageStack) {
    let g = Grid::square(n, 0.05).unwrap();
    let rho = make_star(&g, 16).unwrap();
    let s = gen_speckle(&SpeckleSpec::standard(frames, DEFAULT_NA, seed), &g).unwrap();
    let q = modulate(&rho, &s).unwrap();
    (rho, q)
}

fn sparse_object(g: Grid) -> Image {
    let centres = [(12.0, 14.0), (30.0, 44.0), (48.0, 20.0), (40.0, 40.0)];
    Image::from_fn(g, |i, j| {
        centres
            .iter()
            .map(|(a, b)| {
                let r2 = (i as f64 - a).powi(2) + (j as f64 - b).powi(2);
                if r2 <= 36.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .sum()
    })
}

#[test]
fn mean_estimator_recovers_object() {
    let g = Grid::square(64, 0.05).unwrap();
    let rho = sparse_object(g);
    let s = gen_speckle(&SpeckleSpec::standard(1000, DEFAULT_NA, 21), &g).unwrap();
    let est = rho_from_mean(&modulate(&rho, &s).unwrap(), 1.0).unwrap();
    let r = pearson(&est, &rho).unwrap();
    assert!(r >= 0.999, "{r}");
}

#[test]
fn mean_estimator_on_star_follows_sampling_theory() {
    let (rho, q) = star_stack(64, 1000, 21);
    let r = pearson(&rho_from_mean(&q, 1.0).unwrap(), &rho).unwrap();
    let n = rho.data().len() as f64;
    let m2 = rho.data().iter().map(|v| v * v).sum::<f64>() / n;
    let var = m2 - rho.mean().powi(2);
    let predicted = 1.0 / (1.0 + m2 / (1000.0 * var)).sqrt();
    assert!((1.0 - r) <= 1.25 * (1.0 - predicted), "{r} vs {predicted}");
}

#[test]
fn std_estimator_is_proportional_to_object() {
    let (rho, q) = star_stack(64, 1000, 22);
    let est = rho_from_std(&q).unwrap();
    let thresh = 0.1 * rho.max();
    let ratios: Vec<f64> = est
        .data()
        .iter()
        .zip(rho.data())
        .filter(|(_, r)| **r > thresh)
        .map(|(e, r)| e / r)
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let cv = (ratios.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ratios.len() as f64).sqrt()
        / mean;
    assert!((mean - 1.0).abs() < 0.05, "{mean}");
    assert!(cv <= 0.05, "{cv}");
}

#[test]
fn std_estimator_drops_frame_constant_images() {
    let (_, q) = star_stack(32, 20, 23);
    let mut r = rng(4);
    let offset = random_vec(&mut r, q.grid().len(), 3.0);
    let mut shifted = q.clone();
    for m in 0..q.frames() {
        shifted
            .frame_mut(m)
            .iter_mut()
            .zip(&offset)
            .for_each(|(v, o)| *v += o);
    }
    let a = rho_from_std(&q).unwrap();
    let b = rho_from_std(&shifted).unwrap();
    let worst = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-12 * a.max(), "{worst}");
}

fn naive_dft(grid: &Grid, x: &[f64]) -> Vec<Complex64> {
    let (n1, n2) = (grid.n1(), grid.n2());
    let mut out = vec![Complex64::default(); n1 * n2];
    for k1 in 0..n1 {
        for k2 in 0..n2 {
            let mut acc = Complex64::default();
            for i in 0..n1 {
                for j in 0..n2 {
                    let ph =
                        -2.0 * PI * ((k1 * i) as f64 / n1 as f64 + (k2 * j) as f64 / n2 as f64);
                    acc += x[i * n2 + j] * Complex64::from_polar(1.0, ph);
                }
            }
            out[k1 * n2 + k2] = acc;
        }
    }
    out
}

fn signed(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

#[test]
fn raps_matches_ring_summation_for_subpixel_shift() {
    let g = Grid::new(16, 12, 0.1).unwrap();
    let (n1, n2) = (g.n1(), g.n2());
    let rho = Image::from_fn(g, |i, j| {
        ((i as f64 * 0.7).sin() + (j as f64 * 0.4).cos()).abs() + 0.1
    });
    // shift by (0.3, -0.45) pixels through a phase ramp, keeping the real part
    let spec = naive_dft(&g, rho.data());
    let mut shifted = vec![0.0; g.len()];
    for i in 0..n1 {
        for j in 0..n2 {
            let mut acc = Complex64::default();
            for k1 in 0..n1 {
                for k2 in 0..n2 {
                    let (f1, f2) = (signed(k1, n1) / n1 as f64, signed(k2, n2) / n2 as f64);
                    let ramp = Complex64::from_polar(1.0, -2.0 * PI * (0.3 * f1 - 0.45 * f2));
                    let ph = 2.0 * PI * ((k1 * i) as f64 / n1 as f64 + (k2 * j) as f64 / n2 as f64);
                    acc += spec[k1 * n2 + k2] * ramp * Complex64::from_polar(1.0, ph);
                }
            }
            shifted[i * n2 + j] = acc.re / g.len() as f64;
        }
    }
    let hat = Image::from_vec(g, shifted).unwrap();
    let curve = raps_error(&hat, &rho).unwrap();

    let e = naive_dft(
        &g,
        &hat.data()
            .iter()
            .zip(rho.data())
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    let width = 1.0 / (n1.min(n2) as f64 * g.pitch());
    let mut num = std::collections::BTreeMap::<usize, (f64, f64)>::new();
    for k1 in 0..n1 {
        for k2 in 0..n2 {
            let f1 = signed(k1, n1) / (n1 as f64 * g.pitch());
            let f2 = signed(k2, n2) / (n2 as f64 * g.pitch());
            let ring = ((f1 * f1 + f2 * f2).sqrt() / width).round() as usize;
            let entry = num.entry(ring).or_default();
            entry.0 += e[k1 * n2 + k2].norm_sqr();
            entry.1 += spec[k1 * n2 + k2].norm_sqr();
        }
    }
    let expected: Vec<(f64, f64)> = num
        .iter()
        .filter(|(ring, _)| **ring > 0)
        .map(|(ring, (a, b))| (*ring as f64 * width, a / b))
        .collect();
    assert_eq!(curve.radii.len(), expected.len());
    for ((r, v), (er, ev)) in curve.radii.iter().zip(&curve.values).zip(&expected) {
        assert!((r - er).abs() < 1e-12);
        assert!((v - ev).abs() <= 1e-12 * ev.max(1.0), "{r}: {v} vs {ev}");
    }
}

#[test]
fn wiener_matches_object_inside_passband() {
    let g = Grid::square(64, 0.05).unwrap();
    let psf = make_psf(&g, DEFAULT_NA).unwrap();
    let rho = make_star(&g, 16).unwrap();
    let blurred = speckle_sim::ops::convolve(&psf, &rho).unwrap();
    let est = wiener_deconvolve(&blurred, &psf, 1e12).unwrap();
    let fft = speckle_sim::fft::Fft2::new(&g);
    let (a, b) = (fft.forward_real(est.data()), fft.forward_real(rho.data()));
    let peak = psf.max_abs_otf();
    for (k, h) in psf.otf().iter().enumerate() {
        if h.norm() > 0.1 * peak && b[k].norm() > 1e-9 * b[0].norm() {
            assert!((a[k] - b[k]).norm() <= 1e-3 * b[k].norm(), "bin {k}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mean_estimator_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = Grid::square(6, 0.1).unwrap();
        let mut r = rng(seed);
        let x = ImageStack::from_vec(g, 3, random_vec(&mut r, 3 * g.len(), 1.0)).unwrap();
        let y = ImageStack::from_vec(g, 3, random_vec(&mut r, 3 * g.len(), 1.0)).unwrap();
        let combo = ImageStack::from_vec(g, 3, x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect()).unwrap();
        let lhs = rho_from_mean(&combo, 1.7).unwrap();
        let (mx, my) = (rho_from_mean(&x, 1.7).unwrap(), rho_from_mean(&y, 1.7).unwrap());
        for k in 0..g.len() {
            let rhs = a * mx.data()[k] + b * my.data()[k];
            prop_assert!((lhs.data()[k] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn std_estimator_is_absolutely_homogeneous(seed in 0u64..1000, c in -5.0f64..5.0) {
        let g = Grid::square(6, 0.1).unwrap();
        let mut r = rng(seed);
        let x = ImageStack::from_vec(g, 4, random_vec(&mut r, 4 * g.len(), 1.0)).unwrap();
        let a = rho_from_std(&x.scaled(c)).unwrap();
        let b = rho_from_std(&x).unwrap();
        for k in 0..g.len() {
            prop_assert!((a.data()[k] - c.abs() * b.data()[k]).abs() <= 1e-12 * (1.0 + b.data()[k]));
        }
    }

    #[test]
    fn raps_is_scale_invariant(seed in 0u64..1000, c in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0]) {
        let g = Grid::square(12, 0.1).unwrap();
        let mut r = rng(seed);
        let a = Image::from_vec(g, random_vec(&mut r, g.len(), 1.0)).unwrap();
        let b = Image::from_vec(g, random_vec(&mut r, g.len(), 1.0)).unwrap();
        let base = raps_error(&a, &b).unwrap();
        let scaled = raps_error(&a.scaled(c), &b.scaled(c)).unwrap();
        prop_assert_eq!(base.radii.len(), scaled.radii.len());
        for (u, v) in base.values.iter().zip(&scaled.values) {
            prop_assert!((u - v).abs() <= 1e-10 * u.max(1e-300) + 1e-14);
        }
    }
}
