mod common;

use speckle_sim::datagen::*;
use speckle_sim::estimate::raps_bin;
use speckle_sim::fft::Fft2;
use speckle_sim::prox::row_norms;
use speckle_sim::{Grid, Image};

fn speckle_grid() -> Grid {
    Grid::square(64, 0.05).unwrap()
}

fn thousand_patterns(kind: SpeckleKind) -> speckle_sim::ImageStack {
    let spec = SpeckleSpec {
        kind,
        ..SpeckleSpec::standard(1000, DEFAULT_NA, 17)
    };
    gen_speckle(&spec, &speckle_grid()).unwrap()
}

fn cv(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

#[test]
fn psf_integrates_to_one() {
    let g = Grid::square(256, 0.05).unwrap();
    let psf = make_psf(&g, DEFAULT_NA).unwrap();
    let integral = psf.psf().sum() * g.pitch() * g.pitch();
    assert!((integral - 1.0).abs() < 0.02, "{integral}");
}

#[test]
fn speckle_moments() {
    let s = thousand_patterns(SpeckleKind::Standard);
    let mean = s.mean();
    let second = s.data().iter().map(|v| v * v).sum::<f64>() / s.data().len() as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    assert!((second - 2.0).abs() < 0.1, "E[I²] {second}");
    assert!(s.data().iter().all(|v| *v >= 0.0));
}

#[test]
fn squared_speckle_keeps_mean_and_is_sparser() {
    let s = thousand_patterns(SpeckleKind::Squared);
    assert!((s.mean() - 1.0).abs() < 0.05, "{}", s.mean());
    let standard = thousand_patterns(SpeckleKind::Standard);
    let dim = |st: &speckle_sim::ImageStack| st.data().iter().filter(|v| **v < 0.1).count();
    assert!(dim(&s) > dim(&standard));
}

#[test]
fn speckle_spectrum_stays_in_autocorrelation_disk() {
    let s = thousand_patterns(SpeckleKind::Standard);
    let g = *s.grid();
    let fft = Fft2::new(&g);
    let mut power = vec![0.0; g.len()];
    for frame in s.iter_frames() {
        let mean = frame.iter().sum::<f64>() / frame.len() as f64;
        let centred: Vec<f64> = frame.iter().map(|v| v - mean).collect();
        for (p, c) in power.iter_mut().zip(fft.forward_real(&centred)) {
            *p += c.norm_sqr();
        }
    }
    // ring average, as in the RAPS metric
    let bins = raps_bin(&g, g.n1() / 2, g.n2() / 2) + 2;
    let mut ring = vec![(0.0, 0usize); bins];
    for k1 in 0..g.n1() {
        for k2 in 0..g.n2() {
            let b = raps_bin(&g, k1, k2);
            ring[b].0 += power[k1 * g.n2() + k2];
            ring[b].1 += 1;
        }
    }
    let width = speckle_sim::estimate::raps_bin_width(&g);
    let avg: Vec<(f64, f64)> = ring
        .iter()
        .enumerate()
        .filter(|(_, (_, c))| *c > 0)
        .map(|(b, (s, c))| (b as f64 * width, s / *c as f64))
        .collect();
    let peak = avg.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    let support = 2.0 * DEFAULT_NA;
    for (r, v) in &avg {
        if *r > support + width {
            assert!(*v < 0.01 * peak, "r = {r}: {v} vs peak {peak}");
        }
    }
}

#[test]
fn speckle_is_stationary() {
    let s = thousand_patterns(SpeckleKind::Standard);
    let n = s.grid().len();
    let m = s.frames() as f64;
    let mut mean = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for frame in s.iter_frames() {
        for k in 0..n {
            mean[k] += frame[k] / m;
            sq[k] += frame[k] * frame[k] / m;
        }
    }
    let var: Vec<f64> = mean.iter().zip(&sq).map(|(a, b)| b - a * a).collect();
    assert!(cv(&mean) < 0.05, "cv(mean) = {}", cv(&mean));
    // Sampling spread of a variance estimate from M exponential draws is
    // sqrt((μ4 - σ⁴)/M)/σ² = sqrt(8/M); a 5% bound is out of reach at M = 1000.
    let expected = (8.0 / m).sqrt();
    assert!(
        (cv(&var) / expected - 1.0).abs() < 0.2,
        "cv(var) = {} vs {expected}",
        cv(&var)
    );
}

#[test]
fn row_norm_identities() {
    let g = speckle_grid();
    let rho = make_star(&g, 40).unwrap();
    let s = thousand_patterns(SpeckleKind::Standard);
    let q = modulate(&rho, &s).unwrap();
    let n = g.len();
    let m = q.frames() as f64;
    let mut l1 = vec![0.0; n];
    for frame in q.iter_frames() {
        l1.iter_mut().zip(frame).for_each(|(a, v)| *a += v.abs());
    }
    let l2 = row_norms(q.data(), n);
    let max = rho.max();
    let (mut e1, mut e2, mut count) = (0.0, 0.0, 0);
    for k in 0..n {
        let r = rho.data()[k];
        if r > 0.1 * max {
            count += 1;
            e1 += (l1[k] / (m * r) - 1.0).powi(2);
            e2 += (l2[k] / ((2.0 * m).sqrt() * r) - 1.0).powi(2);
        }
    }
    // RMS relative error over the support; per-pixel spread is 1/sqrt(M) for
    // the l1 rows and sqrt(5/M)/2 for the l2 rows
    let rms1 = (e1 / count as f64).sqrt();
    let rms2 = (e2 / count as f64).sqrt();
    assert!(rms1 < 0.05, "{rms1}");
    assert!(rms2 < 0.05, "{rms2}");
    assert!((rms1 / (1.0 / m.sqrt()) - 1.0).abs() < 0.3, "{rms1}");
}

#[test]
fn forty_db_noise_level() {
    let g = Grid::square(32, 0.05).unwrap();
    let rho = make_star(&g, 40).unwrap();
    let psf = make_psf(&g, DEFAULT_NA).unwrap();
    let s = gen_speckle(&SpeckleSpec::standard(50, DEFAULT_NA, 3), &g).unwrap();
    let sim = simulate(&rho, &s, &psf, &NoiseSpec::gaussian(40.0, 4), None).unwrap();
    let diff: f64 = sim
        .measurements
        .data()
        .iter()
        .zip(sim.clean.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let ratio = diff / sim.clean.norm();
    assert!((ratio / 0.01 - 1.0).abs() < 0.05, "{ratio}");
}

#[test]
fn simulation_is_bit_reproducible() {
    let g = Grid::square(16, 0.05).unwrap();
    let rho = Image::constant(g, 0.5);
    let psf = make_psf(&g, DEFAULT_NA).unwrap();
    let run = || {
        let s = gen_speckle(&SpeckleSpec::standard(4, 1.2, 8), &g).unwrap();
        let noise = NoiseSpec {
            gaussian_snr_db: Some(15.0),
            photons_per_pixel: Some(100.0),
            seed: 9,
        };
        simulate(&rho, &s, &psf, &noise, None).unwrap().measurements
    };
    let (a, b) = (run(), run());
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}
