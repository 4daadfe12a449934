//! Synthetic experiments: star target, Airy PSF, speckle illumination and
//! the noisy measurement stack `y_m = H(ρ ∘ I_m) + b + ε_m`.
//!
//! Randomness is driven by ChaCha8 generators. Frame `m` draws from stream
//! `m` of the configured seed, so frames can be generated independently and
//! in any order while staying bit-reproducible.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::fft::Fft2;
use crate::ops::{stack_convolve_into, PsfModel};
use crate::{par, Error, Grid, Image, ImageStack, Result};

/// Free-space wavenumber in wavelength-normalised units.
pub const K0: f64 = 2.0 * PI;

/// Default objective numerical aperture.
pub const DEFAULT_NA: f64 = 1.49;

/// Star-like target `ρ(r, θ) = (1 + cos(arms θ)) / 2`, centred on pixel
/// `(n1/2, n2/2)`.
pub fn make_star(grid: &Grid, arms: usize) -> Result<Image> {
    if arms < 2 || !arms.is_multiple_of(2) {
        return Err(Error::param(
            "arms",
            format!("must be even and >= 2, got {arms}"),
        ));
    }
    let (c1, c2) = ((grid.n1() / 2) as f64, (grid.n2() / 2) as f64);
    Ok(Image::from_fn(*grid, |i, j| {
        let theta = (j as f64 - c2).atan2(i as f64 - c1);
        0.5 * (1.0 + (arms as f64 * theta).cos())
    }))
}

/// Radius (in wavelengths) below which a star with `arms` arms is no longer
/// resolved by a conventional microscope: the arm period `2πr/arms` equals
/// `λ/(2 NA)`.
pub fn conventional_resolution_radius(na: f64, arms: usize) -> f64 {
    arms as f64 / (4.0 * PI * na)
}

/// Airy intensity `h(r) = (J1(NA k0 r) / (k0 r))² k0² / π`, which integrates
/// to one over the plane.
pub fn airy_intensity(r: f64, na: f64) -> f64 {
    let x = na * K0 * r;
    if x.abs() < 1e-8 {
        // J1(x) ~ x/2
        return (na * 0.5).powi(2) * K0 * K0 / PI;
    }
    let v = libm::j1(x) / (K0 * r);
    v * v * K0 * K0 / PI
}

/// Airy PSF sampled with its peak at pixel `(0, 0)` (periodic distances).
pub fn make_psf(grid: &Grid, na: f64) -> Result<PsfModel> {
    if !(na > 0.0) || !na.is_finite() {
        return Err(Error::param("na", format!("must be positive, got {na}")));
    }
    let samples = Image::from_fn(*grid, |i, j| {
        let (a, b) = grid.periodic_offset(i, j);
        airy_intensity(a.hypot(b), na)
    });
    PsfModel::from_samples(na, samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpeckleKind {
    /// Fully developed speckle: exponential intensity statistics.
    Standard,
    /// Squared standard speckle, renormalised; sparser patterns.
    Squared,
}

impl std::str::FromStr for SpeckleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "standard" => Ok(SpeckleKind::Standard),
            "squared" => Ok(SpeckleKind::Squared),
            other => Err(format!(
                "unknown speckle kind `{other}` (standard | squared)"
            )),
        }
    }
}

impl std::fmt::Display for SpeckleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpeckleKind::Standard => "standard",
            SpeckleKind::Squared => "squared",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeckleSpec {
    pub frames: usize,
    pub na_ill: f64,
    pub i0: f64,
    pub kind: SpeckleKind,
    pub seed: u64,
}

impl SpeckleSpec {
    pub fn standard(frames: usize, na_ill: f64, seed: u64) -> Self {
        SpeckleSpec {
            frames,
            na_ill,
            i0: 1.0,
            kind: SpeckleKind::Standard,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::param("speckle.m", "need at least one pattern"));
        }
        if !(self.na_ill > 0.0) {
            return Err(Error::param(
                "speckle.na_ill",
                format!("must be positive, got {}", self.na_ill),
            ));
        }
        if !(self.i0 > 0.0) {
            return Err(Error::param(
                "speckle.i0",
                format!("must be positive, got {}", self.i0),
            ));
        }
        Ok(())
    }
}

/// DFT bins inside the illumination pupil: radial frequency at most
/// `na_ill` cycles per wavelength (angular radius `na_ill k0`).
pub fn pupil_bins(grid: &Grid, na_ill: f64) -> Vec<usize> {
    let mut bins = Vec::new();
    for k1 in 0..grid.n1() {
        for k2 in 0..grid.n2() {
            if grid.radial_frequency(k1, k2) <= na_ill * (1.0 + 1e-12) {
                bins.push(k1 * grid.n2() + k2);
            }
        }
    }
    bins
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Speckle intensity patterns. Each pattern is the squared modulus of a
/// circular complex Gaussian field whose spectrum is confined to the pupil
/// disk, scaled so the ensemble mean intensity is `i0`.
pub fn gen_speckle(spec: &SpeckleSpec, grid: &Grid) -> Result<ImageStack> {
    spec.validate()?;
    let n = grid.len();
    let bins = pupil_bins(grid, spec.na_ill);
    let fft = Fft2::new(grid);
    // field(x) = |P|^{-1/2} Σ_{k∈P} g_k e^{2πi k·x}, E|field|² = 1
    let amp = n as f64 / (bins.len() as f64).sqrt();
    let mut data = vec![0.0; n * spec.frames];
    par::chunks_mut(&mut data, n, |m, frame| {
        let mut rng = frame_rng(spec.seed, m as u64);
        let mut buf = vec![Complex64::default(); n];
        for &k in &bins {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            buf[k] = Complex64::new(re, im) * (amp * std::f64::consts::FRAC_1_SQRT_2);
        }
        fft.inverse(&mut buf);
        for (o, v) in frame.iter_mut().zip(&buf) {
            let e = v.norm_sqr();
            *o = match spec.kind {
                SpeckleKind::Standard => spec.i0 * e,
                // E|field|⁴ = 2 for exponential intensity
                SpeckleKind::Squared => spec.i0 * e * e * 0.5,
            };
        }
    });
    ImageStack::from_vec(*grid, spec.frames, data)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseSpec {
    pub gaussian_snr_db: Option<f64>,
    pub photons_per_pixel: Option<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec::default()
    }

    pub fn gaussian(snr_db: f64, seed: u64) -> Self {
        NoiseSpec {
            gaussian_snr_db: Some(snr_db),
            photons_per_pixel: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.photons_per_pixel {
            if !(p >= 1.0) {
                return Err(Error::param(
                    "noise.photons",
                    format!("must be >= 1, got {p}"),
                ));
            }
        }
        if let Some(s) = self.gaussian_snr_db {
            if !s.is_finite() {
                return Err(Error::param("noise.snr_db", "must be finite"));
            }
        }
        Ok(())
    }
}

/// Output of [`simulate`].
#[derive(Clone, Debug)]
pub struct Simulation {
    /// Noisy measurements `Y`.
    pub measurements: ImageStack,
    /// Noiseless stack `H Q + b`.
    pub clean: ImageStack,
    /// Per-pixel standard deviation of the additive Gaussian noise, if any.
    pub noise_std: Option<f64>,
}

/// Rescale a background image so its mean is `fraction` times
/// `signal_mean`.
pub fn scale_background(background: &Image, signal_mean: f64, fraction: f64) -> Result<Image> {
    let mean = background.mean();
    if !(mean > 0.0) {
        return Err(Error::param(
            "background",
            "image must have a positive mean",
        ));
    }
    Ok(background.scaled(fraction * signal_mean / mean))
}

/// `Q = ρ ∘ I_m` for every pattern.
pub fn modulate(rho: &Image, speckles: &ImageStack) -> Result<ImageStack> {
    rho.grid().check_same(speckles.grid())?;
    let mut q = speckles.clone();
    for frame in q.data_mut().chunks_exact_mut(rho.data().len()) {
        frame.iter_mut().zip(rho.data()).for_each(|(v, r)| *v *= r);
    }
    Ok(q)
}

/// Simulate the raw stack. Poisson shot noise (if configured) is applied
/// first, then additive Gaussian noise whose variance is set from the SNR
/// over the clean stack.
pub fn simulate(
    rho: &Image,
    speckles: &ImageStack,
    psf: &PsfModel,
    noise: &NoiseSpec,
    background: Option<&Image>,
) -> Result<Simulation> {
    noise.validate()?;
    psf.grid().check_same(rho.grid())?;
    if rho.data().iter().any(|v| *v < 0.0) {
        return Err(Error::param(
            "rho",
            "fluorescence density must be nonnegative",
        ));
    }
    let q = modulate(rho, speckles)?;
    let n = rho.data().len();
    let mut clean = vec![0.0; q.data().len()];
    stack_convolve_into(psf, q.data(), &mut clean, false);
    if let Some(b) = background {
        rho.grid().check_same(b.grid())?;
        for frame in clean.chunks_exact_mut(n) {
            frame.iter_mut().zip(b.data()).for_each(|(v, bv)| *v += bv);
        }
    }
    let mut y = clean.clone();

    if let Some(photons) = noise.photons_per_pixel {
        let mean = clean.iter().sum::<f64>() / clean.len() as f64;
        if !(mean > 0.0) {
            return Err(Error::param(
                "noise.photons",
                "clean stack has no positive signal",
            ));
        }
        let scale = photons / mean;
        par::chunks_mut(&mut y, n, |m, frame| {
            let mut rng = frame_rng(noise.seed, 2 * m as u64 + 1);
            for v in frame.iter_mut() {
                let lam = (*v * scale).max(0.0);
                let k = if lam > 0.0 {
                    Poisson::new(lam).expect("positive rate").sample(&mut rng)
                } else {
                    0.0
                };
                *v = k / scale;
            }
        });
    }

    let mut noise_std = None;
    if let Some(snr_db) = noise.gaussian_snr_db {
        let power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
        let nu = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        par::chunks_mut(&mut y, n, |m, frame| {
            let mut rng = frame_rng(noise.seed, 2 * m as u64);
            for v in frame.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += nu * e;
            }
        });
        noise_std = Some(nu);
    }

    let grid = *rho.grid();
    Ok(Simulation {
        measurements: ImageStack::from_vec(grid, speckles.frames(), y)?,
        clean: ImageStack::from_vec(grid, speckles.frames(), clean)?,
        noise_std,
    })
}

/// Estimate a white-noise standard deviation from the energy of `Y` outside
/// the OTF passband, where the noiseless signal has (almost) no content.
pub fn estimate_noise_std(y: &ImageStack, psf: &PsfModel) -> Result<f64> {
    psf.grid().check_same(y.grid())?;
    let peak = psf.max_abs_otf();
    let outside: Vec<usize> = psf
        .otf()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm() < 1e-3 * peak)
        .map(|(k, _)| k)
        .collect();
    if outside.is_empty() {
        return Err(Error::param(
            "psf",
            "OTF has no stop band; cannot estimate noise",
        ));
    }
    let n = y.grid().len() as f64;
    let mut energy = 0.0;
    for frame in y.iter_frames() {
        let spec = psf.fft().forward_real(frame);
        energy += outside.iter().map(|&k| spec[k].norm_sqr()).sum::<f64>();
    }
    Ok((energy / (y.frames() as f64 * n * outside.len() as f64)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_rays() {
        let g = Grid::square(64, 0.05).unwrap();
        let s = make_star(&g, 40).unwrap();
        // θ = 0 ray points along +rows from the centre
        for r in 1..30 {
            assert!((s.get(32 + r, 32) - 1.0).abs() < 1e-12);
        }
        assert!(s.max() <= 1.0 && s.min() >= 0.0);
        let theta = PI / 40.0;
        let v = 0.5 * (1.0 + (40.0 * theta).cos());
        assert!(v.abs() < 1e-15);
        assert!(make_star(&g, 3).is_err());
        assert!(make_star(&g, 0).is_err());
    }

    #[test]
    fn conventional_radius() {
        let r = conventional_resolution_radius(1.49, 40);
        assert!((r - 10.0 / (PI * 1.49)).abs() < 1e-12);
        assert!((2.0 * PI * r / 40.0 - 1.0 / (2.0 * 1.49)).abs() < 1e-12);
    }

    #[test]
    fn airy_peak_and_first_zero() {
        let na = 1.49;
        let h0 = airy_intensity(0.0, na);
        assert!((h0 - (na / 2.0).powi(2) * K0 * K0 / PI).abs() < 1e-12);
        assert!((airy_intensity(1e-10, na) - h0).abs() / h0 < 1e-8);
        let r_zero = 3.831_705_970_207_512 / (na * K0);
        assert!(airy_intensity(r_zero, na) < 1e-12 * h0);
    }

    #[test]
    fn psf_is_symmetric_and_nonnegative() {
        let g = Grid::square(32, 0.05).unwrap();
        let psf = make_psf(&g, 1.49).unwrap();
        let h = psf.psf();
        assert!(h.min() >= 0.0);
        for i in 1..32 {
            for j in 1..32 {
                assert!((h.get(i, j) - h.get(32 - i, 32 - j)).abs() < 1e-12 * h.max());
                assert!((h.get(i, j) - h.get(j, i)).abs() < 1e-12 * h.max());
            }
        }
        assert!((psf.max_abs_otf() - 1.0).abs() < 1e-12);
        assert!(make_psf(&g, 0.0).is_err());
    }

    #[test]
    fn speckle_is_reproducible_and_positive() {
        let g = Grid::square(16, 0.1).unwrap();
        let spec = SpeckleSpec::standard(5, 1.49, 7);
        let a = gen_speckle(&spec, &g).unwrap();
        let b = gen_speckle(&spec, &g).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| *v >= 0.0));
        let other = gen_speckle(&SpeckleSpec { seed: 8, ..spec }, &g).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn constant_illumination_gives_widefield() {
        let g = Grid::square(16, 0.05).unwrap();
        let psf = make_psf(&g, 1.49).unwrap();
        let rho = make_star(&g, 8).unwrap();
        let i0 = 1.5;
        let speckles = ImageStack::replicate(&Image::constant(g, i0), 3);
        let sim = simulate(&rho, &speckles, &psf, &NoiseSpec::none(), None).unwrap();
        let wide = crate::ops::convolve(&psf, &rho).unwrap();
        for m in 0..3 {
            for (a, b) in sim.measurements.frame(m).iter().zip(wide.data()) {
                assert!((a - i0 * b).abs() < 1e-12);
            }
        }
        assert_eq!(sim.noise_std, None);
    }

    #[test]
    fn negative_rho_rejected() {
        let g = Grid::square(8, 0.05).unwrap();
        let psf = make_psf(&g, 1.49).unwrap();
        let mut rho = Image::constant(g, 1.0);
        rho.data_mut()[3] = -0.1;
        let speckles = ImageStack::replicate(&Image::constant(g, 1.0), 1);
        assert!(simulate(&rho, &speckles, &psf, &NoiseSpec::none(), None).is_err());
    }

    #[test]
    fn background_adds_to_frame_mean() {
        let g = Grid::square(16, 0.05).unwrap();
        let psf = make_psf(&g, 1.49).unwrap();
        let rho = make_star(&g, 8).unwrap();
        let speckles = gen_speckle(&SpeckleSpec::standard(4, 1.49, 3), &g).unwrap();
        let b = Image::from_fn(g, |i, j| 1.0 + 0.1 * (i + j) as f64);
        let sim = simulate(&rho, &speckles, &psf, &NoiseSpec::none(), Some(&b)).unwrap();
        let q = modulate(&rho, &speckles).unwrap();
        let hq_mean = crate::ops::convolve(&psf, &q.frame_mean()).unwrap();
        let y_mean = sim.measurements.frame_mean();
        for k in 0..g.len() {
            assert!((y_mean.data()[k] - hq_mean.data()[k] - b.data()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_noise_hits_requested_snr() {
        let g = Grid::square(32, 0.05).unwrap();
        let psf = make_psf(&g, 1.49).unwrap();
        let rho = make_star(&g, 40).unwrap();
        let speckles = gen_speckle(&SpeckleSpec::standard(20, 1.49, 1), &g).unwrap();
        let sim = simulate(&rho, &speckles, &psf, &NoiseSpec::gaussian(40.0, 2), None).unwrap();
        let diff: f64 = sim
            .measurements
            .data()
            .iter()
            .zip(sim.clean.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let ratio = diff / sim.clean.norm();
        assert!((ratio / 0.01 - 1.0).abs() < 0.05, "ratio {ratio}");
        let nu = sim.noise_std.unwrap();
        let est = estimate_noise_std(&sim.measurements, &psf).unwrap();
        assert!((est / nu - 1.0).abs() < 0.05, "estimated {est} vs {nu}");
    }

    #[test]
    fn poisson_noise_preserves_mean() {
        let g = Grid::square(16, 0.05).unwrap();
        let psf = make_psf(&g, 1.49).unwrap();
        let rho = make_star(&g, 8).unwrap();
        let speckles = gen_speckle(&SpeckleSpec::standard(10, 1.49, 1), &g).unwrap();
        let noise = NoiseSpec {
            gaussian_snr_db: None,
            photons_per_pixel: Some(100.0),
            seed: 4,
        };
        let sim = simulate(&rho, &speckles, &psf, &noise, None).unwrap();
        let rel = (sim.measurements.mean() - sim.clean.mean()).abs() / sim.clean.mean();
        assert!(rel < 0.01, "{rel}");
        assert!(sim.measurements.data().iter().all(|v| *v >= 0.0));
        let bad = NoiseSpec {
            photons_per_pixel: Some(0.5),
            ..noise
        };
        assert!(simulate(&rho, &speckles, &psf, &bad, None).is_err());
    }
}
