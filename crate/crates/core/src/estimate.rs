//! Object estimates from a recovered stack, the Wiener baseline and the
//! normalized radially averaged power spectrum (RAPS) of the error.

use std::fmt::Write as _;

use crate::ops::PsfModel;
use crate::{Error, Image, ImageStack, Result};

/// `ρ = q̄ / i0`.
pub fn rho_from_mean(q: &ImageStack, i0: f64) -> Result<Image> {
    if !(i0 > 0.0) {
        return Err(Error::param("i0", format!("must be positive, got {i0}")));
    }
    Ok(q.frame_mean().scaled(1.0 / i0))
}

/// Pixel-wise population standard deviation over frames. Proportional to
/// `ρ` for second-order stationary illumination; the scale is left as is.
pub fn rho_from_std(q: &ImageStack) -> Result<Image> {
    if q.frames() < 2 {
        return Err(Error::param(
            "frames",
            "standard deviation needs at least two frames",
        ));
    }
    let mean = q.frame_mean();
    let mut acc = vec![0.0; mean.data().len()];
    for frame in q.iter_frames() {
        for ((a, v), mu) in acc.iter_mut().zip(frame).zip(mean.data()) {
            let d = v - mu;
            *a += d * d;
        }
    }
    let inv = 1.0 / q.frames() as f64;
    acc.iter_mut().for_each(|a| *a = (*a * inv).sqrt());
    Image::from_vec(*q.grid(), acc)
}

/// Wiener filter `conj(otf) Ŷ / (|otf|² + 1/snr_power)`.
pub fn wiener_deconvolve(y_bar: &Image, psf: &PsfModel, snr_power: f64) -> Result<Image> {
    psf.grid().check_same(y_bar.grid())?;
    if !(snr_power > 0.0) {
        return Err(Error::param(
            "snr_power",
            format!("must be positive, got {snr_power}"),
        ));
    }
    let reg = if snr_power.is_infinite() {
        0.0
    } else {
        1.0 / snr_power
    };
    let filter: Vec<_> = psf
        .otf()
        .iter()
        .map(|h| {
            let d = h.norm_sqr() + reg;
            if d > 0.0 {
                h.conj() / d
            } else {
                num_complex::Complex64::default()
            }
        })
        .collect();
    let out = psf.fft().filter_real(y_bar.data(), &filter, false);
    Image::from_vec(*y_bar.grid(), out)
}

/// Wiener regularisation power for a measurement SNR in dB.
pub fn snr_power_from_db(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

/// Normalised spectral error per frequency ring.
#[derive(Clone, Debug, PartialEq)]
pub struct RapsCurve {
    /// Ring centres in cycles per wavelength.
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RapsCurve {
    pub const CSV_HEADER: &'static str = "r_cycles_per_lambda,f,count";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for ((r, f), c) in self.radii.iter().zip(&self.values).zip(&self.counts) {
            writeln!(s, "{r},{f},{c}").unwrap();
        }
        s
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Indices of rings with `lo <= r <= hi`.
    pub fn band(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.radii.len())
            .filter(|&i| self.radii[i] >= lo && self.radii[i] <= hi)
            .collect()
    }

    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

/// Ring width in cycles per wavelength: one DFT sample along the shorter axis.
pub fn raps_bin_width(grid: &crate::Grid) -> f64 {
    1.0 / (grid.n1().min(grid.n2()) as f64 * grid.pitch())
}

/// Ring index of DFT bin `(k1, k2)`: radial frequency rounded to the nearest
/// multiple of the bin width.
pub fn raps_bin(grid: &crate::Grid, k1: usize, k2: usize) -> usize {
    (grid.radial_frequency(k1, k2) / raps_bin_width(grid)).round() as usize
}

/// Relative cutoff below which a ring's reference power counts as empty.
pub const RAPS_EMPTY_RING: f64 = 1e-12;

/// `f(r) = Σ_ring |ρ̂ - ρ*|² / Σ_ring |ρ*|²` over one-sample-wide rings. The
/// DC ring is excluded, as are rings whose reference power is below
/// [`RAPS_EMPTY_RING`] times the largest ring power.
pub fn raps_error(rho_hat: &Image, rho_star: &Image) -> Result<RapsCurve> {
    rho_star.grid().check_same(rho_hat.grid())?;
    if rho_star.data().iter().all(|v| *v == 0.0) {
        return Err(Error::param(
            "rho_star",
            "reference image is identically zero",
        ));
    }
    let grid = *rho_star.grid();
    let fft = crate::fft::Fft2::new(&grid);
    let diff: Vec<f64> = rho_hat
        .data()
        .iter()
        .zip(rho_star.data())
        .map(|(a, b)| a - b)
        .collect();
    let e = fft.forward_real(&diff);
    let s = fft.forward_real(rho_star.data());
    let nbins = (0..grid.n1())
        .flat_map(|k1| (0..grid.n2()).map(move |k2| (k1, k2)))
        .map(|(k1, k2)| raps_bin(&grid, k1, k2))
        .max()
        .unwrap_or(0)
        + 1;
    let mut num = vec![0.0; nbins];
    let mut den = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for k1 in 0..grid.n1() {
        for k2 in 0..grid.n2() {
            let b = raps_bin(&grid, k1, k2);
            let k = k1 * grid.n2() + k2;
            num[b] += e[k].norm_sqr();
            den[b] += s[k].norm_sqr();
            counts[b] += 1;
        }
    }
    let max_den = den.iter().skip(1).copied().fold(0.0, f64::max);
    let width = raps_bin_width(&grid);
    let mut curve = RapsCurve {
        radii: Vec::new(),
        values: Vec::new(),
        counts: Vec::new(),
    };
    for b in 1..nbins {
        if counts[b] == 0 || den[b] <= RAPS_EMPTY_RING * max_den || den[b] == 0.0 {
            continue;
        }
        curve.radii.push(b as f64 * width);
        curve.values.push(num[b] / den[b]);
        curve.counts.push(counts[b]);
    }
    Ok(curve)
}

/// Pearson correlation coefficient of two images.
pub fn pearson(a: &Image, b: &Image) -> Result<f64> {
    a.grid().check_same(b.grid())?;
    Ok(pearson_slices(a.data(), b.data()))
}

pub(crate) fn pearson_slices(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
