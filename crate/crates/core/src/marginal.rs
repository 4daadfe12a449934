//! Covariance-matching (marginal) estimator.
//!
//! The illumination is treated as a random field with covariance `Γ_s`, so
//! the raw frames have covariance
//!
//! ```text
//! Γ_y(ρ) = H diag(ρ) Γ_s diag(ρ) H^T + ν² I
//! ```
//!
//! and `ρ` is fitted by minimising the Kullback-Leibler criterion
//! `D(ρ) = ½ log|Γ_y| + ½ Tr(Γ_y⁻¹ Γ̂_y)` against the empirical covariance
//! `Γ̂_y`. Everything is dense, so the cost is `O(N³)` and grids are capped.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::datagen::pupil_bins;
use crate::fft::Fft2;
use crate::ops::PsfModel;
use crate::{Error, Grid, Image, ImageStack, Result};

/// Largest pixel count accepted for dense evaluation (a 32x32 grid).
pub const DEFAULT_CAP: usize = 1024;

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        Err(Error::TooLarge { n, cap })
    } else {
        Ok(())
    }
}

/// Normalised field autocorrelation `γ(Δ)` of a speckle field whose spectrum
/// fills the pupil disk of radius `na_ill` (cycles per wavelength), for every
/// periodic offset. The discrete counterpart of the jinc profile.
pub fn field_autocorrelation(grid: &Grid, na_ill: f64) -> Vec<Complex64> {
    let bins = pupil_bins(grid, na_ill);
    let mut buf = vec![Complex64::default(); grid.len()];
    for &k in &bins {
        buf[k] = Complex64::new(1.0, 0.0);
    }
    Fft2::new(grid).inverse(&mut buf);
    let s = grid.len() as f64 / bins.len() as f64;
    buf.iter_mut().for_each(|v| *v *= s);
    buf
}

fn offset_index(grid: &Grid, a: usize, b: usize) -> usize {
    let (n1, n2) = (grid.n1(), grid.n2());
    let (ai, aj) = (a / n2, a % n2);
    let (bi, bj) = (b / n2, b % n2);
    ((ai + n1 - bi) % n1) * n2 + (aj + n2 - bj) % n2
}

/// Speckle intensity covariance `Γ_s(i, j) = i0² |γ(x_i - x_j)|²`.
pub fn speckle_covariance(grid: &Grid, na_ill: f64, i0: f64, cap: usize) -> Result<DMatrix<f64>> {
    check_cap(grid.len(), cap)?;
    if !(na_ill > 0.0) || !(i0 > 0.0) {
        return Err(Error::param("speckle", "na_ill and i0 must be positive"));
    }
    let gamma = field_autocorrelation(grid, na_ill);
    let n = grid.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        i0 * i0 * gamma[offset_index(grid, i, j)].norm_sqr()
    }))
}

/// Dense circulant matrix of the PSF convolution.
pub fn psf_matrix(psf: &PsfModel, cap: usize) -> Result<DMatrix<f64>> {
    let grid = *psf.grid();
    check_cap(grid.len(), cap)?;
    let k = psf.kernel().data();
    let n = grid.len();
    Ok(DMatrix::from_fn(n, n, |i, j| k[offset_index(&grid, i, j)]))
}

/// Dense model pieces for one experiment.
#[derive(Clone, Debug)]
pub struct CovModel {
    pub grid: Grid,
    pub gamma_s: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub noise_var: f64,
}

impl CovModel {
    pub fn new(psf: &PsfModel, na_ill: f64, i0: f64, noise_var: f64, cap: usize) -> Result<Self> {
        if !(noise_var > 0.0) {
            return Err(Error::param(
                "noise_var",
                "must be positive for a definite covariance",
            ));
        }
        let grid = *psf.grid();
        Ok(CovModel {
            grid,
            gamma_s: speckle_covariance(&grid, na_ill, i0, cap)?,
            h: psf_matrix(psf, cap)?,
            noise_var,
        })
    }

    /// `Γ_y(ρ)`.
    pub fn measurement_covariance(&self, rho: &[f64]) -> DMatrix<f64> {
        let n = rho.len();
        let inner = DMatrix::from_fn(n, n, |i, j| rho[i] * self.gamma_s[(i, j)] * rho[j]);
        let mut g = &self.h * inner * self.h.transpose();
        for i in 0..n {
            g[(i, i)] += self.noise_var;
        }
        // symmetrise away rounding
        let gt = g.transpose();
        (g + gt) * 0.5
    }
}

/// Empirical covariance of the frames after subtracting the frame mean.
pub fn empirical_covariance(y: &ImageStack, cap: usize) -> Result<DMatrix<f64>> {
    let n = y.grid().len();
    check_cap(n, cap)?;
    let mean = y.frame_mean();
    let mut c = DMatrix::<f64>::zeros(n, n);
    let mut v = DVector::<f64>::zeros(n);
    for frame in y.iter_frames() {
        for k in 0..n {
            v[k] = frame[k] - mean.data()[k];
        }
        c.ger(1.0, &v, &v, 1.0);
    }
    Ok(c / y.frames() as f64)
}

fn check_inputs(rho: &Image, cov: &CovModel, gamma_hat: &DMatrix<f64>) -> Result<()> {
    cov.grid.check_same(rho.grid())?;
    let n = cov.grid.len();
    if gamma_hat.nrows() != n || gamma_hat.ncols() != n {
        return Err(Error::ShapeMismatch {
            expected: n * n,
            found: gamma_hat.len(),
        });
    }
    Ok(())
}

fn factor(g: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(g).ok_or(Error::NotPositiveDefinite("measurement covariance"))
}

fn objective_from_factor(chol: &Cholesky<f64, Dyn>, gamma_hat: &DMatrix<f64>) -> f64 {
    let l = chol.l_dirty();
    let logdet = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let trace = chol.solve(gamma_hat).trace();
    0.5 * logdet + 0.5 * trace
}

fn gradient_from_factor(
    rho: &[f64],
    cov: &CovModel,
    gamma_y: &DMatrix<f64>,
    chol: &Cholesky<f64, Dyn>,
    gamma_hat: &DMatrix<f64>,
) -> Vec<f64> {
    let omega = chol.solve(&cov.h);
    let m = omega.transpose() * (gamma_y - gamma_hat) * &omega;
    let weighted = m.component_mul(&cov.gamma_s);
    let r = DVector::from_column_slice(rho);
    (weighted * r).as_slice().to_vec()
}

/// `D(ρ) = ½ log|Γ_y| + ½ Tr(Γ_y⁻¹ Γ̂_y)` (additive constant taken as zero).
pub fn marginal_objective(rho: &Image, cov: &CovModel, gamma_hat: &DMatrix<f64>) -> Result<f64> {
    check_inputs(rho, cov, gamma_hat)?;
    let chol = factor(cov.measurement_covariance(rho.data()))?;
    Ok(objective_from_factor(&chol, gamma_hat))
}

/// `∇D(ρ) = ((Ω^T (Γ_y - Γ̂_y) Ω) ∘ Γ_s) ρ` with `Ω = Γ_y⁻¹ H`.
pub fn marginal_gradient(rho: &Image, cov: &CovModel, gamma_hat: &DMatrix<f64>) -> Result<Image> {
    Ok(marginal_value_and_gradient(rho, cov, gamma_hat)?.1)
}

/// Objective and gradient from a single factorisation of `Γ_y`.
pub fn marginal_value_and_gradient(
    rho: &Image,
    cov: &CovModel,
    gamma_hat: &DMatrix<f64>,
) -> Result<(f64, Image)> {
    check_inputs(rho, cov, gamma_hat)?;
    let gy = cov.measurement_covariance(rho.data());
    let chol = factor(gy.clone())?;
    let value = objective_from_factor(&chol, gamma_hat);
    let grad = gradient_from_factor(rho.data(), cov, &gy, &chol, gamma_hat);
    Ok((value, Image::from_vec(cov.grid, grad)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Sufficient-decrease constant of the backtracking line search.
    pub c1: f64,
    pub max_backtracks: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of the objective falls below this.
    pub f_tol: f64,
    /// Project iterates onto `x >= 0` after every step.
    pub nonnegative: bool,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 200,
            c1: 1e-4,
            max_backtracks: 40,
            grad_tol: 1e-8,
            f_tol: 1e-12,
            nonnegative: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    MaxIters,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iters: usize,
    pub status: LbfgsStatus,
    /// Objective after every accepted step, starting with the initial point.
    pub values: Vec<f64>,
}

fn projected_grad_inf(x: &[f64], g: &[f64], nonneg: bool) -> f64 {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| {
            if nonneg && xi <= 0.0 && gi > 0.0 {
                0.0
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max)
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with a backtracking (Armijo) line search. With
/// `nonnegative` set, trial points are projected onto the nonnegative orthant
/// and variables pinned at zero with an outward direction are frozen for that
/// step.
pub fn lbfgs_minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let project = |x: &mut [f64]| {
        if opts.nonnegative {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite("objective at the initial point"));
    }
    let mut values = vec![fx];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut status = LbfgsStatus::MaxIters;
    let mut iters = 0;

    while iters < opts.max_iters {
        if projected_grad_inf(&x, &g, opts.nonnegative) <= opts.grad_tol {
            status = LbfgsStatus::Converged;
            break;
        }
        // two-loop recursion
        let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dotv(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dotv(&s_hist[i], &dir);
            dir.iter_mut()
                .zip(&y_hist[i])
                .for_each(|(d, y)| *d -= alphas[i] * y);
        }
        if k > 0 {
            let gamma = dotv(&s_hist[k - 1], &y_hist[k - 1]) / dotv(&y_hist[k - 1], &y_hist[k - 1]);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for i in 0..k {
            let rho = 1.0 / dotv(&y_hist[i], &s_hist[i]);
            let beta = rho * dotv(&y_hist[i], &dir);
            dir.iter_mut()
                .zip(&s_hist[i])
                .for_each(|(d, s)| *d += (alphas[i] - beta) * s);
        }
        let freeze = |dir: &mut Vec<f64>, x: &[f64]| {
            if opts.nonnegative {
                for (d, &xi) in dir.iter_mut().zip(x) {
                    if xi <= 0.0 && *d < 0.0 {
                        *d = 0.0;
                    }
                }
            }
        };
        freeze(&mut dir, &x);
        if dotv(&g, &dir) >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v).collect();
            freeze(&mut dir, &x);
        }
        let mut step = if s_hist.is_empty() {
            let l1: f64 = g.iter().map(|v| v.abs()).sum();
            (1.0 / l1).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            project(&mut xn);
            let decrease: f64 = g
                .iter()
                .zip(xn.iter().zip(&x))
                .map(|(gi, (a, b))| gi * (a - b))
                .sum();
            if let Ok((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && fn_ <= fx + opts.c1 * decrease {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            status = LbfgsStatus::LineSearchFailed;
            break;
        };
        iters += 1;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dotv(&s, &yv);
        if sy > 1e-12 * dotv(&s, &s).sqrt() * dotv(&yv, &yv).sqrt() {
            s_hist.push(s);
            y_hist.push(yv);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let rel_drop = (fx - fn_).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        values.push(fx);
        if rel_drop <= opts.f_tol {
            status = LbfgsStatus::Converged;
            break;
        }
    }
    Ok(LbfgsResult {
        x,
        value: fx,
        iters,
        status,
        values,
    })
}

/// Fit `ρ` to the empirical covariance of `y` starting from `rho0`.
pub fn fit_marginal(
    y: &ImageStack,
    cov: &CovModel,
    rho0: &Image,
    opts: &LbfgsOptions,
) -> Result<(Image, LbfgsResult)> {
    let gamma_hat = empirical_covariance(y, cov.grid.len())?;
    let grid = cov.grid;
    let result = lbfgs_minimize(
        |x| {
            let img = Image::from_vec(grid, x.to_vec())?;
            let (v, g) = marginal_value_and_gradient(&img, cov, &gamma_hat)?;
            Ok((v, g.into_vec()))
        },
        rho0.data(),
        opts,
    )?;
    Ok((Image::from_vec(grid, result.x.clone())?, result))
}
