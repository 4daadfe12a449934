//! Linear operators of the imaging model and their adjoints.
//!
//! All operators assume periodic boundaries. `H` is the PSF convolution
//! (applied through the OTF), `C` the forward finite-difference gradient,
//! `A` the frame average scaled by `1/(M i0)` and `D = C A`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fft::Fft2;
use crate::grid::{dot, norm2};
use crate::{par, Error, Grid, Image, ImageStack, Result};

/// Point spread function and its transfer function on a grid.
///
/// `psf` keeps the physical samples `h` (so `sum(psf) * pitch^2` approximates
/// the unit integral of the continuous PSF). The operator `H` uses `kernel`,
/// the same samples rescaled to unit sum, whose spectrum `otf` is one at
/// zero frequency and therefore bounded by one in modulus.
#[derive(Clone, Debug)]
pub struct PsfModel {
    na: f64,
    psf: Image,
    kernel: Image,
    otf: Vec<Complex64>,
    fft: Fft2,
}

impl PsfModel {
    /// Build from PSF samples laid out with the peak at index `(0, 0)`.
    pub fn from_samples(na: f64, psf: Image) -> Result<Self> {
        let sum = psf.sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::param(
                "psf",
                "samples must have a positive finite sum",
            ));
        }
        let grid = *psf.grid();
        let kernel = psf.scaled(1.0 / sum);
        let fft = Fft2::new(&grid);
        let otf = fft.forward_real(kernel.data());
        Ok(PsfModel {
            na,
            psf,
            kernel,
            otf,
            fft,
        })
    }

    /// `H = identity`: a unit impulse at the origin, flat OTF.
    pub fn identity(grid: Grid) -> Self {
        let mut delta = Image::zeros(grid);
        delta.data_mut()[0] = 1.0;
        PsfModel::from_samples(f64::INFINITY, delta).expect("delta has unit sum")
    }

    pub fn grid(&self) -> &Grid {
        self.psf.grid()
    }

    pub fn na(&self) -> f64 {
        self.na
    }

    /// Physical PSF samples.
    pub fn psf(&self) -> &Image {
        &self.psf
    }

    /// Unit-sum convolution kernel actually applied by `H`.
    pub fn kernel(&self) -> &Image {
        &self.kernel
    }

    pub fn otf(&self) -> &[Complex64] {
        &self.otf
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    pub fn max_abs_otf(&self) -> f64 {
        self.otf.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// OTF cutoff frequency `2 NA` in cycles per wavelength.
    pub fn cutoff(&self) -> f64 {
        2.0 * self.na
    }
}

/// `H x`.
pub fn convolve(psf: &PsfModel, x: &Image) -> Result<Image> {
    psf.grid().check_same(x.grid())?;
    let out = psf.fft.filter_real(x.data(), &psf.otf, false);
    Ok(Image::from_vec(*x.grid(), out).expect("convolution preserves shape"))
}

/// `H^* x`, using the conjugate spectrum.
pub fn adjoint_convolve(psf: &PsfModel, x: &Image) -> Result<Image> {
    psf.grid().check_same(x.grid())?;
    let out = psf.fft.filter_real(x.data(), &psf.otf, true);
    Ok(Image::from_vec(*x.grid(), out).expect("convolution preserves shape"))
}

/// Frame-wise `H` (or `H^*`) into a preallocated buffer. Frames are
/// processed in pairs through one complex transform.
pub fn stack_convolve_into(psf: &PsfModel, input: &[f64], out: &mut [f64], adjoint: bool) {
    let n = psf.grid().len();
    assert_eq!(input.len(), out.len());
    assert_eq!(input.len() % n, 0);
    par::chunks_mut_with(out, input, 2 * n, |_, o, x| {
        if x.len() == 2 * n {
            let (oa, ob) = o.split_at_mut(n);
            psf.fft
                .filter_pair(&x[..n], Some(&x[n..]), &psf.otf, adjoint, oa, Some(ob));
        } else {
            psf.fft.filter_pair(x, None, &psf.otf, adjoint, o, None);
        }
    });
}

/// `ℋ Q = (1_M ⊗ H) Q`.
pub fn stack_convolve(psf: &PsfModel, q: &ImageStack) -> Result<ImageStack> {
    psf.grid().check_same(q.grid())?;
    let mut out = vec![0.0; q.data().len()];
    stack_convolve_into(psf, q.data(), &mut out, false);
    ImageStack::from_vec(*q.grid(), q.frames(), out)
}

/// `ℋ^* Q`.
pub fn stack_adjoint_convolve(psf: &PsfModel, q: &ImageStack) -> Result<ImageStack> {
    psf.grid().check_same(q.grid())?;
    let mut out = vec![0.0; q.data().len()];
    stack_convolve_into(psf, q.data(), &mut out, true);
    ImageStack::from_vec(*q.grid(), q.frames(), out)
}

fn check_i0(i0: f64) -> Result<()> {
    if i0 > 0.0 && i0.is_finite() {
        Ok(())
    } else {
        Err(Error::param(
            "i0",
            format!("mean intensity must be positive, got {i0}"),
        ))
    }
}

/// `A q = (1 / (M i0)) Σ_m q_m`.
pub fn op_a(q: &ImageStack, i0: f64) -> Result<Image> {
    check_i0(i0)?;
    let mean = q.frame_mean();
    Ok(mean.scaled(1.0 / i0))
}

/// `A^* x`: `M` copies of `x / (M i0)`.
pub fn op_a_adjoint(x: &Image, frames: usize, i0: f64) -> Result<ImageStack> {
    check_i0(i0)?;
    if frames == 0 {
        return Err(Error::param("frames", "need at least one frame"));
    }
    Ok(ImageStack::replicate(
        &x.scaled(1.0 / (frames as f64 * i0)),
        frames,
    ))
}

/// Per-pixel discrete gradient. Stored interleaved: pixel `n` owns
/// `data[2n]` (difference along rows) and `data[2n + 1]` (along columns), so
/// each TV group of size two is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    grid: Grid,
    data: Vec<f64>,
}

impl GradientField {
    pub fn zeros(grid: Grid) -> Self {
        GradientField {
            grid,
            data: vec![0.0; 2 * grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * grid.len() {
            return Err(Error::ShapeMismatch {
                expected: 2 * grid.len(),
                found: data.len(),
            });
        }
        Ok(GradientField { grid, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        dot(&self.data, &other.data)
    }

    /// Isotropic TV: `Σ_n ||g_n||_2`.
    pub fn group_l21(&self) -> f64 {
        self.data.chunks_exact(2).map(|g| g[0].hypot(g[1])).sum()
    }
}

pub(crate) fn gradient_into(grid: &Grid, x: &[f64], out: &mut [f64]) {
    let (n1, n2) = (grid.n1(), grid.n2());
    for i in 0..n1 {
        let ip = (i + 1) % n1;
        for j in 0..n2 {
            let jp = (j + 1) % n2;
            let v = x[i * n2 + j];
            let n = i * n2 + j;
            out[2 * n] = x[ip * n2 + j] - v;
            out[2 * n + 1] = x[i * n2 + jp] - v;
        }
    }
}

pub(crate) fn gradient_adjoint_into(grid: &Grid, g: &[f64], out: &mut [f64]) {
    let (n1, n2) = (grid.n1(), grid.n2());
    for i in 0..n1 {
        let im = (i + n1 - 1) % n1;
        for j in 0..n2 {
            let jm = (j + n2 - 1) % n2;
            let n = i * n2 + j;
            out[n] = g[2 * (im * n2 + j)] - g[2 * n] + g[2 * (i * n2 + jm) + 1] - g[2 * n + 1];
        }
    }
}

/// `C x`.
pub fn op_c(x: &Image) -> GradientField {
    let mut g = GradientField::zeros(*x.grid());
    gradient_into(x.grid(), x.data(), &mut g.data);
    g
}

/// `C^* g`, the negative divergence.
pub fn op_c_adjoint(g: &GradientField) -> Image {
    let mut out = Image::zeros(g.grid);
    gradient_adjoint_into(&g.grid, &g.data, out.data_mut());
    out
}

/// `D q = C A q`.
pub fn op_d(q: &ImageStack, i0: f64) -> Result<GradientField> {
    Ok(op_c(&op_a(q, i0)?))
}

/// `D^* g = A^* C^* g`.
pub fn op_d_adjoint(g: &GradientField, frames: usize, i0: f64) -> Result<ImageStack> {
    op_a_adjoint(&op_c_adjoint(g), frames, i0)
}

/// Upper bound on `||1 + D^*D + H^*H||_op` for `M` frames and mean
/// intensity `i0`: `2 + 8 ||A||_op^2` with `||A||_op^2 = 1 / (M i0^2)`.
pub fn step_size_bound(frames: usize, i0: f64) -> Result<f64> {
    check_i0(i0)?;
    if frames == 0 {
        return Err(Error::param("frames", "need at least one frame"));
    }
    Ok(2.0 + 8.0 / (frames as f64 * i0 * i0))
}

/// Largest eigenvalue of a symmetric positive semidefinite operator by power
/// iteration from a seeded random start.
pub fn power_iteration<F>(dim: usize, iters: usize, seed: u64, mut apply: F) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut y = vec![0.0; dim];
    let mut lambda = 0.0;
    for _ in 0..iters {
        let nx = norm2(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        apply(&x, &mut y);
        lambda = dot(&x, &y);
        std::mem::swap(&mut x, &mut y);
    }
    lambda
}
