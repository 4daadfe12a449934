//! Two-dimensional DFT on a [`Grid`] built from 1-D `rustfft` plans.
//!
//! The forward transform is unnormalised; the inverse carries the `1/N`
//! factor so `inverse(forward(x)) == x`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::Grid;

#[derive(Clone)]
pub struct Fft2 {
    n1: usize,
    n2: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.n1, self.n2)
    }
}

impl Fft2 {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n1: grid.n1(),
            n2: grid.n2(),
            row_fwd: planner.plan_fft_forward(grid.n2()),
            row_inv: planner.plan_fft_inverse(grid.n2()),
            col_fwd: planner.plan_fft_forward(grid.n1()),
            col_inv: planner.plan_fft_inverse(grid.n1()),
        }
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_inv, &self.col_inv);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }

    fn transform(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(buf.len(), self.len());
        with_workspace(self.len(), self.scratch_len(), |t, scratch| {
            row.process_with_scratch(buf, scratch);
            transpose(buf, t, self.n1, self.n2);
            col.process_with_scratch(t, scratch);
            transpose(t, buf, self.n2, self.n1);
        });
    }

    fn scratch_len(&self) -> usize {
        [&self.row_fwd, &self.row_inv, &self.col_fwd, &self.col_inv]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0)
    }

    /// Forward transform of a real image.
    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Multiply the spectrum of real image `x` by `mult` and return the real
    /// part of the inverse transform.
    pub fn filter_real(&self, x: &[f64], mult: &[Complex64], conjugate: bool) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.filter_pair(x, None, mult, conjugate, &mut out, None);
        out
    }

    /// Filter one or two real images with a single complex transform by
    /// packing them as real and imaginary parts. Valid because `mult` is the
    /// spectrum of a real kernel, so the filter maps real inputs to real
    /// outputs and commutes with the packing.
    pub fn filter_pair(
        &self,
        a: &[f64],
        b: Option<&[f64]>,
        mult: &[Complex64],
        conjugate: bool,
        out_a: &mut [f64],
        out_b: Option<&mut [f64]>,
    ) {
        let (n1, n2) = (self.n1, self.n2);
        let scale = 1.0 / self.len() as f64;
        with_workspace(self.len(), self.scratch_len(), |t, scratch| {
            let mut buf = std::mem::take(t);
            match b {
                Some(b) => {
                    for ((v, &x), &y) in buf.iter_mut().zip(a).zip(b) {
                        *v = Complex64::new(x, y);
                    }
                }
                None => {
                    for (v, &x) in buf.iter_mut().zip(a) {
                        *v = Complex64::new(x, 0.0);
                    }
                }
            }
            // The spectrum is multiplied in transposed layout, which saves
            // the two transposes between the forward and inverse passes.
            self.row_fwd.process_with_scratch(&mut buf, scratch);
            let mut tr = vec_from_pool(n1 * n2);
            transpose(&buf, &mut tr, n1, n2);
            self.col_fwd.process_with_scratch(&mut tr, scratch);
            for c in 0..n2 {
                let col = &mut tr[c * n1..(c + 1) * n1];
                for (r, v) in col.iter_mut().enumerate() {
                    let m = mult[r * n2 + c];
                    *v *= if conjugate { m.conj() } else { m } * scale;
                }
            }
            self.col_inv.process_with_scratch(&mut tr, scratch);
            transpose(&tr, &mut buf, n2, n1);
            return_to_pool(tr);
            self.row_inv.process_with_scratch(&mut buf, scratch);
            for (o, v) in out_a.iter_mut().zip(buf.iter()) {
                *o = v.re;
            }
            if let Some(out_b) = out_b {
                for (o, v) in out_b.iter_mut().zip(buf.iter()) {
                    *o = v.im;
                }
            }
            *t = buf;
        });
    }
}

thread_local! {
    static WORKSPACE: std::cell::RefCell<(Vec<Complex64>, Vec<Complex64>)> =
        const { std::cell::RefCell::new((Vec::new(), Vec::new())) };
    static POOL: std::cell::RefCell<Vec<Complex64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Per-thread buffers: a length-`len` work array and an FFT scratch array.
fn with_workspace<R>(
    len: usize,
    scratch_len: usize,
    f: impl FnOnce(&mut Vec<Complex64>, &mut [Complex64]) -> R,
) -> R {
    WORKSPACE.with(|cell| {
        let mut ws = cell.borrow_mut();
        let (t, scratch) = &mut *ws;
        t.resize(len, Complex64::default());
        scratch.resize(scratch_len, Complex64::default());
        f(t, scratch)
    })
}

fn vec_from_pool(len: usize) -> Vec<Complex64> {
    let mut v = POOL.with(|p| std::mem::take(&mut *p.borrow_mut()));
    v.resize(len, Complex64::default());
    v
}

fn return_to_pool(v: Vec<Complex64>) {
    POOL.with(|p| *p.borrow_mut() = v);
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const BLOCK: usize = 16;
    for rb in (0..rows).step_by(BLOCK) {
        for cb in (0..cols).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(rows) {
                for c in cb..(cb + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}
