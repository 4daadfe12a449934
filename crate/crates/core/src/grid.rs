//! Sampling grids, images and frame stacks.
//!
//! Images are stored row-major (`index = row * n2 + col`). A stack stores its
//! frames contiguously, frame `m` occupying `data[m * N..(m + 1) * N]`.

use std::fmt;

use crate::{Error, Result};

/// Discretisation of the field of view. `pitch` is the pixel spacing in
/// units of the wavelength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    n1: usize,
    n2: usize,
    pitch: f64,
}

impl Grid {
    pub fn new(n1: usize, n2: usize, pitch: f64) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::param(
                "grid",
                format!("need n1, n2 >= 2, got {n1}x{n2}"),
            ));
        }
        if !(pitch > 0.0) || !pitch.is_finite() {
            return Err(Error::param(
                "pitch",
                format!("must be positive, got {pitch}"),
            ));
        }
        Ok(Grid { n1, n2, pitch })
    }

    /// Square grid, the common case in experiments.
    pub fn square(n: usize, pitch: f64) -> Result<Self> {
        Grid::new(n, n, pitch)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Pixel count N.
    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Whether the grid samples finely enough to observe a two-fold
    /// resolution gain for the given objective NA.
    pub fn supports_super_resolution(&self, na: f64) -> bool {
        self.pitch <= 1.0 / (8.0 * na)
    }

    /// Signed DFT index for position `k` along an axis of length `n`.
    pub fn signed_index(k: usize, n: usize) -> isize {
        if k <= n / 2 {
            k as isize
        } else {
            k as isize - n as isize
        }
    }

    /// Spatial frequency (cycles per wavelength) of DFT bin `(k1, k2)`.
    pub fn frequency(&self, k1: usize, k2: usize) -> (f64, f64) {
        let f1 = Grid::signed_index(k1, self.n1) as f64 / (self.n1 as f64 * self.pitch);
        let f2 = Grid::signed_index(k2, self.n2) as f64 / (self.n2 as f64 * self.pitch);
        (f1, f2)
    }

    /// Radial frequency of DFT bin `(k1, k2)` in cycles per wavelength.
    pub fn radial_frequency(&self, k1: usize, k2: usize) -> f64 {
        let (f1, f2) = self.frequency(k1, k2);
        f1.hypot(f2)
    }

    /// Periodic (minimum image) displacement in wavelengths between pixel
    /// index offsets `(d1, d2)`.
    pub fn periodic_offset(&self, d1: usize, d2: usize) -> (f64, f64) {
        let a = Grid::signed_index(d1 % self.n1, self.n1) as f64 * self.pitch;
        let b = Grid::signed_index(d2 % self.n2, self.n2) as f64 * self.pitch;
        (a, b)
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.to_string(),
                found: other.to_string(),
            })
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} @ {} lambda", self.n1, self.n2, self.pitch)
    }
}

/// Real scalar field sampled on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    grid: Grid,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(grid: Grid) -> Self {
        Image {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Image {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Image { grid, data })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for i in 0..grid.n1() {
            for j in 0..grid.n2() {
                data.push(f(i, j));
            }
        }
        Image { grid, data }
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.grid.n2() + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn dot(&self, other: &Image) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn scaled(&self, s: f64) -> Image {
        Image {
            grid: self.grid,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Copy scaled so the maximum is one; an all-nonpositive image is
    /// returned unchanged.
    pub fn max_normalized(&self) -> Image {
        let m = self.max();
        if m > 0.0 {
            self.scaled(1.0 / m)
        } else {
            self.clone()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Stack of `M` frames sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStack {
    grid: Grid,
    frames: usize,
    data: Vec<f64>,
}

impl ImageStack {
    pub fn zeros(grid: Grid, frames: usize) -> Self {
        ImageStack {
            grid,
            frames,
            data: vec![0.0; grid.len() * frames],
        }
    }

    pub fn from_vec(grid: Grid, frames: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::param("frames", "stack must hold at least one frame"));
        }
        if data.len() != grid.len() * frames {
            return Err(Error::ShapeMismatch {
                expected: grid.len() * frames,
                found: data.len(),
            });
        }
        Ok(ImageStack { grid, frames, data })
    }

    pub fn from_frames(frames: &[Image]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::param("frames", "stack must hold at least one frame"))?;
        let grid = *first.grid();
        let mut data = Vec::with_capacity(grid.len() * frames.len());
        for f in frames {
            grid.check_same(f.grid())?;
            data.extend_from_slice(f.data());
        }
        Ok(ImageStack {
            grid,
            frames: frames.len(),
            data,
        })
    }

    /// `M` copies of the same image.
    pub fn replicate(image: &Image, frames: usize) -> Self {
        let mut data = Vec::with_capacity(image.data().len() * frames);
        for _ in 0..frames {
            data.extend_from_slice(image.data());
        }
        ImageStack {
            grid: *image.grid(),
            frames,
            data,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, m: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[m * n..(m + 1) * n]
    }

    pub fn frame_mut(&mut self, m: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data[m * n..(m + 1) * n]
    }

    pub fn frame_image(&self, m: usize) -> Image {
        Image {
            grid: self.grid,
            data: self.frame(m).to_vec(),
        }
    }

    pub fn iter_frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.grid.len())
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn dot(&self, other: &ImageStack) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Pixel-wise mean over frames.
    pub fn frame_mean(&self) -> Image {
        let n = self.grid.len();
        let mut acc = vec![0.0; n];
        for f in self.iter_frames() {
            for (a, v) in acc.iter_mut().zip(f) {
                *a += v;
            }
        }
        let inv = 1.0 / self.frames as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Image {
            grid: self.grid,
            data: acc,
        }
    }

    pub fn scaled(&self, s: f64) -> ImageStack {
        ImageStack {
            grid: self.grid,
            frames: self.frames,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Sequential dot product; the fixed summation order keeps results
/// bit-reproducible.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_degenerate_shapes() {
        assert!(Grid::new(1, 4, 0.05).is_err());
        assert!(Grid::new(4, 4, 0.0).is_err());
        assert!(Grid::new(4, 4, -1.0).is_err());
        let g = Grid::new(4, 6, 0.05).unwrap();
        assert_eq!(g.len(), 24);
    }

    #[test]
    fn super_resolution_sampling_check() {
        let g = Grid::square(64, 0.05).unwrap();
        assert!(g.supports_super_resolution(1.49));
        let coarse = Grid::square(64, 0.2).unwrap();
        assert!(!coarse.supports_super_resolution(1.49));
    }

    #[test]
    fn signed_indices_wrap() {
        assert_eq!(Grid::signed_index(0, 8), 0);
        assert_eq!(Grid::signed_index(4, 8), 4);
        assert_eq!(Grid::signed_index(5, 8), -3);
        assert_eq!(Grid::signed_index(7, 8), -1);
    }

    #[test]
    fn stack_frame_mean() {
        let g = Grid::square(2, 1.0).unwrap();
        let a = Image::from_vec(g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Image::from_vec(g, vec![3.0, 2.0, 1.0, 0.0]).unwrap();
        let s = ImageStack::from_frames(&[a, b]).unwrap();
        assert_eq!(s.frame_mean().data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn image_rejects_non_finite() {
        let g = Grid::square(2, 1.0).unwrap();
        assert!(Image::from_vec(g, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(Image::from_vec(g, vec![0.0; 3]).is_err());
    }
}
