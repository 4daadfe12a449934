//! Super-resolved fluorescence reconstruction from stacks of low-resolution
//! images acquired under unknown speckle illumination.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: grids, images and image stacks.
//! - [`ops`]: the linear operators (PSF convolution, finite differences, frame
//!   averaging) and their adjoints.
//! - [`datagen`]: synthetic targets, Airy PSF, speckle illumination and noise.
//! - [`prox`]: proximal operators of the group `l_{p,q}` penalties, the TV
//!   dual and the data-fidelity ball.
//! - [`solver`]: the primal-dual splitting solver for the constrained joint
//!   reconstruction.
//! - [`estimate`]: object estimators, Wiener baseline and the radially
//!   averaged spectral error metric.
//! - [`marginal`]: the covariance-matching estimator with its quasi-Newton
//!   driver, usable at small grid sizes.
//! - [`io`], [`config`], [`pipeline`]: file formats and the batch experiment
//!   driver used by the command line front-end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datagen;
pub mod error;
pub mod estimate;
pub mod fft;
pub mod grid;
pub mod io;
pub mod marginal;
pub mod ops;
pub mod pipeline;
pub mod prox;
pub mod solver;

mod par;

pub use error::{Error, Result};
pub use grid::{Grid, Image, ImageStack};
pub use ops::PsfModel;
