//! Browser bindings for three small demos: a speckle pattern, the group
//! shrinkage curves of the four penalties, and a small joint reconstruction.
//!
//! The plain functions carry the logic and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use speckle_sim::datagen::{
    gen_speckle, make_psf, make_star, simulate, NoiseSpec, SpeckleKind, SpeckleSpec, DEFAULT_NA,
};
use speckle_sim::estimate::{rho_from_mean, snr_power_from_db};
use speckle_sim::pipeline::wiener_baseline;
use speckle_sim::prox::{prox_penalty, GroupedVector, Penalty};
use speckle_sim::solver::{pd_solve, SolverConfig};
use speckle_sim::{Grid, Image, Result};
use wasm_bindgen::prelude::*;

const PITCH: f64 = 0.05;

fn to_unit_f32(img: &Image) -> Vec<f32> {
    let (lo, hi) = (img.min(), img.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    img.data()
        .iter()
        .map(|v| ((v - lo) / span) as f32)
        .collect()
}

/// One `n`×`n` speckle pattern scaled to `[0, 1]`.
pub fn speckle_image(n: usize, na_ill: f64, squared: bool, seed: u32) -> Result<Vec<f32>> {
    let grid = Grid::square(n, PITCH)?;
    let spec = SpeckleSpec {
        kind: if squared {
            SpeckleKind::Squared
        } else {
            SpeckleKind::Standard
        },
        ..SpeckleSpec::standard(1, na_ill, seed as u64)
    };
    Ok(to_unit_f32(&gen_speckle(&spec, &grid)?.frame_image(0)))
}

/// Output magnitude of the `(p, q)` prox applied to a group of norm `r`, for
/// every `r` in `radii`.
pub fn shrink_curve(p: f64, q: f64, lambda: f64, radii: &[f64]) -> Result<Vec<f64>> {
    let penalty = Penalty::from_pq(p, q)?;
    let groups = GroupedVector::new(radii.to_vec(), 1)?;
    Ok(prox_penalty(&groups, lambda, penalty)?
        .into_values()
        .iter()
        .map(|v| v.abs())
        .collect())
}

/// Images and figures from a small reconstruction.
pub struct DemoRun {
    pub n: usize,
    pub truth: Vec<f32>,
    pub raw: Vec<f32>,
    pub wiener: Vec<f32>,
    pub joint: Vec<f32>,
    pub iterations: usize,
    pub gap_ratio: f64,
}

/// Star target, `frames` speckles at 40 dB, `(p, q)` solve for `iters`
/// iterations.
pub fn run_demo(
    n: usize,
    arms: usize,
    frames: usize,
    iters: usize,
    p: f64,
    q: f64,
    seed: u32,
) -> Result<DemoRun> {
    let grid = Grid::square(n, PITCH)?;
    let truth = make_star(&grid, arms)?;
    let psf = make_psf(&grid, DEFAULT_NA)?;
    let speckles = gen_speckle(
        &SpeckleSpec::standard(frames, DEFAULT_NA, seed as u64),
        &grid,
    )?;
    let sim = simulate(
        &truth,
        &speckles,
        &psf,
        &NoiseSpec::gaussian(40.0, seed as u64 + 1),
        None,
    )?;
    let y = &sim.measurements;
    let cfg = SolverConfig {
        penalty: Penalty::from_pq(p, q)?,
        noise_std: sim.noise_std,
        max_iters: iters,
        ..SolverConfig::default()
    };
    let state = pd_solve(y, &psf, &cfg, None)?;
    let wiener = wiener_baseline(y, &psf, snr_power_from_db(40.0), 1.0)?;
    Ok(DemoRun {
        n,
        truth: to_unit_f32(&truth),
        raw: to_unit_f32(&y.frame_mean()),
        wiener: to_unit_f32(&wiener),
        joint: to_unit_f32(&rho_from_mean(&state.q, 1.0)?),
        iterations: state.iter,
        gap_ratio: state.feasibility_gap / state.xi,
    })
}

fn js(e: speckle_sim::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = specklePattern)]
pub fn speckle_pattern_js(
    n: usize,
    na_ill: f64,
    squared: bool,
    seed: u32,
) -> std::result::Result<Vec<f32>, JsError> {
    speckle_image(n, na_ill, squared, seed).map_err(js)
}

#[wasm_bindgen(js_name = shrinkCurve)]
pub fn shrink_curve_js(
    p: f64,
    q: f64,
    lambda: f64,
    radii: Vec<f64>,
) -> std::result::Result<Vec<f64>, JsError> {
    shrink_curve(p, q, lambda, &radii).map_err(js)
}

#[wasm_bindgen]
pub struct Reconstruction(DemoRun);

#[wasm_bindgen]
impl Reconstruction {
    #[wasm_bindgen(getter)]
    pub fn n(&self) -> usize {
        self.0.n
    }
    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f32> {
        self.0.truth.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn raw(&self) -> Vec<f32> {
        self.0.raw.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn wiener(&self) -> Vec<f32> {
        self.0.wiener.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn joint(&self) -> Vec<f32> {
        self.0.joint.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.0.iterations
    }
    #[wasm_bindgen(getter, js_name = gapRatio)]
    pub fn gap_ratio(&self) -> f64 {
        self.0.gap_ratio
    }
}

#[wasm_bindgen]
pub fn reconstruct(
    n: usize,
    arms: usize,
    frames: usize,
    iters: usize,
    p: f64,
    q: f64,
    seed: u32,
) -> std::result::Result<Reconstruction, JsError> {
    run_demo(n, arms, frames, iters, p, q, seed)
        .map(Reconstruction)
        .map_err(js)
}
