//! End-to-end commands: simulate, reconstruct, evaluate, marginal.
//!
//! Each command writes into its own directory and finishes with a
//! `manifest.txt` (config echo, seeds, artifact hashes).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, Target};
use crate::datagen::{gen_speckle, make_psf, make_star, scale_background, simulate, Simulation};
use crate::estimate::{
    pearson, raps_error, rho_from_mean, rho_from_std, snr_power_from_db, wiener_deconvolve,
    RapsCurve,
};
use crate::io::{self, Metadata, RunManifest};
use crate::marginal::{fit_marginal, CovModel, LbfgsOptions};
use crate::ops::PsfModel;
use crate::solver::{pd_solve, IterRecord, PdState, SolverConfig, Xi};
use crate::{Error, Image, ImageStack, Result};

pub const STACK_DIR: &str = "y";
pub const LOG_HEADER: &str = "iter,sparsity_term,tv_term,feasibility_gap";
const DEFAULT_WIENER_SNR: f64 = 1e3;

/// Ground-truth density from the config target.
pub fn build_truth(cfg: &ExperimentConfig) -> Result<Image> {
    match &cfg.target {
        Target::Star { arms } => make_star(&cfg.grid, *arms),
        Target::File(p) => {
            let img = io::read_image(p)?;
            cfg.grid.check_same(img.grid())?;
            Ok(img)
        }
    }
}

pub fn build_psf(cfg: &ExperimentConfig) -> Result<PsfModel> {
    make_psf(&cfg.grid, cfg.psf_na)
}

/// In-memory simulation: truth, measurements and the scaled background.
pub struct SimulatedRun {
    pub truth: Image,
    pub psf: PsfModel,
    pub sim: Simulation,
    pub background: Option<Image>,
}

/// Run the simulation described by `cfg`, with an optional background image
/// supplied in memory (it overrides `background.file`).
pub fn run_simulation(cfg: &ExperimentConfig, background: Option<&Image>) -> Result<SimulatedRun> {
    let truth = build_truth(cfg)?;
    let psf = build_psf(cfg)?;
    let speckles = gen_speckle(&cfg.speckle, &cfg.grid)?;
    let raw_bg = match (background, &cfg.background_file) {
        (Some(b), _) => Some(b.clone()),
        (None, Some(p)) => Some(io::read_image(p)?),
        (None, None) => None,
    };
    let background = match raw_bg {
        Some(b) => {
            cfg.grid.check_same(b.grid())?;
            // signal mean of the blurred, modulated object
            let signal_mean = truth.mean() * cfg.speckle.i0;
            Some(scale_background(&b, signal_mean, cfg.background_fraction)?)
        }
        None => None,
    };
    let sim = simulate(&truth, &speckles, &psf, &cfg.noise, background.as_ref())?;
    Ok(SimulatedRun {
        truth,
        psf,
        sim,
        background,
    })
}

fn f64_text(v: f64) -> String {
    format!("{v:?}")
}

/// Write the measurement stack, truth, PSF, background and metadata.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, overwrite: bool) -> Result<PathBuf> {
    io::prepare_output_dir(out, overwrite)?;
    let run = run_simulation(cfg, None)?;
    let mut manifest = RunManifest::new("simulate", cfg.to_text());
    manifest.seeds.push(("speckle".into(), cfg.speckle.seed));
    manifest.seeds.push(("noise".into(), cfg.noise.seed));

    let mut extra = Metadata::new();
    if let Some(nu) = run.sim.noise_std {
        extra.insert("nu".into(), f64_text(nu));
    }
    extra.insert("psf_na".into(), f64_text(cfg.psf_na));
    extra.insert("na_ill".into(), f64_text(cfg.speckle.na_ill));
    extra.insert("i0".into(), f64_text(cfg.speckle.i0));
    extra.insert("speckle_kind".into(), cfg.speckle.kind.to_string());
    extra.insert("speckle_seed".into(), cfg.speckle.seed.to_string());
    extra.insert("noise_seed".into(), cfg.noise.seed.to_string());
    if let Some(db) = cfg.noise.gaussian_snr_db {
        extra.insert("snr_db".into(), f64_text(db));
    }
    if let Some(ph) = cfg.noise.photons_per_pixel {
        extra.insert("photons".into(), f64_text(ph));
    }
    let stack_dir = out.join(STACK_DIR);
    manifest.artifacts.extend(io::write_stack(
        &stack_dir,
        &run.sim.measurements,
        "measurements",
        &extra,
    )?);
    manifest.artifacts.push(stack_dir.join(io::STACK_MANIFEST));

    let mut add_image = |name: &str, img: &Image, role: &str| -> Result<PathBuf> {
        let raw = io::write_image(&out.join(name), img, role)?;
        manifest.artifacts.push(raw.clone());
        manifest.artifacts.push(io::sidecar_path(&raw));
        Ok(raw)
    };
    add_image("truth", &run.truth, "truth")?;
    add_image("psf", run.psf.psf(), "psf")?;
    if let Some(b) = &run.background {
        add_image("background", b, "background")?;
    }

    let mut meta = extra.clone();
    meta.insert("frames".into(), cfg.speckle.frames.to_string());
    meta.insert("n1".into(), cfg.grid.n1().to_string());
    meta.insert("n2".into(), cfg.grid.n2().to_string());
    meta.insert("pitch".into(), f64_text(cfg.grid.pitch()));
    let meta_path = out.join("metadata.txt");
    io::write_text(&meta_path, &io::format_metadata(&meta))?;
    manifest.artifacts.push(meta_path);
    manifest.write(out)?;
    Ok(stack_dir)
}

/// Estimates produced from one solver run.
pub struct Reconstruction {
    pub mean: Option<Image>,
    pub std: Option<Image>,
    pub state: PdState,
}

/// Solve for `Q` and apply the requested estimators.
pub fn reconstruct(
    y: &ImageStack,
    psf: &PsfModel,
    solver: &SolverConfig,
    want_mean: bool,
    want_std: bool,
    callback: Option<&mut dyn FnMut(&IterRecord)>,
) -> Result<Reconstruction> {
    let state = pd_solve(y, psf, solver, callback)?;
    let mean = if want_mean {
        Some(rho_from_mean(&state.q, solver.i0)?)
    } else {
        None
    };
    let std = if want_std && y.frames() >= 2 {
        Some(rho_from_std(&state.q)?)
    } else {
        None
    };
    Ok(Reconstruction { mean, std, state })
}

/// Wiener deconvolution of the frame average, used as the widefield baseline.
pub fn wiener_baseline(y: &ImageStack, psf: &PsfModel, snr_power: f64, i0: f64) -> Result<Image> {
    Ok(wiener_deconvolve(&y.frame_mean(), psf, snr_power)?.scaled(1.0 / i0))
}

/// Wiener SNR: explicit setting, else from the noise SNR, else a default.
pub fn wiener_snr(cfg: &ExperimentConfig, meta: Option<&Metadata>) -> f64 {
    cfg.wiener_snr
        .or_else(|| {
            meta.and_then(|m| m.get("snr_db"))
                .and_then(|v| v.parse().ok())
                .map(snr_power_from_db)
        })
        .or(cfg.noise.gaussian_snr_db.map(snr_power_from_db))
        .unwrap_or(DEFAULT_WIENER_SNR)
}

/// Solver log as CSV, one row every `log_every` iterations plus the last.
pub fn format_log(state: &PdState, xi_real: Option<f64>, log_every: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# xi = {:?}", state.xi);
    if let Some(x) = xi_real {
        let _ = writeln!(s, "# xi_real = {x:?}");
    }
    let _ = writeln!(
        s,
        "# stop = {:?} after {} iterations, returned iterate {}",
        state.stop, state.iter, state.returned_iter
    );
    let _ = writeln!(s, "{LOG_HEADER}");
    let every = log_every.max(1);
    let n = state.history.len();
    for (k, rec) in state.history.iter().enumerate() {
        if rec.iter % every == 0 || k + 1 == n {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?}",
                rec.iter, rec.sparsity_term, rec.tv_term, rec.feasibility_gap
            );
        }
    }
    s
}

fn nu_from_meta(meta: &Metadata) -> Option<f64> {
    meta.get("nu").and_then(|v| v.parse().ok())
}

fn write_estimates(dir: &Path, rec: &Reconstruction, manifest: &mut RunManifest) -> Result<()> {
    if let Some(m) = &rec.mean {
        let raw = io::write_image(&dir.join("rho_mean"), m, "estimate_mean")?;
        manifest.artifacts.extend([io::sidecar_path(&raw), raw]);
    }
    if let Some(s) = &rec.std {
        let raw = io::write_image(&dir.join("rho_std"), s, "estimate_std")?;
        manifest.artifacts.extend([io::sidecar_path(&raw), raw]);
    }
    Ok(())
}

/// Reconstruct from the stack in `y_dir`. With `solver.xi_factors` set, one
/// subdirectory `xi_<factor>` is written per factor of the resolved `ξ`.
pub fn cmd_reconstruct(
    cfg: &ExperimentConfig,
    y_dir: &Path,
    out: &Path,
    overwrite: bool,
) -> Result<()> {
    let (y, meta) = io::read_stack(y_dir)?;
    io::prepare_output_dir(out, overwrite)?;
    let mut run_cfg = cfg.clone();
    run_cfg.grid = *y.grid();
    let psf = make_psf(y.grid(), cfg.psf_na)?;
    let missing = || Error::Format {
        path: y_dir.join(io::STACK_MANIFEST),
        message: "xi = auto needs `nu` in the stack metadata or solver.nu in the config".into(),
    };
    let nu = if cfg.solver.nu.is_some() {
        None
    } else if meta.contains_key("photons") {
        // Poisson noise: Gaussian-equivalent level from the data
        Some(crate::datagen::estimate_noise_std(&y, &psf).map_err(|_| missing())?)
    } else {
        nu_from_meta(&meta)
    };
    let base = run_cfg.solver_config(nu)?;
    if base.xi == Xi::Auto && base.noise_std.is_none() {
        return Err(missing());
    }
    let base = run_cfg.solver_config(nu)?;
    let frames = y.frames();
    let pixels = y.grid().len();
    let xi_real = base.resolve_xi(frames, pixels)?;
    let mut manifest = RunManifest::new("reconstruct", cfg.to_text());
    for key in ["speckle_seed", "noise_seed"] {
        if let Some(s) = meta.get(key).and_then(|v| v.parse().ok()) {
            manifest
                .seeds
                .push((key.trim_end_matches("_seed").into(), s));
        }
    }
    manifest.note("input", y_dir.display());
    manifest.note("xi_real", f64_text(xi_real));

    let wiener = wiener_baseline(&y, &psf, wiener_snr(cfg, Some(&meta)), base.i0)?;
    let raw = io::write_image(&out.join("wiener"), &wiener, "wiener")?;
    manifest.artifacts.extend([io::sidecar_path(&raw), raw]);

    let runs: Vec<(Option<f64>, PathBuf)> = if cfg.solver.xi_factors.is_empty() {
        vec![(None, out.to_path_buf())]
    } else {
        cfg.solver
            .xi_factors
            .iter()
            .map(|f| (Some(*f), out.join(format!("xi_{f}"))))
            .collect()
    };
    for (factor, dir) in runs {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut solver = base.clone();
        if let Some(f) = factor {
            solver.xi = Xi::Value(f * xi_real);
        }
        let rec = reconstruct(
            &y,
            &psf,
            &solver,
            cfg.estimator.wants_mean(),
            cfg.estimator.wants_std(),
            None,
        )?;
        let log = dir.join("solver_log.csv");
        io::write_text(
            &log,
            &format_log(&rec.state, Some(xi_real), solver.log_every),
        )?;
        manifest.artifacts.push(log);
        write_estimates(&dir, &rec, &mut manifest)?;
        for w in &rec.state.warnings {
            manifest.note("warning", w);
        }
    }
    manifest.write(out)?;
    Ok(())
}

/// Comparison of an estimate against the truth.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub raps: RapsCurve,
    pub pearson: f64,
    pub background_correlation: Option<f64>,
}

pub fn evaluate(
    rho_hat: &Image,
    rho_star: &Image,
    background: Option<&Image>,
) -> Result<Evaluation> {
    let raps = raps_error(rho_hat, rho_star)?;
    let pearson_r = pearson(rho_hat, rho_star)?;
    let background_correlation = background.map(|b| pearson(rho_hat, b)).transpose()?;
    Ok(Evaluation {
        raps,
        pearson: pearson_r,
        background_correlation,
    })
}

impl Evaluation {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pearson = {:?}", self.pearson);
        let _ = writeln!(s, "raps_mean = {:?}", self.raps.mean_value());
        let _ = writeln!(s, "raps_bins = {}", self.raps.len());
        if let Some(b) = self.background_correlation {
            let _ = writeln!(s, "background_correlation = {b:?}");
        }
        s
    }
}

/// Write `raps.csv` and `summary.txt` for one estimate.
pub fn cmd_evaluate(
    rho_hat: &Path,
    rho_star: &Path,
    background: Option<&Path>,
    out: &Path,
    overwrite: bool,
) -> Result<Evaluation> {
    let hat = io::read_image(rho_hat)?;
    let star = io::read_image(rho_star)?;
    let bg = background.map(io::read_image).transpose()?;
    let eval = evaluate(&hat, &star, bg.as_ref())?;
    io::prepare_output_dir(out, overwrite)?;
    let csv = out.join("raps.csv");
    io::write_text(&csv, &eval.raps.to_csv())?;
    let summary = out.join("summary.txt");
    io::write_text(&summary, &eval.summary())?;
    let mut manifest = RunManifest::new("evaluate", String::new());
    manifest.note("estimate", rho_hat.display());
    manifest.note("truth", rho_star.display());
    manifest.artifacts.extend([csv, summary]);
    manifest.write(out)?;
    Ok(eval)
}

/// Fit the marginal estimator to the stack in `y_dir`, starting from the
/// clipped Wiener baseline.
pub fn cmd_marginal(
    cfg: &ExperimentConfig,
    y_dir: &Path,
    out: &Path,
    overwrite: bool,
) -> Result<Image> {
    let (y, meta) = io::read_stack(y_dir)?;
    io::prepare_output_dir(out, overwrite)?;
    let psf = make_psf(y.grid(), cfg.psf_na)?;
    let nu = match cfg.solver.nu.or_else(|| nu_from_meta(&meta)) {
        Some(v) => v,
        None => crate::datagen::estimate_noise_std(&y, &psf)?,
    };
    let cov = CovModel::new(
        &psf,
        cfg.speckle.na_ill,
        cfg.speckle.i0,
        (nu * nu).max(1e-12),
        cfg.marginal_cap,
    )?;
    let start = wiener_baseline(&y, &psf, wiener_snr(cfg, Some(&meta)), cfg.speckle.i0)?;
    let start = Image::from_vec(
        *start.grid(),
        start.data().iter().map(|v| v.max(0.0)).collect(),
    )?;
    let opts = LbfgsOptions {
        max_iters: cfg.marginal_max_iters,
        ..LbfgsOptions::default()
    };
    let (rho, result) = fit_marginal(&y, &cov, &start, &opts)?;
    let raw = io::write_image(&out.join("rho_marginal"), &rho, "estimate_marginal")?;
    let mut log = String::from("iter,objective\n");
    for (k, v) in result.values.iter().enumerate() {
        let _ = writeln!(log, "{k},{v:?}");
    }
    let log_path = out.join("marginal_log.csv");
    io::write_text(&log_path, &log)?;
    let mut manifest = RunManifest::new("marginal", cfg.to_text());
    manifest.note("status", format!("{:?}", result.status));
    manifest.note("nu", f64_text(nu));
    manifest
        .artifacts
        .extend([io::sidecar_path(&raw), raw, log_path]);
    manifest.write(out)?;
    Ok(rho)
}

/// simulate, reconstruct, evaluate (every estimate plus the Wiener
/// baseline), then marginal when enabled.
pub fn cmd_pipeline(cfg: &ExperimentConfig, out: &Path, overwrite: bool) -> Result<()> {
    io::prepare_output_dir(out, overwrite)?;
    let sim_dir = out.join("simulate");
    let rec_dir = out.join("reconstruct");
    let y_dir = cmd_simulate(cfg, &sim_dir, overwrite)?;
    cmd_reconstruct(cfg, &y_dir, &rec_dir, overwrite)?;

    let truth = sim_dir.join("truth.f32");
    let bg_path = sim_dir.join("background.f32");
    let background = bg_path.exists().then_some(bg_path.as_path());
    let mut estimates: Vec<(String, PathBuf)> = vec![("wiener".into(), rec_dir.join("wiener.f32"))];
    let solve_dirs: Vec<(String, PathBuf)> = if cfg.solver.xi_factors.is_empty() {
        vec![(String::new(), rec_dir.clone())]
    } else {
        cfg.solver
            .xi_factors
            .iter()
            .map(|f| (format!("xi_{f}_"), rec_dir.join(format!("xi_{f}"))))
            .collect()
    };
    for (prefix, dir) in solve_dirs {
        for name in ["rho_mean", "rho_std"] {
            let p = dir.join(format!("{name}.f32"));
            if p.exists() {
                estimates.push((format!("{prefix}{name}"), p));
            }
        }
    }
    for (name, path) in estimates {
        cmd_evaluate(
            &path,
            &truth,
            background,
            &out.join(format!("evaluate_{name}")),
            overwrite,
        )?;
    }
    if cfg.marginal_enabled {
        cmd_marginal(cfg, &y_dir, &out.join("marginal"), overwrite)?;
    }
    let mut manifest = RunManifest::new("pipeline", cfg.to_text());
    manifest.seeds.push(("speckle".into(), cfg.speckle.seed));
    manifest.seeds.push(("noise".into(), cfg.noise.seed));
    for sub in std::fs::read_dir(out).map_err(|e| Error::io(out, e))? {
        let sub = sub.map_err(|e| Error::io(out, e))?.path();
        let m = sub.join(io::RUN_MANIFEST);
        if m.exists() {
            manifest.artifacts.push(m);
        }
    }
    manifest.write(out)?;
    Ok(())
}
