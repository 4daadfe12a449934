//! Experiment configuration as flat `key = value` text.
//!
//! ```text
//! # comments run to end of line
//! grid.n = 64
//! speckle.m = 100
//! solver.p = 2
//! solver.q = 1
//! solver.xi = auto
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::{NoiseSpec, SpeckleSpec, DEFAULT_NA};
use crate::prox::Penalty;
use crate::solver::{SolverConfig, Xi};
use crate::{Error, Grid, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Star { arms: usize },
    File(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorChoice {
    Mean,
    Std,
    Both,
}

impl EstimatorChoice {
    pub fn wants_mean(self) -> bool {
        matches!(self, EstimatorChoice::Mean | EstimatorChoice::Both)
    }

    pub fn wants_std(self) -> bool {
        matches!(self, EstimatorChoice::Std | EstimatorChoice::Both)
    }
}

impl FromStr for EstimatorChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(EstimatorChoice::Mean),
            "std" => Ok(EstimatorChoice::Std),
            "both" => Ok(EstimatorChoice::Both),
            _ => Err(format!("expected mean, std or both, got `{s}`")),
        }
    }
}

impl std::fmt::Display for EstimatorChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorChoice::Mean => "mean",
            EstimatorChoice::Std => "std",
            EstimatorChoice::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSection {
    pub p: f64,
    pub q: f64,
    pub mu_tv: f64,
    pub xi: Xi,
    /// Multiples of the resolved ξ to sweep over; empty means a single run.
    pub xi_factors: Vec<f64>,
    pub tau: f64,
    pub sigma: f64,
    pub theta: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub log_every: usize,
    /// Noise level override; otherwise taken from the stack metadata.
    pub nu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub grid: Grid,
    pub target: Target,
    pub psf_na: f64,
    pub speckle: SpeckleSpec,
    pub noise: NoiseSpec,
    pub background_file: Option<PathBuf>,
    pub background_fraction: f64,
    pub solver: SolverSection,
    pub estimator: EstimatorChoice,
    /// Wiener regularisation; derived from the noise SNR when absent.
    pub wiener_snr: Option<f64>,
    pub marginal_enabled: bool,
    pub marginal_cap: usize,
    pub marginal_max_iters: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        ExperimentConfig {
            grid: Grid::square(128, 0.05).expect("valid default grid"),
            target: Target::Star { arms: 40 },
            psf_na: DEFAULT_NA,
            speckle: SpeckleSpec::standard(100, DEFAULT_NA, 1),
            noise: NoiseSpec::gaussian(40.0, 2),
            background_file: None,
            background_fraction: 0.5,
            solver: SolverSection {
                p: s.penalty.p(),
                q: s.penalty.q(),
                mu_tv: s.mu_tv,
                xi: s.xi,
                xi_factors: Vec::new(),
                tau: s.tau,
                sigma: s.sigma,
                theta: s.theta,
                max_iters: s.max_iters,
                rel_tol: s.rel_tol,
                log_every: s.log_every,
                nu: None,
            },
            estimator: EstimatorChoice::Both,
            wiener_snr: None,
            marginal_enabled: false,
            marginal_cap: crate::marginal::DEFAULT_CAP,
            marginal_max_iters: 200,
            output_dir: None,
        }
    }
}

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "grid.n1",
    "grid.n2",
    "grid.pitch",
    "target.kind",
    "target.arms",
    "target.file",
    "psf.na",
    "speckle.m",
    "speckle.na_ill",
    "speckle.kind",
    "speckle.i0",
    "speckle.seed",
    "noise.snr_db",
    "noise.photons",
    "noise.seed",
    "background.file",
    "background.fraction",
    "solver.p",
    "solver.q",
    "solver.mu_tv",
    "solver.xi",
    "solver.xi_factors",
    "solver.tau",
    "solver.sigma",
    "solver.theta",
    "solver.max_iters",
    "solver.rel_tol",
    "solver.log_every",
    "solver.nu",
    "estimator",
    "wiener.snr",
    "marginal.enabled",
    "marginal.cap",
    "marginal.max_iters",
    "output_dir",
];

fn cfg_err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| cfg_err(line, key, format!("cannot parse `{v}`: {e}")))
}

fn parse_optional<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if v == "none" {
        Ok(None)
    } else {
        parse_value(line, key, v).map(Some)
    }
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(cfg_err(line, key, format!("expected a boolean, got `{v}`"))),
    }
}

/// Split config text into `(line, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(cfg_err(line, body, "expected `key = value`"));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(cfg_err(line, k, "empty key"));
        }
        if let Some((prev, ..)) = out.iter().find(|(_, pk, _)| pk == k) {
            return Err(cfg_err(
                line,
                k,
                format!("duplicate key (first set on line {prev})"),
            ));
        }
        out.push((line, k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Parse config text. Relative file paths are resolved against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut lines: BTreeMap<String, usize> = BTreeMap::new();
        let (mut n1, mut n2) = (cfg.grid.n1(), cfg.grid.n2());
        let mut pitch = cfg.grid.pitch();
        let mut target_kind = "star".to_string();
        let mut arms = 40usize;
        let mut target_file: Option<PathBuf> = None;
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };

        for (line, key, v) in parse_pairs(text)? {
            let k = key.as_str();
            let v = v.as_str();
            match k {
                "grid.n" => {
                    n1 = parse_value(line, k, v)?;
                    n2 = n1;
                }
                "grid.n1" => n1 = parse_value(line, k, v)?,
                "grid.n2" => n2 = parse_value(line, k, v)?,
                "grid.pitch" => pitch = parse_value(line, k, v)?,
                "target.kind" => target_kind = v.to_string(),
                "target.arms" => arms = parse_value(line, k, v)?,
                "target.file" => target_file = Some(resolve(v)),
                "psf.na" => cfg.psf_na = parse_value(line, k, v)?,
                "speckle.m" => cfg.speckle.frames = parse_value(line, k, v)?,
                "speckle.na_ill" => cfg.speckle.na_ill = parse_value(line, k, v)?,
                "speckle.kind" => cfg.speckle.kind = parse_value(line, k, v)?,
                "speckle.i0" => cfg.speckle.i0 = parse_value(line, k, v)?,
                "speckle.seed" => cfg.speckle.seed = parse_value(line, k, v)?,
                "noise.snr_db" => cfg.noise.gaussian_snr_db = parse_optional(line, k, v)?,
                "noise.photons" => cfg.noise.photons_per_pixel = parse_optional(line, k, v)?,
                "noise.seed" => cfg.noise.seed = parse_value(line, k, v)?,
                "background.file" => {
                    cfg.background_file = if v == "none" { None } else { Some(resolve(v)) }
                }
                "background.fraction" => cfg.background_fraction = parse_value(line, k, v)?,
                "solver.p" => cfg.solver.p = parse_value(line, k, v)?,
                "solver.q" => cfg.solver.q = parse_q(line, k, v)?,
                "solver.mu_tv" => cfg.solver.mu_tv = parse_value(line, k, v)?,
                "solver.xi" => {
                    cfg.solver.xi = if v == "auto" {
                        Xi::Auto
                    } else {
                        Xi::Value(parse_value(line, k, v)?)
                    }
                }
                "solver.xi_factors" => {
                    cfg.solver.xi_factors = if v.is_empty() || v == "none" {
                        Vec::new()
                    } else {
                        v.split(',')
                            .map(|s| parse_value::<f64>(line, k, s.trim()))
                            .collect::<Result<_>>()?
                    }
                }
                "solver.tau" => cfg.solver.tau = parse_value(line, k, v)?,
                "solver.sigma" => cfg.solver.sigma = parse_value(line, k, v)?,
                "solver.theta" => cfg.solver.theta = parse_value(line, k, v)?,
                "solver.max_iters" => cfg.solver.max_iters = parse_value(line, k, v)?,
                "solver.rel_tol" => cfg.solver.rel_tol = parse_value(line, k, v)?,
                "solver.log_every" => cfg.solver.log_every = parse_value(line, k, v)?,
                "solver.nu" => cfg.solver.nu = parse_optional(line, k, v)?,
                "estimator" => cfg.estimator = parse_value(line, k, v)?,
                "wiener.snr" => cfg.wiener_snr = parse_optional(line, k, v)?,
                "marginal.enabled" => cfg.marginal_enabled = parse_bool(line, k, v)?,
                "marginal.cap" => cfg.marginal_cap = parse_value(line, k, v)?,
                "marginal.max_iters" => cfg.marginal_max_iters = parse_value(line, k, v)?,
                "output_dir" => cfg.output_dir = if v == "none" { None } else { Some(resolve(v)) },
                _ => return Err(cfg_err(line, k, "unknown key")),
            }
            lines.insert(key.clone(), line);
        }

        let line_of = |k: &str| lines.get(k).copied().unwrap_or(0);
        cfg.grid = Grid::new(n1, n2, pitch).map_err(|e| {
            cfg_err(
                line_of("grid.n1").max(line_of("grid.pitch")),
                "grid",
                e.to_string(),
            )
        })?;
        cfg.target = match target_kind.as_str() {
            "star" => Target::Star { arms },
            "file" => Target::File(target_file.ok_or_else(|| {
                cfg_err(
                    line_of("target.kind"),
                    "target.file",
                    "required when target.kind = file",
                )
            })?),
            other => {
                return Err(cfg_err(
                    line_of("target.kind"),
                    "target.kind",
                    format!("expected star or file, got `{other}`"),
                ))
            }
        };
        cfg.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => {
                let base = if name.starts_with('(') {
                    "q"
                } else {
                    name.split('/').next().unwrap_or(name)
                };
                let key = if KEYS.contains(&base) {
                    base.to_string()
                } else {
                    format!("solver.{base}")
                };
                cfg_err(line_of(&key), &key, reason)
            }
            Error::StepSize { .. } => cfg_err(line_of("solver.tau"), "solver.tau", e.to_string()),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    /// Check cross-field invariants and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.speckle.validate()?;
        self.noise.validate()?;
        if !(self.psf_na > 0.0) {
            return Err(Error::param("psf.na", "must be positive"));
        }
        if let Target::Star { arms } = self.target {
            if arms < 2 || !arms.is_multiple_of(2) {
                return Err(Error::param(
                    "target.arms",
                    format!("must be even and at least 2, got {arms}"),
                ));
            }
        }
        if let Target::File(p) = &self.target {
            if !p.exists() {
                return Err(Error::param(
                    "target.file",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        if let Some(p) = &self.background_file {
            if !p.exists() {
                return Err(Error::param(
                    "background.file",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        if !(self.background_fraction >= 0.0) {
            return Err(Error::param("background.fraction", "must be nonnegative"));
        }
        if self.solver.xi_factors.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::param(
                "solver.xi_factors",
                "factors must be positive",
            ));
        }
        if self.estimator == EstimatorChoice::Std && self.speckle.frames < 2 {
            return Err(Error::param(
                "speckle.m",
                "std estimator needs at least two frames",
            ));
        }
        if self.marginal_cap == 0 {
            return Err(Error::param("marginal.cap", "must be positive"));
        }
        self.solver_config(None)?.validate(self.speckle.frames)?;
        Ok(())
    }

    /// Solver settings, with `ν` taken from the config override or else `nu`.
    pub fn solver_config(&self, nu: Option<f64>) -> Result<SolverConfig> {
        let s = &self.solver;
        let penalty = Penalty::from_pq(s.p, s.q)?;
        Ok(SolverConfig {
            penalty,
            mu_tv: s.mu_tv,
            xi: s.xi,
            noise_std: s.nu.or(nu),
            tau: s.tau,
            sigma: s.sigma,
            theta: s.theta,
            max_iters: s.max_iters,
            rel_tol: s.rel_tol,
            i0: self.speckle.i0,
            log_every: s.log_every,
        })
    }

    /// Replace both RNG seeds, keeping the speckle and noise streams distinct.
    pub fn override_seed(&mut self, seed: u64) {
        self.speckle.seed = seed;
        self.noise.seed = seed.wrapping_add(1);
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:?}"));
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or("none".to_string(), |p| p.display().to_string())
        };
        let _ = writeln!(s, "grid.n1 = {}", self.grid.n1());
        let _ = writeln!(s, "grid.n2 = {}", self.grid.n2());
        let _ = writeln!(s, "grid.pitch = {:?}", self.grid.pitch());
        match &self.target {
            Target::Star { arms } => {
                let _ = writeln!(s, "target.kind = star");
                let _ = writeln!(s, "target.arms = {arms}");
            }
            Target::File(p) => {
                let _ = writeln!(s, "target.kind = file");
                let _ = writeln!(s, "target.file = {}", p.display());
            }
        }
        let _ = writeln!(s, "psf.na = {:?}", self.psf_na);
        let _ = writeln!(s, "speckle.m = {}", self.speckle.frames);
        let _ = writeln!(s, "speckle.na_ill = {:?}", self.speckle.na_ill);
        let _ = writeln!(s, "speckle.kind = {}", self.speckle.kind);
        let _ = writeln!(s, "speckle.i0 = {:?}", self.speckle.i0);
        let _ = writeln!(s, "speckle.seed = {}", self.speckle.seed);
        let _ = writeln!(s, "noise.snr_db = {}", opt(self.noise.gaussian_snr_db));
        let _ = writeln!(s, "noise.photons = {}", opt(self.noise.photons_per_pixel));
        let _ = writeln!(s, "noise.seed = {}", self.noise.seed);
        let _ = writeln!(s, "background.file = {}", path(&self.background_file));
        let _ = writeln!(s, "background.fraction = {:?}", self.background_fraction);
        let sv = &self.solver;
        let _ = writeln!(s, "solver.p = {:?}", sv.p);
        let _ = writeln!(s, "solver.q = {:?}", sv.q);
        let _ = writeln!(s, "solver.mu_tv = {:?}", sv.mu_tv);
        match sv.xi {
            Xi::Auto => {
                let _ = writeln!(s, "solver.xi = auto");
            }
            Xi::Value(x) => {
                let _ = writeln!(s, "solver.xi = {x:?}");
            }
        }
        let factors: Vec<String> = sv.xi_factors.iter().map(|f| format!("{f:?}")).collect();
        let _ = writeln!(
            s,
            "solver.xi_factors = {}",
            if factors.is_empty() {
                "none".to_string()
            } else {
                factors.join(",")
            }
        );
        let _ = writeln!(s, "solver.tau = {:?}", sv.tau);
        let _ = writeln!(s, "solver.sigma = {:?}", sv.sigma);
        let _ = writeln!(s, "solver.theta = {:?}", sv.theta);
        let _ = writeln!(s, "solver.max_iters = {}", sv.max_iters);
        let _ = writeln!(s, "solver.rel_tol = {:?}", sv.rel_tol);
        let _ = writeln!(s, "solver.log_every = {}", sv.log_every);
        let _ = writeln!(s, "solver.nu = {}", opt(sv.nu));
        let _ = writeln!(s, "estimator = {}", self.estimator);
        let _ = writeln!(s, "wiener.snr = {}", opt(self.wiener_snr));
        let _ = writeln!(s, "marginal.enabled = {}", self.marginal_enabled);
        let _ = writeln!(s, "marginal.cap = {}", self.marginal_cap);
        let _ = writeln!(s, "marginal.max_iters = {}", self.marginal_max_iters);
        let _ = writeln!(s, "output_dir = {}", path(&self.output_dir));
        s
    }
}

/// Accepts decimals as well as the fractions `1/2` and `2/3`.
fn parse_q(line: usize, key: &str, v: &str) -> Result<f64> {
    if let Some((a, b)) = v.split_once('/') {
        let a: f64 = parse_value(line, key, a.trim())?;
        let b: f64 = parse_value(line, key, b.trim())?;
        return Ok(a / b);
    }
    parse_value(line, key, v)
}
