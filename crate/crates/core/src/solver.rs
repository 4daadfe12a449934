//! Primal-dual splitting solver for the constrained joint reconstruction
//!
//! ```text
//! min_q  ||q||_{G,p,q}^q + μ ||D q||_{G,2,1}   s.t.  ||ℋ q - y|| <= ξ
//! ```
//!
//! The problem is split as `f(q) + g1(q) + g2(D q) + g3(ℋ q)` with `f = 0`,
//! `g1` the row-group penalty, `g2` the TV of the frame average and `g3` the
//! indicator of the data-fidelity ball. Each iteration is
//!
//! ```text
//! q̄ = q - τ (d + D* p + ℋ* r)
//! d̄ = prox_{σ g1*}(d + σ (2q̄ - q))
//! p̄ = prox_{σ g2*}(p + σ D (2q̄ - q))
//! r̄ = prox_{σ g3*}(r + σ ℋ (2q̄ - q))
//! x ← θ x̄ + (1 - θ) x      for x ∈ {q, d, p, r}
//! ```
//!
//! with every conjugate prox evaluated through the Moreau identity. When
//! `μ = 0` the `p` branch is dropped.

use crate::ops::{
    gradient_adjoint_into, gradient_into, stack_convolve_into, step_size_bound, GradientField,
    PsfModel,
};
use crate::prox::{shrink_factor_l21, stack_rows_penalty, Penalty};
use crate::{Error, ImageStack, Result};

/// Radius of the data-fidelity ball.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Xi {
    Value(f64),
    /// `ξ = sqrt(M N) ν`, with `ν` taken from [`SolverConfig::noise_std`].
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub penalty: Penalty,
    pub mu_tv: f64,
    pub xi: Xi,
    /// Noise standard deviation used when `xi` is [`Xi::Auto`].
    pub noise_std: Option<f64>,
    pub tau: f64,
    pub sigma: f64,
    pub theta: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub i0: f64,
    /// Iterations between progress callbacks.
    pub log_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            penalty: Penalty::L21,
            mu_tv: 0.0,
            xi: Xi::Auto,
            noise_std: None,
            tau: 0.35,
            sigma: 1.0,
            theta: 1.0,
            max_iters: 2000,
            rel_tol: 1e-6,
            i0: 1.0,
            log_every: 10,
        }
    }
}

/// Slack on `ξ` for an iterate to count as feasible when tracking the best
/// iterate of a non-convex run.
pub const FEASIBILITY_SLACK: f64 = 0.05;

impl SolverConfig {
    pub fn with_penalty(penalty: Penalty) -> Self {
        SolverConfig {
            penalty,
            ..SolverConfig::default()
        }
    }

    /// Resolve `ξ` for a stack of `frames` frames of `pixels` pixels.
    pub fn resolve_xi(&self, frames: usize, pixels: usize) -> Result<f64> {
        let xi = match self.xi {
            Xi::Value(v) => v,
            Xi::Auto => {
                let nu = self
                    .noise_std
                    .ok_or_else(|| Error::param("xi", "`auto` needs a noise standard deviation"))?;
                ((frames * pixels) as f64).sqrt() * nu
            }
        };
        if !(xi >= 0.0) || !xi.is_finite() {
            return Err(Error::param(
                "xi",
                format!("must be finite and >= 0, got {xi}"),
            ));
        }
        Ok(xi)
    }

    /// Bound on `||L^*L||` for the active operators `L = [1; D; ℋ]`.
    pub fn operator_bound(&self, frames: usize) -> Result<f64> {
        if self.mu_tv > 0.0 {
            step_size_bound(frames, self.i0)
        } else {
            Ok(2.0)
        }
    }

    /// Check parameter ranges and the step-size condition. A step-size
    /// violation is an error for convex penalties and a warning otherwise.
    pub fn validate(&self, frames: usize) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if !(self.theta > 0.0 && self.theta < 2.0) {
            return Err(Error::param(
                "theta",
                format!("must lie in (0, 2), got {}", self.theta),
            ));
        }
        if !(self.tau > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::param("tau/sigma", "step sizes must be positive"));
        }
        if !(self.mu_tv >= 0.0) || !self.mu_tv.is_finite() {
            return Err(Error::param(
                "mu_tv",
                format!("must be >= 0, got {}", self.mu_tv),
            ));
        }
        if !(self.i0 > 0.0) {
            return Err(Error::param(
                "i0",
                format!("must be positive, got {}", self.i0),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::param("rel_tol", "must be >= 0"));
        }
        let limit = 1.0 / self.operator_bound(frames)?;
        let product = self.tau * self.sigma;
        if product > limit * (1.0 + 1e-12) {
            if self.penalty.is_convex() {
                return Err(Error::StepSize { product, limit });
            }
            warnings.push(format!(
                "tau*sigma = {product:.4} exceeds {limit:.4}; no convergence guarantee"
            ));
        }
        if !self.penalty.is_convex() {
            warnings.push("non-convex penalty: returning the best feasible iterate".into());
        }
        Ok(warnings)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    Budget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

/// Monitored quantities after one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub sparsity_term: f64,
    pub tv_term: f64,
    pub feasibility_gap: f64,
    /// `||x_{k+1} - x_k||` over all primal and dual variables.
    pub residual: f64,
    /// `||q_{k+1} - q_k|| / max(||q_k||, eps)`.
    pub rel_change: f64,
}

impl IterRecord {
    pub fn objective(&self) -> f64 {
        self.sparsity_term + self.tv_term
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms {
    pub sparsity_term: f64,
    pub tv_term: f64,
    pub feasibility_gap: f64,
}

/// Primal and dual iterates plus diagnostics.
#[derive(Clone, Debug)]
pub struct PdState {
    pub q: ImageStack,
    pub d: ImageStack,
    pub p: GradientField,
    pub r: ImageStack,
    pub iter: usize,
    pub xi: f64,
    pub feasibility_gap: f64,
    pub sparsity_term: f64,
    pub tv_term: f64,
    pub stop: StopReason,
    /// Iteration whose `q` is returned (differs from `iter` only for
    /// non-convex penalties).
    pub returned_iter: usize,
    pub history: Vec<IterRecord>,
    pub warnings: Vec<String>,
}

impl PdState {
    pub fn objective(&self) -> f64 {
        self.sparsity_term + self.tv_term
    }
}

/// Stopping rule: relative change of `q` below `rel_tol`, or budget spent.
pub fn stop_rule(rel_change: f64, iter: usize, cfg: &SolverConfig) -> StopDecision {
    if rel_change < cfg.rel_tol {
        StopDecision::Stop(StopReason::Converged)
    } else if iter >= cfg.max_iters {
        StopDecision::Stop(StopReason::Budget)
    } else {
        StopDecision::Continue
    }
}

/// [`stop_rule`] evaluated on two consecutive primal iterates.
pub fn stopping_check(
    current: &ImageStack,
    previous: &ImageStack,
    iter: usize,
    cfg: &SolverConfig,
) -> StopDecision {
    let diff: f64 = current
        .data()
        .iter()
        .zip(previous.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let rel = diff / previous.norm().max(f64::EPSILON);
    stop_rule(rel, iter, cfg)
}

/// `(||q||_{Gpq}^q, μ ||D q||_{G21}, ||ℋ q - y||)`.
pub fn objective_value(
    q: &ImageStack,
    y: &ImageStack,
    psf: &PsfModel,
    cfg: &SolverConfig,
) -> Result<ObjectiveTerms> {
    y.grid().check_same(q.grid())?;
    psf.grid().check_same(q.grid())?;
    let n = q.grid().len();
    let sparsity_term = stack_rows_penalty(q.data(), n, cfg.penalty);
    let tv_term = if cfg.mu_tv > 0.0 {
        cfg.mu_tv * crate::ops::op_d(q, cfg.i0)?.group_l21()
    } else {
        0.0
    };
    let mut hq = vec![0.0; q.data().len()];
    stack_convolve_into(psf, q.data(), &mut hq, false);
    let feasibility_gap = distance(&hq, y.data());
    Ok(ObjectiveTerms {
        sparsity_term,
        tv_term,
        feasibility_gap,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Iterations between exact recomputations of `ℋ q`, which is otherwise
/// propagated through the linear updates.
const HQ_REFRESH: usize = 50;

/// Frame average `(1/(M i0)) Σ_m x_m` into `out`.
fn average_into(x: &[f64], pixels: usize, scale: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for frame in x.chunks_exact(pixels) {
        out.iter_mut().zip(frame).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|v| *v *= scale);
}

fn tv_of_average(
    q: &[f64],
    grid: &crate::Grid,
    scale: f64,
    avg: &mut [f64],
    grad: &mut [f64],
) -> f64 {
    average_into(q, grid.len(), scale, avg);
    gradient_into(grid, avg, grad);
    grad.chunks_exact(2).map(|g| g[0].hypot(g[1])).sum()
}

/// Run the primal-dual iteration from zero initial iterates.
pub fn pd_solve(
    y: &ImageStack,
    psf: &PsfModel,
    cfg: &SolverConfig,
    mut callback: Option<&mut dyn FnMut(&IterRecord)>,
) -> Result<PdState> {
    psf.grid().check_same(y.grid())?;
    if !y.is_finite() {
        return Err(Error::NonFinite("measurements"));
    }
    let grid = *y.grid();
    let frames = y.frames();
    let n = grid.len();
    let len = n * frames;
    let warnings = cfg.validate(frames)?;
    let xi = cfg.resolve_xi(frames, n)?;
    let (tau, sigma, theta) = (cfg.tau, cfg.sigma, cfg.theta);
    let use_tv = cfg.mu_tv > 0.0;
    let avg_scale = 1.0 / (frames as f64 * cfg.i0);
    let penalty = cfg.penalty;
    let mu = cfg.mu_tv;
    let yv = y.data();

    let mut q = vec![0.0; len];
    let mut d = vec![0.0; len];
    let mut r = vec![0.0; len];
    let mut p = vec![0.0; if use_tv { 2 * n } else { 0 }];
    let mut hq = vec![0.0; len];

    let mut w = vec![0.0; len];
    let mut hw = vec![0.0; len];
    let mut img = vec![0.0; n];
    let mut grad = vec![0.0; 2 * n];
    let mut pbar = vec![0.0; p.len()];

    let mut history = Vec::with_capacity(cfg.max_iters.min(100_000));
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut iter = 0;
    let stop;

    let l11 = penalty == Penalty::L11;
    let mut rows = vec![0.0; n];
    let mut factor = vec![0.0; n];

    loop {
        // q̄ = q - τ (d + D* p + ℋ* r), with ℋ* r held in hw for now
        stack_convolve_into(psf, &r, &mut hw, true);
        if use_tv {
            gradient_adjoint_into(&grid, &p, &mut img);
            img.iter_mut().for_each(|v| *v *= avg_scale);
        } else {
            img.iter_mut().for_each(|v| *v = 0.0);
        }
        // w = 2 q̄ - q and x = d + σ w, the argument of the d-prox
        // q̄ = (w + q)/2 and x are rebuilt from w later instead of stored
        rows.iter_mut().for_each(|v| *v = 0.0);
        for (((wf, qf), df), hf) in w
            .chunks_exact_mut(n)
            .zip(q.chunks_exact(n))
            .zip(d.chunks_exact(n))
            .zip(hw.chunks_exact(n))
        {
            for (((((wi, &qi), &di), &hi), &ik), rk) in wf
                .iter_mut()
                .zip(qf)
                .zip(df)
                .zip(hf)
                .zip(&img)
                .zip(rows.iter_mut())
            {
                let qb = qi - tau * (di + ik + hi);
                *wi = 2.0 * qb - qi;
                let x = di + sigma * *wi;
                *rk += x * x;
            }
        }
        // prox_{σ g1*}(x) = x - σ prox_{g1/σ}(x/σ): a clamp to [-1, 1] for
        // ℓ11, and x (1 - s(||x_n||/σ, 1/σ)) per row for the group penalties
        if !l11 {
            for (f, r2) in factor.iter_mut().zip(&rows) {
                *f = 1.0 - penalty.shrink_factor(r2.sqrt() / sigma, 1.0 / sigma);
            }
        }

        // p̄ = prox_{σ g2*}(p + σ D w), g2 = μ ||·||_{G21}
        if use_tv {
            average_into(&w, n, avg_scale, &mut img);
            gradient_into(&grid, &img, &mut grad);
            for k in 0..2 * n {
                pbar[k] = p[k] + sigma * grad[k];
            }
            for g in pbar.chunks_exact_mut(2) {
                let norm = g[0].hypot(g[1]);
                let s = 1.0 - shrink_factor_l21(norm / sigma, mu / sigma);
                g[0] *= s;
                g[1] *= s;
            }
        }

        // r̄ = x - σ P(x/σ) with x = r + σ ℋ w and P the projection onto the
        // ξ-ball around y, which reduces to (1 - β)(x - σ y)
        stack_convolve_into(psf, &w, &mut hw, false);
        let mut dist2 = 0.0;
        for ((&ri, &hi), &yi) in r.iter().zip(&hw).zip(yv) {
            let u = ri / sigma + hi - yi;
            dist2 += u * u;
        }
        let dist = dist2.sqrt();
        let beta = if dist > xi { xi / dist } else { 1.0 };

        // relaxation and bookkeeping
        let mut res2 = 0.0;
        let mut dq2 = 0.0;
        let mut q2 = 0.0;
        let mut gap2 = 0.0;
        let mut abs_sum = 0.0;
        rows.iter_mut().for_each(|v| *v = 0.0);
        for m in 0..frames {
            let o = m * n;
            let (qf, df, rf, hqf) = (
                &mut q[o..o + n],
                &mut d[o..o + n],
                &mut r[o..o + n],
                &mut hq[o..o + n],
            );
            let (wf, hwf, yf) = (&w[o..o + n], &hw[o..o + n], &yv[o..o + n]);
            for k in 0..n {
                let (qi, di, ri) = (qf[k], df[k], rf[k]);
                let x = di + sigma * wf[k];
                let db = if l11 {
                    x.clamp(-1.0, 1.0)
                } else {
                    x * factor[k]
                };
                let rb = (1.0 - beta) * (ri + sigma * (hwf[k] - yf[k]));
                let qn = theta * 0.5 * (wf[k] + qi) + (1.0 - theta) * qi;
                let dn = theta * db + (1.0 - theta) * di;
                let rn = theta * rb + (1.0 - theta) * ri;
                let dqk = qn - qi;
                q2 += qi * qi;
                dq2 += dqk * dqk;
                res2 += dqk * dqk + (dn - di) * (dn - di) + (rn - ri) * (rn - ri);
                // ℋ q̄ = (ℋ w + ℋ q) / 2
                let hqn = theta * 0.5 * (hwf[k] + hqf[k]) + (1.0 - theta) * hqf[k];
                hqf[k] = hqn;
                gap2 += (hqn - yf[k]) * (hqn - yf[k]);
                qf[k] = qn;
                df[k] = dn;
                rf[k] = rn;
                rows[k] += qn * qn;
                abs_sum += qn.abs();
            }
        }
        if use_tv {
            for k in 0..2 * n {
                let pn = theta * pbar[k] + (1.0 - theta) * p[k];
                res2 += (pn - p[k]).powi(2);
                p[k] = pn;
            }
        }
        iter += 1;

        let gap = if iter % HQ_REFRESH == 0 {
            stack_convolve_into(psf, &q, &mut hq, false);
            distance(&hq, yv)
        } else {
            gap2.sqrt()
        };
        let sparsity = match penalty {
            Penalty::L11 => abs_sum,
            Penalty::L21 => rows.iter().map(|v| v.sqrt()).sum(),
            Penalty::L2Half => rows.iter().map(|v| v.sqrt().sqrt()).sum(),
            Penalty::L2TwoThirds => rows.iter().map(|v| v.powf(1.0 / 3.0)).sum(),
        };
        let tv = if use_tv {
            mu * tv_of_average(&q, &grid, avg_scale, &mut img, &mut grad)
        } else {
            0.0
        };
        // the first primal step from zero duals is always zero; not a fixed point
        let rel_change = if iter == 1 {
            f64::INFINITY
        } else {
            dq2.sqrt() / q2.sqrt().max(f64::EPSILON)
        };
        let rec = IterRecord {
            iter,
            sparsity_term: sparsity,
            tv_term: tv,
            feasibility_gap: gap,
            residual: res2.sqrt(),
            rel_change,
        };
        history.push(rec);
        if let Some(cb) = callback.as_mut() {
            if iter % cfg.log_every.max(1) == 0 {
                cb(&rec);
            }
        }
        if !penalty.is_convex() && gap <= xi * (1.0 + FEASIBILITY_SLACK) {
            let obj = rec.objective();
            if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
                match best.as_mut() {
                    Some(b) => {
                        b.0 = obj;
                        b.1 = iter;
                        b.2.copy_from_slice(&q);
                    }
                    None => best = Some((obj, iter, q.clone())),
                }
            }
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("primal iterate"));
        }
        match stop_rule(rel_change, iter, cfg) {
            StopDecision::Continue => {}
            StopDecision::Stop(reason) => {
                stop = reason;
                break;
            }
        }
    }

    let mut returned_iter = iter;
    if let Some((_, it, bq)) = best {
        returned_iter = it;
        q = bq;
    }
    let q = ImageStack::from_vec(grid, frames, q)?;
    let terms = objective_value(&q, y, psf, cfg)?;
    Ok(PdState {
        q,
        d: ImageStack::from_vec(grid, frames, d)?,
        p: if use_tv {
            GradientField::from_vec(grid, p)?
        } else {
            GradientField::zeros(grid)
        },
        r: ImageStack::from_vec(grid, frames, r)?,
        iter,
        xi,
        feasibility_gap: terms.feasibility_gap,
        sparsity_term: terms.sparsity_term,
        tv_term: terms.tv_term,
        stop,
        returned_iter,
        history,
        warnings,
    })
}
