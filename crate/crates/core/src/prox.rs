//! Proximal operators.
//!
//! `prox_{λf}(x) = argmin_d f(d) + ||d - x||² / (2λ)`. The group penalties
//! act on disjoint groups, so every operator here works group by group:
//!
//! | penalty        | per-group solution                                   |
//! |----------------|------------------------------------------------------|
//! | `l_{1,1}`      | element-wise soft threshold                          |
//! | `l_{2,1}`      | `max(1 - λ/||x||, 0) x`                              |
//! | `l_{2,1/2}`    | zero below `3/2 λ^{2/3}`, closed-form shrink above   |
//! | `l_{2,2/3}`    | zero below `2 (2λ/3)^{3/4}`, closed-form shrink above|
//!
//! For the two non-convex penalties the minimiser is collinear with `x`, so
//! the result is always a scalar multiple of the group.

use crate::grid::norm2;
use crate::{Error, Result};

/// Flat vector partitioned into contiguous groups of equal size.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedVector {
    values: Vec<f64>,
    group_size: usize,
}

impl GroupedVector {
    pub fn new(values: Vec<f64>, group_size: usize) -> Result<Self> {
        if group_size == 0 || !values.len().is_multiple_of(group_size) {
            return Err(Error::param(
                "group_size",
                format!(
                    "{} values cannot be split into groups of {group_size}",
                    values.len()
                ),
            ));
        }
        Ok(GroupedVector { values, group_size })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn group_count(&self) -> usize {
        self.values.len() / self.group_size
    }

    pub fn group(&self, i: usize) -> &[f64] {
        &self.values[i * self.group_size..(i + 1) * self.group_size]
    }

    pub fn groups(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.group_size)
    }

    fn map_groups(&self, mut f: impl FnMut(&mut [f64])) -> GroupedVector {
        let mut out = self.clone();
        out.values
            .chunks_exact_mut(self.group_size)
            .for_each(&mut f);
        out
    }
}

/// The supported `(p, q)` pairs of the group penalty `Σ_n ||x_{G_n}||_p^q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Penalty {
    L11,
    L21,
    L2Half,
    L2TwoThirds,
}

impl Penalty {
    pub fn from_pq(p: f64, q: f64) -> Result<Self> {
        const EPS: f64 = 1e-9;
        let is = |a: f64, b: f64| (a - b).abs() < EPS;
        match (p, q) {
            (p, q) if is(p, 1.0) && is(q, 1.0) => Ok(Penalty::L11),
            (p, q) if is(p, 2.0) && is(q, 1.0) => Ok(Penalty::L21),
            (p, q) if is(p, 2.0) && is(q, 0.5) => Ok(Penalty::L2Half),
            (p, q) if is(p, 2.0) && is(q, 2.0 / 3.0) => Ok(Penalty::L2TwoThirds),
            _ => Err(Error::param(
                "(p, q)",
                format!("unsupported pair ({p}, {q}); expected (1,1), (2,1), (2,1/2) or (2,2/3)"),
            )),
        }
    }

    pub fn p(self) -> f64 {
        match self {
            Penalty::L11 => 1.0,
            _ => 2.0,
        }
    }

    pub fn q(self) -> f64 {
        match self {
            Penalty::L11 | Penalty::L21 => 1.0,
            Penalty::L2Half => 0.5,
            Penalty::L2TwoThirds => 2.0 / 3.0,
        }
    }

    pub fn is_convex(self) -> bool {
        self.q() == 1.0
    }

    /// `||g||_p^q` of one group.
    pub fn group_value(self, g: &[f64]) -> f64 {
        match self {
            Penalty::L11 => g.iter().map(|v| v.abs()).sum(),
            Penalty::L21 => norm2(g),
            Penalty::L2Half => norm2(g).sqrt(),
            Penalty::L2TwoThirds => norm2(g).powf(2.0 / 3.0),
        }
    }

    /// Penalty of a whole grouped vector.
    pub fn value(self, x: &GroupedVector) -> f64 {
        x.groups().map(|g| self.group_value(g)).sum()
    }

    /// Short label used in file names and logs, e.g. `l21`.
    pub fn label(self) -> &'static str {
        match self {
            Penalty::L11 => "l11",
            Penalty::L21 => "l21",
            Penalty::L2Half => "l2_half",
            Penalty::L2TwoThirds => "l2_two_thirds",
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::param(
            "lambda",
            format!("must be finite and >= 0, got {lambda}"),
        ))
    }
}

#[inline]
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    x.signum() * (x.abs() - lambda).max(0.0)
}

/// Scale applied to a group of Euclidean norm `norm` by the `l_{2,1}` prox.
#[inline]
pub fn shrink_factor_l21(norm: f64, lambda: f64) -> f64 {
    if norm <= lambda {
        0.0
    } else {
        1.0 - lambda / norm
    }
}

/// Threshold below which the `l_{2,1/2}` prox returns zero.
pub fn threshold_l2_half(lambda: f64) -> f64 {
    1.5 * lambda.powf(2.0 / 3.0)
}

/// Threshold below which the `l_{2,2/3}` prox returns zero.
pub fn threshold_l2_two_thirds(lambda: f64) -> f64 {
    2.0 * (2.0 * lambda / 3.0).powf(0.75)
}

/// Scale applied by the `l_{2,1/2}` prox. Ties at the threshold go to zero.
pub fn shrink_factor_l2_half(norm: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 1.0;
    }
    if norm <= threshold_l2_half(lambda) {
        return 0.0;
    }
    let arg = (lambda / 4.0) * (3.0 / norm).powf(1.5);
    let psi = arg.clamp(-1.0, 1.0).acos();
    let omega = (std::f64::consts::FRAC_PI_3 - psi / 3.0).cos().powi(3);
    let t = 16.0 * norm.powf(1.5) * omega;
    t / (3.0 * 3f64.sqrt() * lambda + t)
}

/// Scale applied by the `l_{2,2/3}` prox. Ties at the threshold go to zero.
pub fn shrink_factor_l2_two_thirds(norm: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 1.0;
    }
    if norm <= threshold_l2_two_thirds(lambda) {
        return 0.0;
    }
    let two_lambda = 2.0 * lambda;
    let phi = (27.0 * norm * norm / (16.0 * two_lambda.powf(1.5)))
        .max(1.0)
        .acosh();
    let a = 2.0 / 3f64.sqrt() * two_lambda.powf(0.25) * (phi / 3.0).cosh().sqrt();
    let a = a.abs();
    let eta = 0.5 * (a + (2.0 * norm / a - a * a).max(0.0).sqrt());
    let e4 = 3.0 * eta.powi(4);
    e4 / (two_lambda + e4)
}

impl Penalty {
    /// Scale factor for a `p = 2` group of the given norm.
    ///
    /// # Panics
    /// For `L11`, which is not a group-scaling operator.
    pub fn shrink_factor(self, norm: f64, lambda: f64) -> f64 {
        match self {
            Penalty::L11 => panic!("l_{{1,1}} prox acts element-wise"),
            Penalty::L21 => shrink_factor_l21(norm, lambda),
            Penalty::L2Half => shrink_factor_l2_half(norm, lambda),
            Penalty::L2TwoThirds => shrink_factor_l2_two_thirds(norm, lambda),
        }
    }

    fn apply_group(self, g: &mut [f64], lambda: f64) {
        match self {
            Penalty::L11 => g.iter_mut().for_each(|v| *v = soft_threshold(*v, lambda)),
            _ => {
                let s = self.shrink_factor(norm2(g), lambda);
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
}

/// `l_{1,1}` prox: element-wise soft threshold.
pub fn prox_l11(x: &GroupedVector, lambda: f64) -> Result<GroupedVector> {
    check_lambda(lambda)?;
    Ok(x.map_groups(|g| Penalty::L11.apply_group(g, lambda)))
}

/// `l_{2,1}` prox: group soft threshold.
pub fn prox_group_l21(x: &GroupedVector, lambda: f64) -> Result<GroupedVector> {
    check_lambda(lambda)?;
    Ok(x.map_groups(|g| Penalty::L21.apply_group(g, lambda)))
}

/// `l_{2,q}` prox for `q ∈ {1/2, 2/3}`.
pub fn prox_group_l2q(x: &GroupedVector, lambda: f64, q: f64) -> Result<GroupedVector> {
    check_lambda(lambda)?;
    let penalty = match Penalty::from_pq(2.0, q)? {
        p @ (Penalty::L2Half | Penalty::L2TwoThirds) => p,
        _ => return Err(Error::param("q", format!("expected 1/2 or 2/3, got {q}"))),
    };
    Ok(x.map_groups(|g| penalty.apply_group(g, lambda)))
}

/// Prox of any supported penalty.
pub fn prox_penalty(x: &GroupedVector, lambda: f64, penalty: Penalty) -> Result<GroupedVector> {
    check_lambda(lambda)?;
    Ok(x.map_groups(|g| penalty.apply_group(g, lambda)))
}

/// Prox of `Σ_n ||row_n||_p^q` on a frame-major stack (`frames` blocks of
/// `pixels` values), where the group of pixel `n` collects its value in
/// every frame. Row norms are accumulated frame by frame in a fixed order.
pub fn prox_stack_rows(data: &mut [f64], pixels: usize, lambda: f64, penalty: Penalty) {
    debug_assert_eq!(data.len() % pixels, 0);
    if penalty == Penalty::L11 {
        data.iter_mut()
            .for_each(|v| *v = soft_threshold(*v, lambda));
        return;
    }
    let factors = row_shrink_factors(data, pixels, |norm| penalty.shrink_factor(norm, lambda));
    for frame in data.chunks_exact_mut(pixels) {
        frame.iter_mut().zip(&factors).for_each(|(v, s)| *v *= s);
    }
}

/// Per-pixel Euclidean norms across frames of a frame-major stack.
pub fn row_norms(data: &[f64], pixels: usize) -> Vec<f64> {
    let mut acc = vec![0.0; pixels];
    for frame in data.chunks_exact(pixels) {
        acc.iter_mut().zip(frame).for_each(|(a, v)| *a += v * v);
    }
    acc.iter_mut().for_each(|a| *a = a.sqrt());
    acc
}

fn row_shrink_factors(data: &[f64], pixels: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut norms = row_norms(data, pixels);
    norms.iter_mut().for_each(|n| *n = f(*n));
    norms
}

/// Penalty value `Σ_n ||row_n||_p^q` of a frame-major stack.
pub fn stack_rows_penalty(data: &[f64], pixels: usize, penalty: Penalty) -> f64 {
    match penalty {
        Penalty::L11 => data.iter().map(|v| v.abs()).sum(),
        _ => row_norms(data, pixels)
            .into_iter()
            .map(|n| match penalty {
                Penalty::L21 => n,
                Penalty::L2Half => n.sqrt(),
                _ => n.powf(2.0 / 3.0),
            })
            .sum(),
    }
}

/// `prox_{σ f^*}(x) = x - σ prox_{f/σ}(x / σ)`.
///
/// `prox_f(v, λ)` must return `prox_{λ f}(v)`; it is called once with
/// `λ = 1/σ`.
pub fn moreau_conjugate_prox<F>(prox_f: F, x: &[f64], sigma: f64) -> Result<Vec<f64>>
where
    F: FnOnce(&[f64], f64) -> Vec<f64>,
{
    check_sigma(sigma)?;
    let scaled: Vec<f64> = x.iter().map(|v| v / sigma).collect();
    let p = prox_f(&scaled, 1.0 / sigma);
    if p.len() != x.len() {
        return Err(Error::ShapeMismatch {
            expected: x.len(),
            found: p.len(),
        });
    }
    Ok(x.iter().zip(&p).map(|(xi, pi)| xi - sigma * pi).collect())
}

/// In-place form of [`moreau_conjugate_prox`]. `scratch` is resized as
/// needed and reused across calls.
pub fn moreau_conjugate_in_place<F>(x: &mut [f64], scratch: &mut Vec<f64>, sigma: f64, prox_f: F)
where
    F: FnOnce(&mut [f64], f64),
{
    debug_assert!(sigma > 0.0);
    scratch.clear();
    scratch.extend(x.iter().map(|v| v / sigma));
    prox_f(scratch, 1.0 / sigma);
    x.iter_mut()
        .zip(scratch.iter())
        .for_each(|(xi, pi)| *xi -= sigma * pi);
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::param(
            "sigma",
            format!("must be positive, got {sigma}"),
        ))
    }
}

/// Projection onto the ball `{v : ||v - center|| <= radius}`.
pub fn project_l2_ball(x: &[f64], center: &[f64], radius: f64) -> Result<Vec<f64>> {
    if x.len() != center.len() {
        return Err(Error::ShapeMismatch {
            expected: center.len(),
            found: x.len(),
        });
    }
    if !(radius >= 0.0) {
        return Err(Error::param(
            "radius",
            format!("must be >= 0, got {radius}"),
        ));
    }
    let mut out = x.to_vec();
    project_l2_ball_in_place(&mut out, center, radius);
    Ok(out)
}

pub fn project_l2_ball_in_place(x: &mut [f64], center: &[f64], radius: f64) {
    let dist = x
        .iter()
        .zip(center)
        .map(|(a, c)| (a - c) * (a - c))
        .sum::<f64>()
        .sqrt();
    if dist <= radius {
        return;
    }
    if dist == 0.0 || radius == 0.0 {
        x.copy_from_slice(center);
        return;
    }
    let s = radius / dist;
    x.iter_mut()
        .zip(center)
        .for_each(|(a, c)| *a = c + s * (*a - c));
}
