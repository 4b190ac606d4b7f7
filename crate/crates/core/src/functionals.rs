//! Brownian functionals behind the renormalization: `c_*`, `𝒳`, `σ_*²`, the
//! Clark-Ocone kernel `Z̃` with `σ'_*²`, `X_ε`, and the two-path `Y`, `Ỹ`.

use crate::brownian::{sample_path, sample_two_sided, BrownianPath};
use crate::error::{positive, LabError, Result};
use crate::mollifier::{Covariance, CrossCovariance, MollifierSpec};
use crate::quadrature::Panels;
use crate::rng::{derive_key, label_hash};
use crate::stats::{batch_means, par_map, EstimateWithCI};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Batches used for every standard error in this module.
pub const BATCHES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsEstimate {
    /// Quadrature value.
    pub c_star: f64,
    /// Standard error of the Monte Carlo cross-check.
    pub c_star_se: f64,
    pub c_star_mc: f64,
    pub sigma_star_sq: f64,
    pub sigma_star_sq_se: f64,
    pub sigma_prime_sq: f64,
    pub sigma_prime_sq_se: f64,
    pub methods: Vec<String>,
    pub phi_spec: MollifierSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    XEps,
    YEps,
    YTilde,
    CalX,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    pub kind: FunctionalKind,
    pub t: f64,
    pub eps: Vec<f64>,
    pub value: f64,
}

impl FunctionalSample {
    pub fn is_valid(&self) -> bool {
        self.value.is_finite()
            && match self.kind {
                FunctionalKind::YEps | FunctionalKind::YTilde => self.value >= 0.0,
                _ => true,
            }
    }
}

/// Heat kernel `q(t, x) = (2πt)^{-1/2} exp(-x²/2t)`.
#[inline]
pub fn heat_kernel(t: f64, x: f64) -> f64 {
    (-x * x / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

#[inline]
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

#[inline]
fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `∫ q(var, x - y) f(y) dy` for `f` linear between the nodes `y_j = y0 + j·h`
/// (values `f(j)`, zero outside), exact piece by piece.
pub fn gauss_smooth_linear<F: Fn(usize) -> f64>(y0: f64, h: f64, n: usize, f: F, var: f64, x: f64) -> f64 {
    if var <= 0.0 {
        let u = (x - y0) / h;
        if !(u >= 0.0) || u >= (n - 1) as f64 {
            return 0.0;
        }
        let j = u as usize;
        let w = u - j as f64;
        return f(j) + w * (f(j + 1) - f(j));
    }
    let sd = var.sqrt();
    let reach = 9.0 * sd + h;
    let lo = (((x - reach - y0) / h).floor().max(0.0)) as usize;
    let hi = ((((x + reach - y0) / h).ceil()).max(0.0) as usize).min(n - 1);
    let mut acc = 0.0;
    let z0 = (y0 + lo as f64 * h - x) / sd;
    let (mut c0, mut p0) = (std_normal_cdf(z0), std_normal_pdf(z0));
    for j in lo..hi {
        let yj = y0 + j as f64 * h;
        let z1 = (yj + h - x) / sd;
        let (c1, p1) = (std_normal_cdf(z1), std_normal_pdf(z1));
        let (fa, fb) = (f(j), f(j + 1));
        if fa != 0.0 || fb != 0.0 {
            let slope = (fb - fa) / h;
            acc += (fa + slope * (x - yj)) * (c1 - c0) + slope * sd * (p0 - p1);
        }
        c0 = c1;
        p0 = p1;
    }
    acc
}

pub(crate) fn space_nodes<C: Covariance>(cov: &C) -> (f64, f64, usize) {
    let h = cov.x_step();
    let n = (2.0 * cov.x_support() / h).round() as usize + 1;
    (-cov.x_support(), h, n)
}

/// `m(u) = E R(u, B(u)) = ∫ R(u, x) q(u, x) dx`.
pub fn heat_mean_r<C: Covariance>(cov: &C, u: f64) -> f64 {
    let a = cov.time_factor(u);
    if a == 0.0 {
        return 0.0;
    }
    let (y0, h, n) = space_nodes(cov);
    a * gauss_smooth_linear(y0, h, n, |j| cov.space_factor(y0 + j as f64 * h), u.max(0.0), 0.0)
}

/// `c_* = ∫₀^∞ m(u) du`, with panels refined geometrically towards `u = 0`.
pub fn c_star_quadrature<C: Covariance>(cov: &C) -> f64 {
    let rule = Panels::new(16);
    let top = cov.t_support();
    let mut total = 0.0;
    let mut hi = top;
    for _ in 0..30 {
        let lo = hi / 2.0;
        total += rule.integrate(lo, hi, 2, |u| heat_mean_r(cov, u));
        hi = lo;
    }
    total + rule.integrate(0.0, hi, 1, |u| heat_mean_r(cov, u))
}

fn trapezoid_weights(n: usize) -> impl Fn(usize) -> f64 {
    move |k| if k == 0 || k == n { 0.5 } else { 1.0 }
}

fn steps_per_unit(dt: f64) -> Result<usize> {
    let k = (1.0 / dt).round();
    if (k * dt - 1.0).abs() > 1e-9 {
        return Err(LabError::InvalidParameter {
            name: "dt",
            reason: format!("1/dt must be an integer, got {}", 1.0 / dt),
        });
    }
    Ok(k as usize)
}

/// Monte Carlo of `∫₀¹ R(u, B(u)) du` (trapezoid along each path).
pub fn c_star_mc<C: Covariance>(cov: &C, npaths: usize, dt: f64, seed: u64) -> Result<EstimateWithCI> {
    if dt > 1e-3 * (1.0 + 1e-12) {
        return Err(LabError::InvalidParameter { name: "dt", reason: format!("needs dt <= 1e-3, got {dt}") });
    }
    let k_max = steps_per_unit(dt)?;
    let weight = trapezoid_weights(k_max);
    let base = derive_key(seed, label_hash("c_star"));
    let samples = par_map(npaths, |i| {
        let p = sample_path(1.0, dt, derive_key(base, i as u64)).expect("validated");
        (0..=k_max).map(|k| weight(k) * cov.r(k as f64 * dt, p.values[k])).sum::<f64>() * dt
    });
    Ok(batch_means(&samples, BATCHES))
}

/// Path values on a regular grid together with the index of time 0.
struct Samples<'a> {
    values: std::borrow::Cow<'a, [f64]>,
    zero: usize,
}

fn two_sided_array(path: &BrownianPath, back_steps: usize) -> Result<Samples<'_>> {
    if back_steps == 0 {
        return Ok(Samples { values: (&path.values[..]).into(), zero: 0 });
    }
    let back = path.backward.as_ref().ok_or_else(|| {
        LabError::OutOfDomain("path has no negative-time extension".into())
    })?;
    if back.len() <= back_steps {
        return Err(LabError::OutOfDomain("negative-time extension too short".into()));
    }
    let mut v: Vec<f64> = back[1..=back_steps].iter().rev().copied().collect();
    v.extend_from_slice(&path.values);
    Ok(Samples { values: v.into(), zero: back_steps })
}

/// Trapezoid over `u ∈ [0, min(j,K)·dt]` of `a_k R_x(z_j - z_{j-k})` with `a_k`
/// already holding the time factor and the weight.
#[inline]
fn inner_sum<C: Covariance>(cov: &C, z: &[f64], j: usize, a: &[f64]) -> f64 {
    let zj = z[j];
    let kmax = a.len() - 1;
    if j >= kmax {
        let mut acc = 0.0;
        for (k, &ak) in a.iter().enumerate() {
            acc += ak * cov.space_factor(zj - z[j - k]);
        }
        acc
    } else {
        // Partial range [0, j·dt]: the last node gets half weight.
        let mut acc = 0.0;
        for k in 0..=j {
            let w = if k == j && k > 0 { 0.5 } else { 1.0 };
            let ak = if k == 0 { a[0] } else { a[k] * w };
            acc += ak * cov.space_factor(zj - z[j - k]);
        }
        acc
    }
}

/// `𝒳(s) = ∫₀¹ R(u, B(s) - B(s-u)) du - c_*` (trapezoid at the path nodes).
pub fn cal_x<C: Covariance>(cov: &C, c_star: f64, path: &BrownianPath, s: f64) -> Result<f64> {
    let dt = path.dt;
    let k_max = steps_per_unit(dt / cov.t_support())?;
    let j = (s / dt).round();
    if (j * dt - s).abs() > 1e-9 * s.abs().max(1.0) {
        return Err(LabError::InvalidParameter { name: "s", reason: "must be a path node".into() });
    }
    let back_needed = (k_max as f64 - j).max(0.0) as usize;
    if j < 0.0 || j as usize >= path.values.len() {
        return Err(LabError::OutOfDomain(format!("s = {s} beyond the path")));
    }
    let arr = two_sided_array(path, back_needed)?;
    let ji = arr.zero + j as usize;
    let a = time_weights(cov, dt, k_max);
    Ok(inner_sum(cov, &arr.values, ji, &a) * dt - c_star)
}

fn time_weights<C: Covariance>(cov: &C, dt: f64, k_max: usize) -> Vec<f64> {
    let w = trapezoid_weights(k_max);
    (0..=k_max).map(|k| w(k) * cov.time_factor(k as f64 * dt)).collect()
}

/// Centering of the microscopic functional: `m(u)` at the nodes of a step
/// `dt`, folded with the same trapezoid weights as the path sum.
#[derive(Debug, Clone)]
pub struct MicroCentering {
    pub dt: f64,
    time_weights: Vec<f64>,
    mean_terms: Vec<f64>,
    full: f64,
}

impl MicroCentering {
    pub fn new<C: Covariance>(cov: &C, dt: f64) -> Result<Self> {
        positive("dt", dt)?;
        let k_max = steps_per_unit(dt / cov.t_support())?;
        let time_weights = time_weights(cov, dt, k_max);
        let mean_terms: Vec<f64> = (0..=k_max).map(|k| heat_mean_r(cov, k as f64 * dt)).collect();
        let w = trapezoid_weights(k_max);
        let full = (0..=k_max).map(|k| w(k) * mean_terms[k]).sum::<f64>() * dt;
        Ok(Self { dt, time_weights, mean_terms, full })
    }

    /// `Σ_j w_j C(s_j) dt` over `nsteps` steps: the deterministic part of the
    /// microscopic double integral.
    pub fn mean_integral(&self, nsteps: usize) -> f64 {
        let w = trapezoid_weights(nsteps);
        (0..=nsteps).map(|j| w(j) * self.centering(j)).sum::<f64>() * self.dt
    }

    /// Discrete value of `c_*` matching the path sums.
    pub fn c_star(&self) -> f64 {
        self.full
    }

    fn centering(&self, j: usize) -> f64 {
        let kmax = self.mean_terms.len() - 1;
        if j == 0 {
            return 0.0;
        }
        if j >= kmax {
            return self.full;
        }
        let mut acc = 0.0;
        for k in 0..=j {
            let w = if k == 0 || k == j { 0.5 } else { 1.0 };
            acc += w * self.mean_terms[k];
        }
        acc * self.dt
    }
}

/// `X_ε(t)` from a microscopic path on `[0, t/ε²]`:
/// `ε ∫₀^{t/ε²} ∫₀^{min(s,1)} (R(u, B(s) - B(s-u)) - m(u)) du ds`.
pub fn x_eps<C: Covariance>(
    cov: &C,
    centering: &MicroCentering,
    path: &BrownianPath,
    eps: f64,
    t: f64,
) -> Result<f64> {
    positive("eps", eps)?;
    positive("t", t)?;
    if path.dt > 1e-2 * (1.0 + 1e-12) || (path.dt - centering.dt).abs() > 1e-15 {
        return Err(LabError::Unresolved {
            constraint: "microscopic step <= 1e-2 and equal to the centering step",
            detail: format!("path dt {}, centering dt {}", path.dt, centering.dt),
        });
    }
    let horizon = t / (eps * eps);
    let nsteps = (horizon / path.dt).round() as usize;
    if ((nsteps as f64) * path.dt - horizon).abs() > 1e-6 * horizon.max(1.0) {
        return Err(LabError::InvalidParameter {
            name: "t",
            reason: format!("t/ε² = {horizon} is not a multiple of the path step"),
        });
    }
    if nsteps > path.steps() {
        return Err(LabError::OutOfDomain(format!("path shorter than t/ε² = {horizon}")));
    }
    let z = &path.values;
    let a = &centering.time_weights;
    let mut total = 0.0;
    for j in 0..=nsteps {
        let w = if j == 0 || j == nsteps { 0.5 } else { 1.0 };
        let inner = if j == 0 { 0.0 } else { inner_sum(cov, z, j, a) * path.dt };
        total += w * (inner - centering.centering(j));
    }
    Ok(eps * total * path.dt)
}

/// Monte Carlo of `σ_*² = 2 ∫₀¹ E[𝒳(s) 𝒳(0)] ds` on two-sided paths, with
/// the s-integral by trapezoid at step `s_step`.
pub fn sigma_star_sq_mc<C: Covariance>(
    cov: &C,
    npaths: usize,
    dt: f64,
    s_step: f64,
    seed: u64,
) -> Result<EstimateWithCI> {
    let centering = MicroCentering::new(cov, dt)?;
    let stride = (s_step / dt).round() as usize;
    if stride == 0 || ((stride as f64) * dt - s_step).abs() > 1e-9 {
        return Err(LabError::InvalidParameter { name: "s_step", reason: "must be a multiple of dt".into() });
    }
    let k_max = centering.time_weights.len() - 1;
    let n_s = k_max / stride;
    if n_s * stride != k_max {
        return Err(LabError::InvalidParameter { name: "s_step", reason: "must divide the support".into() });
    }
    let c = centering.c_star();
    let base = derive_key(seed, label_hash("sigma_star"));
    let samples = par_map(npaths, |i| {
        let p = sample_two_sided(1.0, dt, derive_key(base, i as u64)).expect("validated");
        let arr = two_sided_array(&p, k_max).expect("two-sided");
        let cal = |j: usize| inner_sum(cov, &arr.values, arr.zero + j, &centering.time_weights) * dt - c;
        let x0 = cal(0);
        let mut integral = 0.0;
        for m in 0..=n_s {
            let w = if m == 0 || m == n_s { 0.5 } else { 1.0 };
            integral += w * cal(m * stride);
        }
        2.0 * x0 * integral * s_step
    });
    Ok(batch_means(&samples, BATCHES))
}

/// Tabulated `H(a, x) = ∫₀^{1-a} dw ∫ q(w, x - y) ∂_y R(w + a, y) dy` so that
/// `Z̃(1) = ∫₀¹ H(a, B(1) - B(1-a)) da`.
#[derive(Debug, Clone)]
pub struct ClarkOconeKernel {
    pub a_step: f64,
    pub x_step: f64,
    pub x_max: f64,
    na: usize,
    nx: usize,
    values: Vec<f64>,
}

impl ClarkOconeKernel {
    pub fn build<C: Covariance>(cov: &C, a_step: f64, x_step: f64) -> Result<Self> {
        positive("a_step", a_step)?;
        positive("x_step", x_step)?;
        let span = cov.t_support();
        let na = (span / a_step).round() as usize + 1;
        if (((na - 1) as f64) * a_step - span).abs() > 1e-9 {
            return Err(LabError::InvalidParameter { name: "a_step", reason: "must divide the time support".into() });
        }
        let x_max = cov.x_support() + 6.0 * span.sqrt();
        let nx = (2.0 * x_max / x_step).ceil() as usize + 1;
        let (y0, h, ny) = space_nodes(cov);
        let w_rule = Panels::new(8).composite(0.0, span, 8);
        // G(w, x) = ∫ q(w, x - y) S'(y) dy at the w nodes.
        let g: Vec<Vec<f64>> = par_map(w_rule.len(), |k| {
            let w = w_rule[k].0;
            (0..nx)
                .map(|j| {
                    let x = -x_max + j as f64 * x_step;
                    gauss_smooth_linear(y0, h, ny, |m| cov.space_factor_dx(y0 + m as f64 * h), w, x)
                })
                .collect()
        });
        let rows = par_map(na, |i| {
            let a = i as f64 * a_step;
            let mut row = vec![0.0; nx];
            for (k, &(w, weight)) in w_rule.iter().enumerate() {
                let tf = cov.time_factor(w + a);
                if tf == 0.0 {
                    continue;
                }
                let c = weight * tf;
                for (r, gv) in row.iter_mut().zip(&g[k]) {
                    *r += c * gv;
                }
            }
            row
        });
        Ok(Self { a_step, x_step, x_max, na, nx, values: rows.concat() })
    }

    /// Bilinear lookup, zero outside the table.
    pub fn h(&self, a: f64, x: f64) -> f64 {
        let fa = a / self.a_step;
        let fx = (x + self.x_max) / self.x_step;
        if !(fa >= 0.0 && fx >= 0.0) {
            return 0.0;
        }
        let (i, j) = (fa as usize, fx as usize);
        if j + 1 >= self.nx || i >= self.na {
            return 0.0;
        }
        let i = i.min(self.na - 2);
        let wa = fa - i as f64;
        let wx = fx - j as f64;
        let v = &self.values;
        let b = i * self.nx + j;
        let r0 = v[b] + wx * (v[b + 1] - v[b]);
        let r1 = v[b + self.nx] + wx * (v[b + self.nx + 1] - v[b + self.nx]);
        r0 + wa * (r1 - r0)
    }

    /// `Z̃(1)` from a path on `[0, 1]` whose step is `a_step`.
    pub fn z_tilde(&self, path: &BrownianPath) -> Result<f64> {
        let k_max = self.na - 1;
        if (path.dt - self.a_step).abs() > 1e-15 || path.steps() < k_max {
            return Err(LabError::PathMismatch(format!(
                "need step {} over [0, 1], got step {} with {} steps",
                self.a_step,
                path.dt,
                path.steps()
            )));
        }
        let z = &path.values;
        let top = z[k_max];
        let mut acc = 0.0;
        for k in 0..=k_max {
            let w = if k == 0 || k == k_max { 0.5 } else { 1.0 };
            acc += w * self.h(k as f64 * self.a_step, top - z[k_max - k]);
        }
        Ok(acc * self.a_step)
    }
}

/// Samples of `Z̃(1)`.
pub fn z_tilde_samples(kernel: &ClarkOconeKernel, npaths: usize, seed: u64) -> Vec<f64> {
    let base = derive_key(seed, label_hash("sigma_prime"));
    par_map(npaths, |i| {
        let p = sample_path(1.0, kernel.a_step, derive_key(base, i as u64)).expect("valid step");
        kernel.z_tilde(&p).expect("matching step")
    })
}

/// Monte Carlo of `σ'_*² = E Z̃(1)²`.
pub fn sigma_prime_sq_mc(kernel: &ClarkOconeKernel, npaths: usize, seed: u64) -> EstimateWithCI {
    let squares: Vec<f64> = z_tilde_samples(kernel, npaths, seed).iter().map(|z| z * z).collect();
    batch_means(&squares, BATCHES)
}

fn check_pair(b1: &BrownianPath, b2: &BrownianPath, t: f64) -> Result<usize> {
    if b1.dt != b2.dt || b1.values.len() != b2.values.len() {
        return Err(LabError::PathMismatch("paths must share step and length".into()));
    }
    positive("t", t)?;
    let n = (t / b1.dt).round() as usize;
    if ((n as f64) * b1.dt - t).abs() > 1e-9 * t.max(1.0) || n > b1.steps() {
        return Err(LabError::InvalidParameter { name: "t", reason: "must be a path node".into() });
    }
    Ok(n)
}

/// Discrete time weights on the band `|s - u| < reach`, one per lag.
fn lag_weights(kernel: &CrossCovariance, dt: f64) -> Vec<f64> {
    let lags = (kernel.t_reach() / dt).ceil() as usize;
    (0..=lags).map(|l| kernel.time_factor(l as f64 * dt)).collect()
}

/// `Y(t) = ∫₀ᵗ∫₀ᵗ R_{ε₁,ε₂}(s - u, B₁(s) - B₂(u)) ds du`, double trapezoid over
/// the band where the kernel is nonzero.
pub fn y_eps(kernel: &CrossCovariance, b1: &BrownianPath, b2: &BrownianPath, t: f64) -> Result<f64> {
    let n = check_pair(b1, b2, t)?;
    let dt = b1.dt;
    let lag = lag_weights(kernel, dt);
    let (v1, v2) = (&b1.values, &b2.values);
    let w = |k: usize| if k == 0 || k == n { 0.5 } else { 1.0 };
    let mut acc = 0.0;
    for j in 0..=n {
        let lo = j.saturating_sub(lag.len() - 1);
        let hi = (j + lag.len() - 1).min(n);
        let mut row = 0.0;
        for k in lo..=hi {
            let a = lag[j.abs_diff(k)];
            if a != 0.0 {
                row += w(k) * a * kernel.space_factor(v1[j] - v2[k]);
            }
        }
        acc += w(j) * row;
    }
    Ok(acc * dt * dt)
}

/// `Ỹ(t) = ∫₀ᵗ Φ_{ε₁,ε₂}(B₁(s) - B₂(s)) w(s) ds` with `w(s)` the discrete
/// mass of the time factor over `[0, t]` seen from `s`.
pub fn y_tilde(kernel: &CrossCovariance, b1: &BrownianPath, b2: &BrownianPath, t: f64) -> Result<f64> {
    let n = check_pair(b1, b2, t)?;
    let dt = b1.dt;
    let lag = lag_weights(kernel, dt);
    let w = |k: usize| if k == 0 || k == n { 0.5 } else { 1.0 };
    let mut acc = 0.0;
    for j in 0..=n {
        let lo = j.saturating_sub(lag.len() - 1);
        let hi = (j + lag.len() - 1).min(n);
        let mass: f64 = (lo..=hi).map(|k| w(k) * lag[j.abs_diff(k)]).sum::<f64>() * dt;
        acc += w(j) * mass * kernel.space_factor(b1.values[j] - b2.values[j]);
    }
    Ok(acc * dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mollifier::{CovarianceTable, ZeroCovariance};
    use crate::stats::{mean, variance};

    fn table() -> CovarianceTable {
        CovarianceTable::build(MollifierSpec::default())
    }

    #[test]
    fn gauss_smoothing_of_linear_pieces() {
        // Hat function on [-1, 1]: compare against brute-force quadrature.
        let f = |j: usize| [0.0, 1.0, 0.0][j];
        for &(var, x) in &[(0.3, 0.2), (0.01, -0.4), (2.0, 1.5), (1e-6, 0.25)] {
            let exact = gauss_smooth_linear(-1.0, 1.0, 3, f, var, x);
            let brute = Panels::new(16).integrate(-1.0, 1.0, 400, |y| heat_kernel(var, x - y) * (1.0 - y.abs()));
            assert!((exact - brute).abs() < 1e-9, "{var} {x}: {exact} vs {brute}");
        }
        assert!((gauss_smooth_linear(-1.0, 1.0, 3, f, 0.0, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn heat_mean_limits() {
        let tab = table();
        assert!((heat_mean_r(&tab, 0.0) - tab.r(0.0, 0.0)).abs() < 1e-12);
        assert_eq!(heat_mean_r(&tab, 1.5), 0.0);
        let direct = Panels::new(16).integrate(-1.0, 1.0, 64, |x| tab.r(0.4, x) * heat_kernel(0.4, x));
        assert!((heat_mean_r(&tab, 0.4) - direct).abs() < 1e-7);
    }

    #[test]
    fn c_star_positive_and_zero_stub() {
        let c = c_star_quadrature(&table());
        assert!(c > 0.0 && c < table().r(0.0, 0.0));
        assert_eq!(c_star_quadrature(&ZeroCovariance), 0.0);
        assert_eq!(c_star_mc(&ZeroCovariance, 64, 1e-3, 1).unwrap().mean, 0.0);
        assert!(c_star_mc(&table(), 64, 2e-3, 1).is_err());
    }

    #[test]
    fn centering_matches_quadrature() {
        let tab = table();
        let c = MicroCentering::new(&tab, 0.01).unwrap();
        assert!((c.c_star() - c_star_quadrature(&tab)).abs() < 1e-4);
    }

    #[test]
    fn cal_x_bounds_and_coverage() {
        let tab = table();
        let c = c_star_quadrature(&tab);
        let p = sample_two_sided(2.0, 1e-3, 4).unwrap();
        let bound = tab.r(0.0, 0.0) + c;
        for s in [0.0, 0.5, 1.0, 1.7] {
            assert!(cal_x(&tab, c, &p, s).unwrap().abs() <= bound);
        }
        let one_sided = sample_path(2.0, 1e-3, 4).unwrap();
        assert!(cal_x(&tab, c, &one_sided, 0.5).is_err());
        assert!(cal_x(&tab, c, &one_sided, 1.5).is_ok());
        assert_eq!(cal_x(&ZeroCovariance, 0.0, &p, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn cal_x_far_apart_uncorrelated() {
        let tab = table();
        let c = c_star_quadrature(&tab);
        let prods = par_map(4000, |i| {
            let p = sample_two_sided(2.0, 1e-2, 100 + i as u64).unwrap();
            cal_x(&tab, c, &p, 0.0).unwrap() * cal_x(&tab, c, &p, 1.0).unwrap()
        });
        let se = (variance(&prods) / prods.len() as f64).sqrt();
        assert!(mean(&prods).abs() < 4.0 * se, "{} ± {}", mean(&prods), se);
    }

    #[test]
    fn x_eps_zero_stub_and_resolution() {
        let zc = MicroCentering::new(&ZeroCovariance, 0.01).unwrap();
        let p = sample_path(25.0, 0.01, 3).unwrap();
        assert_eq!(x_eps(&ZeroCovariance, &zc, &p, 0.2, 1.0).unwrap(), 0.0);
        let tab = table();
        let c = MicroCentering::new(&tab, 0.01).unwrap();
        let coarse = sample_path(25.0, 0.02, 3).unwrap();
        assert!(x_eps(&tab, &c, &coarse, 0.2, 1.0).is_err());
        assert!(x_eps(&tab, &c, &p, 0.1, 1.0).is_err());
    }

    #[test]
    fn x_eps_is_centered() {
        let tab = table();
        let c = MicroCentering::new(&tab, 0.01).unwrap();
        let xs = par_map(2000, |i| {
            let p = sample_path(6.25, 0.01, 7000 + i as u64).unwrap();
            x_eps(&tab, &c, &p, 0.4, 1.0).unwrap()
        });
        let e = batch_means(&xs, BATCHES);
        assert!(e.within_se_of(0.0, 3.0), "{e:?}");
    }

    #[test]
    fn clark_ocone_kernel_is_centered() {
        let tab = table();
        let k = ClarkOconeKernel::build(&tab, 1.0 / 256.0, 1.0 / 64.0).unwrap();
        // ∂ₓR odd ⇒ H odd in x.
        for &(a, x) in &[(0.1, 0.3), (0.5, 0.05), (0.9, 1.2)] {
            assert!((k.h(a, x) + k.h(a, -x)).abs() < 1e-10);
        }
        let z = z_tilde_samples(&k, 20_000, 5);
        assert!(batch_means(&z, BATCHES).within_se_of(0.0, 3.0));
        let kz = ClarkOconeKernel::build(&ZeroCovariance, 1.0 / 256.0, 1.0 / 64.0).unwrap();
        assert_eq!(sigma_prime_sq_mc(&kz, 100, 1).mean, 0.0);
    }

    #[test]
    fn y_nonnegative_and_close_to_y_tilde() {
        let spec = MollifierSpec::default();
        let kern = CrossCovariance::new(&spec, 0.2, 0.2).unwrap();
        let mut diffs = Vec::new();
        for i in 0..20 {
            let b1 = sample_path(1.0, 4e-4, 2 * i).unwrap();
            let b2 = sample_path(1.0, 4e-4, 2 * i + 1).unwrap();
            let y = y_eps(&kern, &b1, &b2, 1.0).unwrap();
            let yt = y_tilde(&kern, &b1, &b2, 1.0).unwrap();
            assert!(y >= 0.0 && yt >= 0.0);
            diffs.push((y - yt).abs());
        }
        assert!(mean(&diffs) < 0.05, "{}", mean(&diffs));
        let zero = CrossCovariance::zero(&spec, 0.2, 0.2).unwrap();
        let b1 = sample_path(1.0, 4e-4, 1).unwrap();
        let b2 = sample_path(1.0, 4e-4, 2).unwrap();
        assert_eq!(y_eps(&zero, &b1, &b2, 1.0).unwrap(), 0.0);
        let b3 = sample_path(1.0, 1e-3, 2).unwrap();
        assert!(y_eps(&kern, &b1, &b3, 1.0).is_err());
    }
}
