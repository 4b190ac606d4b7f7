//! The regularized equation `∂ₜu = ½∂ₓₓu + u(ξ_ε − c)` by finite differences
//! and by Feynman-Kac Monte Carlo, plus the noise-averaged moment formulas.

use crate::brownian::{sample_path, BrownianPath};
use crate::error::{positive, LabError, Result};
use crate::functionals::{x_eps, y_eps, ConstantsEstimate, MicroCentering, BATCHES};
use crate::mollifier::{Covariance, CrossCovariance};
use crate::noise::MollifiedField;
use crate::rng::{derive_key, label_hash, CounterRng};
use crate::stats::{batch_means, par_map, EstimateWithCI};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Constant { value: f64 },
    /// `amplitude · exp(−x²/(2·variance))`.
    Gaussian { amplitude: f64, variance: f64 },
    /// `offset + amplitude · cos(wavenumber · x)`.
    Cosine { offset: f64, amplitude: f64, wavenumber: f64 },
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self::Constant { value: 1.0 }
    }
}

impl InitialCondition {
    pub fn one() -> Self {
        Self::Constant { value: 1.0 }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Gaussian { amplitude, variance } => amplitude * (-x * x / (2.0 * variance)).exp(),
            Self::Cosine { offset, amplitude, wavenumber } => offset + amplitude * (wavenumber * x).cos(),
        }
    }

    /// `M` with `|u₀| ≤ M`.
    pub fn bound(&self) -> f64 {
        match *self {
            Self::Constant { value } => value.abs(),
            Self::Gaussian { amplitude, .. } => amplitude.abs(),
            Self::Cosine { offset, amplitude, .. } => offset.abs() + amplitude.abs(),
        }
    }

    /// `(q(t) * u₀)(x)` in closed form.
    pub fn heat_semigroup(&self, t: f64, x: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Gaussian { amplitude, variance } => {
                let v = variance + t;
                amplitude * (variance / v).sqrt() * (-x * x / (2.0 * v)).exp()
            }
            Self::Cosine { offset, amplitude, wavenumber } => {
                offset + amplitude * (-0.5 * wavenumber * wavenumber * t).exp() * (wavenumber * x).cos()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { value } => value.is_finite(),
            Self::Gaussian { amplitude, variance } => amplitude.is_finite() && variance.is_finite() && variance > 0.0,
            Self::Cosine { offset, amplitude, wavenumber } => {
                offset.is_finite() && amplitude.is_finite() && wavenumber.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::InvalidParameter { name: "u0", reason: format!("{self:?}") })
        }
    }
}

/// `c_ε = c_*/ε + σ²/2`.
pub fn c_eps(eps: f64, c_star: f64, sigma_sq: f64) -> Result<f64> {
    positive("eps", eps)?;
    Ok(c_star / eps + 0.5 * sigma_sq)
}

/// `c_ε` from a constants report, using the Clark-Ocone value of `σ_*²`.
pub fn c_eps_from(eps: f64, constants: &ConstantsEstimate) -> Result<f64> {
    c_eps(eps, constants.c_star, constants.sigma_prime_sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatScheme {
    CrankNicolson,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdParams {
    pub t: f64,
    pub dt: f64,
    pub dx: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub scheme: HeatScheme,
    /// Keep every `save_every`-th time level (0 keeps only the last one).
    pub save_every: usize,
}

impl FdParams {
    /// Same x-nodes as the field.
    pub fn on_field(field: &MollifiedField, t: f64, dt: f64) -> Self {
        let g = &field.grid;
        Self {
            t,
            dt,
            dx: g.dx,
            x_min: g.x_min,
            x_max: g.x(g.nx() - 1),
            scheme: HeatScheme::CrankNicolson,
            save_every: 0,
        }
    }

    /// Halved steps on the same interval.
    pub fn refined(&self) -> Self {
        Self { dt: self.dt / 2.0, dx: self.dx / 2.0, ..*self }
    }

    fn nx(&self) -> usize {
        ((self.x_max - self.x_min) / self.dx + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionField {
    pub x_min: f64,
    pub dx: f64,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub scheme: String,
    pub eps: f64,
    pub c: f64,
    pub seed: u64,
}

impl SolutionField {
    pub fn last(&self) -> &[f64] {
        self.rows.last().expect("at least one row")
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    /// Linear interpolation of the last row.
    pub fn at(&self, x: f64) -> Option<f64> {
        interp_row(self.last(), self.x_min, self.dx, x)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x,u")?;
        for (t, row) in self.times.iter().zip(&self.rows) {
            for (j, v) in row.iter().enumerate() {
                writeln!(out, "{t},{},{v:.12e}", self.x(j))?;
            }
        }
        Ok(())
    }
}

pub(crate) fn interp_row(row: &[f64], x_min: f64, dx: f64, x: f64) -> Option<f64> {
    let f = (x - x_min) / dx;
    if !(f >= 0.0) {
        return None;
    }
    let j = f.floor() as usize;
    if j + 1 >= row.len() {
        return if j + 1 == row.len() && f - j as f64 <= 1e-9 { Some(row[j]) } else { None };
    }
    let w = f - j as f64;
    Some(row[j] + w * (row[j + 1] - row[j]))
}


/// Heat evolution `∂ₜu = ½∂ₓₓu` over a fixed substep with Dirichlet data.
/// `theta = 1/2` is Crank-Nicolson, `theta = 1` backward Euler, `theta = 0`
/// forward Euler.
pub(crate) struct HeatStepper {
    r: f64,
    theta: f64,
    c_prime: Vec<f64>,
    denom: Vec<f64>,
    scratch: Vec<f64>,
}

impl HeatStepper {
    pub(crate) fn new(theta: f64, tau: f64, dx: f64, n: usize) -> Self {
        let r = 0.5 * tau / (dx * dx);
        let m = n.saturating_sub(2);
        let mut c_prime = vec![0.0; m];
        let mut denom = vec![1.0; m];
        if theta > 0.0 && m > 0 {
            let (diag, off) = (1.0 + 2.0 * theta * r, -theta * r);
            denom[0] = diag;
            c_prime[0] = off / diag;
            for i in 1..m {
                denom[i] = diag - off * c_prime[i - 1];
                c_prime[i] = off / denom[i];
            }
        }
        Self { r, theta, c_prime, denom, scratch: vec![0.0; n] }
    }

    /// Advances `u` in place; `left`, `right` are the boundary values at the
    /// end of the substep.
    pub(crate) fn step(&mut self, u: &mut [f64], left: f64, right: f64) {
        let n = u.len();
        if n < 3 {
            return;
        }
        let (r, theta) = (self.r, self.theta);
        let explicit = (1.0 - theta) * r;
        let d = &mut self.scratch;
        for j in 1..n - 1 {
            d[j] = u[j] + explicit * (u[j - 1] - 2.0 * u[j] + u[j + 1]);
        }
        if theta == 0.0 {
            u[1..n - 1].copy_from_slice(&d[1..n - 1]);
        } else {
            let off = -theta * r;
            d[1] -= off * left;
            d[n - 2] -= off * right;
            let m = n - 2;
            d[1] /= self.denom[0];
            for i in 1..m {
                d[i + 1] = (d[i + 1] - off * d[i]) / self.denom[i];
            }
            u[n - 2] = d[n - 2];
            for i in (0..m - 1).rev() {
                u[i + 1] = d[i + 1] - self.c_prime[i] * u[i + 2];
            }
        }
        u[0] = left;
        u[n - 1] = right;
    }
}

/// Strang splitting: heat over `dt/2`, multiply by `exp((ξ_ε − c)·dt)` with
/// the potential at the midpoint, heat over `dt/2`.
///
/// The boundary nodes follow the noise-free evolution `e^{−ct}(q(t) * u₀)`,
/// which the buffer keeps away from the region of interest.
pub fn solve_fd(field: &MollifiedField, c: f64, u0: &InitialCondition, params: &FdParams) -> Result<SolutionField> {
    u0.validate()?;
    positive("t", params.t)?;
    positive("dt", params.dt)?;
    positive("dx", params.dx)?;
    if params.dx > field.space_scale / 2.0 * (1.0 + 1e-12) || params.dt > field.time_scale / 2.0 * (1.0 + 1e-12) {
        return Err(LabError::Unresolved {
            constraint: "solver dx <= ε/2 and dt <= ε²/2",
            detail: format!("dx {}, dt {}, ε {}", params.dx, params.dt, field.space_scale),
        });
    }
    if params.scheme == HeatScheme::Explicit && params.dt > params.dx * params.dx / 2.0 * (1.0 + 1e-12) {
        return Err(LabError::Stability(format!(
            "explicit scheme needs dt <= dx²/2 (dt {}, dx {})",
            params.dt, params.dx
        )));
    }
    let g = &field.grid;
    if g.t_min > 1e-12 || params.t > g.t_max + 1e-12 {
        return Err(LabError::OutOfDomain(format!(
            "field covers [{}, {}], need [0, {}]",
            g.t_min, g.t_max, params.t
        )));
    }
    let nx = params.nx();
    if nx < 3 {
        return Err(LabError::DegenerateGrid("solver needs at least 3 nodes".into()));
    }
    let steps = (params.t / params.dt).round() as usize;
    if ((steps as f64) * params.dt - params.t).abs() > 1e-9 * params.t {
        return Err(LabError::InvalidParameter { name: "dt", reason: "must divide t".into() });
    }
    let xs: Vec<f64> = (0..nx).map(|j| params.x_min + j as f64 * params.dx).collect();
    let theta = match params.scheme {
        HeatScheme::CrankNicolson => 0.5,
        HeatScheme::Explicit => 0.0,
    };
    let mut heat = HeatStepper::new(theta, params.dt / 2.0, params.dx, nx);
    // The potential factor has been applied up to `t_pot` when the heat
    // flow has reached `t_heat`.
    let boundary = |t_heat: f64, t_pot: f64| {
        let decay = (-c * t_pot).exp();
        (decay * u0.heat_semigroup(t_heat, xs[0]), decay * u0.heat_semigroup(t_heat, xs[nx - 1]))
    };
    let mut u: Vec<f64> = xs.iter().map(|&x| u0.eval(x)).collect();
    let (mut times, mut rows) = (Vec::new(), Vec::new());
    if params.save_every > 0 {
        times.push(0.0);
        rows.push(u.clone());
    }
    for n in 0..steps {
        let t0 = n as f64 * params.dt;
        let mid = t0 + 0.5 * params.dt;
        let t1 = t0 + params.dt;
        let (lm, rm) = boundary(mid, t0);
        heat.step(&mut u, lm, rm);
        for (v, &x) in u.iter_mut().zip(&xs).skip(1).take(nx - 2) {
            *v *= ((field.at(mid, x) - c) * params.dt).exp();
        }
        let damp = (-c * params.dt).exp();
        u[0] *= damp;
        u[nx - 1] *= damp;
        let (l1, r1) = boundary(t1, t1);
        heat.step(&mut u, l1, r1);
        let last = n + 1 == steps;
        if last || (params.save_every > 0 && (n + 1) % params.save_every == 0) {
            times.push(t1);
            rows.push(u.clone());
        }
    }
    Ok(SolutionField {
        x_min: params.x_min,
        dx: params.dx,
        times,
        rows,
        scheme: match params.scheme {
            HeatScheme::CrankNicolson => "fd-crank-nicolson".into(),
            HeatScheme::Explicit => "fd-explicit".into(),
        },
        eps: field.space_scale,
        c,
        seed: field.seed,
    })
}

fn check_fk_query(field: &MollifiedField, t: f64, x: f64, dt: f64) -> Result<usize> {
    positive("t", t)?;
    positive("path dt", dt)?;
    let g = &field.grid;
    if t > g.t_max + 1e-12 || g.t_min > 1e-12 {
        return Err(LabError::OutOfDomain(format!("t = {t} outside the field's time range")));
    }
    if !g.is_buffered(x, t) {
        return Err(LabError::OutOfDomain(format!("x = {x} is within the 6√t buffer of the boundary")));
    }
    let steps = (t / dt).round() as usize;
    if steps == 0 || ((steps as f64) * dt - t).abs() > 1e-9 * t {
        return Err(LabError::InvalidParameter { name: "path dt", reason: "must divide t".into() });
    }
    Ok(steps)
}

/// Per-path samples of `u₀(x + B(t)) exp(∫₀ᵗ ξ_ε(t − s, x + B(s)) ds − ct)`,
/// the integral by trapezoid at the path nodes.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_samples(
    field: &MollifiedField,
    c: f64,
    u0: &InitialCondition,
    t: f64,
    x: f64,
    npaths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    u0.validate()?;
    let steps = check_fk_query(field, t, x, dt)?;
    let sd = dt.sqrt();
    let base = derive_key(seed, label_hash("feynman_kac"));
    Ok(par_map(npaths, |i| {
        let mut rng = CounterRng::new(derive_key(base, i as u64));
        let mut b = 0.0;
        let mut integral = 0.5 * field.at(t, x);
        for k in 1..=steps {
            b += sd * rng.normal();
            let w = if k == steps { 0.5 } else { 1.0 };
            integral += w * field.at(t - k as f64 * dt, x + b);
        }
        let start = u0.eval(x + b);
        if start == 0.0 {
            0.0
        } else {
            start * (integral * dt - c * t).exp()
        }
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn feynman_kac(
    field: &MollifiedField,
    c: f64,
    u0: &InitialCondition,
    t: f64,
    x: f64,
    npaths: usize,
    dt: f64,
    seed: u64,
) -> Result<EstimateWithCI> {
    let s = feynman_kac_samples(field, c, u0, t, x, npaths, dt, seed)?;
    Ok(batch_means(&s, BATCHES))
}

/// `∫₀ᵗ∫₀ˢ R_ε(s−u, B(s)−B(u)) du ds` from a macroscopic path, computed in
/// microscopic coordinates `B ↦ B(ε²·)/ε`. The path is thinned when that
/// brings the microscopic step onto the centering step.
pub fn double_integral<C: Covariance>(
    cov: &C,
    centering: &MicroCentering,
    path: &BrownianPath,
    eps: f64,
    t: f64,
) -> Result<f64> {
    let micro_dt = path.dt / (eps * eps);
    let factor = (centering.dt / micro_dt).round() as usize;
    let micro = if factor > 1 {
        path.decimate(factor)?.rescaled(1.0 / eps)
    } else {
        path.rescaled(1.0 / eps)
    };
    let micro = BrownianPath { dt: centering.dt, ..micro };
    let nsteps = (t / (eps * eps) / micro.dt).round() as usize;
    Ok(x_eps(cov, centering, &micro, eps, t)? + eps * centering.mean_integral(nsteps))
}

/// Microscopic step used for `ε` given a macroscopic step: the rescaled
/// step, multiplied up to at most 1e-2.
pub fn micro_step(macro_dt: f64, eps: f64) -> f64 {
    let micro = macro_dt / (eps * eps);
    if micro < 1e-2 {
        micro * (1e-2 / micro + 1e-9).floor()
    } else {
        micro
    }
}

/// Route (b) for the first moment: `E_B[u₀(x + B(t)) exp(∫∫R_ε − c t)]`.
#[allow(clippy::too_many_arguments)]
pub fn first_moment_functional<C: Covariance>(
    cov: &C,
    eps: f64,
    c: f64,
    u0: &InitialCondition,
    t: f64,
    x: f64,
    npaths: usize,
    micro_dt: f64,
    seed: u64,
) -> Result<EstimateWithCI> {
    positive("eps", eps)?;
    let centering = MicroCentering::new(cov, micro_dt)?;
    let macro_dt = micro_dt * eps * eps;
    let base = derive_key(seed, label_hash("first_moment"));
    let samples: Result<Vec<f64>> = par_map(npaths, |i| {
        let p = sample_path(t, macro_dt, derive_key(base, i as u64))?;
        let d = double_integral(cov, &centering, &p, eps, t)?;
        Ok(u0.eval(x + p.values[p.steps()]) * (d - c * t).exp())
    })
    .into_iter()
    .collect();
    Ok(batch_means(&samples?, BATCHES))
}

/// Route (b) for `E[u_{ε₁} u_{ε₂}]`: independent `B₁, B₂` with weight
/// `exp(Y_{ε₁,ε₂} + ∫∫R_{ε₁}(B₁) + ∫∫R_{ε₂}(B₂) − (c₁ + c₂)t)`.
#[allow(clippy::too_many_arguments)]
pub fn second_moment_functional<C: Covariance>(
    cov: &C,
    cross: &CrossCovariance,
    (c1, c2): (f64, f64),
    u0: &InitialCondition,
    t: f64,
    x: f64,
    npaths: usize,
    macro_dt: f64,
    seed: u64,
) -> Result<EstimateWithCI> {
    let (e1, e2) = (cross.eps1, cross.eps2);
    let m1 = MicroCentering::new(cov, micro_step(macro_dt, e1))?;
    let m2 = MicroCentering::new(cov, micro_step(macro_dt, e2))?;
    let base = derive_key(seed, label_hash("second_moment"));
    let samples: Result<Vec<f64>> = par_map(npaths, |i| {
        let b1 = sample_path(t, macro_dt, derive_key(base, 2 * i as u64))?;
        let b2 = sample_path(t, macro_dt, derive_key(base, 2 * i as u64 + 1))?;
        let y = y_eps(cross, &b1, &b2, t)?;
        let d1 = double_integral(cov, &m1, &b1, e1, t)?;
        let d2 = double_integral(cov, &m2, &b2, e2, t)?;
        let n = b1.steps();
        let w = u0.eval(x + b1.values[n]) * u0.eval(x + b2.values[n]);
        Ok(w * (y + d1 + d2 - (c1 + c2) * t).exp())
    })
    .into_iter()
    .collect();
    Ok(batch_means(&samples?, BATCHES))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub eps: f64,
    pub t: f64,
    pub x: f64,
    /// Average of the FD solution over noise realizations.
    pub noise_average: EstimateWithCI,
    /// Noise-free Brownian-functional representation.
    pub functional: EstimateWithCI,
}

impl MomentCheck {
    pub fn agrees(&self, k: f64) -> bool {
        self.noise_average.agrees_with(&self.functional, k)
    }
}

/// First-moment check: FD averaged over `realizations` fields (built by
/// `make_field` from a derived seed) against the functional route.
#[allow(clippy::too_many_arguments)]
pub fn moment_formulas_check<C: Covariance, F>(
    cov: &C,
    make_field: F,
    eps: f64,
    c: f64,
    u0: &InitialCondition,
    t: f64,
    x: f64,
    realizations: usize,
    solver_dt: f64,
    npaths: usize,
    seed: u64,
) -> Result<MomentCheck>
where
    F: Fn(u64) -> Result<MollifiedField> + Sync,
{
    let values: Result<Vec<f64>> = par_map(realizations, |r| {
        let f = make_field(derive_key(seed, r as u64))?;
        let sol = solve_fd(&f, c, u0, &FdParams::on_field(&f, t, solver_dt))?;
        sol.at(x).ok_or_else(|| LabError::OutOfDomain(format!("x = {x}")))
    })
    .into_iter()
    .collect();
    let noise_average = batch_means(&values?, BATCHES);
    let b_seed = derive_key(seed, label_hash("functional"));
    let functional = first_moment_functional(cov, eps, c, u0, t, x, npaths, 0.01, b_seed)?;
    Ok(MomentCheck { eps, t, x, noise_average, functional })
}
