//! Reference solutions of the limiting equation `∂ₜU = ½∂ₓₓU + Uξ`: an Itô
//! grid scheme, the Wiener chaos series and the local-time representation
//! of the second moment.

use crate::brownian::{intersection_local_time, sample_path};
use crate::error::{positive, LabError, Result};
use crate::functionals::{heat_kernel, BATCHES};
use crate::noise::WhiteNoiseRealization;
use crate::rng::{derive_key, label_hash};
use crate::solver::{HeatStepper, InitialCondition, SolutionField};
use crate::stats::{batch_means, par_map, EstimateWithCI};
use gauss_quad::GaussHermite;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `q(s, y) = (2πs)^{-1/2} e^{-y²/2s}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeatKernel;

impl HeatKernel {
    #[inline]
    pub fn q(&self, s: f64, y: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            heat_kernel(s, y)
        }
    }

    /// `∫ q(s, y)² dy = (4πs)^{-1/2}`.
    pub fn square_integral(&self, s: f64) -> f64 {
        1.0 / (4.0 * PI * s).sqrt()
    }
}

/// `E e^{ℓ(t)} = 2 e^{t/4} Φ(√(t/2))`, the second moment of the limit with
/// `u₀ ≡ 1`.
pub fn exp_local_time_moment(t: f64) -> f64 {
    let z = (t / 2.0).sqrt();
    2.0 * (t / 4.0).exp() * 0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `‖f_k‖²` for `u₀ ≡ 1`: the simplex integral in closed form,
/// `(t/4)^{k/2} / Γ(1 + k/2)`.
pub fn chaos_term(k: usize, t: f64) -> f64 {
    let half = k as f64 / 2.0;
    (half * (t / 4.0).ln() - libm::lgamma(1.0 + half)).exp()
}

/// `Σ_{k ≤ kmax} ‖f_k‖²` for `u₀ ≡ 1`.
pub fn chaos_second_moment(t: f64, kmax: usize) -> f64 {
    (0..=kmax).map(|k| chaos_term(k, t)).sum()
}

/// The same simplex integrals by recursive quadrature:
/// `I_k(t) = π^{-1/2} ∫₀^{√t} I_{k−1}(t − v²) dv`, `I₀ = 1`, on a grid over
/// `[0, t]` with linear interpolation.
pub fn chaos_terms_quadrature(t: f64, kmax: usize, nodes: usize) -> Vec<f64> {
    let h = t / (nodes - 1) as f64;
    let rule = crate::quadrature::Panels::new(16);
    let mut prev = vec![1.0; nodes];
    let mut out = vec![1.0];
    let lerp = |table: &[f64], s: f64| -> f64 {
        let f = (s / h).clamp(0.0, (nodes - 1) as f64);
        let i = (f as usize).min(nodes - 2);
        let w = f - i as f64;
        table[i] + w * (table[i + 1] - table[i])
    };
    for _ in 1..=kmax {
        let next: Vec<f64> = (0..nodes)
            .map(|m| {
                let tm = m as f64 * h;
                if tm == 0.0 {
                    return 0.0;
                }
                rule.integrate(0.0, tm.sqrt(), 8, |v| lerp(&prev, tm - v * v)) / PI.sqrt()
            })
            .collect();
        out.push(next[nodes - 1]);
        prev = next;
    }
    out
}

/// `(q(s) * u₀)(y)` by Gauss-Hermite quadrature, for initial data without a
/// closed-form heat transform.
pub fn heat_transform_gauss_hermite<F: Fn(f64) -> f64>(u0: F, s: f64, y: f64, degree: usize) -> f64 {
    if s <= 0.0 {
        return u0(y);
    }
    // ∫ q(s, y - y₀) u₀(y₀) dy₀ with y₀ = y + √(2s)·z against e^{-z²}.
    let rule = GaussHermite::new(std::num::NonZeroUsize::new(degree.max(1)).expect("nonzero"));
    let scale = (2.0 * s).sqrt();
    rule.integrate(|z| u0(y + scale * z)) / PI.sqrt()
}

/// The kernel `f_k(s₁..s_k, y₁..y_k)` of the chaos expansion of `U(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaosCoefficient {
    pub k: usize,
    pub t: f64,
    pub x: f64,
    pub u0: InitialCondition,
}

pub fn chaos_coefficient(k: usize, t: f64, x: f64, u0: InitialCondition) -> ChaosCoefficient {
    ChaosCoefficient { k, t, x, u0 }
}

impl ChaosCoefficient {
    /// Zero unless `0 < s₁ < … < s_k < t`.
    pub fn eval(&self, s: &[f64], y: &[f64]) -> Result<f64> {
        if s.len() != self.k || y.len() != self.k {
            return Err(LabError::InvalidParameter {
                name: "arguments",
                reason: format!("need {} times and {} points", self.k, self.k),
            });
        }
        if self.k == 0 {
            return Ok(self.u0.heat_semigroup(self.t, self.x));
        }
        let mut prev = 0.0;
        for &si in s {
            if !(si > prev) {
                return Ok(0.0);
            }
            prev = si;
        }
        if !(self.t > prev) {
            return Ok(0.0);
        }
        let q = HeatKernel;
        let mut v = self.u0.heat_semigroup(s[0], y[0]);
        for i in 0..self.k {
            let (s_next, y_next) = if i + 1 < self.k { (s[i + 1], y[i + 1]) } else { (self.t, self.x) };
            v *= q.q(s_next - s[i], y_next - y[i]);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoParams {
    pub t: f64,
    /// Number of noise rows per solver step.
    pub rows_per_step: usize,
}

/// Semi-implicit Itô scheme `U^{n+1} = (I − dt·½Δ)^{-1} (U^n (1 + ΔW^n))`,
/// where `ΔW^n_j` is the noise integrated over the step and averaged over
/// the cell of node `j` (variance `dt/dx`). The noise enters at the start
/// of each step, so it never sees the value it multiplies.
pub fn solve_she_ito(noise: &WhiteNoiseRealization, u0: &InitialCondition, params: &ItoParams) -> Result<SolutionField> {
    u0.validate()?;
    positive("t", params.t)?;
    let g = &noise.grid;
    if params.rows_per_step == 0 {
        return Err(LabError::InvalidParameter { name: "rows_per_step", reason: "must be positive".into() });
    }
    let dt = g.dt * params.rows_per_step as f64;
    let start = g.t_index(0.0).ok_or_else(|| LabError::OutOfDomain("noise grid has no node at t = 0".into()))?;
    let steps = (params.t / dt).round() as usize;
    if ((steps as f64) * dt - params.t).abs() > 1e-9 * params.t {
        return Err(LabError::InvalidParameter { name: "t", reason: "must be a multiple of the solver step".into() });
    }
    if start + steps * params.rows_per_step > g.nt() {
        return Err(LabError::OutOfDomain(format!("noise covers t <= {}, need {}", g.t_max, params.t)));
    }
    let nx = g.nx();
    let xs: Vec<f64> = (0..nx).map(|j| g.x(j)).collect();
    let mut heat = HeatStepper::new(1.0, dt, g.dx, nx);
    let mut u: Vec<f64> = xs.iter().map(|&x| u0.eval(x)).collect();
    let mut dw = vec![0.0; nx];
    for n in 0..steps {
        dw.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..params.rows_per_step {
            let i = start + n * params.rows_per_step + r;
            for (d, j) in dw.iter_mut().zip(0..nx) {
                *d += noise.cell(i, j) * g.dt;
            }
        }
        for j in 1..nx - 1 {
            u[j] *= 1.0 + dw[j];
        }
        let t1 = (n + 1) as f64 * dt;
        heat.step(&mut u, u0.heat_semigroup(t1, xs[0]), u0.heat_semigroup(t1, xs[nx - 1]));
    }
    Ok(SolutionField {
        x_min: g.x_min,
        dx: g.dx,
        times: vec![steps as f64 * dt],
        rows: vec![u],
        scheme: "she-ito".into(),
        eps: 0.0,
        c: 0.0,
        seed: noise.seed,
    })
}

/// Exact `E U(t, x)²` of the Itô scheme on the infinite lattice for
/// `u₀ ≡ 1`, through the recursion of the lag correlation
/// `M(d) = E U_j U_{j+d}`: add `M(0)·dt/dx` at lag 0, then apply the heat
/// step on both sides.
pub fn lattice_second_moment(t: f64, dt: f64, dx: f64) -> f64 {
    let steps = (t / dt).round() as usize;
    let reach = (10.0 * t.sqrt() / dx).ceil() as usize + 2;
    let n = 2 * reach + 1;
    let mut heat = HeatStepper::new(1.0, dt, dx, n);
    let mut m = vec![1.0; n];
    for _ in 0..steps {
        m[reach] += m[reach] * dt / dx;
        heat.step(&mut m, 1.0, 1.0);
        heat.step(&mut m, 1.0, 1.0);
    }
    m[reach]
}

/// Monte Carlo of `E[u₀(x + B₁(t)) u₀(x + B₂(t)) e^{ℓ(t)}]`.
#[allow(clippy::too_many_arguments)]
pub fn limit_second_moment(
    t: f64,
    x: f64,
    u0: &InitialCondition,
    npairs: usize,
    dt: f64,
    delta: f64,
    seed: u64,
) -> Result<EstimateWithCI> {
    u0.validate()?;
    let base = derive_key(seed, label_hash("limit_second_moment"));
    let samples: Result<Vec<f64>> = par_map(npairs, |i| {
        let b1 = sample_path(t, dt, derive_key(base, 2 * i as u64))?;
        let b2 = sample_path(t, dt, derive_key(base, 2 * i as u64 + 1))?;
        let n = b1.steps();
        let w = u0.eval(x + b1.values[n]) * u0.eval(x + b2.values[n]);
        if w == 0.0 {
            return Ok(0.0);
        }
        Ok(w * intersection_local_time(&b1, &b2, t, delta)?.value.exp())
    })
    .into_iter()
    .collect();
    Ok(batch_means(&samples?, BATCHES))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentReport {
    pub t: f64,
    pub closed_form: f64,
    pub chaos: Option<f64>,
    pub chaos_kmax: usize,
    pub chaos_last_term: f64,
    pub local_time: Option<EstimateWithCI>,
    pub ito: Option<EstimateWithCI>,
    /// Exact second moment of the Itô scheme at the grid used.
    pub ito_lattice: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_white_noise, GridSpec};
    use crate::quadrature::Panels;

    #[test]
    fn heat_kernel_mass_and_symmetry() {
        let q = HeatKernel;
        for s in [0.01, 0.5, 2.0] {
            let sd = f64::sqrt(s);
            let mass = Panels::new(16).integrate(-12.0 * sd, 12.0 * sd, 32, |y| q.q(s, y));
            assert!((mass - 1.0).abs() < 1e-8);
            assert_eq!(q.q(s, 0.3), q.q(s, -0.3));
            let sq = Panels::new(16).integrate(-12.0 * sd, 12.0 * sd, 32, |y| q.q(s, y).powi(2));
            assert!((sq - q.square_integral(s)).abs() < 1e-8);
        }
    }

    #[test]
    fn chaos_series_sums_to_closed_form() {
        assert_eq!(chaos_second_moment(1.0, 0), 1.0);
        let target = exp_local_time_moment(1.0);
        assert!((target - 1.952_3).abs() < 1e-3);
        assert!((chaos_second_moment(1.0, 12) / target - 1.0).abs() < 1e-6);
        assert!((chaos_second_moment(1.0, 60) - target).abs() < 1e-12);
        // Ratio test: terms decrease from the start for t = 1.
        for k in 1..12 {
            assert!(chaos_term(k + 1, 1.0) < chaos_term(k, 1.0));
        }
    }

    #[test]
    fn chaos_terms_by_recursive_quadrature() {
        let quad = chaos_terms_quadrature(1.0, 6, 2001);
        for (k, v) in quad.iter().enumerate() {
            assert!((v - chaos_term(k, 1.0)).abs() < 1e-4, "k={k}: {v} vs {}", chaos_term(k, 1.0));
        }
    }

    #[test]
    fn coefficients() {
        let one = InitialCondition::one();
        assert_eq!(chaos_coefficient(0, 1.0, 0.0, one).eval(&[], &[]).unwrap(), 1.0);
        let f1 = chaos_coefficient(1, 1.0, 0.2, one);
        assert!((f1.eval(&[0.3], &[0.5]).unwrap() - heat_kernel(0.7, 0.2 - 0.5)).abs() < 1e-15);
        let f2 = chaos_coefficient(2, 1.0, 0.0, one);
        assert_eq!(f2.eval(&[0.5, 0.3], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(f2.eval(&[0.5, 1.3], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(f2.eval(&[0.2, 0.6], &[0.1, -0.1]).unwrap() > 0.0);
    }

    #[test]
    fn gauss_hermite_matches_closed_form() {
        let u0 = InitialCondition::Gaussian { amplitude: 2.0, variance: 0.7 };
        let v = heat_transform_gauss_hermite(|y| u0.eval(y), 0.4, 0.3, 40);
        assert!((v - u0.heat_semigroup(0.4, 0.3)).abs() < 1e-10);
    }

    #[test]
    fn limit_second_moment_trivial() {
        let z = limit_second_moment(1.0, 0.0, &InitialCondition::Constant { value: 0.0 }, 10, 1e-3, 0.01, 1).unwrap();
        assert_eq!(z.mean, 0.0);
    }

    #[test]
    fn ito_zero_initial_condition_and_mean() {
        let g = GridSpec::new(0.0, 0.2, -3.0, 3.0, 1e-3, 0.05).unwrap();
        let w = sample_white_noise(&g, 3).unwrap();
        let p = ItoParams { t: 0.2, rows_per_step: 1 };
        let zero = solve_she_ito(&w, &InitialCondition::Constant { value: 0.0 }, &p).unwrap();
        assert!(zero.last().iter().all(|&v| v == 0.0));
        let means: Vec<f64> = (0..100)
            .map(|r| {
                let w = sample_white_noise(&g, 100 + r).unwrap();
                let u = solve_she_ito(&w, &InitialCondition::one(), &p).unwrap();
                let row = u.last();
                row[40..81].iter().sum::<f64>() / 41.0
            })
            .collect();
        assert!(batch_means(&means, 10).within_se_of(1.0, 3.0));
    }

    #[test]
    fn lattice_moment_converges() {
        let target = exp_local_time_moment(1.0);
        let coarse = lattice_second_moment(1.0, 2e-3, 0.05);
        let fine = lattice_second_moment(1.0, 5e-4, 0.025);
        assert!((fine - target).abs() < (coarse - target).abs());
    }
}
