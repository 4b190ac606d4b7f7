//! The space-time bump φ, its parabolic rescalings, and the covariance
//! kernels built from it.
//!
//! φ is a product `a(t) b(x)` of normalized standard bumps, so every
//! convolution of rescaled copies factorizes into a time factor and a space
//! factor. The 2D tables below are filled from those 1D quadratures.

use crate::error::{positive, Result};
use crate::quadrature::Panels;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Table node spacing, per unit of time and of space.
pub const TABLE_STEP: f64 = 1.0 / 256.0;

/// Standard bump `exp(-1/(1-u²))` on (-1, 1).
#[inline]
pub fn bump(u: f64) -> f64 {
    let s = 1.0 - u * u;
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

fn bump_mass() -> f64 {
    // The bump is flat at ±1, so equal panels converge fast.
    Panels::new(16).integrate(-1.0, 1.0, 64, bump)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub t_halfwidth: f64,
    pub x_halfwidth: f64,
    /// Prefactor making the total mass 1.
    pub normalization: f64,
    bump_mass: f64,
}

impl Default for MollifierSpec {
    fn default() -> Self {
        Self::new(0.5).expect("default half width is valid")
    }
}

impl MollifierSpec {
    /// Time half width is fixed at 1/2; the space half width is free.
    pub fn new(x_halfwidth: f64) -> Result<Self> {
        positive("x_halfwidth", x_halfwidth)?;
        let t_halfwidth = 0.5;
        let z = bump_mass();
        Ok(Self {
            t_halfwidth,
            x_halfwidth,
            normalization: 1.0 / (t_halfwidth * x_halfwidth * z * z),
            bump_mass: z,
        })
    }

    /// Unit-mass time factor `a`.
    #[inline]
    pub fn t_profile(&self, t: f64) -> f64 {
        bump(t / self.t_halfwidth) / (self.t_halfwidth * self.bump_mass)
    }

    /// Unit-mass space factor `b`; this is also Φ(x) = ∫ φ(t, x) dt.
    #[inline]
    pub fn x_profile(&self, x: f64) -> f64 {
        bump(x / self.x_halfwidth) / (self.x_halfwidth * self.bump_mass)
    }

    #[inline]
    pub fn phi(&self, t: f64, x: f64) -> f64 {
        self.normalization * bump(t / self.t_halfwidth) * bump(x / self.x_halfwidth)
    }

    /// `ε⁻³ φ(t/ε², x/ε)`.
    pub fn phi_eps(&self, t: f64, x: f64, eps: f64) -> Result<f64> {
        positive("eps", eps)?;
        Ok(self.phi(t / (eps * eps), x / eps) / (eps * eps * eps))
    }

    /// The anisotropic rescaling `(τ ξ)⁻¹ φ(t/τ, x/ξ)` with time scale τ and
    /// space scale ξ. `phi_eps` is the case τ = ε², ξ = ε.
    pub fn phi_scaled(&self, t: f64, x: f64, time_scale: f64, space_scale: f64) -> f64 {
        self.phi(t / time_scale, x / space_scale) / (time_scale * space_scale)
    }

    #[allow(non_snake_case)]
    pub fn Phi(&self, x: f64) -> f64 {
        self.x_profile(x)
    }

    #[allow(non_snake_case)]
    pub fn Phi_eps(&self, x: f64, eps: f64) -> Result<f64> {
        positive("eps", eps)?;
        Ok(self.x_profile(x / eps) / eps)
    }

    /// `Φ_{ε₁,ε₂}(x) = ∫ Φ_{ε₁}(x - y) Φ_{ε₂}(-y) dy`.
    #[allow(non_snake_case)]
    pub fn Phi_eps12(&self, x: f64, eps1: f64, eps2: f64) -> Result<f64> {
        positive("eps1", eps1)?;
        positive("eps2", eps2)?;
        Ok(cross_correlate(
            |y| self.x_profile(y),
            self.x_halfwidth,
            eps1,
            eps2,
            x,
        ))
    }

    /// Cross-covariance `R_{ε₁,ε₂}(t, x)` by quadrature of the convolution.
    pub fn covariance_r_eps12(&self, t: f64, x: f64, eps1: f64, eps2: f64) -> Result<f64> {
        positive("eps1", eps1)?;
        positive("eps2", eps2)?;
        let time = cross_correlate(
            |s| self.t_profile(s),
            self.t_halfwidth,
            eps1 * eps1,
            eps2 * eps2,
            t,
        );
        if time == 0.0 {
            return Ok(0.0);
        }
        Ok(time * self.Phi_eps12(x, eps1, eps2)?)
    }
}

/// `∫ f_{s1}(z - y) f_{s2}(-y) dy` for an even unit-mass profile `f`
/// supported in `(-h, h)`, with `f_s(y) = f(y/s)/s`.
fn cross_correlate<F: Fn(f64) -> f64>(f: F, h: f64, s1: f64, s2: f64, z: f64) -> f64 {
    // y ranges over supp f_{s2}(-·) ∩ (z - supp f_{s1}).
    let lo = (-s2 * h).max(z - s1 * h);
    let hi = (s2 * h).min(z + s1 * h);
    if hi <= lo {
        return 0.0;
    }
    let rule = Panels::new(16);
    rule.integrate(lo, hi, 16, |y| f((z - y) / s1) * f(-y / s2)) / (s1 * s2)
}

/// Anything usable as the covariance `R` of the microscopic noise.
///
/// R is a product of a time factor and a space factor, and the space factor
/// is linear between nodes spaced `x_step()` apart.
pub trait Covariance: Sync {
    fn time_factor(&self, t: f64) -> f64;
    fn space_factor(&self, x: f64) -> f64;
    fn space_factor_dx(&self, x: f64) -> f64;
    /// `R(t, ·) = 0` for `|t| >= t_support`.
    fn t_support(&self) -> f64 {
        1.0
    }
    /// `R(·, x) = 0` for `|x| >= x_support`.
    fn x_support(&self) -> f64;
    fn x_step(&self) -> f64;

    #[inline]
    fn r(&self, t: f64, x: f64) -> f64 {
        let a = self.time_factor(t);
        if a == 0.0 {
            0.0
        } else {
            a * self.space_factor(x)
        }
    }

    /// Spatial derivative ∂ₓR.
    #[inline]
    fn dr_dx(&self, t: f64, x: f64) -> f64 {
        let a = self.time_factor(t);
        if a == 0.0 {
            0.0
        } else {
            a * self.space_factor_dx(x)
        }
    }
}

/// The R ≡ 0 stub used to check degeneracy of every functional.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCovariance;

impl Covariance for ZeroCovariance {
    fn time_factor(&self, _: f64) -> f64 {
        0.0
    }
    fn space_factor(&self, _: f64) -> f64 {
        0.0
    }
    fn space_factor_dx(&self, _: f64) -> f64 {
        0.0
    }
    fn x_support(&self) -> f64 {
        1.0
    }
    fn x_step(&self) -> f64 {
        TABLE_STEP
    }
}

/// `R(t, x) = ∫ φ(t - s, x - y) φ(-s, -y) ds dy` on a regular grid over
/// `[-1, 1] × [-2h, 2h]`.
///
/// Only the two 1D factors are stored; bilinear interpolation of a product
/// table is the product of the linear interpolants, so lookups stay
/// separable.
#[derive(Debug, Clone)]
pub struct CovarianceTable {
    pub spec: MollifierSpec,
    pub t_max: f64,
    pub x_max: f64,
    pub step: f64,
    t_factor: Vec<f64>,
    x_factor: Vec<f64>,
    dx_factor: Vec<f64>,
}

impl CovarianceTable {
    pub fn build(spec: MollifierSpec) -> Self {
        let step = TABLE_STEP;
        let t_max = 2.0 * spec.t_halfwidth;
        let x_max = 2.0 * spec.x_halfwidth;
        let nt = (2.0 * t_max / step).round() as usize + 1;
        let nx = (2.0 * x_max / step).round() as usize + 1;
        let t_factor: Vec<f64> = (0..nt)
            .map(|i| cross_correlate(|s| spec.t_profile(s), spec.t_halfwidth, 1.0, 1.0, -t_max + i as f64 * step))
            .collect();
        let x_factor: Vec<f64> = (0..nx)
            .map(|j| cross_correlate(|y| spec.x_profile(y), spec.x_halfwidth, 1.0, 1.0, -x_max + j as f64 * step))
            .collect();
        let mut dx_factor = vec![0.0; nx];
        for j in 1..nx - 1 {
            dx_factor[j] = (x_factor[j + 1] - x_factor[j - 1]) / (2.0 * step);
        }
        Self { spec, t_max, x_max, step, t_factor, x_factor, dx_factor }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.t_factor.len(), self.x_factor.len())
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64, f64) {
        (
            -self.t_max + i as f64 * self.step,
            -self.x_max + j as f64 * self.step,
            self.t_factor[i] * self.x_factor[j],
        )
    }

    #[inline]
    fn lerp(&self, table: &[f64], reach: f64, z: f64) -> f64 {
        let f = (z + reach) / self.step;
        if !(f > 0.0) {
            return 0.0;
        }
        let i = f as usize;
        if i + 1 >= table.len() {
            return 0.0;
        }
        let w = f - i as f64;
        table[i] + w * (table[i + 1] - table[i])
    }

    /// `R_ε(t, x) = ε⁻³ R(t/ε², x/ε)`.
    pub fn r_eps(&self, t: f64, x: f64, eps: f64) -> f64 {
        self.r(t / (eps * eps), x / eps) / (eps * eps * eps)
    }

    /// CSV with columns `t,x,R`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x,R")?;
        let (nt, nx) = self.shape();
        for i in 0..nt {
            for j in 0..nx {
                let (t, x, r) = self.node(i, j);
                writeln!(out, "{t},{x},{r:.12e}")?;
            }
        }
        Ok(())
    }
}

impl Covariance for CovarianceTable {
    /// Carries the normalization of the time bump.
    #[inline]
    fn time_factor(&self, t: f64) -> f64 {
        self.lerp(&self.t_factor, self.t_max, t)
    }

    /// Equal to Φ * Φ(−·).
    #[inline]
    fn space_factor(&self, x: f64) -> f64 {
        self.lerp(&self.x_factor, self.x_max, x)
    }

    #[inline]
    fn space_factor_dx(&self, x: f64) -> f64 {
        self.lerp(&self.dx_factor, self.x_max, x)
    }

    fn t_support(&self) -> f64 {
        self.t_max
    }

    fn x_support(&self) -> f64 {
        self.x_max
    }

    fn x_step(&self) -> f64 {
        self.step
    }
}

/// Tabulated `R_{ε₁,ε₂}` as a product of a time factor and Φ_{ε₁,ε₂}.
#[derive(Debug, Clone)]
pub struct CrossCovariance {
    pub eps1: f64,
    pub eps2: f64,
    t_reach: f64,
    x_reach: f64,
    t_step: f64,
    x_step: f64,
    t_factor: Vec<f64>,
    x_factor: Vec<f64>,
}

impl CrossCovariance {
    pub fn new(spec: &MollifierSpec, eps1: f64, eps2: f64) -> Result<Self> {
        positive("eps1", eps1)?;
        positive("eps2", eps2)?;
        let (ts1, ts2) = (eps1 * eps1, eps2 * eps2);
        let t_reach = spec.t_halfwidth * (ts1 + ts2);
        let x_reach = spec.x_halfwidth * (eps1 + eps2);
        let n = 1024;
        let t_step = 2.0 * t_reach / n as f64;
        let x_step = 2.0 * x_reach / n as f64;
        let t_factor = (0..=n)
            .map(|i| cross_correlate(|s| spec.t_profile(s), spec.t_halfwidth, ts1, ts2, -t_reach + i as f64 * t_step))
            .collect();
        let x_factor = (0..=n)
            .map(|j| cross_correlate(|y| spec.x_profile(y), spec.x_halfwidth, eps1, eps2, -x_reach + j as f64 * x_step))
            .collect();
        Ok(Self { eps1, eps2, t_reach, x_reach, t_step, x_step, t_factor, x_factor })
    }

    /// Kernel identically zero with the same support, for degeneracy checks.
    pub fn zero(spec: &MollifierSpec, eps1: f64, eps2: f64) -> Result<Self> {
        let mut k = Self::new(spec, eps1, eps2)?;
        k.t_factor.iter_mut().for_each(|v| *v = 0.0);
        k.x_factor.iter_mut().for_each(|v| *v = 0.0);
        Ok(k)
    }

    /// `R_{ε₁,ε₂}(t, ·) = 0` for `|t| >= t_reach`, which equals (ε₁² + ε₂²)/2.
    pub fn t_reach(&self) -> f64 {
        self.t_reach
    }

    #[inline]
    fn lerp(table: &[f64], reach: f64, step: f64, z: f64) -> f64 {
        let f = (z + reach) / step;
        if !(f > 0.0) {
            return 0.0;
        }
        let i = f as usize;
        if i + 1 >= table.len() {
            return 0.0;
        }
        let w = f - i as f64;
        table[i] + w * (table[i + 1] - table[i])
    }

    #[inline]
    pub fn time_factor(&self, t: f64) -> f64 {
        Self::lerp(&self.t_factor, self.t_reach, self.t_step, t)
    }

    /// Φ_{ε₁,ε₂}(x).
    #[inline]
    pub fn space_factor(&self, x: f64) -> f64 {
        Self::lerp(&self.x_factor, self.x_reach, self.x_step, x)
    }

    #[inline]
    pub fn r(&self, t: f64, x: f64) -> f64 {
        let a = self.time_factor(t);
        if a == 0.0 {
            0.0
        } else {
            a * self.space_factor(x)
        }
    }
}
