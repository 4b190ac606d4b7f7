//! The scale family `∂t v = ½∂xx v + ε^{1/2−α/4} ξ_{ε,α} v`, where
//! `ξ_{ε,α}` is white noise mollified at time scale `ε^α` and space scale
//! `ε^{α/2}`. After removing the drift `c_* t / ε^{α−1}` the solution
//! homogenizes for `α < 2`, with Edwards–Wilkinson fluctuations of size
//! `ε^{(2−α)/4}`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{positive, LabError, Result};
use crate::functionals::{gauss_smooth_linear, space_nodes};
use crate::mollifier::{Covariance, MollifierSpec};
use crate::quadrature::Panels;
use crate::noise::{mollify_scaled, sample_white_noise, GridSpec, MollifiedField, WhiteNoiseRealization};
use crate::rng::derive_key;
use crate::solver::{solve_fd, FdParams, InitialCondition, SolutionField};
use crate::stats::{log_log_slope, mean, par_map, EstimateWithCI};

/// Fewest realizations accepted by [`ew_fluctuation`].
pub const MIN_EW_REALIZATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub alpha: f64,
    pub eps: f64,
    pub c_star: f64,
    pub time_scale: f64,
    pub space_scale: f64,
    pub prefactor: f64,
    /// `c_* / ε^{α−1}`; the drift removed up to time `t` is `drift_rate · t`.
    pub drift_rate: f64,
}

impl ScaleConfig {
    /// `alpha` must lie in `[1, 2]`. At `alpha = 2` the scales are computed
    /// as `ε²` and `ε` exactly, matching the main equation's mollifier.
    pub fn new(alpha: f64, eps: f64, c_star: f64) -> Result<Self> {
        positive("eps", eps)?;
        if !(1.0..=2.0).contains(&alpha) {
            return Err(LabError::InvalidParameter { name: "alpha", reason: format!("must lie in [1, 2], got {alpha}") });
        }
        if !c_star.is_finite() || c_star < 0.0 {
            return Err(LabError::InvalidParameter { name: "c_star", reason: format!("must be finite and >= 0, got {c_star}") });
        }
        let (time_scale, space_scale, prefactor) = if alpha == 2.0 {
            (eps * eps, eps, 1.0)
        } else {
            (eps.powf(alpha), eps.powf(alpha / 2.0), eps.powf(0.5 - alpha / 4.0))
        };
        Ok(Self {
            alpha,
            eps,
            c_star,
            time_scale,
            space_scale,
            prefactor,
            drift_rate: c_star / eps.powf(alpha - 1.0),
        })
    }

    /// `ε^{(2−α)/4}`, the size of the fluctuations.
    pub fn fluctuation_scale(&self) -> f64 {
        self.eps.powf((2.0 - self.alpha) / 4.0)
    }

    pub fn drift(&self, t: f64) -> f64 {
        self.drift_rate * t
    }

    /// `ε^{1/2−α/4} ξ_{ε,α}` for one realization.
    pub fn field(&self, noise: &WhiteNoiseRealization, spec: &MollifierSpec) -> Result<MollifiedField> {
        let f = mollify_scaled(noise, spec, self.time_scale, self.space_scale)?;
        Ok(if self.prefactor == 1.0 { f } else { f.scaled(self.prefactor) })
    }

    /// A grid resolving both scales with about four nodes per scale length,
    /// covering `[0, t]` and `|x| <= half_width` plus the boundary buffer.
    pub fn grid(&self, spec: &MollifierSpec, t: f64, half_width: f64) -> Result<GridSpec> {
        let dt = (self.time_scale / 4.0).min(1e-3);
        let dx = (self.space_scale / 4.0).min(0.05);
        // Nodes must land on t, so round dt down to a divisor.
        let dt = t / (t / dt).ceil();
        GridSpec::buffered(t, half_width, dt, dx, spec.t_halfwidth * self.time_scale)
    }
}

/// The solution of the scaled equation and its drift-corrected version.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSolution {
    pub v: SolutionField,
    pub corrected: SolutionField,
}

/// Same splitting scheme as [`solve_fd`], with the scaled potential and no
/// renormalization; the corrected field is `v · exp(−c_* t / ε^{α−1})`.
pub fn solve_v(
    config: &ScaleConfig,
    noise: &WhiteNoiseRealization,
    spec: &MollifierSpec,
    u0: &InitialCondition,
    params: &FdParams,
) -> Result<ScaledSolution> {
    let field = config.field(noise, spec)?;
    let v = solve_fd(&field, 0.0, u0, params)?;
    let mut corrected = v.clone();
    for (t, row) in corrected.times.iter().zip(corrected.rows.iter_mut()) {
        let d = (-config.drift(*t)).exp();
        row.iter_mut().for_each(|u| *u *= d);
    }
    corrected.c = config.drift_rate;
    corrected.scheme = format!("{}-corrected", v.scheme);
    Ok(ScaledSolution { v, corrected })
}

/// Probe layout and replication for the pooled statistics below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationRun {
    pub t: f64,
    pub probes: Vec<f64>,
    pub realizations: usize,
    pub seed: u64,
}

impl HomogenizationRun {
    fn half_width(&self) -> f64 {
        self.probes.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Corrected field at every probe, one row per realization. Realization `r`
/// uses white noise keyed by `derive_key(seed, r)`.
pub fn corrected_samples(
    config: &ScaleConfig,
    spec: &MollifierSpec,
    u0: &InitialCondition,
    run: &HomogenizationRun,
) -> Result<Vec<Vec<f64>>> {
    positive("t", run.t)?;
    if run.probes.is_empty() {
        return Err(LabError::InvalidParameter { name: "probes", reason: "need at least one probe".into() });
    }
    let grid = config.grid(spec, run.t, run.half_width())?;
    let dt = grid.dt;
    par_map(run.realizations, |r| {
        let noise = sample_white_noise(&grid, derive_key(run.seed, r as u64))?;
        let field = config.field(&noise, spec)?;
        let sol = solve_fd(&field, 0.0, u0, &FdParams::on_field(&field, run.t, dt))?;
        let d = (-config.drift(run.t)).exp();
        run.probes
            .iter()
            .map(|&x| sol.at(x).map(|v| v * d).ok_or_else(|| LabError::OutOfDomain(format!("probe {x}"))))
            .collect()
    })
    .into_iter()
    .collect()
}

/// Mean absolute deviation over probes of the realization-averaged
/// corrected field from the heat semigroup of `u₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationCheck {
    pub probe_means: Vec<f64>,
    pub targets: Vec<f64>,
    pub l1_error: f64,
}

pub fn homogenization_check(samples: &[Vec<f64>], u0: &InitialCondition, run: &HomogenizationRun) -> HomogenizationCheck {
    let probe_means: Vec<f64> = (0..run.probes.len())
        .map(|p| mean(&samples.iter().map(|row| row[p]).collect::<Vec<_>>()))
        .collect();
    let targets: Vec<f64> = run.probes.iter().map(|&x| u0.heat_semigroup(run.t, x)).collect();
    let l1_error = probe_means.iter().zip(&targets).map(|(m, v)| (m - v).abs()).sum::<f64>() / targets.len() as f64;
    HomogenizationCheck { probe_means, targets, l1_error }
}

/// Pooled variance of the centered corrected field. Each probe is centered
/// by its sample mean; the per-realization average of squares over probes
/// is then one i.i.d. sample, which gives the standard error.
pub fn pooled_variance(samples: &[Vec<f64>]) -> Result<EstimateWithCI> {
    let n = samples.len();
    if n < 2 {
        return Err(LabError::TooFewSamples { need: 2, got: n });
    }
    let np = samples[0].len();
    let means: Vec<f64> = (0..np).map(|p| samples.iter().map(|r| r[p]).sum::<f64>() / n as f64).collect();
    let bessel = n as f64 / (n as f64 - 1.0);
    let per_real: Vec<f64> = samples
        .iter()
        .map(|r| r.iter().zip(&means).map(|(v, m)| (v - m) * (v - m)).sum::<f64>() / np as f64 * bessel)
        .collect();
    let m = mean(&per_real);
    let se = (crate::stats::variance(&per_real) / n as f64).sqrt();
    Ok(EstimateWithCI { mean: m, se, n })
}

/// `Var 𝒱(t, x)` for `u₀ ≡ 1`: `∫₀ᵗ (4π(t−r))^{−1/2} dr = √(t/π)`.
pub fn ew_target_variance(t: f64) -> f64 {
    (t.max(0.0) / std::f64::consts::PI).sqrt()
}

/// First-order (Gaussian) variance of the rescaled fluctuation at finite
/// `ε` for `u₀ ≡ 1`:
/// `∫₀ᵗ∫₀ᵗ R_t(a − b) G(a + b) da db` with `G(w) = ∫ q(w, z) R_x(z) dz`, where
/// `R_t`, `R_x` are the two factors of the covariance of `ξ_{ε,α}`. It tends
/// to [`ew_target_variance`] as `ε → 0`.
pub fn ew_first_order_variance<C: Covariance>(cov: &C, config: &ScaleConfig, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let (ts, xs) = (config.time_scale, config.space_scale);
    let (y0, h, n) = space_nodes(cov);
    let g = |w: f64| gauss_smooth_linear(y0, h, n, |j| cov.space_factor(y0 + j as f64 * h), w / (xs * xs), 0.0) / xs;
    let reach = cov.t_support() * ts;
    let rule = Panels::new(16);
    rule.integrate(0.0, t, 32, |a| {
        let (lo, hi) = ((-reach).max(-a), reach.min(t - a));
        rule.integrate(lo, hi, 8, |d| cov.time_factor(d / ts) / ts * g(2.0 * a + d))
    })
}

/// Variance of `ε^{−(2−α)/4}(v − E v) e^{−c_* t/ε^{α−1}}`, pooled over the
/// probes; compare with [`ew_target_variance`] for `u₀ ≡ 1`.
pub fn ew_fluctuation(
    config: &ScaleConfig,
    spec: &MollifierSpec,
    u0: &InitialCondition,
    run: &HomogenizationRun,
) -> Result<EstimateWithCI> {
    if run.realizations < MIN_EW_REALIZATIONS {
        return Err(LabError::TooFewSamples { need: MIN_EW_REALIZATIONS, got: run.realizations });
    }
    let samples = corrected_samples(config, spec, u0, run)?;
    ew_from_samples(config, &samples)
}

pub fn ew_from_samples(config: &ScaleConfig, samples: &[Vec<f64>]) -> Result<EstimateWithCI> {
    let v = pooled_variance(samples)?;
    let k = config.fluctuation_scale().powi(-2);
    Ok(EstimateWithCI { mean: v.mean * k, se: v.se * k, n: v.n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub eps: f64,
    /// Mean of the corrected field over realizations and probes.
    pub mean: f64,
    /// Pooled variance of the corrected field.
    pub var: f64,
    pub target_var: f64,
    pub se: f64,
}

impl SweepRow {
    /// Standard deviation (the "fluctuation size").
    pub fn size(&self) -> f64 {
        self.var.max(0.0).sqrt()
    }

    /// Standard error of [`SweepRow::size`] by the delta method.
    pub fn size_se(&self) -> f64 {
        self.se / (2.0 * self.size())
    }
}

/// Limit variance of the corrected field for `u₀ ≡ 1`. Below `α = 2` it is
/// the Edwards–Wilkinson variance times `ε^{(2−α)/2}`; at `α = 2` it is the
/// variance of the SHE solution, `E e^{ℓ(t)} − 1`, inflated by `e^{σ²t}` for
/// the part of the renormalization the correction leaves out.
pub fn sweep_target_variance(config: &ScaleConfig, t: f64, sigma_sq: f64) -> f64 {
    if config.alpha < 2.0 {
        config.fluctuation_scale().powi(2) * ew_target_variance(t)
    } else {
        (sigma_sq * t).exp() * (crate::she::exp_local_time_moment(t) - 1.0)
    }
}

/// Fluctuation size of the corrected field on the `(α, ε)` table, with
/// `u₀ ≡ 1`.
pub fn transition_sweep(
    alphas: &[f64],
    eps_list: &[f64],
    c_star: f64,
    sigma_sq: f64,
    spec: &MollifierSpec,
    run: &HomogenizationRun,
) -> Result<Vec<SweepRow>> {
    let u0 = InitialCondition::one();
    let mut rows = Vec::new();
    for (ia, &alpha) in alphas.iter().enumerate() {
        for (ie, &eps) in eps_list.iter().enumerate() {
            let config = ScaleConfig::new(alpha, eps, c_star)?;
            let cell = HomogenizationRun { seed: derive_key(run.seed, (ia * 1000 + ie) as u64), ..run.clone() };
            let samples = corrected_samples(&config, spec, &u0, &cell)?;
            let v = pooled_variance(&samples)?;
            let all: Vec<f64> = samples.concat();
            rows.push(SweepRow {
                alpha,
                eps,
                mean: mean(&all),
                var: v.mean,
                target_var: sweep_target_variance(&config, run.t, sigma_sq),
                se: v.se,
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `log size` against `log ε` for one `α`.
pub fn fluctuation_slope(rows: &[SweepRow], alpha: f64) -> Option<f64> {
    let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.alpha == alpha).collect();
    if sel.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = sel.iter().map(|r| r.eps).collect();
    let ys: Vec<f64> = sel.iter().map(|r| r.size()).collect();
    Some(log_log_slope(&xs, &ys))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "alpha,eps,mean,var,target_var,se")?;
    for r in rows {
        writeln!(out, "{},{},{:.10e},{:.10e},{:.10e},{:.10e}", r.alpha, r.eps, r.mean, r.var, r.target_var, r.se)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::mollify;

    #[test]
    fn scales_and_prefactor() {
        let c = ScaleConfig::new(1.0, 0.1, 0.4).unwrap();
        assert!((c.time_scale - 0.1).abs() < 1e-15);
        assert!((c.space_scale - 0.1f64.sqrt()).abs() < 1e-15);
        assert!((c.prefactor - 0.1f64.powf(0.25)).abs() < 1e-15);
        assert!((c.drift_rate - 0.4).abs() < 1e-15);
        assert!(ScaleConfig::new(0.5, 0.1, 0.4).is_err());
        assert!(ScaleConfig::new(1.5, -0.1, 0.4).is_err());
        let two = ScaleConfig::new(2.0, 0.2, 0.4).unwrap();
        assert_eq!((two.time_scale, two.space_scale, two.prefactor), (0.2 * 0.2, 0.2, 1.0));
        assert!((two.drift_rate - 2.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_two_field_is_the_main_field() {
        let spec = MollifierSpec::default();
        let g = GridSpec::buffered(0.2, 0.5, 0.004, 0.02, 0.02).unwrap();
        let noise = sample_white_noise(&g, 99).unwrap();
        let c = ScaleConfig::new(2.0, 0.2, 0.4).unwrap();
        assert_eq!(c.field(&noise, &spec).unwrap(), mollify(&noise, &spec, 0.2).unwrap());
    }

    #[test]
    fn zero_noise_gives_exact_drift_identity() {
        let spec = MollifierSpec::default();
        let u0 = InitialCondition::Gaussian { amplitude: 1.0, variance: 0.5 };
        let c = ScaleConfig::new(1.5, 0.2, 0.4).unwrap();
        let g = c.grid(&spec, 0.5, 0.5).unwrap();
        let noise = WhiteNoiseRealization::zeros(&g).unwrap();
        let field = c.field(&noise, &spec).unwrap();
        let s = solve_v(&c, &noise, &spec, &u0, &FdParams::on_field(&field, 0.5, g.dt)).unwrap();
        let free = solve_fd(&field, 0.0, &u0, &FdParams::on_field(&field, 0.5, g.dt)).unwrap();
        let d = (-c.drift(0.5)).exp();
        for (a, b) in s.corrected.last().iter().zip(free.last()) {
            assert_eq!(*a, b * d);
        }
        for x in [-0.3, 0.0, 0.4] {
            let err = (s.v.at(x).unwrap() - u0.heat_semigroup(0.5, x)).abs();
            assert!(err < 1e-3, "{err}");
        }
    }

    #[test]
    fn ew_target_by_quadrature() {
        assert_eq!(ew_target_variance(0.0), 0.0);
        for t in [0.25f64, 0.5, 1.0] {
            // Substituting s = t − r = w² removes the endpoint singularity.
            let q = crate::quadrature::Panels::new(16).integrate(0.0, t.sqrt(), 8, |w| {
                2.0 * w / (4.0 * std::f64::consts::PI * w * w).sqrt()
            });
            assert!((q - ew_target_variance(t)).abs() < 1e-12, "{q}");
        }
    }

    #[test]
    fn first_order_variance_approaches_the_limit() {
        let tab = crate::mollifier::CovarianceTable::build(MollifierSpec::default());
        let target = ew_target_variance(0.5);
        let v = |e: f64| ew_first_order_variance(&tab, &ScaleConfig::new(1.0, e, 0.4).unwrap(), 0.5);
        let (a, b, c) = (v(0.1), v(0.01), v(1e-4));
        assert!(a < b && b < c && c < target, "{a} {b} {c}");
        assert!((c - target).abs() < 0.01 * target);
        assert_eq!(ew_first_order_variance(&tab, &ScaleConfig::new(1.0, 0.1, 0.4).unwrap(), 0.0), 0.0);
    }

    #[test]
    fn ew_rejects_few_realizations() {
        let c = ScaleConfig::new(1.0, 0.1, 0.4).unwrap();
        let run = HomogenizationRun { t: 0.5, probes: vec![0.0], realizations: 10, seed: 1 };
        let e = ew_fluctuation(&c, &MollifierSpec::default(), &InitialCondition::one(), &run);
        assert!(matches!(e, Err(LabError::TooFewSamples { .. })));
    }

    #[test]
    fn pooled_variance_of_known_rows() {
        let rows: Vec<Vec<f64>> = (0..4000)
            .map(|r| (0..3).map(|p| 2.0 * crate::rng::normal_at(5, (3 * r + p) as u64)).collect())
            .collect();
        let v = pooled_variance(&rows).unwrap();
        assert!((v.mean - 4.0).abs() < 4.0 * v.se, "{v:?}");
    }
}
