//! WebAssembly bindings for a small interactive page (see `www/`).
//!
//! Each export returns a flat `Float64Array`; shapes are fixed by the
//! arguments so the page can reshape without extra calls.

use wasm_bindgen::prelude::*;

use wz_she_lab::functionals::c_star_quadrature;
use wz_she_lab::noise::{mollify, sample_white_noise, GridSpec};
use wz_she_lab::she::{chaos_term, exp_local_time_moment};
use wz_she_lab::solver::{c_eps, solve_fd, FdParams, InitialCondition};
use wz_she_lab::{CovarianceTable, MollifierSpec};

const HALF_WIDTH: f64 = 2.0;

fn js_err(e: wz_she_lab::LabError) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn demo_grid(eps: f64, t: f64) -> wz_she_lab::Result<(MollifierSpec, GridSpec)> {
    let spec = MollifierSpec::default();
    let dt = (eps * eps / 4.0).min(2e-3);
    let dt = t / (t / dt).ceil();
    let dx = (eps / 4.0).min(0.05);
    let grid = GridSpec::buffered(t, HALF_WIDTH, dt, dx, spec.t_halfwidth * eps * eps)?;
    Ok((spec, grid))
}

/// `ξ_ε` sampled on an `nt × nx` lattice of `[0, t] × [−2, 2]`, row-major
/// with time increasing.
pub fn field_samples(eps: f64, t: f64, seed: u64, nt: usize, nx: usize) -> wz_she_lab::Result<Vec<f64>> {
    let (spec, grid) = demo_grid(eps, t)?;
    let field = mollify(&sample_white_noise(&grid, seed)?, &spec, eps)?;
    let mut out = Vec::with_capacity(nt * nx);
    for i in 0..nt {
        let s = t * i as f64 / (nt.max(2) - 1) as f64;
        for j in 0..nx {
            let x = -HALF_WIDTH + 2.0 * HALF_WIDTH * j as f64 / (nx.max(2) - 1) as f64;
            out.push(field.at(s, x));
        }
    }
    Ok(out)
}

/// `u_ε(t, ·)` from u₀ ≡ 1 at `nx` points of `[−2, 2]`, with
/// `c_ε = c_*/ε + sigma_sq/2`.
pub fn solution_profile(eps: f64, t: f64, seed: u64, sigma_sq: f64, nx: usize) -> wz_she_lab::Result<Vec<f64>> {
    let (spec, grid) = demo_grid(eps, t)?;
    let c = c_eps(eps, c_star_quadrature(&CovarianceTable::build(spec)), sigma_sq)?;
    let field = mollify(&sample_white_noise(&grid, seed)?, &spec, eps)?;
    let sol = solve_fd(&field, c, &InitialCondition::one(), &FdParams::on_field(&field, t, grid.dt))?;
    Ok((0..nx)
        .map(|j| -HALF_WIDTH + 2.0 * HALF_WIDTH * j as f64 / (nx.max(2) - 1) as f64)
        .map(|x| sol.at(x).unwrap_or(f64::NAN))
        .collect())
}

/// Partial sums of the chaos series for `E U(t,0)²` at k = 0..=kmax,
/// followed by the closed form as the last entry.
pub fn chaos_partial_sums(t: f64, kmax: usize) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = (0..=kmax)
        .map(|k| {
            acc += chaos_term(k, t);
            acc
        })
        .collect();
    out.push(exp_local_time_moment(t));
    out
}

#[wasm_bindgen]
pub fn mollified_field(eps: f64, t: f64, seed: u32, nt: usize, nx: usize) -> Result<Vec<f64>, JsValue> {
    field_samples(eps, t, seed as u64, nt, nx).map_err(js_err)
}

#[wasm_bindgen]
pub fn fd_profile(eps: f64, t: f64, seed: u32, sigma_sq: f64, nx: usize) -> Result<Vec<f64>, JsValue> {
    solution_profile(eps, t, seed as u64, sigma_sq, nx).map_err(js_err)
}

#[wasm_bindgen]
pub fn second_moment_series(t: f64, kmax: usize) -> Vec<f64> {
    chaos_partial_sums(t, kmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chaos_sums_approach_closed_form() {
        let s = chaos_partial_sums(1.0, 12);
        assert_eq!(s.len(), 14);
        assert_eq!(s[0], 1.0);
        let (last, closed) = (s[12], s[13]);
        assert!((last - closed).abs() / closed < 1e-3);
        assert!(s.windows(2).take(12).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn field_shape_and_determinism() {
        let a = field_samples(0.4, 0.2, 5, 4, 9).unwrap();
        assert_eq!(a.len(), 36);
        assert_eq!(a, field_samples(0.4, 0.2, 5, 4, 9).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn profile_is_positive() {
        let u = solution_profile(0.4, 0.1, 1, 0.004, 11).unwrap();
        assert!(u.iter().all(|v| *v > 0.0 && v.is_finite()));
    }
}
