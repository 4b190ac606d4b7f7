//! Local-time estimators against laws obtained independently from Lévy's
//! identity: `L(t, 0; B)` has the law of `|B(t)|`, and for two independent
//! paths `B₁ − B₂ = √2 W` gives `ℓ(t) = L(t, 0; W)/√2`.

use wz_she_lab::brownian::{intersection_local_time, local_time, sample_path};
use wz_she_lab::rng::derive_key;
use wz_she_lab::she::exp_local_time_moment;
use wz_she_lab::stats::{par_map, EstimateWithCI};

/// `E f(|Z|)` for a standard normal Z by the trapezoid rule on [0, 12].
fn half_normal_mean<F: Fn(f64) -> f64>(f: F) -> f64 {
    let n = 200_000;
    let h = 12.0 / n as f64;
    let dens = |z: f64| (2.0 / std::f64::consts::PI).sqrt() * (-z * z / 2.0).exp();
    let mut s = 0.5 * (f(0.0) * dens(0.0) + f(12.0) * dens(12.0));
    for i in 1..n {
        let z = i as f64 * h;
        s += f(z) * dens(z);
    }
    s * h
}

#[test]
fn closed_form_exp_moment_matches_quadrature() {
    for t in [0.25f64, 0.5, 1.0, 2.0] {
        let a = (t / 2.0).sqrt();
        let q = half_normal_mean(|z| (a * z).exp());
        assert!((exp_local_time_moment(t) - q).abs() < 1e-9, "t={t}: {} vs {q}", exp_local_time_moment(t));
    }
}

#[test]
fn brownian_local_time_first_two_moments() {
    let (t, dt, delta) = (1.0, 1e-4, 0.02);
    let samples: Vec<f64> = par_map(4000, |i| {
        let p = sample_path(t, dt, derive_key(31, i as u64)).unwrap();
        local_time(&p, 0.0, t, delta).unwrap().value
    });
    let m = EstimateWithCI::from_samples(&samples);
    let target = half_normal_mean(|z| z * t.sqrt());
    assert!((m.mean - target).abs() < 4.0 * m.se + 0.02 * target, "{m:?} vs {target}");
    let sq: Vec<f64> = samples.iter().map(|v| v * v).collect();
    let m2 = EstimateWithCI::from_samples(&sq);
    assert!((m2.mean - t).abs() < 4.0 * m2.se + 0.03 * t, "{m2:?}");
}

#[test]
fn intersection_local_time_mean_and_exponential_moment() {
    let (t, dt, delta) = (1.0, 1e-4, 0.02);
    let rows: Vec<(f64, f64)> = par_map(3000, |i| {
        let b1 = sample_path(t, dt, derive_key(47, 2 * i as u64)).unwrap();
        let b2 = sample_path(t, dt, derive_key(47, 2 * i as u64 + 1)).unwrap();
        let l = intersection_local_time(&b1, &b2, t, delta).unwrap().value;
        (l, l.exp())
    });
    let ell: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let e = EstimateWithCI::from_samples(&ell);
    let target = half_normal_mean(|z| z * (t / 2.0).sqrt());
    assert!((e.mean - target).abs() < 4.0 * e.se + 0.02 * target, "{e:?} vs {target}");
    let ex: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let e = EstimateWithCI::from_samples(&ex);
    let target = half_normal_mean(|z| (z * (t / 2.0).sqrt()).exp());
    assert!((e.mean - target).abs() < 4.0 * e.se + 0.02 * target, "{e:?} vs {target}");
}

#[test]
fn local_time_scales_with_brownian_scaling() {
    // L(c²t, 0; B) has the law of c L(t, 0; B); check on one path exactly:
    // path values scaled by c and the same time grid stretched by c².
    let p = sample_path(1.0, 1e-3, 5).unwrap();
    let c: f64 = 1.5;
    let stretched = p.rescaled(c);
    let a = local_time(&p, 0.0, 1.0, 0.05).unwrap().value;
    let b = local_time(&stretched, 0.0, c * c, c * 0.05).unwrap().value;
    assert!((b - c * a).abs() < 1e-9 * (1.0 + b), "{b} vs {}", c * a);
}
