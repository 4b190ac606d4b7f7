//! Second-order structure of mollified fields against the tabulated
//! covariance, and the common-random-number coupling across ε.

use wz_she_lab::noise::{couple_across_scales, mollify, sample_white_noise, GridSpec, WhiteNoiseRealization};
use wz_she_lab::stats::{mean, variance};
use wz_she_lab::{CovarianceTable, CrossCovariance, MollifierSpec};

fn grid() -> GridSpec {
    GridSpec::new(-0.06, 0.3, -1.5, 1.5, 0.002, 0.01).unwrap()
}

/// Products `f(node) g(node + lag)` at well-separated probe nodes over many realizations.
fn lagged_products(eps: &[f64], lag: (usize, usize), reps: u64) -> Vec<f64> {
    let g = grid();
    let spec = MollifierSpec::default();
    let mut out = Vec::new();
    for rep in 0..reps {
        let w = sample_white_noise(&g, 500 + rep).unwrap();
        let f = couple_across_scales(&w, &spec, eps).unwrap();
        let (a, b) = (&f[0], f.last().unwrap());
        for i in (30..g.nt() - 30 - lag.0).step_by(50) {
            for j in (30..g.nx() - 30 - lag.1).step_by(30) {
                out.push(a.node(i, j) * b.node(i + lag.0, j + lag.1));
            }
        }
    }
    out
}

#[test]
fn covariance_stencil_matches_table() {
    let spec = MollifierSpec::default();
    let table = CovarianceTable::build(spec);
    let eps = 0.2;
    // (time lag, space lag) in nodes: 0, ε²/4 in time, ε/4 and ε/2 in space.
    for lag in [(0usize, 0usize), (5, 0), (0, 5), (0, 10), (5, 5)] {
        let s = lagged_products(&[eps], lag, 150);
        let target = table.r_eps(lag.0 as f64 * 0.002, lag.1 as f64 * 0.01, eps);
        let se = (variance(&s) / s.len() as f64).sqrt();
        let m = mean(&s);
        assert!((m - target).abs() < 4.0 * se + 0.05 * table.r_eps(0.0, 0.0, eps), "lag {lag:?}: {m} ± {se} vs {target}");
    }
}

#[test]
fn cross_scale_covariance_matches_convolution() {
    let spec = MollifierSpec::default();
    let cross = CrossCovariance::new(&spec, 0.2, 0.1).unwrap();
    for lag in [(0usize, 0usize), (0, 5)] {
        let s = lagged_products(&[0.2, 0.1], lag, 150);
        let target = cross.r(lag.0 as f64 * 0.002, lag.1 as f64 * 0.01);
        let se = (variance(&s) / s.len() as f64).sqrt();
        let m = mean(&s);
        assert!((m - target).abs() < 4.0 * se + 0.05 * cross.r(0.0, 0.0), "lag {lag:?}: {m} ± {se} vs {target}");
    }
}

#[test]
fn fields_outside_support_are_uncorrelated() {
    // Time lag 40 nodes = 0.08 > ε² = 0.04, the reach of R_ε in time.
    let s = lagged_products(&[0.2], (40, 0), 100);
    let se = (variance(&s) / s.len() as f64).sqrt();
    assert!(mean(&s).abs() < 4.0 * se);
}

#[test]
fn binary_dump_replays_the_same_field() {
    let g = GridSpec::new(0.0, 0.1, -0.5, 0.5, 0.002, 0.02).unwrap();
    let w = sample_white_noise(&g, 123).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("noise.bin");
    w.write_binary(std::fs::File::create(&path).unwrap()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len() % 8, 0);
    let back = WhiteNoiseRealization::read_binary(std::io::Cursor::new(&bytes)).unwrap();
    assert_eq!(back, w);
    let spec = MollifierSpec::default();
    assert_eq!(mollify(&back, &spec, 0.2).unwrap(), mollify(&w, &spec, 0.2).unwrap());
    assert!(WhiteNoiseRealization::read_binary(std::io::Cursor::new(&bytes[..bytes.len() - 8])).is_err());
}
