//! Grid white noise and its mollifications.

use crate::error::{LabError, Result};
use crate::mollifier::MollifierSpec;
use crate::rng::{derive_key, normal_at};
use crate::stats::par_map;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Regular space-time grid. Nodes are `t_min + i·dt`, `x_min + j·dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub dt: f64,
    pub dx: f64,
}

impl GridSpec {
    pub fn new(t_min: f64, t_max: f64, x_min: f64, x_max: f64, dt: f64, dx: f64) -> Result<Self> {
        let g = Self { t_min, t_max, x_min, x_max, dt, dx };
        g.validate()?;
        Ok(g)
    }

    /// Grid for a solve up to `t_max` around `x = 0`: the x-range is
    /// `half_width` plus the `6√t_max` buffer on each side, and the time
    /// range starts early enough to carry a mollifier of time scale `margin`.
    pub fn buffered(t_max: f64, half_width: f64, dt: f64, dx: f64, t_margin: f64) -> Result<Self> {
        let reach = half_width + buffer_width(t_max);
        let nt_before = (t_margin / dt).ceil();
        let nx_half = (reach / dx).ceil();
        Self::new(-nt_before * dt, t_max, -nx_half * dx, nx_half * dx, dt, dx)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.t_min, self.t_max, self.x_min, self.x_max, self.dt, self.dx]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.dt <= 0.0 || self.dx <= 0.0 {
            return Err(LabError::DegenerateGrid(format!(
                "steps must be positive and finite (dt={}, dx={})",
                self.dt, self.dx
            )));
        }
        if self.nt() < 2 || self.nx() < 2 {
            return Err(LabError::DegenerateGrid(format!(
                "need at least 2 nodes per axis, got {}×{}",
                self.nt(),
                self.nx()
            )));
        }
        Ok(())
    }

    pub fn nt(&self) -> usize {
        let n = ((self.t_max - self.t_min) / self.dt + 1e-9).floor();
        if n.is_finite() && n >= 0.0 {
            n as usize + 1
        } else {
            0
        }
    }

    pub fn nx(&self) -> usize {
        let n = ((self.x_max - self.x_min) / self.dx + 1e-9).floor();
        if n.is_finite() && n >= 0.0 {
            n as usize + 1
        } else {
            0
        }
    }

    pub fn len(&self) -> usize {
        self.nt() * self.nx()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        self.t_min + i as f64 * self.dt
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    /// Index of the node at time `t` (which must lie on the grid).
    pub fn t_index(&self, t: f64) -> Option<usize> {
        let f = (t - self.t_min) / self.dt;
        let i = f.round();
        if (f - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < self.nt() {
            Some(i as usize)
        } else {
            None
        }
    }

    /// True when `x` keeps the `6√t` buffer from both x-boundaries.
    pub fn is_buffered(&self, x: f64, t: f64) -> bool {
        let b = buffer_width(t);
        x - b >= self.x_min - 1e-12 && x + b <= self.x_max + 1e-12
    }
}

/// Distance kept between x-boundaries and any query at time `t`.
pub fn buffer_width(t: f64) -> f64 {
    6.0 * t.max(0.0).sqrt()
}

/// Piecewise-constant white noise: cell `(i, j)` carries `g_ij / √(dt·dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteNoiseRealization {
    pub seed: u64,
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

/// Draws the noise. Cell `(i, j)` uses the counter `j` of the key derived
/// from `(seed, i)`, so it does not depend on traversal order.
pub fn sample_white_noise(grid: &GridSpec, seed: u64) -> Result<WhiteNoiseRealization> {
    grid.validate()?;
    let (nt, nx) = (grid.nt(), grid.nx());
    let scale = 1.0 / (grid.dt * grid.dx).sqrt();
    let rows = par_map(nt, |i| {
        let key = derive_key(seed, i as u64);
        (0..nx).map(|j| scale * normal_at(key, j as u64)).collect::<Vec<f64>>()
    });
    Ok(WhiteNoiseRealization {
        seed,
        grid: *grid,
        values: rows.concat(),
    })
}

impl WhiteNoiseRealization {
    pub fn zeros(grid: &GridSpec) -> Result<Self> {
        grid.validate()?;
        Ok(Self { seed: 0, grid: *grid, values: vec![0.0; grid.len()] })
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.nx() + j]
    }

    /// `a·self + b·other` on the same grid.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(LabError::DegenerateGrid("cannot combine realizations on different grids".into()));
        }
        Ok(Self {
            seed: self.seed,
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        })
    }

    const MAGIC: &'static [u8; 8] = b"WZNOISE1";

    /// Binary dump: magic, seed (u64), grid (six f64), node counts (two
    /// u64), then the row-major payload. Everything little-endian.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(Self::MAGIC)?;
        out.write_all(&self.seed.to_le_bytes())?;
        let g = &self.grid;
        for v in [g.t_min, g.t_max, g.x_min, g.x_max, g.dt, g.dx] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(g.nt() as u64).to_le_bytes())?;
        out.write_all(&(g.nx() as u64).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(LabError::Io("not a white-noise dump".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> Result<[u8; 8]> {
            input.read_exact(&mut word)?;
            Ok(word)
        };
        let seed = u64::from_le_bytes(next(&mut input)?);
        let mut f = [0.0; 6];
        for v in f.iter_mut() {
            *v = f64::from_le_bytes(next(&mut input)?);
        }
        let grid = GridSpec::new(f[0], f[1], f[2], f[3], f[4], f[5])?;
        let nt = u64::from_le_bytes(next(&mut input)?) as usize;
        let nx = u64::from_le_bytes(next(&mut input)?) as usize;
        if nt != grid.nt() || nx != grid.nx() {
            return Err(LabError::Io("header node counts do not match the grid".into()));
        }
        let mut values = Vec::with_capacity(nt * nx);
        for _ in 0..nt * nx {
            values.push(f64::from_le_bytes(next(&mut input)?));
        }
        Ok(Self { seed, grid, values })
    }
}

/// Grid values of `φ_{τ,ξ} * ξ` with bilinear evaluation in between.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedField {
    pub seed: u64,
    pub time_scale: f64,
    pub space_scale: f64,
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl MollifiedField {
    /// The parabolic ε (equal to the space scale).
    pub fn eps(&self) -> f64 {
        self.space_scale
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.nx() + j]
    }

    /// Bilinear interpolation; zero outside the grid.
    #[inline]
    pub fn at(&self, t: f64, x: f64) -> f64 {
        let g = &self.grid;
        let ft = (t - g.t_min) / g.dt;
        let fx = (x - g.x_min) / g.dx;
        if !(ft >= 0.0 && fx >= 0.0) {
            return 0.0;
        }
        let (nt, nx) = (g.nt(), g.nx());
        let mut i = ft as usize;
        let mut j = fx as usize;
        if i >= nt || j >= nx {
            return 0.0;
        }
        let (mut wt, mut wx) = (ft - i as f64, fx - j as f64);
        if i + 1 == nt {
            if wt > 1e-9 {
                return 0.0;
            }
            i -= 1;
            wt = 1.0;
        }
        if j + 1 == nx {
            if wx > 1e-9 {
                return 0.0;
            }
            j -= 1;
            wx = 1.0;
        }
        let base = i * nx + j;
        let v = &self.values;
        let r0 = v[base] + wx * (v[base + 1] - v[base]);
        let r1 = v[base + nx] + wx * (v[base + nx + 1] - v[base + nx]);
        r0 + wt * (r1 - r0)
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for v in self.values.iter_mut() {
            *v *= factor;
        }
        self
    }
}

/// `ξ_ε = φ_ε * ξ` with `φ_ε(t, x) = ε⁻³ φ(t/ε², x/ε)`.
pub fn mollify(noise: &WhiteNoiseRealization, spec: &MollifierSpec, eps: f64) -> Result<MollifiedField> {
    mollify_scaled(noise, spec, eps * eps, eps)
}

/// Convolution with `φ_{τ,ξ}(t, x) = (τξ)⁻¹ φ(t/τ, x/ξ)` sampled at the grid
/// nodes. The kernel is separable, so the sum runs along x first and then
/// along t. Cells beyond the grid count as zero.
pub fn mollify_scaled(
    noise: &WhiteNoiseRealization,
    spec: &MollifierSpec,
    time_scale: f64,
    space_scale: f64,
) -> Result<MollifiedField> {
    let g = noise.grid;
    if !(time_scale >= 2.0 * g.dt * (1.0 - 1e-12)) {
        return Err(LabError::Unresolved {
            constraint: "time scale >= 2 dt",
            detail: format!("time scale {time_scale}, dt {}", g.dt),
        });
    }
    if !(space_scale >= 2.0 * g.dx * (1.0 - 1e-12)) {
        return Err(LabError::Unresolved {
            constraint: "space scale >= 2 dx",
            detail: format!("space scale {space_scale}, dx {}", g.dx),
        });
    }
    let weights = |step: f64, scale: f64, half: f64, profile: &dyn Fn(f64) -> f64| -> Vec<f64> {
        let reach = (half * scale / step).ceil() as usize;
        (0..=reach).map(|k| profile(k as f64 * step / scale) / scale * step).collect()
    };
    let wt = weights(g.dt, time_scale, spec.t_halfwidth, &|u| spec.t_profile(u));
    let wx = weights(g.dx, space_scale, spec.x_halfwidth, &|u| spec.x_profile(u));
    let (nt, nx) = (g.nt(), g.nx());
    let (kt, kx) = (wt.len() as isize - 1, wx.len() as isize - 1);

    let space_pass = par_map(nt, |i| {
        let row = &noise.values[i * nx..(i + 1) * nx];
        (0..nx as isize)
            .map(|j| {
                let mut acc = wx[0] * row[j as usize];
                for l in 1..=kx {
                    let w = wx[l as usize];
                    let lo = j - l;
                    let hi = j + l;
                    if lo >= 0 {
                        acc += w * row[lo as usize];
                    }
                    if hi < nx as isize {
                        acc += w * row[hi as usize];
                    }
                }
                acc
            })
            .collect::<Vec<f64>>()
    });
    let rows = par_map(nt, |i| {
        let i = i as isize;
        let mut out: Vec<f64> = space_pass[i as usize].iter().map(|v| wt[0] * v).collect();
        for k in 1..=kt {
            let w = wt[k as usize];
            for src in [i - k, i + k] {
                if src >= 0 && src < nt as isize {
                    for (o, v) in out.iter_mut().zip(&space_pass[src as usize]) {
                        *o += w * v;
                    }
                }
            }
        }
        out
    });
    Ok(MollifiedField {
        seed: noise.seed,
        time_scale,
        space_scale,
        grid: g,
        values: rows.concat(),
    })
}

/// Mollifications of one realization at several ε, all driven by the same
/// cells.
pub fn couple_across_scales(
    noise: &WhiteNoiseRealization,
    spec: &MollifierSpec,
    eps_list: &[f64],
) -> Result<Vec<MollifiedField>> {
    eps_list.iter().map(|&e| mollify(noise, spec, e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mollifier::CovarianceTable;
    use crate::stats::{mean, variance};

    fn small_grid() -> GridSpec {
        GridSpec::new(0.0, 0.2, -1.0, 1.0, 0.002, 0.01).unwrap()
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridSpec::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.1).is_err());
        assert!(GridSpec::new(0.0, 0.0, 0.0, 1.0, 0.1, 0.1).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0, 1.0, f64::NAN, 0.1).is_err());
    }

    #[test]
    fn white_noise_is_deterministic() {
        let g = small_grid();
        let a = sample_white_noise(&g, 9).unwrap();
        let b = sample_white_noise(&g, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_white_noise(&g, 10).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn white_noise_cell_law() {
        let g = GridSpec::new(0.0, 1.0, 0.0, 1.0, 1e-3, 1e-3).unwrap();
        assert!(g.len() >= 1_000_000);
        let w = sample_white_noise(&g, 1).unwrap();
        let scaled: Vec<f64> = w.values.iter().map(|v| v * (g.dt * g.dx).sqrt()).collect();
        let n = scaled.len() as f64;
        assert!(mean(&scaled).abs() < 4.0 / n.sqrt());
        assert!((variance(&scaled) - 1.0).abs() < 0.01);
        let other = sample_white_noise(&g, 2).unwrap();
        let cross: Vec<f64> = w
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b * g.dt * g.dx)
            .collect();
        assert!(mean(&cross).abs() < 4.0 / n.sqrt());
    }

    #[test]
    fn mollify_rejects_unresolved_scales() {
        let g = small_grid();
        let w = WhiteNoiseRealization::zeros(&g).unwrap();
        let spec = MollifierSpec::default();
        // ε² = 0.0036 < 2 dt = 0.004
        match mollify(&w, &spec, 0.06) {
            Err(LabError::Unresolved { constraint, .. }) => assert!(constraint.contains("time")),
            other => panic!("{other:?}"),
        }
        let g2 = GridSpec::new(0.0, 0.2, -1.0, 1.0, 0.0001, 0.1).unwrap();
        let w2 = WhiteNoiseRealization::zeros(&g2).unwrap();
        match mollify(&w2, &spec, 0.1) {
            Err(LabError::Unresolved { constraint, .. }) => assert!(constraint.contains("space")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mollify_zero_and_linearity() {
        let g = small_grid();
        let spec = MollifierSpec::default();
        let z = mollify(&WhiteNoiseRealization::zeros(&g).unwrap(), &spec, 0.2).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        let a = sample_white_noise(&g, 1).unwrap();
        let b = sample_white_noise(&g, 2).unwrap();
        let combo = mollify(&a.combine(2.0, &b, -0.5).unwrap(), &spec, 0.2).unwrap();
        let ma = mollify(&a, &spec, 0.2).unwrap();
        let mb = mollify(&b, &spec, 0.2).unwrap();
        for k in 0..combo.values.len() {
            let expect = 2.0 * ma.values[k] - 0.5 * mb.values[k];
            assert!((combo.values[k] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn coupling_single_scale_is_mollify() {
        let g = small_grid();
        let spec = MollifierSpec::default();
        let w = sample_white_noise(&g, 4).unwrap();
        let coupled = couple_across_scales(&w, &spec, &[0.2]).unwrap();
        assert_eq!(coupled[0], mollify(&w, &spec, 0.2).unwrap());
    }

    #[test]
    fn mollified_variance_matches_r_eps() {
        let spec = MollifierSpec::default();
        let table = CovarianceTable::build(spec);
        let eps = 0.2;
        let g = GridSpec::new(-0.04, 0.3, -1.5, 1.5, 0.002, 0.01).unwrap();
        let lag = 21;
        let mut same = Vec::new();
        let mut lagged = Vec::new();
        for rep in 0..200u64 {
            let w = sample_white_noise(&g, 1000 + rep).unwrap();
            let f = mollify(&w, &spec, eps).unwrap();
            // Probes far enough apart to be independent.
            for i in (20..g.nt() - lag).step_by(45) {
                for j in (25..g.nx() - 25).step_by(25) {
                    same.push(f.node(i, j).powi(2));
                    lagged.push(f.node(i + lag, j) * f.node(i, j));
                }
            }
        }
        let target = table.r_eps(0.0, 0.0, eps);
        assert!((mean(&same) / target - 1.0).abs() < 0.1, "{} vs {}", mean(&same), target);
        let se = (variance(&lagged) / lagged.len() as f64).sqrt();
        assert!(mean(&lagged).abs() < 4.0 * se);
    }

    #[test]
    fn binary_dump_round_trip() {
        let g = small_grid();
        let w = sample_white_noise(&g, 77).unwrap();
        let mut buf = Vec::new();
        w.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 + 48 + 16 + 8 * g.len());
        let back = WhiteNoiseRealization::read_binary(&buf[..]).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn interpolation_hits_nodes() {
        let g = small_grid();
        let spec = MollifierSpec::default();
        let f = mollify(&sample_white_noise(&g, 5).unwrap(), &spec, 0.2).unwrap();
        for &(i, j) in &[(0usize, 0usize), (10, 20), (g.nt() - 1, g.nx() - 1)] {
            assert!((f.at(g.t(i), g.x(j)) - f.node(i, j)).abs() < 1e-9 * (1.0 + f.node(i, j).abs()));
        }
        assert_eq!(f.at(-1.0, 0.0), 0.0);
    }
}
