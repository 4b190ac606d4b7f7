//! Brownian paths, local times and the Tanaka approximation.

use crate::error::{positive, LabError, Result};
use crate::rng::{derive_key, label_hash, CounterRng};

/// Brownian path sampled on a regular grid, with linear interpolation in
/// between. `values[k] = B(k·dt)`; `backward[k] = B(−k·dt)` when present.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub dt: f64,
    pub values: Vec<f64>,
    pub backward: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTimeEstimate {
    pub t: f64,
    pub level: f64,
    pub delta: f64,
    pub value: f64,
}

fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    positive("horizon", horizon)?;
    positive("dt", dt)?;
    let n = (horizon / dt - 1e-9).ceil().max(1.0);
    Ok(n as usize)
}

fn cumulative(rng: &mut CounterRng, steps: usize, dt: f64) -> Vec<f64> {
    let sd = dt.sqrt();
    let mut values = Vec::with_capacity(steps + 1);
    let mut b = 0.0;
    values.push(b);
    for _ in 0..steps {
        b += sd * rng.normal();
        values.push(b);
    }
    values
}

/// One-sided path on `[0, horizon]`. The increments come from the counter
/// stream of `seed`.
pub fn sample_path(horizon: f64, dt: f64, seed: u64) -> Result<BrownianPath> {
    let steps = steps_for(horizon, dt)?;
    Ok(BrownianPath {
        dt,
        values: cumulative(&mut CounterRng::new(seed), steps, dt),
        backward: None,
    })
}

/// Two-sided path on `[−horizon, horizon]`; the forward half equals
/// `sample_path(horizon, dt, seed)`.
pub fn sample_two_sided(horizon: f64, dt: f64, seed: u64) -> Result<BrownianPath> {
    let mut p = sample_path(horizon, dt, seed)?;
    let steps = p.values.len() - 1;
    let mut rng = CounterRng::new(derive_key(seed, label_hash("backward")));
    p.backward = Some(cumulative(&mut rng, steps, dt));
    Ok(p)
}

impl BrownianPath {
    pub fn from_values(dt: f64, values: Vec<f64>) -> Result<Self> {
        positive("dt", dt)?;
        if values.len() < 2 {
            return Err(LabError::InvalidParameter {
                name: "values",
                reason: "a path needs at least two nodes".into(),
            });
        }
        Ok(Self { dt, values, backward: None })
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) || t > self.horizon() * (1.0 + 1e-12) {
            return Err(LabError::OutOfDomain(format!(
                "time {t} outside [0, {}]",
                self.horizon()
            )));
        }
        Ok(())
    }

    /// Linear interpolation. Negative times need the two-sided extension.
    pub fn at(&self, t: f64) -> Option<f64> {
        let (side, s) = if t >= 0.0 {
            (&self.values, t)
        } else {
            (self.backward.as_ref()?, -t)
        };
        let f = s / self.dt;
        let k = f.floor();
        if !(k >= 0.0) {
            return None;
        }
        let k = k as usize;
        if k + 1 >= side.len() {
            return if k + 1 == side.len() && f - k as f64 <= 1e-9 { Some(side[k]) } else { None };
        }
        let w = f - k as f64;
        Some(side[k] + w * (side[k + 1] - side[k]))
    }

    /// Keeps every `factor`-th node.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return Err(LabError::InvalidParameter {
                name: "factor",
                reason: format!("{factor} does not divide {} steps", self.steps()),
            });
        }
        let pick = |v: &Vec<f64>| v.iter().step_by(factor).copied().collect::<Vec<f64>>();
        Ok(Self {
            dt: self.dt * factor as f64,
            values: pick(&self.values),
            backward: self.backward.as_ref().map(pick),
        })
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dt != other.dt || self.values.len() != other.values.len() {
            return Err(LabError::PathMismatch(format!(
                "dt {} vs {}, {} vs {} nodes",
                self.dt,
                other.dt,
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }

    /// `self − other` on the forward half.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            dt: self.dt,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            backward: None,
        })
    }

    /// `c·B(s/c²)` sampled at `dt·c²`.
    pub fn rescaled(&self, c: f64) -> Self {
        Self {
            dt: self.dt * c * c,
            values: self.values.iter().map(|v| c * v).collect(),
            backward: self.backward.as_ref().map(|b| b.iter().map(|v| c * v).collect()),
        }
    }
}

/// Time spent in `[lo, hi]` by the linear interpolant of `values` over the
/// first `whole` segments plus a fraction `tail` of the next one.
fn band_occupation(values: &[f64], dt: f64, lo: f64, hi: f64, whole: usize, tail: f64) -> f64 {
    let seg = |a: f64, b: f64, h: f64| -> f64 {
        let (m, mx) = if a <= b { (a, b) } else { (b, a) };
        if mx < lo || m > hi {
            return 0.0;
        }
        let span = mx - m;
        if span == 0.0 {
            return h;
        }
        h * (mx.min(hi) - m.max(lo)) / span
    };
    let mut occ = 0.0;
    for k in 0..whole {
        occ += seg(values[k], values[k + 1], dt);
    }
    if tail > 0.0 {
        let a = values[whole];
        let b = a + tail * (values[whole + 1] - a);
        occ += seg(a, b, tail * dt);
    }
    occ
}

fn split_time(path: &BrownianPath, t: f64) -> (usize, f64) {
    let f = t / path.dt;
    let mut whole = (f + 1e-9).floor() as usize;
    let mut tail = f - whole as f64;
    if tail < 1e-9 {
        tail = 0.0;
    }
    if whole >= path.steps() {
        whole = path.steps();
        tail = 0.0;
    }
    (whole, tail)
}

/// `(2δ)⁻¹ |{s ≤ t : |B(s) − level| < δ}|`, with the occupation measured
/// exactly for the piecewise-linear path.
pub fn local_time(path: &BrownianPath, level: f64, t: f64, delta: f64) -> Result<LocalTimeEstimate> {
    positive("delta", delta)?;
    path.check_time(t)?;
    let (whole, tail) = split_time(path, t);
    let occ = band_occupation(&path.values, path.dt, level - delta, level + delta, whole, tail);
    Ok(LocalTimeEstimate { t, level, delta, value: occ / (2.0 * delta) })
}

/// Local time at 0 of `B1 − B2`.
pub fn intersection_local_time(
    b1: &BrownianPath,
    b2: &BrownianPath,
    t: f64,
    delta: f64,
) -> Result<LocalTimeEstimate> {
    b1.check_compatible(b2)?;
    if b1.values == b2.values {
        return Err(LabError::Degenerate(
            "intersection local time of a path with itself".into(),
        ));
    }
    local_time(&b1.difference(b2)?, 0.0, t, delta)
}

/// `ζ(x) = x` on `[−1, 1]`, `sgn(x)` outside.
#[inline]
pub fn zeta(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

// Blocks shorter than a path step would evaluate ζ_n at interpolated points
// that already contain part of the next increment.
fn check_n(n: usize, path: &BrownianPath) -> Result<()> {
    if n == 0 {
        return Err(LabError::InvalidParameter { name: "n", reason: "must be at least 1".into() });
    }
    if n as f64 * path.dt > 1.0 + 1e-9 {
        return Err(LabError::InvalidParameter {
            name: "n",
            reason: format!("block 1/{n} is shorter than the path step {}", path.dt),
        });
    }
    Ok(())
}

/// `f_n(t) = Σ_k ζ_n(ȳ(k/n)) (ȳ((k+1)/n ∧ t) − ȳ(k/n ∧ t))` with
/// `ζ_n(x) = ζ(n^{1/4} x)`.
pub fn tanaka_fn(path_diff: &BrownianPath, n: usize, t: f64) -> Result<f64> {
    check_n(n, path_diff)?;
    path_diff.check_time(t)?;
    let scale = (n as f64).powf(0.25);
    let y = |s: f64| path_diff.at(s.min(path_diff.horizon())).unwrap_or(0.0);
    let h = 1.0 / n as f64;
    let mut acc = 0.0;
    let mut k = 0usize;
    while (k as f64) * h < t {
        let s0 = k as f64 * h;
        let s1 = ((k + 1) as f64 * h).min(t);
        let y0 = y(s0);
        acc += zeta(scale * y0) * (y(s1) - y0);
        k += 1;
    }
    Ok(acc)
}

/// `f_n` evaluated at every node of the path.
pub fn tanaka_fn_trajectory(path_diff: &BrownianPath, n: usize) -> Result<Vec<f64>> {
    check_n(n, path_diff)?;
    let scale = (n as f64).powf(0.25);
    let h = 1.0 / n as f64;
    let horizon = path_diff.horizon();
    let mut out = Vec::with_capacity(path_diff.values.len());
    let mut closed = 0.0;
    let mut block = 0usize;
    let mut y_block = path_diff.values[0];
    for (m, &ym) in path_diff.values.iter().enumerate() {
        let s = m as f64 * path_diff.dt;
        while ((block + 1) as f64 * h) <= s + 1e-12 {
            let next = ((block + 1) as f64 * h).min(horizon);
            let y_next = path_diff.at(next).unwrap_or(ym);
            closed += zeta(scale * y_block) * (y_next - y_block);
            block += 1;
            y_block = y_next;
        }
        out.push(closed + zeta(scale * y_block) * (ym - y_block));
    }
    Ok(out)
}

/// `U(t_m) = Σ_{i<m} sgn(ȳ_i)(ȳ_{i+1} − ȳ_i)` with `sgn(0) = 0`.
pub fn ito_sign_trajectory(path_diff: &BrownianPath) -> Vec<f64> {
    let v = &path_diff.values;
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    out.push(acc);
    for w in v.windows(2) {
        let s = if w[0] > 0.0 {
            1.0
        } else if w[0] < 0.0 {
            -1.0
        } else {
            0.0
        };
        acc += s * (w[1] - w[0]);
        out.push(acc);
    }
    out
}

/// `sup_m |U(t_m) − f_n(t_m)|²` over the nodes in `[0, t]`.
pub fn tanaka_sup_error(path_diff: &BrownianPath, n: usize, t: f64) -> Result<f64> {
    path_diff.check_time(t)?;
    let u = ito_sign_trajectory(path_diff);
    let f = tanaka_fn_trajectory(path_diff, n)?;
    let last = split_time(path_diff, t).0;
    Ok(u[..=last]
        .iter()
        .zip(&f[..=last])
        .map(|(a, b)| (a - b) * (a - b))
        .fold(0.0, f64::max))
}

/// `(|ȳ(t)| − f_n(t)) / 2` for `ȳ = B1 − B2`.
pub fn tanaka_local_time(b1: &BrownianPath, b2: &BrownianPath, t: f64, n: usize) -> Result<f64> {
    let y = b1.difference(b2)?;
    let fnt = tanaka_fn(&y, n, t)?;
    let yt = y.at(t).ok_or_else(|| LabError::OutOfDomain(format!("time {t}")))?;
    Ok((yt.abs() - fnt) / 2.0)
}
