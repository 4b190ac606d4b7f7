//! Composite Gauss-Legendre rules.

use gauss_quad::GaussLegendre;
use std::num::NonZeroUsize;

/// A fixed Gauss-Legendre rule reused over many panels.
#[derive(Debug, Clone)]
pub struct Panels {
    nodes: Vec<(f64, f64)>,
}

impl Panels {
    pub fn new(order: usize) -> Self {
        let rule = GaussLegendre::new(NonZeroUsize::new(order.max(1)).expect("order >= 1"));
        Self {
            nodes: rule.iter().map(|(x, w)| (*x, *w)).collect(),
        }
    }

    /// Nodes and weights of the rule mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().map(move |&(x, w)| (mid + half * x, half * w))
    }

    /// `∫_a^b f` split into `panels` equal pieces.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        if b <= a {
            return 0.0;
        }
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (x, w) in self.mapped(lo, lo + h) {
                total += w * f(x);
            }
        }
        total
    }

    /// Nodes and weights for the composite rule over `[a, b]`.
    pub fn composite(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let h = (b - a) / panels as f64;
        (0..panels)
            .flat_map(|p| {
                let lo = a + p as f64 * h;
                self.mapped(lo, lo + h).collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Trapezoid rule on equally spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exactness() {
        let p = Panels::new(8);
        let v = p.integrate(0.0, 2.0, 3, |x| x.powi(7) - 3.0 * x * x);
        assert!((v - (2f64.powi(8) / 8.0 - 8.0)).abs() < 1e-11);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let v: Vec<f64> = (0..11).map(|i| 1.0 + 0.1 * i as f64).collect();
        assert!((trapezoid(&v, 0.1) - 1.5).abs() < 1e-14);
    }
}
