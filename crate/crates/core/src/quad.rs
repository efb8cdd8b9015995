//! Gauss-Legendre quadrature, plain and adaptive.

use crate::{Error, Result};

/// Quadrature controls for kernel and corrector integrals.
#[derive(Debug, Clone, Copy)]
pub struct QuadSpec {
    /// Gauss-Legendre nodes per panel.
    pub nodes: usize,
    /// Absolute error target for adaptive panel refinement.
    pub tol: f64,
    /// Refinement cap.
    pub max_panels: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            nodes: 16,
            tol: 1e-10,
            max_panels: 4096,
        }
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// computed by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed-order Gauss-Legendre on `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let (xs, ws) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in xs.iter().zip(&ws) {
        acc += w * f(mid + c * x);
    }
    acc * c
}

/// Adaptive panel-doubling Gauss-Legendre on `[a, b]` with absolute error
/// target `spec.tol`: the panel count doubles until two successive composite
/// rules agree.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, spec: &QuadSpec) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let (xs, ws) = gauss_legendre(spec.nodes);
    let composite = |panels: usize| -> f64 {
        let h = (b - a) / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let c = 0.5 * h;
            let mid = lo + c;
            let mut s = 0.0;
            for (x, w) in xs.iter().zip(&ws) {
                s += w * f(mid + c * x);
            }
            acc += s * c;
        }
        acc
    };
    let mut panels = 1;
    let mut prev = composite(panels);
    while panels * 2 <= spec.max_panels {
        panels *= 2;
        let cur = composite(panels);
        if (cur - prev).abs() <= spec.tol {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::Quadrature(format!(
        "no convergence to {:.1e} after {} panels",
        spec.tol, panels
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n-point rule is exact through degree 2n-1.
        let val = integrate(|x| x.powi(7) - 2.0 * x.powi(4) + 1.0, -1.0, 3.0, 8);
        let exact = |x: f64| x.powi(8) / 8.0 - 0.4 * x.powi(5) + x;
        assert!((val - (exact(3.0) - exact(-1.0))).abs() < 1e-10);
    }

    #[test]
    fn adaptive_reaches_tolerance_on_peaked_integrand() {
        let spec = QuadSpec {
            nodes: 12,
            tol: 1e-12,
            max_panels: 1 << 14,
        };
        let val = integrate_adaptive(&|x: f64| (-40.0 * (x - 0.3).powi(2)).exp(), 0.0, 1.0, &spec)
            .unwrap();
        // erf-based reference
        let exact = 0.279_228_000_939_606_7;
        assert!((val - exact).abs() < 1e-9, "got {val}");
    }

    #[test]
    fn degenerate_interval_is_zero() {
        let spec = QuadSpec::default();
        assert_eq!(integrate_adaptive(&|x: f64| x, 1.0, 1.0, &spec).unwrap(), 0.0);
    }
}
