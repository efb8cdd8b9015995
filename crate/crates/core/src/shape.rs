//! Shared smooth shape functions: the exponential smoothstep used by the
//! radial cutoff and partition weights, and the normalised interior bump.

/// `sigma(tau) = e^{-1/tau} / (e^{-1/tau} + e^{-1/(1-tau)})` extended by 0
/// below 0 and 1 above 1; infinitely differentiable on the line.
pub fn smoothstep(tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    if tau >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / tau).exp();
    let b = (-1.0 / (1.0 - tau)).exp();
    a / (a + b)
}

/// First derivative of [`smoothstep`].
pub fn smoothstep_d1(tau: f64) -> f64 {
    if tau <= 0.0 || tau >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / tau).exp();
    let b = (-1.0 / (1.0 - tau)).exp();
    let da = a / (tau * tau);
    let db = -b / ((1.0 - tau) * (1.0 - tau));
    (da * b - a * db) / ((a + b) * (a + b))
}

/// Second derivative of [`smoothstep`], by analytic differentiation of the
/// quotient.
pub fn smoothstep_d2(tau: f64) -> f64 {
    if tau <= 0.0 || tau >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / tau).exp();
    let b = (-1.0 / (1.0 - tau)).exp();
    let da = a / (tau * tau);
    let db = -b / ((1.0 - tau) * (1.0 - tau));
    let dda = a * (1.0 / tau.powi(4) - 2.0 / tau.powi(3));
    let ddb = b * (1.0 / (1.0 - tau).powi(4) - 2.0 / (1.0 - tau).powi(3));
    let s = a + b;
    let num = da * b - a * db;
    // d/dtau [num / s^2] = (num' s - 2 num s') / s^3
    let num_d = dda * b - a * ddb;
    (num_d * s - 2.0 * num * (da + db)) / (s * s * s)
}

/// Unnormalised interior bump `exp(-1/(1-u))` of the squared relative
/// radius `u = |x-c|^2 / rho^2`; vanishes with all derivatives at `u = 1`.
pub fn bump_profile(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u)).exp()
    }
}

/// Volume integral of `bump_profile(|z|^2)` over the unit ball in
/// dimension `n`, by radial Gauss-Legendre.
pub fn bump_unit_integral(n: usize) -> f64 {
    let surface = sphere_area(n);
    crate::quad::integrate(
        |r: f64| bump_profile(r * r) * r.powi(n as i32 - 1),
        0.0,
        1.0,
        64,
    ) * surface
}

/// Surface area of the unit sphere `S^{n-1}`.
pub fn sphere_area(n: usize) -> f64 {
    // 2 pi^{n/2} / Gamma(n/2)
    let half = 0.5 * n as f64;
    2.0 * std::f64::consts::PI.powf(half) / gamma_fn(half)
}

/// Gamma function for half-integer and integer arguments.
fn gamma_fn(x: f64) -> f64 {
    let half = std::f64::consts::PI.sqrt();
    if (x - x.round()).abs() < 1e-12 {
        let mut acc = 1.0;
        let mut k = x.round() as i64;
        while k > 1 {
            k -= 1;
            acc *= k as f64;
        }
        acc
    } else {
        // half-integer: Gamma(1/2) sqrt(pi) ladder
        let mut acc = half;
        let mut v = 0.5;
        while v + 1.0 <= x + 1e-12 {
            acc *= v;
            v += 1.0;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_endpoints_and_monotonicity() {
        assert_eq!(smoothstep(-0.5), 0.0);
        assert_eq!(smoothstep(1.5), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 0..=1000 {
            let v = smoothstep(i as f64 / 1000.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn smoothstep_derivatives_match_finite_differences() {
        for &tau in &[0.1, 0.3, 0.5, 0.7, 0.93] {
            let h = 1e-5;
            let fd1 = (smoothstep(tau + h) - smoothstep(tau - h)) / (2.0 * h);
            assert!((fd1 - smoothstep_d1(tau)).abs() < 1e-8, "d1 at {tau}");
            let fd2 = (smoothstep_d1(tau + h) - smoothstep_d1(tau - h)) / (2.0 * h);
            assert!((fd2 - smoothstep_d2(tau)).abs() < 1e-6, "d2 at {tau}");
        }
    }

    #[test]
    fn max_slope_is_two() {
        // the transition profile has max derivative 2 at the midpoint
        assert!((smoothstep_d1(0.5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((sphere_area(4) - 2.0 * std::f64::consts::PI * std::f64::consts::PI).abs() < 1e-10);
    }

    #[test]
    fn unit_bump_integral_is_positive_and_stable() {
        let a = bump_unit_integral(3);
        assert!(a > 0.0);
        // refinement stability
        let fine = crate::quad::integrate(
            |r: f64| bump_profile(r * r) * r * r,
            0.0,
            1.0,
            128,
        ) * sphere_area(3);
        assert!((a - fine).abs() / fine < 1e-12);
    }
}
