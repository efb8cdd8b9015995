//! Shared test oracles, independent of the library's spectral pipelines.

#![allow(dead_code)]

use ndarray::ArrayD;
use nse_transfer_core::spectral::{Grid, ScalarField, VectorField};

/// Second-order central-difference divergence with periodic wrap.
pub fn fd_divergence(u: &mut VectorField) -> ScalarField {
    let grid = *u.grid();
    let n1 = grid.points();
    let h = grid.spacing();
    u.ensure_physical();
    let comps: Vec<&ArrayD<f64>> = (0..3).map(|c| u.comp(c).phys_ref()).collect();
    let flats: Vec<&[f64]> = comps.iter().map(|c| c.as_slice().unwrap()).collect();
    let mut out = ArrayD::<f64>::zeros(ndarray::IxDyn(&grid.shape()));
    {
        let o = out.as_slice_mut().unwrap();
        let idx = |i: usize, j: usize, k: usize| (i * n1 + j) * n1 + k;
        for i in 0..n1 {
            let ip = (i + 1) % n1;
            let im = (i + n1 - 1) % n1;
            for j in 0..n1 {
                let jp = (j + 1) % n1;
                let jm = (j + n1 - 1) % n1;
                for k in 0..n1 {
                    let kp = (k + 1) % n1;
                    let km = (k + n1 - 1) % n1;
                    o[idx(i, j, k)] = (flats[0][idx(ip, j, k)] - flats[0][idx(im, j, k)]
                        + flats[1][idx(i, jp, k)]
                        - flats[1][idx(i, jm, k)]
                        + flats[2][idx(i, j, kp)]
                        - flats[2][idx(i, j, km)])
                        / (2.0 * h);
                }
            }
        }
    }
    ScalarField::from_physical(grid, out)
}

/// Radial cutoff profile: 1 inside `R-1`, 0 outside `R` (smoothstep).
pub fn cutoff_value(r: f64, big_r: f64) -> f64 {
    nse_transfer_core::shape::smoothstep(big_r - r)
}

/// d/dr of the cutoff profile.
pub fn cutoff_slope(r: f64, big_r: f64) -> f64 {
    -nse_transfer_core::shape::smoothstep_d1(big_r - r)
}

/// The criterion reference datum: `f = -grad(phi) . u` for the standard
/// cutoff at radius `big_r` and a single-mode solenoidal `u`.
pub fn reference_datum(grid: Grid, big_r: f64) -> ScalarField {
    let len = grid.len();
    ScalarField::sample(grid, |x| {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if r == 0.0 {
            return 0.0;
        }
        let dphi = cutoff_slope(r, big_r);
        if dphi == 0.0 {
            return 0.0;
        }
        let u0 = (2.0 * std::f64::consts::PI * x[1] / len).sin();
        -dphi * (x[0] / r) * u0
    })
}

use num_complex::Complex64;

/// Classical fourth-order Runge-Kutta pseudo-spectral integrator for the
/// projected momentum equation, independent of the mild-solver path.
pub fn rk4_reference(v0: &VectorField, t_end: f64, steps: usize) -> VectorField {
    let grid = *v0.grid();
    let n = grid.dim();
    let rhs = |u: &VectorField| -> VectorField {
        let mut u = u.clone();
        // Lap u - P div(u (x) u)
        let mut lap = u.laplacian();
        u.ensure_physical();
        let mut comps = Vec::with_capacity(n);
        for j in 0..n {
            let mut acc = ScalarField::zeros(grid);
            for k in 0..n {
                let a = u.comp(j).phys_ref().clone();
                let mut prod = ScalarField::from_physical(grid, a);
                {
                    let b = u.comp(k).phys_ref().clone();
                    prod.phys_mut().zip_mut_with(&b, |x, &y| *x *= y);
                }
                if grid.dealias() {
                    prod.dealias_in_place();
                }
                let mut index = vec![0usize; n];
                index[k] = 1;
                let mut d = prod.derivative(&index).unwrap();
                acc.add_spectral_scaled(&mut d, Complex64::new(1.0, 0.0));
            }
            comps.push(acc);
        }
        let mut divt = VectorField::from_components(comps);
        let mut proj = divt.leray_project();
        lap.add_spectral_scaled(&mut proj, Complex64::new(-1.0, 0.0));
        lap
    };
    let dt = t_end / steps as f64;
    let mut u = v0.clone();
    u.ensure_spectral();
    for _ in 0..steps {
        let k1 = rhs(&u);
        let mut u2 = u.clone();
        u2.add_spectral_scaled(&mut k1.clone(), Complex64::new(0.5 * dt, 0.0));
        let k2 = rhs(&u2);
        let mut u3 = u.clone();
        u3.add_spectral_scaled(&mut k2.clone(), Complex64::new(0.5 * dt, 0.0));
        let k3 = rhs(&u3);
        let mut u4 = u.clone();
        u4.add_spectral_scaled(&mut k3.clone(), Complex64::new(dt, 0.0));
        let k4 = rhs(&u4);
        for (km, w) in [(k1, 1.0), (k2, 2.0), (k3, 2.0), (k4, 1.0)] {
            u.add_spectral_scaled(&mut km.clone(), Complex64::new(dt * w / 6.0, 0.0));
        }
    }
    u
}

/// Smooth solenoidal bump: a curl of a compact profile, band-limited and
/// projected so it is divergence-free in the discrete spectral sense, then
/// rescaled to the requested max amplitude.
pub fn solenoidal_bump(grid: Grid, support_radius: f64, amplitude: f64) -> VectorField {
    let mut raw = VectorField::sample(grid, |x, comp| {
        let r2: f64 = x.iter().map(|t| t * t).sum();
        let u = r2 / (support_radius * support_radius);
        let b = nse_transfer_core::shape::bump_profile(u);
        match comp {
            0 => -x[1] * b,
            1 => x[0] * b,
            _ => 0.0,
        }
    });
    raw.dealias_in_place();
    let mut v = raw.leray_project();
    v.ensure_physical();
    let sup = v.max_abs();
    v.scale_in_place(amplitude / sup);
    v.ensure_physical();
    v.drop_spectral();
    v
}
