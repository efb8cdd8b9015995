//! Pointwise and integral evaluation of the kernels behind the mild
//! formulation: the heat kernel `E_s`, the kernel of `e^{-tA} P` (Gaussian
//! part plus a Riesz-type correction given by a finite integral after the
//! substitution `u = |x|^2 / 4s`), and the kernel of `grad e^{-tA} P`.
//!
//! The Riesz-part integrals are evaluated by adaptive Gauss-Legendre after
//! the further substitution `w = sqrt(u)`, which turns every integrand into
//! an entire function `w^p exp(-w^2)`, so panel doubling converges fast.
//!
//! Radial structure used throughout (unit vector `e = x/|x|`, `z = |x|^2/4t`,
//! `c_n = pi^{-n/2}`, `G(a, z)` the lower incomplete gamma function):
//!
//! ```text
//! K1[j,k](x,t)      = d_jk E_t(x) + c_n |x|^-n ( e_j e_k G(n/2+1, z) - d_jk/2 G(n/2, z) )
//! K2[l,j,k](x,t)    = d_jk dE_t/dx_l
//!                   + c_n |x|^-(n+1) ( S_jkl G(n/2+1, z) - 2 e_j e_k e_l G(n/2+2, z) )
//! D2K1[m,l,j,k](x,t)= d_jk d2E_t/dx_l dx_m
//!                   + c_n |x|^-(n+2) ( 4 eeee G(n/2+3, z) - 2 S6 G(n/2+2, z) + S3 G(n/2+1, z) )
//! ```
//!
//! with `S_jkl = d_jk e_l + d_jl e_k + d_kl e_j`, `S6` the six delta-pair
//! symmetrisation of `d e e` and `S3` the three double-delta pairings. As
//! `z -> inf` these reduce to the corresponding derivatives of the Newtonian
//! potential, which fixes all constants.

use crate::quad::{self, QuadSpec};
use crate::{Error, Result};
use rand::SeedableRng;
use std::io::Write;

/// `E_s(x) = (4 pi s)^{-n/2} exp(-|x|^2 / 4s)`.
pub fn heat_kernel(x: &[f64], s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Argument(format!("heat kernel needs s > 0, got {s}")));
    }
    let n = x.len() as i32;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((4.0 * std::f64::consts::PI * s).powi(-n).sqrt() * (-r2 / (4.0 * s)).exp())
}

/// Evaluator bundle carrying the dimension and quadrature controls.
#[derive(Debug, Clone)]
pub struct Kernels {
    n: usize,
    quad: QuadSpec,
}

/// Radial coefficients of `K1`: `K1[j,k] = xx * e_j e_k + id * d_jk`.
#[derive(Debug, Clone, Copy)]
pub struct K1Coeffs {
    pub xx: f64,
    pub id: f64,
}

/// Radial coefficients of `K2`:
/// `K2[l,j,k] = sym * S_jkl + xxx * e_j e_k e_l + gauss * d_jk e_l`.
#[derive(Debug, Clone, Copy)]
pub struct K2Coeffs {
    pub sym: f64,
    pub xxx: f64,
    pub gauss: f64,
}

impl Kernels {
    pub fn new(n: usize, quad: QuadSpec) -> Self {
        assert!(n >= 3);
        Kernels { n, quad }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn cn(&self) -> f64 {
        std::f64::consts::PI.powi(-(self.n as i32)).sqrt()
    }

    /// `2 Int_0^sqrt(z) w^p exp(-w^2) dw = G((p+1)/2, z)`, by adaptive
    /// Gauss-Legendre. The upper limit is clipped where the integrand is
    /// below 1e-30 of its peak.
    fn gamma_quad(&self, p: u32, zeta: f64) -> Result<f64> {
        let upper = zeta.sqrt().min(9.0);
        if upper <= 0.0 {
            return Ok(0.0);
        }
        let val = quad::integrate_adaptive(
            &|w: f64| 2.0 * w.powi(p as i32) * (-w * w).exp(),
            0.0,
            upper,
            &self.quad,
        )?;
        Ok(val)
    }

    /// Gaussian part `K1_gauss[j,k] = d_jk E_t(x)`.
    pub fn k1_gaussian_part(&self, x: &[f64], t: f64, j: usize, k: usize) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Argument(format!("kernel time must be > 0, got {t}")));
        }
        if j != k {
            return Ok(0.0);
        }
        heat_kernel(x, t)
    }

    /// Riesz part `K1_riesz[j,k]` by quadrature of the substituted integral.
    pub fn k1_riesz_part(&self, x: &[f64], t: f64, j: usize, k: usize) -> Result<f64> {
        let (r, e) = split_radius(x)?;
        if !(t > 0.0) {
            return Err(Error::Argument(format!("kernel time must be > 0, got {t}")));
        }
        let n = self.n;
        let zeta = r * r / (4.0 * t);
        // G(n/2+1, z): p = n+1; G(n/2, z): p = n-1
        let g_hi = self.gamma_quad((n + 1) as u32, zeta)?;
        let g_lo = self.gamma_quad((n - 1) as u32, zeta)?;
        let delta = if j == k { 1.0 } else { 0.0 };
        Ok(self.cn() * r.powi(-(n as i32)) * (e[j] * e[k] * g_hi - 0.5 * delta * g_lo))
    }

    /// Radial coefficients of the full `K1` at radius `r`.
    pub fn k1_coeffs(&self, r: f64, t: f64) -> Result<K1Coeffs> {
        if !(r > 0.0) || !(t > 0.0) {
            return Err(Error::Argument("k1 coefficients need r > 0, t > 0".into()));
        }
        let n = self.n;
        let zeta = r * r / (4.0 * t);
        let g_hi = self.gamma_quad((n + 1) as u32, zeta)?;
        let g_lo = self.gamma_quad((n - 1) as u32, zeta)?;
        let gauss = heat_kernel(&radial_point(r, n), t)?;
        let rn = r.powi(-(n as i32));
        Ok(K1Coeffs {
            xx: self.cn() * rn * g_hi,
            id: gauss - 0.5 * self.cn() * rn * g_lo,
        })
    }

    /// Full `K1(x,t)` as an `n x n` matrix (row `j`, column `k`).
    pub fn k1(&self, x: &[f64], t: f64) -> Result<Vec<Vec<f64>>> {
        let (r, e) = split_radius(x)?;
        let c = self.k1_coeffs(r, t)?;
        let n = self.n;
        let mut out = vec![vec![0.0; n]; n];
        for j in 0..n {
            for k in 0..n {
                out[j][k] = c.xx * e[j] * e[k] + if j == k { c.id } else { 0.0 };
            }
        }
        Ok(out)
    }

    /// Radial coefficients of `K2` at radius `r`.
    pub fn k2_coeffs(&self, r: f64, t: f64) -> Result<K2Coeffs> {
        if !(r > 0.0) || !(t > 0.0) {
            return Err(Error::Argument("k2 coefficients need r > 0, t > 0".into()));
        }
        let n = self.n;
        let zeta = r * r / (4.0 * t);
        let g_mid = self.gamma_quad((n + 1) as u32, zeta)?; // G(n/2+1, z)
        let g_top = self.gamma_quad((n + 3) as u32, zeta)?; // G(n/2+2, z)
        let rp = r.powi(-(n as i32 + 1));
        let gauss = -(r / (2.0 * t)) * heat_kernel(&radial_point(r, n), t)?;
        Ok(K2Coeffs {
            sym: self.cn() * rp * g_mid,
            xxx: -2.0 * self.cn() * rp * g_top,
            gauss,
        })
    }

    /// Full `K2(x,t)`: entry `[l][j][k] = d K1[j,k] / d x_l`.
    pub fn k2(&self, x: &[f64], t: f64) -> Result<Vec<Vec<Vec<f64>>>> {
        let (r, e) = split_radius(x)?;
        let c = self.k2_coeffs(r, t)?;
        let n = self.n;
        let mut out = vec![vec![vec![0.0; n]; n]; n];
        for l in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let d_jk = delta(j, k);
                    let s = d_jk * e[l] + delta(j, l) * e[k] + delta(k, l) * e[j];
                    out[l][j][k] = c.sym * s + c.xxx * e[j] * e[k] * e[l] + c.gauss * d_jk * e[l];
                }
            }
        }
        Ok(out)
    }

    /// Second derivatives `[m][l][j][k] = d^2 K1[j,k] / dx_l dx_m`, analytic
    /// under the integral sign.
    pub fn d2_k1(&self, x: &[f64], t: f64) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
        let (r, e) = split_radius(x)?;
        if !(t > 0.0) {
            return Err(Error::Argument(format!("kernel time must be > 0, got {t}")));
        }
        let n = self.n;
        let zeta = r * r / (4.0 * t);
        let g1 = self.gamma_quad((n + 1) as u32, zeta)?; // G(n/2+1)
        let g2 = self.gamma_quad((n + 3) as u32, zeta)?; // G(n/2+2)
        let g3 = self.gamma_quad((n + 5) as u32, zeta)?; // G(n/2+3)
        let rp = r.powi(-(n as i32 + 2));
        let cn = self.cn();
        let et = heat_kernel(x, t)?;
        let b = 1.0 / (2.0 * t);
        let mut out = vec![vec![vec![vec![0.0; n]; n]; n]; n];
        for m in 0..n {
            for l in 0..n {
                let gauss_lm = (b * b * (r * e[l]) * (r * e[m]) - b * delta(l, m)) * et;
                for j in 0..n {
                    for k in 0..n {
                        let d_jk = delta(j, k);
                        let s6 = d_jk * e[l] * e[m]
                            + delta(j, l) * e[k] * e[m]
                            + delta(k, l) * e[j] * e[m]
                            + delta(j, m) * e[k] * e[l]
                            + delta(k, m) * e[j] * e[l]
                            + delta(l, m) * e[j] * e[k];
                        let s3 = d_jk * delta(l, m)
                            + delta(j, l) * delta(k, m)
                            + delta(k, l) * delta(j, m);
                        let riesz = cn
                            * rp
                            * (4.0 * e[j] * e[k] * e[l] * e[m] * g3 - 2.0 * s6 * g2 + s3 * g1);
                        out[m][l][j][k] = d_jk * gauss_lm + riesz;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Largest component magnitude of `D^k K1` at a sample (k in {0,1,2}).
    pub fn dk_k1_sup(&self, x: &[f64], t: f64, k: usize) -> Result<f64> {
        Ok(match k {
            0 => max_abs_2(&self.k1(x, t)?),
            1 => max_abs_3(&self.k2(x, t)?),
            2 => max_abs_4(&self.d2_k1(x, t)?),
            _ => {
                return Err(Error::Argument(format!(
                    "pointwise kernel tables support derivative order <= 2, got {k}"
                )))
            }
        })
    }

    /// Largest component magnitude of `D^k K2` (k in {0,1}); `D K2 = D^2 K1`.
    pub fn dk_k2_sup(&self, x: &[f64], t: f64, k: usize) -> Result<f64> {
        Ok(match k {
            0 => max_abs_3(&self.k2(x, t)?),
            1 => max_abs_4(&self.d2_k1(x, t)?),
            _ => {
                return Err(Error::Argument(format!(
                    "pointwise kernel tables support derivative order <= 1 for K2, got {k}"
                )))
            }
        })
    }

    /// `L^q` norm of the kernel over the exterior of the unit ball, by
    /// radial Gauss-Legendre panels times a spherical product rule; the
    /// componentwise-sup convention is used. Dimension 3 only.
    pub fn exterior_lq(&self, kind: KernelKind, t: f64, q: f64) -> Result<f64> {
        if self.n != 3 {
            return Err(Error::Argument(
                "exterior norms implemented for dimension 3 only".into(),
            ));
        }
        if !(t > 0.0) || !(q >= 1.0) {
            return Err(Error::Argument("exterior norm needs t > 0, q >= 1".into()));
        }
        let sphere = SphereRule::product(24, 48);
        let n_comp = match kind {
            KernelKind::K1 => 9,
            KernelKind::K2 => 27,
        };
        let comp_values = |r: f64| -> Result<Vec<Vec<f64>>> {
            // per component, values at each angular node
            let mut vals = vec![Vec::with_capacity(sphere.nodes.len()); n_comp];
            match kind {
                KernelKind::K1 => {
                    let c = self.k1_coeffs(r, t)?;
                    for e in &sphere.nodes {
                        for j in 0..3 {
                            for k in 0..3 {
                                vals[j * 3 + k].push(c.xx * e[j] * e[k] + delta(j, k) * c.id);
                            }
                        }
                    }
                }
                KernelKind::K2 => {
                    let c = self.k2_coeffs(r, t)?;
                    for e in &sphere.nodes {
                        for l in 0..3 {
                            for j in 0..3 {
                                for k in 0..3 {
                                    let d_jk = delta(j, k);
                                    let s =
                                        d_jk * e[l] + delta(j, l) * e[k] + delta(k, l) * e[j];
                                    vals[(l * 3 + j) * 3 + k].push(
                                        c.sym * s
                                            + c.xxx * e[j] * e[k] * e[l]
                                            + c.gauss * d_jk * e[l],
                                    );
                                }
                            }
                        }
                    }
                }
            }
            Ok(vals)
        };

        if q.is_infinite() {
            // sup over the sampled exterior: geometric radial ladder over the
            // product-rule nodes plus the axis and diagonal directions, which
            // carry the componentwise extrema
            let mut extra: Vec<[f64; 3]> = vec![
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ];
            let inv3 = 1.0 / (3.0f64).sqrt();
            let inv2 = 1.0 / (2.0f64).sqrt();
            extra.push([inv3, inv3, inv3]);
            extra.push([inv2, inv2, 0.0]);
            extra.push([inv2, 0.0, inv2]);
            extra.push([0.0, inv2, inv2]);
            let sup_at = |r: f64| -> Result<f64> {
                let vals = comp_values(r)?;
                let mut m = vals
                    .iter()
                    .flat_map(|v| v.iter())
                    .fold(0.0f64, |a, &b| a.max(b.abs()));
                match kind {
                    KernelKind::K1 => {
                        let c = self.k1_coeffs(r, t)?;
                        for e in &extra {
                            for j in 0..3 {
                                for k in 0..3 {
                                    m = m.max((c.xx * e[j] * e[k] + delta(j, k) * c.id).abs());
                                }
                            }
                        }
                    }
                    KernelKind::K2 => {
                        let c = self.k2_coeffs(r, t)?;
                        for e in &extra {
                            for l in 0..3 {
                                for j in 0..3 {
                                    for k in 0..3 {
                                        let d_jk = delta(j, k);
                                        let s = d_jk * e[l]
                                            + delta(j, l) * e[k]
                                            + delta(k, l) * e[j];
                                        m = m.max(
                                            (c.sym * s
                                                + c.xxx * e[j] * e[k] * e[l]
                                                + c.gauss * d_jk * e[l])
                                                .abs(),
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
                Ok(m)
            };
            let mut sup: f64 = 0.0;
            let mut r = 1.0;
            let mut last = f64::INFINITY;
            while r < 1e6 {
                let m = sup_at(r)?;
                sup = sup.max(m);
                if m < 1e-14 * sup && last < 1e-14 * sup {
                    break;
                }
                last = m;
                r *= 1.1;
            }
            return Ok(sup);
        }

        // componentwise accumulation of Int |K|^q r^{n-1} dr dS over dyadic
        // radial panels, truncated once panel contributions fall below
        // 1e-14 of the running peak
        let (gl_x, gl_w) = quad::gauss_legendre(16);
        let mut acc = vec![0.0f64; n_comp];
        let mut lo = 1.0f64;
        let mut peak = vec![0.0f64; n_comp];
        loop {
            let hi = lo * 2.0;
            let mut panel = vec![0.0f64; n_comp];
            for (xg, wg) in gl_x.iter().zip(&gl_w) {
                let r = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xg;
                let jac = 0.5 * (hi - lo) * wg * r * r;
                let vals = comp_values(r)?;
                for c in 0..n_comp {
                    let mut ang = 0.0;
                    for (v, w) in vals[c].iter().zip(&sphere.weights) {
                        ang += v.abs().powf(q) * w;
                    }
                    panel[c] += ang * jac;
                }
            }
            let mut done = true;
            for c in 0..n_comp {
                acc[c] += panel[c];
                peak[c] = peak[c].max(panel[c]);
                if panel[c] > 1e-14 * peak[c] {
                    done = false;
                }
            }
            lo = hi;
            if done || lo > 1e8 {
                break;
            }
        }
        let m = acc.iter().fold(0.0f64, |a, &b| a.max(b));
        Ok(m.powf(1.0 / q))
    }
}

/// Which kernel an exterior-norm or bound table refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Kernel of `e^{-tA} P`.
    K1,
    /// Kernel of `grad e^{-tA} P`.
    K2,
}

fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

fn split_radius(x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return Err(Error::Argument("kernel is singular at x = 0".into()));
    }
    let r = r2.sqrt();
    Ok((r, x.iter().map(|v| v / r).collect()))
}

fn radial_point(r: f64, n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[0] = r;
    x
}

fn max_abs_2(m: &[Vec<f64>]) -> f64 {
    m.iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()))
}

fn max_abs_3(m: &[Vec<Vec<f64>>]) -> f64 {
    m.iter().map(|p| max_abs_2(p)).fold(0.0f64, f64::max)
}

fn max_abs_4(m: &[Vec<Vec<Vec<f64>>>]) -> f64 {
    m.iter().map(|p| max_abs_3(p)).fold(0.0f64, f64::max)
}

/// Spherical product quadrature: Gauss-Legendre in the polar cosine,
/// trapezoid in azimuth; weights sum to `4 pi`.
struct SphereRule {
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl SphereRule {
    fn product(n_mu: usize, n_phi: usize) -> Self {
        let (mu, wmu) = quad::gauss_legendre(n_mu);
        let mut nodes = Vec::with_capacity(n_mu * n_phi);
        let mut weights = Vec::with_capacity(n_mu * n_phi);
        for (m, wm) in mu.iter().zip(&wmu) {
            let s = (1.0 - m * m).sqrt();
            for p in 0..n_phi {
                let phi = 2.0 * std::f64::consts::PI * p as f64 / n_phi as f64;
                nodes.push([s * phi.cos(), s * phi.sin(), *m]);
                weights.push(wm * 2.0 * std::f64::consts::PI / n_phi as f64);
            }
        }
        SphereRule { nodes, weights }
    }
}

/// Pinned sample set for the weighted-sup tables: dyadic radii and times,
/// a fixed number of seeded random directions shared by all shells.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub radii: Vec<f64>,
    pub times: Vec<f64>,
    pub directions: Vec<[f64; 3]>,
}

impl SampleSet {
    /// Reference set: `|x| in 2^[-2..3]`, `t in 2^[-4..2]`, 26 directions,
    /// seed 0x5EED.
    pub fn reference() -> Self {
        let radii = (-2..=3).map(|e| (2.0f64).powi(e)).collect();
        let times = (-4..=2).map(|e| (2.0f64).powi(e)).collect();
        SampleSet {
            radii,
            times,
            directions: seeded_directions(26, 0x5EED),
        }
    }
}

/// Uniformly random unit vectors from a seeded ChaCha stream (Box-Muller
/// normals, normalised).
pub fn seeded_directions(count: usize, seed: u64) -> Vec<[f64; 3]> {
    use rand::Rng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 {
        loop {
            let u: f64 = rng.random_range(-1.0..1.0);
            let v: f64 = rng.random_range(-1.0..1.0);
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    };
    (0..count)
        .map(|_| {
            let g = [normal(), normal(), normal()];
            let r = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            [g[0] / r, g[1] / r, g[2] / r]
        })
        .collect()
}

/// One row of a weighted-sup bound table.
#[derive(Debug, Clone)]
pub struct BoundCheckRow {
    pub kernel: String,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Fixed evaluation time of this row.
    pub t: f64,
    pub measured_sup: f64,
    /// Ratio of the weighted sup at `(2x, 4t)` samples to this row's; 1 for
    /// an evaluator with the declared parabolic homogeneity.
    pub dyadic_ratio: f64,
}

/// Weighted sups of `|D^k kernel| |x|^alpha t^{beta/2}` over the sample set,
/// one row per time in the grid, plus the parabolic dyadic ratio.
pub fn bound_check(
    kernels: &Kernels,
    kind: KernelKind,
    k: usize,
    alpha: f64,
    beta: f64,
    samples: &SampleSet,
) -> Result<Vec<BoundCheckRow>> {
    let name = match kind {
        KernelKind::K1 => "K1",
        KernelKind::K2 => "K2",
    };
    let eval_sup = |r: f64, t: f64| -> Result<f64> {
        let mut sup = 0.0f64;
        for d in &samples.directions {
            let x = [d[0] * r, d[1] * r, d[2] * r];
            let v = match kind {
                KernelKind::K1 => kernels.dk_k1_sup(&x, t, k)?,
                KernelKind::K2 => kernels.dk_k2_sup(&x, t, k)?,
            };
            sup = sup.max(v);
        }
        Ok(sup)
    };
    // weighted sup over radii at fixed t
    let weighted_sup = |t: f64| -> Result<f64> {
        let mut sup = 0.0f64;
        for &r in &samples.radii {
            sup = sup.max(eval_sup(r, t)? * r.powf(alpha) * t.powf(0.5 * beta));
        }
        Ok(sup)
    };
    let mut rows = Vec::new();
    let sups: Vec<f64> = samples
        .times
        .iter()
        .map(|&t| weighted_sup(t))
        .collect::<Result<Vec<_>>>()?;
    for (i, &t) in samples.times.iter().enumerate() {
        // pair (x, t) -> (2x, 4t): two steps up the dyadic time ladder with
        // every radius doubled
        let ratio = if i + 2 < samples.times.len() {
            let t4 = samples.times[i + 2];
            let mut sup4 = 0.0f64;
            for &r in &samples.radii {
                let r2 = 2.0 * r;
                sup4 = sup4.max(eval_sup(r2, t4)? * r2.powf(alpha) * t4.powf(0.5 * beta));
            }
            sup4 / sups[i]
        } else {
            f64::NAN
        };
        rows.push(BoundCheckRow {
            kernel: name.into(),
            k,
            alpha,
            beta,
            t,
            measured_sup: sups[i],
            dyadic_ratio: ratio,
        });
    }
    Ok(rows)
}

/// Per-radius weighted sups `sup |D^k kernel| |x|^alpha` at a fixed time, or
/// with the sup additionally running over a time grid.
pub fn radius_sups(
    kernels: &Kernels,
    kind: KernelKind,
    k: usize,
    alpha: f64,
    t: f64,
    radii: &[f64],
    dirs: &[[f64; 3]],
    sup_over_times: Option<&[f64]>,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut sup = 0.0f64;
        let times: &[f64] = match sup_over_times {
            Some(ts) => ts,
            None => std::slice::from_ref(&t),
        };
        for &tt in times {
            for d in dirs {
                let x = [d[0] * r, d[1] * r, d[2] * r];
                let v = match kind {
                    KernelKind::K1 => kernels.dk_k1_sup(&x, tt, k)?,
                    KernelKind::K2 => kernels.dk_k2_sup(&x, tt, k)?,
                };
                sup = sup.max(v * r.powf(alpha));
            }
        }
        out.push((r, sup));
    }
    Ok(out)
}

/// CSV export of bound tables: columns
/// `kernel,k,alpha,beta,t,measured_sup,dyadic_ratio`.
pub fn write_bound_table<W: Write>(w: &mut W, rows: &[BoundCheckRow]) -> Result<()> {
    writeln!(w, "kernel,k,alpha,beta,t,measured_sup,dyadic_ratio")?;
    for r in rows {
        let ratio = if r.dyadic_ratio.is_nan() {
            String::new()
        } else {
            format!("{:e}", r.dyadic_ratio)
        };
        writeln!(
            w,
            "{},{},{},{},{},{:e},{}",
            r.kernel, r.k, r.alpha, r.beta, r.t, r.measured_sup, ratio
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernels() -> Kernels {
        Kernels::new(3, QuadSpec::default())
    }

    #[test]
    fn heat_kernel_at_origin_and_scaling() {
        let v = heat_kernel(&[0.0, 0.0, 0.0], 1.0).unwrap();
        let expected = (4.0 * std::f64::consts::PI).powf(-1.5);
        assert!((v - expected).abs() < 1e-15);

        // parabolic scaling E_{l^2 s}(l x) = l^{-n} E_s(x)
        let x = [0.7, -0.2, 0.4];
        let lam = 1.9f64;
        let lx: Vec<f64> = x.iter().map(|v| v * lam).collect();
        let a = heat_kernel(&lx, lam * lam * 0.6).unwrap();
        let b = lam.powi(-3) * heat_kernel(&x, 0.6).unwrap();
        assert!((a - b).abs() / b.abs() < 1e-12);

        assert!(heat_kernel(&x, 0.0).is_err());
        assert!(heat_kernel(&x, -1.0).is_err());
    }

    #[test]
    fn riesz_part_structure() {
        let k = kernels();
        let x = [0.8, 0.5, -0.3];
        // symmetry in (j,k)
        let a = k.k1_riesz_part(&x, 0.7, 0, 2).unwrap();
        let b = k.k1_riesz_part(&x, 0.7, 2, 0).unwrap();
        assert_eq!(a, b);
        // singular point rejected
        assert!(k.k1_riesz_part(&[0.0; 3], 1.0, 0, 0).is_err());
        assert!(k.k1_riesz_part(&x, 0.0, 0, 0).is_err());
    }

    #[test]
    fn riesz_trace_is_minus_heat_kernel() {
        // trace identity: sum_j K1_riesz[j,j](x,t) = -E_t(x), since the
        // Laplacian of the Gaussian integrates to its own time derivative.
        let k = kernels();
        for &(r, t) in &[(0.5, 0.25), (1.0, 1.0), (2.0, 0.5), (4.0, 2.0)] {
            let x = [r * 0.36, r * 0.48, r * 0.8];
            let mut trace = 0.0;
            for j in 0..3 {
                trace += k.k1_riesz_part(&x, t, j, j).unwrap();
            }
            let e = heat_kernel(&x, t).unwrap();
            assert!(
                (trace + e).abs() <= 1e-9 * e.abs().max(1e-12),
                "trace {trace} vs -E {e} at r={r}, t={t}"
            );
        }
    }

    #[test]
    fn gaussian_part_diag_only() {
        let k = kernels();
        let x = [0.3, 0.1, 0.2];
        assert_eq!(k.k1_gaussian_part(&x, 1.0, 0, 1).unwrap(), 0.0);
        let d = k.k1_gaussian_part(&[0.0; 3], 1.0, 1, 1).unwrap();
        assert!((d - (4.0 * std::f64::consts::PI).powf(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn k2_is_gradient_of_k1_by_finite_differences() {
        let k = kernels();
        let x = [1.1, -0.6, 0.8];
        let t = 0.7;
        let k2 = k.k2(&x, t).unwrap();
        let mut worst_ratio = 0.0f64;
        for l in 0..3 {
            for j in 0..3 {
                for kk in 0..3 {
                    let diff = |h: f64| -> f64 {
                        let mut xp = x;
                        xp[l] += h;
                        let mut xm = x;
                        xm[l] -= h;
                        let a = k.k1(&xp, t).unwrap()[j][kk];
                        let b = k.k1(&xm, t).unwrap()[j][kk];
                        (a - b) / (2.0 * h)
                    };
                    let e1 = (diff(1e-2) - k2[l][j][kk]).abs();
                    let e2 = (diff(5e-3) - k2[l][j][kk]).abs();
                    if e1 > 1e-12 {
                        // halving h reduces the error ~4x (second order)
                        worst_ratio = worst_ratio.max(e2 / e1);
                    }
                }
            }
        }
        assert!(worst_ratio < 0.32, "FD convergence ratio {worst_ratio}");
    }

    #[test]
    fn k2_antisymmetric_under_reflection() {
        let k = kernels();
        let x = [0.9, 0.4, -0.5];
        let xm: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = k.k2(&x, 1.3).unwrap();
        let b = k.k2(&xm, 1.3).unwrap();
        for l in 0..3 {
            for j in 0..3 {
                for kk in 0..3 {
                    assert!((a[l][j][kk] + b[l][j][kk]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn d2_k1_matches_finite_differences_of_k2() {
        let k = kernels();
        let x = [0.8, 0.9, -0.4];
        let t = 0.6;
        let d2 = k.d2_k1(&x, t).unwrap();
        for m in 0..3 {
            let diff = |h: f64, l: usize, j: usize, kk: usize| -> f64 {
                let mut xp = x;
                xp[m] += h;
                let mut xm = x;
                xm[m] -= h;
                (k.k2(&xp, t).unwrap()[l][j][kk] - k.k2(&xm, t).unwrap()[l][j][kk]) / (2.0 * h)
            };
            for l in 0..3 {
                for j in 0..3 {
                    for kk in 0..3 {
                        let fd = diff(4e-3, l, j, kk);
                        let an = d2[m][l][j][kk];
                        assert!(
                            (fd - an).abs() <= 1e-4 * an.abs().max(1.0),
                            "D2K1[{m}][{l}][{j}][{kk}]: fd {fd} vs analytic {an}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn parabolic_rescaling_is_exact_for_weighted_values() {
        // |K(2x,4t)| (2r)^a (4t)^{b/2} = |K(x,t)| r^a t^{b/2} when a+b equals
        // the kernel's homogeneity (n for K1, n+1 for K2 at k=0).
        let k = kernels();
        let dirs = seeded_directions(4, 0x5EED);
        for d in &dirs {
            let (r, t) = (0.8, 0.3);
            let x = [d[0] * r, d[1] * r, d[2] * r];
            let x2 = [2.0 * x[0], 2.0 * x[1], 2.0 * x[2]];
            for (kind, total) in [(KernelKind::K1, 3.0), (KernelKind::K2, 4.0)] {
                for alpha_frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
                    let alpha = alpha_frac * total;
                    let beta = total - alpha;
                    let v1 = match kind {
                        KernelKind::K1 => k.dk_k1_sup(&x, t, 0).unwrap(),
                        KernelKind::K2 => k.dk_k2_sup(&x, t, 0).unwrap(),
                    } * r.powf(alpha)
                        * t.powf(0.5 * beta);
                    let v2 = match kind {
                        KernelKind::K1 => k.dk_k1_sup(&x2, 4.0 * t, 0).unwrap(),
                        KernelKind::K2 => k.dk_k2_sup(&x2, 4.0 * t, 0).unwrap(),
                    } * (2.0 * r).powf(alpha)
                        * (4.0 * t).powf(0.5 * beta);
                    assert!(
                        (v2 / v1 - 1.0).abs() < 1e-7,
                        "parabolic invariance broken: {} vs {}",
                        v1,
                        v2
                    );
                }
            }
        }
    }

    #[test]
    fn exterior_linf_consistent_with_unit_sphere_values() {
        let k = kernels();
        let sup = k.exterior_lq(KernelKind::K1, 1.0, f64::INFINITY).unwrap();
        // the sup must be at least the value at |x| = 1 along a coordinate axis
        let v = k.k1(&[1.0, 0.0, 0.0], 1.0).unwrap();
        let at1 = max_abs_2(&v);
        assert!(sup >= at1 * (1.0 - 1e-12));
        assert!(sup < 10.0 * at1, "sup {sup} should be comparable to {at1}");
    }
}
