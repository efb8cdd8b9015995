//! Stokes evolution, the whole-space mild solver, pressure recovery, the
//! annulus corrector iteration and trajectory assembly.
//!
//! Time marching is exponential-integrator style: the semigroup factor is
//! applied exactly in spectral space and the nonlinear Duhamel tail uses
//! trapezoidal weights, with an inner Picard sweep per step for the
//! implicit endpoint. The corrector iteration evaluates the fixed-point map
//! over the whole time grid per sweep, with the affine part (forcing and
//! cutoff-pressure sources) precomputed once.

use crate::spectral::{dk_lq_norm, Grid, Region, ScalarField, VectorField};
use crate::truncation::Cutoff;
use crate::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fixed-point iteration controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterSpec {
    pub tol: f64,
    pub max: usize,
}

impl Default for IterSpec {
    fn default() -> Self {
        IterSpec { tol: 1e-10, max: 50 }
    }
}

/// Time-indexed sequence of vector fields on a shared uniform grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub slices: Vec<VectorField>,
}

/// Scalar companion of [`Trajectory`].
#[derive(Debug, Clone)]
pub struct ScalarTrajectory {
    pub times: Vec<f64>,
    pub slices: Vec<ScalarField>,
}

impl Trajectory {
    pub fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn grid(&self) -> &Grid {
        self.slices[0].grid()
    }

    fn validate_uniform(times: &[f64]) -> Result<()> {
        if times.len() < 2 {
            return Err(Error::Trajectory("need at least two time points".into()));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::Trajectory("times must increase".into()));
        }
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-12 * dt.max(1.0) {
                return Err(Error::Trajectory("time grid must be uniform".into()));
            }
        }
        Ok(())
    }
}

/// Uniform time grid `0 = t_0 < ... < t_M = T`.
pub fn uniform_times(t_end: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|m| t_end * m as f64 / steps as f64).collect()
}

/// Heat flow of a solenoidal field: the projection commutes with the
/// semigroup, so each slice is a single spectral scaling of the datum.
pub fn stokes_evolve(v0: &mut VectorField, times: &[f64]) -> Result<Trajectory> {
    Trajectory::validate_uniform(times)?;
    let div = v0.max_div_relative();
    if div > 1e-10 {
        return Err(Error::Argument(format!(
            "initial datum is not solenoidal (relative divergence {div:.3e})"
        )));
    }
    v0.ensure_spectral();
    let mut slices = Vec::with_capacity(times.len());
    for &t in times {
        let mut s = v0.heat_semigroup(t)?;
        s.ensure_physical();
        s.drop_spectral();
        slices.push(s);
    }
    Ok(Trajectory {
        times: times.to_vec(),
        slices,
    })
}

/// Projected divergence of the velocity self-advection tensor,
/// `P div(u (x) u)`, returned spectral.
fn nonlinear_term(u: &mut VectorField) -> VectorField {
    let grid = *u.grid();
    let n = grid.dim();
    u.ensure_physical();
    // symmetric tensor components in physical space
    let mut tensor_spec: Vec<Vec<Option<ArrayD<Complex64>>>> = vec![vec![None; n]; n];
    for j in 0..n {
        for k in j..n {
            let a = u.comp(j).phys_ref();
            let b = u.comp(k).phys_ref();
            let mut prod = a.clone();
            prod.zip_mut_with(b, |x, &y| *x *= y);
            let mut f = ScalarField::from_physical(grid, prod);
            if grid.dealias() {
                f.dealias_in_place();
            } else {
                f.ensure_spectral();
            }
            tensor_spec[j][k] = Some(f.spec_ref().clone());
        }
    }
    // X_j = sum_k i xi_k T_jk, then project
    let table = grid.freq_table(true);
    let len = grid.points();
    let mut comps = Vec::with_capacity(n);
    for j in 0..n {
        let mut out = ArrayD::<Complex64>::zeros(IxDyn(&grid.shape()));
        {
            let o = out.as_slice_mut().unwrap();
            let slices: Vec<&[Complex64]> = (0..n)
                .map(|k| {
                    let (a, b) = if j <= k { (j, k) } else { (k, j) };
                    tensor_spec[a][b].as_ref().unwrap().as_slice().unwrap()
                })
                .collect();
            let mut kv = [0.0f64; crate::spectral::MAX_DIM];
            crate::spectral::for_each_row(n, len, |base, idx| {
                for (a, &ia) in idx.iter().enumerate() {
                    kv[a] = table[ia];
                }
                for i in 0..len {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (k, s) in slices.iter().enumerate().take(n - 1) {
                        acc += s[base + i] * kv[k];
                    }
                    acc += slices[n - 1][base + i] * table[i];
                    o[base + i] = Complex64::new(-acc.im, acc.re);
                }
            });
        }
        comps.push(ScalarField::from_spectral(grid, out));
    }
    let mut x = VectorField::from_components(comps);
    x.leray_project()
}

/// Per-step diagnostics of the mild solver.
#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    pub energy: Vec<f64>,
    pub max_div_rel: Vec<f64>,
    pub picard_iters: Vec<usize>,
}

/// Mild Navier-Stokes march: per step
/// `u_{m+1} = e^{dt Lap} u_m - dt/2 (e^{dt Lap} N(u_m) + N(u_{m+1}))`
/// with `N(u) = P div(u (x) u)` and an inner Picard sweep on the implicit
/// endpoint. `picard.max = 0` switches the nonlinearity off entirely (the
/// zero-nonlinearity iterate), which reproduces the Stokes evolution.
pub fn nse_mild_solve(
    v0: &mut VectorField,
    t_end: f64,
    steps: usize,
    picard: &IterSpec,
) -> Result<(Trajectory, SolveDiagnostics)> {
    if !(t_end > 0.0) || steps == 0 {
        return Err(Error::Argument("need t_end > 0 and steps >= 1".into()));
    }
    let div = v0.max_div_relative();
    if div > 1e-10 {
        return Err(Error::Argument(format!(
            "initial datum is not solenoidal (relative divergence {div:.3e})"
        )));
    }
    let times = uniform_times(t_end, steps);
    let dt = t_end / steps as f64;
    let guard = 1e3 * v0.max_abs();

    let mut u = v0.clone();
    if u.grid().dealias() {
        u.dealias_in_place();
    }
    u.ensure_physical();
    let mut diag = SolveDiagnostics::default();
    let mut slices = Vec::with_capacity(steps + 1);
    {
        let mut first = u.clone();
        diag.energy.push(first.l2_norm()?);
        diag.max_div_rel.push(first.max_div_relative());
        diag.picard_iters.push(0);
        first.ensure_physical();
        first.drop_spectral();
        slices.push(first);
    }

    for _m in 0..steps {
        let mut next = if picard.max == 0 {
            u.heat_semigroup(dt)?
        } else {
            // constant part: e^{dt Lap} (u - dt/2 N(u_m))
            let mut nm = nonlinear_term(&mut u);
            let mut base = u.clone();
            base.ensure_spectral();
            let mut stage = base.clone();
            stage.add_spectral_scaled(&mut nm, Complex64::new(-0.5 * dt, 0.0));
            let lin_part = stage.heat_semigroup(dt)?;
            // Picard on w = lin_part - dt/2 N(w)
            let mut w = u.heat_semigroup(dt)?;
            w.ensure_physical();
            let mut converged = false;
            let mut last_change = f64::INFINITY;
            for it in 0..picard.max {
                let mut nw = nonlinear_term(&mut w);
                let mut w_new = lin_part.clone();
                w_new.add_spectral_scaled(&mut nw, Complex64::new(-0.5 * dt, 0.0));
                w_new.ensure_physical();
                // relative change in the max norm
                let mut diff = w_new.clone();
                diff.add_scaled(&mut w, -1.0);
                let scale = w_new.max_abs();
                last_change = if scale > 0.0 {
                    diff.max_abs() / scale
                } else {
                    0.0
                };
                w = w_new;
                if last_change <= picard.tol {
                    converged = true;
                    diag.picard_iters.push(it + 1);
                    break;
                }
            }
            if !converged {
                return Err(Error::PicardDiverged {
                    iterations: picard.max,
                    last_change,
                });
            }
            w
        };
        if picard.max == 0 {
            diag.picard_iters.push(0);
        }
        // divergence-free re-projection each step
        let mut proj = next.leray_project();
        proj.ensure_physical();
        let sup = proj.max_abs();
        if sup > guard && guard > 0.0 {
            return Err(Error::BlowUp { norm: sup, guard });
        }
        diag.energy.push(proj.l2_norm()?);
        diag.max_div_rel.push(proj.max_div_relative());
        u = proj.clone();
        proj.drop_spectral();
        slices.push(proj);
        let _ = &mut next;
    }
    Ok((Trajectory { times, slices }, diag))
}

/// Spectral pressure solve `p = (-Lap)^{-1} div div (v (x) v)` with the
/// zero-mean convention; in symbols `p^ = - xi_j xi_k (v x v)^_jk / |xi|^2`
/// (the two divergences contribute `i^2`).
pub fn pressure_from_velocity(v: &mut VectorField) -> Result<ScalarField> {
    let grid = *v.grid();
    let n = grid.dim();
    let div = v.max_div_relative();
    if div > 1e-8 {
        return Err(Error::Argument(format!(
            "pressure recovery expects a solenoidal field (relative divergence {div:.3e})"
        )));
    }
    v.ensure_physical();
    let mut tensor_spec: Vec<Vec<Option<ArrayD<Complex64>>>> = vec![vec![None; n]; n];
    for j in 0..n {
        for k in j..n {
            let a = v.comp(j).phys_ref();
            let b = v.comp(k).phys_ref();
            let mut prod = a.clone();
            prod.zip_mut_with(b, |x, &y| *x *= y);
            let mut f = ScalarField::from_physical(grid, prod);
            if grid.dealias() {
                f.dealias_in_place();
            } else {
                f.ensure_spectral();
            }
            tensor_spec[j][k] = Some(f.spec_ref().clone());
        }
    }
    let table = grid.freq_table(true);
    let len = grid.points();
    let mut out = ArrayD::<Complex64>::zeros(IxDyn(&grid.shape()));
    {
        let o = out.as_slice_mut().unwrap();
        let mut kv = [0.0f64; crate::spectral::MAX_DIM];
        crate::spectral::for_each_row(n, len, |base, idx| {
            let mut k2p = 0.0;
            for (a, &ia) in idx.iter().enumerate() {
                kv[a] = table[ia];
                k2p += kv[a] * kv[a];
            }
            for i in 0..len {
                kv[n - 1] = table[i];
                let k2 = k2p + kv[n - 1] * kv[n - 1];
                if k2 == 0.0 {
                    o[base + i] = Complex64::new(0.0, 0.0);
                    continue;
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    for k in 0..n {
                        let (a, b) = if j <= k { (j, k) } else { (k, j) };
                        let t = tensor_spec[a][b].as_ref().unwrap().as_slice().unwrap();
                        acc += t[base + i] * (kv[j] * kv[k]);
                    }
                }
                o[base + i] = -acc / k2;
            }
        });
    }
    Ok(ScalarField::from_spectral(grid, out))
}

/// Right-hand side of the projected momentum equation,
/// `dt v = Lap v - P div(v (x) v)`, used for corrector time derivatives.
pub fn velocity_time_derivative(v: &mut VectorField) -> VectorField {
    let mut lap = v.laplacian();
    let mut nl = nonlinear_term(v);
    lap.add_spectral_scaled(&mut nl, Complex64::new(-1.0, 0.0));
    lap.ensure_physical();
    lap.drop_spectral();
    lap
}

/// Spacetime-weighted norm: max over the endpoint weights `alpha in {0,1}`
/// (the sup over `alpha + beta = 1` of a log-linear family sits at an
/// endpoint), derivative orders `m <= k` and the positive time grid of
/// `R^{alpha(n-1+m-n/q)} t^{beta(n-1-eps+m-n/q)/2} ||D^m u(t)||_{L^q(B_R)}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightedNorm {
    pub k: usize,
    pub q: f64,
    pub radius: f64,
    pub epsilon: f64,
    pub t_end: f64,
    pub value: f64,
}

pub fn weighted_space_norm(
    traj: &mut Trajectory,
    k: usize,
    q: f64,
    radius: f64,
    epsilon: f64,
) -> Result<WeightedNorm> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Argument(format!(
            "slack exponent must lie in (0,1), got {epsilon}"
        )));
    }
    let n = traj.grid().dim() as f64;
    let region = Region::ball(radius);
    let mut value: f64 = 0.0;
    let times = traj.times.clone();
    for (ti, &t) in times.iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        for m in 0..=k {
            let norm = dk_lq_norm(&traj.slices[ti], m, q, &region)?;
            let spatial = radius.powf(n - 1.0 + m as f64 - n / q);
            let temporal = t.powf(0.5 * (n - 1.0 - epsilon + m as f64 - n / q));
            value = value.max(spatial * norm).max(temporal * norm);
        }
    }
    Ok(WeightedNorm {
        k,
        q,
        radius,
        epsilon,
        t_end: *times.last().unwrap(),
        value,
    })
}

/// Inputs of the annulus corrector iteration (shared time grid).
pub struct ResidualProblem<'a> {
    /// `F = F1 + F2`, supported in the transition shell.
    pub forcing: &'a mut Trajectory,
    /// Whole-space pressure.
    pub pressure: &'a mut ScalarTrajectory,
    pub cutoff: &'a Cutoff,
    /// Divergence-free truncation `r`.
    pub truncated: &'a mut Trajectory,
    /// Ball radius for the weighted norms.
    pub radius: f64,
    pub epsilon: f64,
    pub q: f64,
    /// Derivative order of the final reported norm.
    pub k_max: usize,
}

/// Convergence record of the corrector iteration.
#[derive(Debug, Clone, Serialize)]
pub struct IterationReport {
    pub iterations: usize,
    /// successive distances in the monitor norm
    pub distances: Vec<f64>,
    /// ratios of successive distances
    pub contraction: Vec<f64>,
    /// final weighted norm at the requested derivative order
    pub final_norm: f64,
}

impl IterationReport {
    pub fn max_contraction(&self) -> f64 {
        self.contraction.iter().cloned().fold(0.0, f64::max)
    }
}

/// Fixed-point iteration for the annulus residual flow: starting from zero
/// and with zero initial datum,
///
/// ```text
/// u_{i+1}(t) = - Int_0^t e^{-(t-s)A} P (F - phi grad p)(s) ds
///              - Int_0^t div e^{-(t-s)A} P { p phi Id + u_i(x)u_i + u_i(x)r + r(x)u_i }(s) ds
/// ```
///
/// Semigroup and projection act spectrally; the time integral is
/// trapezoidal on the shared grid. The affine part is precomputed once.
/// Convergence is monitored in the weighted norm at order 0 (the higher
/// orders are reported on the final iterate); two consecutive distance
/// increases abort with the measured factor.
pub fn corrector_iterate(
    problem: &mut ResidualProblem<'_>,
    iter: &IterSpec,
) -> Result<(Trajectory, IterationReport)> {
    let grid = *problem.forcing.grid();
    let times = problem.forcing.times.clone();
    Trajectory::validate_uniform(&times)?;
    if problem.pressure.times != times || problem.truncated.times != times {
        return Err(Error::Trajectory(
            "forcing, pressure and truncation trajectories must share one time grid".into(),
        ));
    }
    let m_steps = times.len() - 1;
    let dt = times[1] - times[0];
    let n = grid.dim();

    // cutoff fields
    let mut phi = problem.cutoff.sample(grid)?;
    let phi_flat = phi.physical().as_slice().unwrap().to_vec();

    // affine sources per slice: Y = P(F - phi grad p) (vector, physical)
    // and S = p phi (scalar, physical)
    let mut y_slices: Vec<VectorField> = Vec::with_capacity(times.len());
    let mut s_slices: Vec<ScalarField> = Vec::with_capacity(times.len());
    for ti in 0..times.len() {
        let p = &mut problem.pressure.slices[ti];
        p.ensure_spectral();
        // grad p spectrally, then multiply by phi in physical space
        let mut comps = Vec::with_capacity(n);
        for a in 0..n {
            let mut index = vec![0usize; n];
            index[a] = 1;
            let mut dp = p.derivative(&index)?;
            dp.ensure_physical();
            comps.push(dp);
        }
        let grad_p = VectorField::from_components(comps);
        let f = &mut problem.forcing.slices[ti];
        f.ensure_physical();
        let mut y_comps = Vec::with_capacity(n);
        for a in 0..n {
            let ff = f.comp(a).phys_ref().as_slice().unwrap();
            let gp = grad_p.comp(a).phys_ref().as_slice().unwrap();
            let mut data = ArrayD::<f64>::zeros(IxDyn(&grid.shape()));
            {
                let o = data.as_slice_mut().unwrap();
                for i in 0..grid.total_points() {
                    o[i] = ff[i] - phi_flat[i] * gp[i];
                }
            }
            y_comps.push(ScalarField::from_physical(grid, data));
        }
        let mut y = VectorField::from_components(y_comps);
        let mut y = y.leray_project();
        y.ensure_physical();
        y.drop_spectral();
        y_slices.push(y);

        p.ensure_physical();
        let pf = p.phys_ref().as_slice().unwrap();
        let mut s_data = ArrayD::<f64>::zeros(IxDyn(&grid.shape()));
        {
            let o = s_data.as_slice_mut().unwrap();
            for i in 0..grid.total_points() {
                o[i] = pf[i] * phi_flat[i];
            }
        }
        s_slices.push(ScalarField::from_physical(grid, s_data));
    }

    // trapezoid weights over s in [0, t_m]
    let weight = |s_idx: usize, m_idx: usize| -> f64 {
        if s_idx == 0 || s_idx == m_idx {
            0.5 * dt
        } else {
            dt
        }
    };

    // affine trajectory A(t_m)
    let mut affine: Vec<VectorField> = Vec::with_capacity(times.len());
    for m in 0..=m_steps {
        if m == 0 {
            affine.push(VectorField::zeros(grid));
            continue;
        }
        let mut acc = VectorField::zeros(grid);
        acc.ensure_spectral();
        for s in 0..=m {
            let w = weight(s, m);
            let tau = times[m] - times[s];
            // div(p phi Id) = grad(p phi): spectral gradient of S
            let mut y = y_slices[s].clone();
            y.ensure_spectral();
            let mut grad_s = {
                let s_field = &mut s_slices[s];
                s_field.ensure_spectral();
                let mut comps = Vec::with_capacity(n);
                for a in 0..n {
                    let mut index = vec![0usize; n];
                    index[a] = 1;
                    comps.push(s_field.derivative(&index)?);
                }
                let mut g = VectorField::from_components(comps);
                g.leray_project()
            };
            y.add_spectral_scaled(&mut grad_s, Complex64::new(1.0, 0.0));
            let mut term = y.heat_semigroup(tau)?;
            acc.add_spectral_scaled(&mut term, Complex64::new(-w, 0.0));
        }
        acc.ensure_physical();
        acc.drop_spectral();
        affine.push(acc);
    }
    // release affine sources
    drop(y_slices);
    drop(s_slices);

    // iterate
    let region = Region::ball(problem.radius);
    grid.validate_region(&region)?;
    let monitor = |traj: &mut Trajectory| -> Result<f64> {
        Ok(weighted_space_norm(traj, 0, problem.q, problem.radius, problem.epsilon)?.value)
    };
    let mut current = Trajectory {
        times: times.clone(),
        slices: (0..times.len()).map(|_| VectorField::zeros(grid)).collect(),
    };
    let mut distances: Vec<f64> = Vec::new();
    let mut report_iters = 0;
    for it in 0..iter.max.max(1) {
        // tensor sources X(s) = P div(u (x) u + u (x) r + r (x) u), physical
        let mut x_slices: Vec<VectorField> = Vec::with_capacity(times.len());
        for ti in 0..times.len() {
            let u = &mut current.slices[ti];
            let r = &mut problem.truncated.slices[ti];
            u.ensure_physical();
            r.ensure_physical();
            let mut tensor_spec: Vec<Vec<Option<ArrayD<Complex64>>>> = vec![vec![None; n]; n];
            for j in 0..n {
                for k in j..n {
                    let uj = u.comp(j).phys_ref().as_slice().unwrap();
                    let uk = u.comp(k).phys_ref().as_slice().unwrap();
                    let rj = r.comp(j).phys_ref().as_slice().unwrap();
                    let rk = r.comp(k).phys_ref().as_slice().unwrap();
                    let mut data = ArrayD::<f64>::zeros(IxDyn(&grid.shape()));
                    {
                        let o = data.as_slice_mut().unwrap();
                        for i in 0..grid.total_points() {
                            o[i] = uj[i] * uk[i] + uj[i] * rk[i] + rj[i] * uk[i];
                        }
                    }
                    let mut f = ScalarField::from_physical(grid, data);
                    if grid.dealias() {
                        f.dealias_in_place();
                    } else {
                        f.ensure_spectral();
                    }
                    tensor_spec[j][k] = Some(f.spec_ref().clone());
                }
            }
            // wait: u (x) r + r (x) u is symmetric, but u (x) u + u (x) r is not;
            // the assembled tensor above is u_j u_k + u_j r_k + r_j u_k, which is
            // symmetric in (j,k); reuse j<=k storage
            let table = grid.freq_table(true);
            let len = grid.points();
            let mut comps = Vec::with_capacity(n);
            for j in 0..n {
                let mut out = ArrayD::<Complex64>::zeros(IxDyn(&grid.shape()));
                {
                    let o = out.as_slice_mut().unwrap();
                    let slices: Vec<&[Complex64]> = (0..n)
                        .map(|k| {
                            let (a, b) = if j <= k { (j, k) } else { (k, j) };
                            tensor_spec[a][b].as_ref().unwrap().as_slice().unwrap()
                        })
                        .collect();
                    let mut kv = [0.0f64; crate::spectral::MAX_DIM];
                    crate::spectral::for_each_row(n, len, |base, idx| {
                        for (a, &ia) in idx.iter().enumerate() {
                            kv[a] = table[ia];
                        }
                        for i in 0..len {
                            let mut acc = Complex64::new(0.0, 0.0);
                            for (k, s) in slices.iter().enumerate().take(n - 1) {
                                acc += s[base + i] * kv[k];
                            }
                            acc += slices[n - 1][base + i] * table[i];
                            o[base + i] = Complex64::new(-acc.im, acc.re);
                        }
                    });
                }
                comps.push(ScalarField::from_spectral(grid, out));
            }
            let mut x = VectorField::from_components(comps);
            let mut x = x.leray_project();
            x.ensure_physical();
            x.drop_spectral();
            x_slices.push(x);
        }

        // u_{i+1}(t_m) = affine(t_m) - Duhamel of X
        let mut next_slices: Vec<VectorField> = Vec::with_capacity(times.len());
        for m in 0..=m_steps {
            let mut acc = affine[m].clone();
            if m > 0 {
                acc.ensure_spectral();
                for s in 0..=m {
                    let w = weight(s, m);
                    let tau = times[m] - times[s];
                    let mut term = x_slices[s].heat_semigroup(tau)?;
                    acc.add_spectral_scaled(&mut term, Complex64::new(-w, 0.0));
                }
            }
            acc.ensure_physical();
            acc.drop_spectral();
            next_slices.push(acc);
        }
        drop(x_slices);
        let mut next = Trajectory {
            times: times.clone(),
            slices: next_slices,
        };

        // monitor distance
        let mut diff = next.clone();
        for ti in 0..times.len() {
            diff.slices[ti].add_scaled(&mut current.slices[ti], -1.0);
        }
        let d = monitor(&mut diff)?;
        let scale = monitor(&mut next)?;
        distances.push(d);
        report_iters = it + 1;
        current = next;
        if d <= iter.tol * scale.max(1e-300) {
            break;
        }
        if distances.len() >= 3 {
            let k = distances.len();
            if distances[k - 1] > distances[k - 2] && distances[k - 2] > distances[k - 3] {
                return Err(Error::NonContraction {
                    factor: distances[k - 1] / distances[k - 2],
                });
            }
        }
    }
    let contraction: Vec<f64> = distances
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    let final_norm = weighted_space_norm(
        &mut current,
        problem.k_max,
        problem.q,
        problem.radius,
        problem.epsilon,
    )?
    .value;
    Ok((
        current,
        IterationReport {
            iterations: report_iters,
            distances,
            contraction,
            final_norm,
        },
    ))
}

/// Pressure correction: spectral solve of
/// `-Lap pbar = div(F - phi grad p) + div div(p phi Id + u(x)u + u(x)r + r(x)u)`
/// with the zero-mean convention.
pub fn recover_pressure_correction(
    residual: &mut Trajectory,
    forcing: &mut Trajectory,
    pressure: &mut ScalarTrajectory,
    cutoff: &Cutoff,
    truncated: &mut Trajectory,
) -> Result<ScalarTrajectory> {
    let grid = *residual.grid();
    let n = grid.dim();
    let times = residual.times.clone();
    if forcing.times != times || pressure.times != times || truncated.times != times {
        return Err(Error::Trajectory(
            "pressure correction inputs must share one time grid".into(),
        ));
    }
    let mut phi = cutoff.sample(grid)?;
    let phi_flat = phi.physical().as_slice().unwrap().to_vec();
    let table = grid.freq_table(true);
    let len = grid.points();
    let mut out_slices = Vec::with_capacity(times.len());
    for ti in 0..times.len() {
        let p = &mut pressure.slices[ti];
        p.ensure_spectral();
        let mut grad_p_comps = Vec::with_capacity(n);
        for a in 0..n {
            let mut index = vec![0usize; n];
            index[a] = 1;
            let mut dp = p.derivative(&index)?;
            dp.ensure_physical();
            grad_p_comps.push(dp);
        }
        let grad_p = VectorField::from_components(grad_p_comps);
        let f = &mut forcing.slices[ti];
        f.ensure_physical();
        let u = &mut residual.slices[ti];
        u.ensure_physical();
        let r = &mut truncated.slices[ti];
        r.ensure_physical();
        p.ensure_physical();
        let pf = p.phys_ref().as_slice().unwrap();

        // G = F - phi grad p
        let mut g_spec: Vec<ArrayD<Complex64>> = Vec::with_capacity(n);
        for a in 0..n {
            let ff = f.comp(a).phys_ref().as_slice().unwrap();
            let gp = grad_p.comp(a).phys_ref().as_slice().unwrap();
            let mut data = ArrayD::<f64>::zeros(IxDyn(&grid.shape()));
            {
                let o = data.as_slice_mut().unwrap();
                for i in 0..grid.total_points() {
                    o[i] = ff[i] - phi_flat[i] * gp[i];
                }
            }
            let mut s = ScalarField::from_physical(grid, data);
            if grid.dealias() {
                s.dealias_in_place();
            } else {
                s.ensure_spectral();
            }
            g_spec.push(s.spec_ref().clone());
        }
        // T = p phi Id + u(x)u + u(x)r + r(x)u (symmetric)
        let mut t_spec: Vec<Vec<Option<ArrayD<Complex64>>>> = vec![vec![None; n]; n];
        for j in 0..n {
            for k in j..n {
                let uj = u.comp(j).phys_ref().as_slice().unwrap();
                let uk = u.comp(k).phys_ref().as_slice().unwrap();
                let rj = r.comp(j).phys_ref().as_slice().unwrap();
                let rk = r.comp(k).phys_ref().as_slice().unwrap();
                let mut data = ArrayD::<f64>::zeros(IxDyn(&grid.shape()));
                {
                    let o = data.as_slice_mut().unwrap();
                    for i in 0..grid.total_points() {
                        let mut val = uj[i] * uk[i] + uj[i] * rk[i] + rj[i] * uk[i];
                        if j == k {
                            val += pf[i] * phi_flat[i];
                        }
                        o[i] = val;
                    }
                }
                let mut s = ScalarField::from_physical(grid, data);
                if grid.dealias() {
                    s.dealias_in_place();
                } else {
                    s.ensure_spectral();
                }
                t_spec[j][k] = Some(s.spec_ref().clone());
            }
        }
        let mut out = ArrayD::<Complex64>::zeros(IxDyn(&grid.shape()));
        {
            let o = out.as_slice_mut().unwrap();
            let g_flat: Vec<&[Complex64]> =
                g_spec.iter().map(|g| g.as_slice().unwrap()).collect();
            let mut kv = [0.0f64; crate::spectral::MAX_DIM];
            crate::spectral::for_each_row(n, len, |base, idx| {
                let mut k2p = 0.0;
                for (a, &ia) in idx.iter().enumerate() {
                    kv[a] = table[ia];
                    k2p += kv[a] * kv[a];
                }
                for i in 0..len {
                    kv[n - 1] = table[i];
                    let k2 = k2p + kv[n - 1] * kv[n - 1];
                    if k2 == 0.0 {
                        o[base + i] = Complex64::new(0.0, 0.0);
                        continue;
                    }
                    // i k . G  - k k : T, divided by k^2
                    let mut div_g = Complex64::new(0.0, 0.0);
                    for a in 0..n {
                        div_g += g_flat[a][base + i] * kv[a];
                    }
                    let div_g = Complex64::new(-div_g.im, div_g.re);
                    let mut ddt = Complex64::new(0.0, 0.0);
                    for j in 0..n {
                        for k in 0..n {
                            let (a, b) = if j <= k { (j, k) } else { (k, j) };
                            let t = t_spec[a][b].as_ref().unwrap().as_slice().unwrap();
                            ddt += t[base + i] * (kv[j] * kv[k]);
                        }
                    }
                    o[base + i] = (div_g - ddt) / k2;
                }
            });
        }
        let mut pb = ScalarField::from_spectral(grid, out);
        pb.ensure_physical();
        pb.drop_spectral();
        out_slices.push(pb);
    }
    Ok(ScalarTrajectory {
        times,
        slices: out_slices,
    })
}

/// Assemble the ball solution: `w = r + residual`, `pi = phi p + pbar`.
pub fn assemble_ball_solution(
    truncated: &mut Trajectory,
    residual: &mut Trajectory,
    pressure: &mut ScalarTrajectory,
    correction: &mut ScalarTrajectory,
    cutoff: &Cutoff,
) -> Result<(Trajectory, ScalarTrajectory)> {
    let grid = *truncated.grid();
    let times = truncated.times.clone();
    if residual.times != times || pressure.times != times || correction.times != times {
        return Err(Error::Trajectory("assembly inputs must share one time grid".into()));
    }
    let mut phi = cutoff.sample(grid)?;
    let phi_flat = phi.physical().as_slice().unwrap().to_vec();
    let mut w_slices = Vec::with_capacity(times.len());
    let mut pi_slices = Vec::with_capacity(times.len());
    for ti in 0..times.len() {
        let mut w = truncated.slices[ti].clone();
        w.add_scaled(&mut residual.slices[ti], 1.0);
        w.drop_spectral();
        w_slices.push(w);
        let p = &mut pressure.slices[ti];
        p.ensure_physical();
        let pb = &mut correction.slices[ti];
        pb.ensure_physical();
        let pfl = p.phys_ref().as_slice().unwrap();
        let pbf = pb.phys_ref().as_slice().unwrap();
        let mut data = ArrayD::<f64>::zeros(IxDyn(&grid.shape()));
        {
            let o = data.as_slice_mut().unwrap();
            for i in 0..grid.total_points() {
                o[i] = phi_flat[i] * pfl[i] + pbf[i];
            }
        }
        pi_slices.push(ScalarField::from_physical(grid, data));
    }
    Ok((
        Trajectory {
            times: times.clone(),
            slices: w_slices,
        },
        ScalarTrajectory {
            times,
            slices: pi_slices,
        },
    ))
}

/// Checkpoint manifest: time grid, grid descriptor and slice file names.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub times: Vec<f64>,
    pub grid: Grid,
    pub slices: Vec<String>,
}

pub fn write_checkpoint(dir: &Path, name: &str, traj: &mut Trajectory) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(traj.slices.len());
    for (i, slice) in traj.slices.iter_mut().enumerate() {
        let file = format!("{name}_{i:04}.nsef");
        let mut f = std::fs::File::create(dir.join(&file))?;
        crate::spectral::write_vector(&mut f, slice)?;
        files.push(file);
    }
    let manifest = Manifest {
        times: traj.times.clone(),
        grid: *traj.grid(),
        slices: files,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest encode: {e}")))?;
    std::fs::write(dir.join(format!("{name}_manifest.json")), json)?;
    Ok(manifest)
}

pub fn read_checkpoint(dir: &Path, name: &str) -> Result<Trajectory> {
    let text = std::fs::read_to_string(dir.join(format!("{name}_manifest.json")))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest decode: {e}")))?;
    let mut slices = Vec::with_capacity(manifest.slices.len());
    for file in &manifest.slices {
        let mut f = std::fs::File::open(dir.join(file))?;
        slices.push(crate::spectral::read_vector(&mut f, manifest.grid.dealias())?);
    }
    if slices.len() != manifest.times.len() {
        return Err(Error::Trajectory("manifest slice count mismatch".into()));
    }
    Ok(Trajectory {
        times: manifest.times,
        slices,
    })
}
