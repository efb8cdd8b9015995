//! End-to-end pipeline: whole-space solve, per-radius truncation with its
//! divergence corrector, the annulus residual iteration and assembly of the
//! ball solution, with norm tables collected along the way.

use crate::bogovskii::{BogovskiiDomain, KernelQuad};
use crate::solver::{
    assemble_ball_solution, corrector_iterate, nse_mild_solve, pressure_from_velocity,
    recover_pressure_correction, stokes_evolve, uniform_times, velocity_time_derivative,
    IterSpec, IterationReport, ScalarTrajectory, SolveDiagnostics, Trajectory,
};
use crate::spectral::{dk_lq_norm, dk_lq_norm_scalar, Grid, Region, VectorField};
use crate::truncation::{
    assemble_truncation, corrector_datum, corrector_forcing, cutoff_forcing, solve_correctors,
    Cutoff,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Initial-datum descriptor: a swirl bump (curl of a compact profile),
/// band-limited and projected so it is solenoidal in the discrete sense.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InitialData {
    pub support_radius: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub center: [f64; 3],
}

pub fn make_initial_data(grid: Grid, spec: &InitialData) -> Result<VectorField> {
    if !(spec.support_radius > 0.0) {
        return Err(Error::Config("initial datum needs a positive radius".into()));
    }
    if spec.amplitude == 0.0 {
        return Ok(VectorField::zeros(grid));
    }
    let c = spec.center;
    let rho2 = spec.support_radius * spec.support_radius;
    let mut raw = VectorField::sample(grid, |x, comp| {
        let dx = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
        let u = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]) / rho2;
        let b = crate::shape::bump_profile(u);
        match comp {
            0 => -dx[1] * b,
            1 => dx[0] * b,
            _ => 0.0,
        }
    });
    raw.dealias_in_place();
    let mut v = raw.leray_project();
    v.ensure_physical();
    let sup = v.max_abs();
    if sup == 0.0 {
        return Err(Error::Config("initial datum degenerate on this grid".into()));
    }
    v.scale_in_place(spec.amplitude / sup);
    v.ensure_physical();
    v.drop_spectral();
    Ok(v)
}

/// Whole-space mild solution with pressure per slice.
pub struct WholeSpaceRun {
    pub velocity: Trajectory,
    pub pressure: ScalarTrajectory,
    pub diagnostics: SolveDiagnostics,
}

pub fn solve_whole_space(
    v0: &mut VectorField,
    t_end: f64,
    steps: usize,
    picard: &IterSpec,
) -> Result<WholeSpaceRun> {
    let (mut velocity, diagnostics) = nse_mild_solve(v0, t_end, steps, picard)?;
    let mut p_slices = Vec::with_capacity(velocity.slices.len());
    for s in velocity.slices.iter_mut() {
        let mut p = pressure_from_velocity(s)?;
        p.ensure_physical();
        p.drop_spectral();
        p_slices.push(p);
    }
    Ok(WholeSpaceRun {
        pressure: ScalarTrajectory {
            times: velocity.times.clone(),
            slices: p_slices,
        },
        velocity,
        diagnostics,
    })
}

/// Stokes flow of the same datum (no nonlinearity), for the decay
/// assumption checks.
pub fn solve_stokes(v0: &mut VectorField, t_end: f64, steps: usize) -> Result<Trajectory> {
    stokes_evolve(v0, &uniform_times(t_end, steps))
}

/// Pipeline tuning knobs shared by the sweeps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PipelineParams {
    pub epsilon: f64,
    pub q_monitor: f64,
    pub k_max: usize,
    pub corrector_iter: IterSpec,
    /// Evaluation stride of the divergence corrector.
    pub eval_stride: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            epsilon: 0.05,
            q_monitor: 2.0,
            k_max: 1,
            corrector_iter: IterSpec { tol: 1e-7, max: 16 },
            eval_stride: 1,
        }
    }
}

/// One annulus-norm measurement, feeding the estimate report.
#[derive(Debug, Clone, Serialize)]
pub struct NormRow {
    pub quantity: String,
    pub region: String,
    pub radius: f64,
    pub k: usize,
    pub q: f64,
    pub t: f64,
    pub value: f64,
}

/// Ball solution and its construction byproducts for one cutoff radius.
pub struct BallRun {
    pub radius: f64,
    pub truncated: Trajectory,
    pub residual: Trajectory,
    pub ball_velocity: Trajectory,
    pub ball_pressure: ScalarTrajectory,
    pub report: IterationReport,
    /// Norm table of the intermediate fields over the transition shell and
    /// the ball, at the requested orders/exponents/times.
    pub norms: Vec<NormRow>,
}

/// Truncate, correct, iterate and assemble at one cutoff radius. Norms of
/// the intermediate fields are measured while they are alive, at the given
/// `(k, q, t)` combinations.
pub fn run_ball(
    ws: &mut WholeSpaceRun,
    radius: f64,
    params: &PipelineParams,
    ks: &[usize],
    qs: &[f64],
    measure_times: &[f64],
) -> Result<BallRun> {
    let grid = *ws.velocity.grid();
    let cutoff = Cutoff::new(radius, params.k_max + 2)?;
    cutoff.check_grid(&grid)?;
    let domain = BogovskiiDomain::annulus(radius - 1.0, radius)?;
    let quad = KernelQuad {
        eval_stride: params.eval_stride,
        ..KernelQuad::default()
    };
    let times = ws.velocity.times.clone();
    let n_slices = times.len();
    let time_index = |t: f64| -> Option<usize> {
        times
            .iter()
            .position(|&tt| (tt - t).abs() <= 1e-9 * t.max(1.0))
    };
    let shell = Region::annulus(radius - 1.0, radius);
    let ball = Region::ball(radius);
    let mut norms: Vec<NormRow> = Vec::new();
    let push_norms = |rows: &mut Vec<NormRow>,
                          field: &VectorField,
                          quantity: &str,
                          region: &Region,
                          region_name: &str,
                          t: f64,
                          ks: &[usize],
                          qs: &[f64]|
     -> Result<()> {
        for &k in ks {
            for &q in qs {
                rows.push(NormRow {
                    quantity: quantity.into(),
                    region: region_name.into(),
                    radius,
                    k,
                    q,
                    t,
                    value: dk_lq_norm(field, k, q, region)?,
                });
            }
        }
        Ok(())
    };

    // corrector data for every slice: f = -grad(phi).v and its time
    // derivative datum, solved in one batched sweep
    let mut data = Vec::with_capacity(2 * n_slices);
    for ti in 0..n_slices {
        data.push(corrector_datum(&mut ws.velocity.slices[ti], &cutoff)?);
    }
    for ti in 0..n_slices {
        let mut dtv = velocity_time_derivative(&mut ws.velocity.slices[ti]);
        data.push(corrector_datum(&mut dtv, &cutoff)?);
    }
    let mut correctors = solve_correctors(&mut data, &domain, &quad)?;
    drop(data);
    let dt_correctors: Vec<VectorField> = correctors.split_off(n_slices);

    // truncation r = phi v + v_c; forcing F = F1 + F2
    let mut r_slices = Vec::with_capacity(n_slices);
    let mut f_slices = Vec::with_capacity(n_slices);
    for ti in 0..n_slices {
        let v = &mut ws.velocity.slices[ti];
        let mut vc = correctors[ti].clone();
        let mut dtvc = dt_correctors[ti].clone();
        let r = assemble_truncation(v, &cutoff, &mut vc)?;
        let mut f1 = cutoff_forcing(v, &cutoff)?;
        let mut f2 = corrector_forcing(v, &cutoff, &mut vc, &mut dtvc)?;
        let t = times[ti];
        if measure_times.iter().any(|&mt| time_index(mt) == Some(ti)) {
            push_norms(&mut norms, v, "velocity", &shell, "shell", t, ks, qs)?;
            push_norms(&mut norms, &f1, "forcing_cutoff", &ball, "ball", t, ks, qs)?;
            push_norms(&mut norms, &f2, "forcing_corrector", &shell, "shell", t, &[0], qs)?;
            let mut phiv = ws.velocity.slices[ti].clone();
            {
                let mut phi_field = cutoff.sample(grid)?;
                let phi_flat = phi_field.physical().clone();
                phiv.ensure_physical();
                for c in 0..grid.dim() {
                    phiv.comp_mut(c).phys_mut().zip_mut_with(&phi_flat, |x, &y| *x *= y);
                }
            }
            push_norms(&mut norms, &phiv, "velocity_cutoff", &shell, "shell", t, ks, qs)?;
            push_norms(&mut norms, &r, "truncation", &ball, "ball", t, ks, qs)?;
            // scalar pressure norms over the shell
            for &k in ks {
                for &q in qs {
                    norms.push(NormRow {
                        quantity: "pressure".into(),
                        region: "shell".into(),
                        radius,
                        k,
                        q,
                        t,
                        value: dk_lq_norm_scalar(&ws.pressure.slices[ti], k, q, &shell)?,
                    });
                }
            }
            let mut ftot_now = f1.clone();
            ftot_now.add_scaled(&mut f2, 1.0);
            push_norms(&mut norms, &ftot_now, "forcing_total", &ball, "ball", t, ks, qs)?;
        }
        f1.add_scaled(&mut f2, 1.0);
        f1.drop_spectral();
        f_slices.push(f1);
        r_slices.push(r);
    }
    drop(correctors);
    drop(dt_correctors);

    let mut forcing = Trajectory {
        times: times.clone(),
        slices: f_slices,
    };
    let mut truncated = Trajectory {
        times: times.clone(),
        slices: r_slices,
    };

    let (mut residual, report) = {
        let mut problem = crate::solver::ResidualProblem {
            forcing: &mut forcing,
            pressure: &mut ws.pressure,
            cutoff: &cutoff,
            truncated: &mut truncated,
            radius,
            epsilon: params.epsilon,
            q: params.q_monitor,
            k_max: params.k_max,
        };
        corrector_iterate(&mut problem, &params.corrector_iter)?
    };

    let mut correction = recover_pressure_correction(
        &mut residual,
        &mut forcing,
        &mut ws.pressure,
        &cutoff,
        &mut truncated,
    )?;
    // residual-flow and correction norms
    for &mt in measure_times {
        if let Some(ti) = time_index(mt) {
            push_norms(
                &mut norms,
                &residual.slices[ti],
                "residual_flow",
                &ball,
                "ball",
                mt,
                ks,
                qs,
            )?;
            for &k in ks {
                for &q in qs {
                    norms.push(NormRow {
                        quantity: "pressure_correction".into(),
                        region: "ball".into(),
                        radius,
                        k,
                        q,
                        t: mt,
                        value: dk_lq_norm_scalar(&correction.slices[ti], k, q, &ball)?,
                    });
                }
            }
        }
    }
    drop(forcing);

    let (ball_velocity, ball_pressure) = assemble_ball_solution(
        &mut truncated,
        &mut residual,
        &mut ws.pressure,
        &mut correction,
        &cutoff,
    )?;

    Ok(BallRun {
        radius,
        truncated,
        residual,
        ball_velocity,
        ball_pressure,
        report,
        norms,
    })
}
