//! Radius and time sweeps of the transfer pipeline, the Stokes decay
//! assumption check, and the annulus estimate report.

use super::fits::{Axis, DecayFit, FitStatus};
use super::pipeline::{
    make_initial_data, run_ball, solve_whole_space, BallRun, InitialData, NormRow,
    PipelineParams,
};
use crate::solver::{stokes_evolve, uniform_times, IterSpec};
use crate::spectral::{dk_lq_norm, dk_lq_norm_scalar, Grid, Region};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Sweep configuration: the whole-space run plus the measurement plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: Grid,
    pub initial: InitialData,
    pub t_end: f64,
    pub steps: usize,
    /// Cutoff radii of the radius sweep (also the annulus report abscissae).
    pub radii: Vec<f64>,
    /// Fixed measurement time of the radius sweep.
    pub t_fixed: f64,
    /// Fixed radius and measurement times of the time sweep.
    pub radius_fixed: f64,
    pub times: Vec<f64>,
    pub ks: Vec<usize>,
    pub qs: Vec<f64>,
    pub epsilon: f64,
    pub slack: f64,
    pub seed: u64,
    pub picard: IterSpec,
    #[serde(default)]
    pub params: PipelineParams,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        for &r in &self.radii {
            if r >= 0.5 * self.grid.len() - 1.0 {
                return Err(Error::Config(format!(
                    "sweep radius {r} leaves no margin inside the box"
                )));
            }
        }
        if self.radii.len() >= 2 {
            for w in self.radii.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Config("sweep radii must increase".into()));
                }
            }
        }
        if self.times.iter().any(|&t| t <= 0.0) {
            return Err(Error::Config("temporal fits exclude t = 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config("slack exponent must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Everything a sweep produces: the difference fits, contraction factors,
/// the raw norm tables, and a partial-failure flag.
#[derive(Debug, Serialize)]
pub struct SweepOutcome {
    pub fits: Vec<DecayFit>,
    pub contraction: Vec<(f64, f64)>,
    pub norms: Vec<NormRow>,
    pub failures: Vec<(f64, String)>,
}

impl SweepOutcome {
    pub fn partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

fn difference_norms(
    ws: &mut super::pipeline::WholeSpaceRun,
    ball_run: &mut BallRun,
    t: f64,
    k: usize,
    q: f64,
) -> Result<(f64, f64)> {
    let times = ws.velocity.times.clone();
    let ti = times
        .iter()
        .position(|&tt| (tt - t).abs() <= 1e-9 * t.max(1.0))
        .ok_or_else(|| Error::Trajectory(format!("measurement time {t} is not on the grid")))?;
    let region = Region::ball(ball_run.radius);
    let mut dv = ws.velocity.slices[ti].clone();
    dv.add_scaled(&mut ball_run.ball_velocity.slices[ti], -1.0);
    let vel = dk_lq_norm(&dv, k, q, &region)?;
    let mut dp = ws.pressure.slices[ti].clone();
    dp.add_scaled(&mut ball_run.ball_pressure.slices[ti], -1.0);
    let pres = dk_lq_norm_scalar(&dp, k, q, &region)?;
    Ok((vel, pres))
}

/// Predicted difference exponents (dimension `n`):
/// velocity `R`: `-(n-1+k-n/q)`, `t`: `-(n-1-eps+k-n/q)/2`;
/// pressure `R`: `-(n+k-(n-1)/q)`, `t`: `-(n+k-n/q)/2`.
pub fn predicted_difference_exponent(
    n: f64,
    k: usize,
    q: f64,
    axis: Axis,
    pressure: bool,
    epsilon: f64,
) -> f64 {
    let k = k as f64;
    match (axis, pressure) {
        (Axis::Radius, false) => -(n - 1.0 + k - n / q),
        (Axis::Time, false) => -0.5 * (n - 1.0 - epsilon + k - n / q),
        (Axis::Radius, true) => -(n + k - (n - 1.0) / q),
        (Axis::Time, true) => -0.5 * (n + k - n / q),
    }
}

/// Full pipeline per radius; fits the ball-restricted difference norms
/// against the predicted radius exponents at the fixed time.
pub fn sweep_radius(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    if cfg.radii.len() < 4 {
        return Err(Error::Config("radius sweep needs at least 4 radii".into()));
    }
    let mut v0 = make_initial_data(cfg.grid, &cfg.initial)?;
    let mut ws = solve_whole_space(&mut v0, cfg.t_end, cfg.steps, &cfg.picard)?;
    let n = cfg.grid.dim() as f64;

    let mut contraction = Vec::new();
    let mut failures = Vec::new();
    let mut norms = Vec::new();
    // per (k, q): samples over радii
    let mut vel_samples = vec![Vec::new(); cfg.ks.len() * cfg.qs.len()];
    let mut pres_samples = vec![Vec::new(); cfg.ks.len() * cfg.qs.len()];
    for &radius in &cfg.radii {
        let measure_times = vec![cfg.t_fixed];
        match run_ball(&mut ws, radius, &cfg.params, &cfg.ks, &cfg.qs, &measure_times) {
            Ok(mut run) => {
                contraction.push((radius, run.report.max_contraction()));
                norms.append(&mut run.norms);
                for (ki, &k) in cfg.ks.iter().enumerate() {
                    for (qi, &q) in cfg.qs.iter().enumerate() {
                        let (vel, pres) =
                            difference_norms(&mut ws, &mut run, cfg.t_fixed, k, q)?;
                        vel_samples[ki * cfg.qs.len() + qi].push((radius, vel));
                        pres_samples[ki * cfg.qs.len() + qi].push((radius, pres));
                    }
                }
            }
            Err(e) => failures.push((radius, e.to_string())),
        }
    }

    let mut fits = Vec::new();
    for (ki, &k) in cfg.ks.iter().enumerate() {
        for (qi, &q) in cfg.qs.iter().enumerate() {
            for (pressure, samples, qty) in [
                (false, &vel_samples[ki * cfg.qs.len() + qi], "velocity_difference"),
                (true, &pres_samples[ki * cfg.qs.len() + qi], "pressure_difference"),
            ] {
                let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
                let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
                let predicted =
                    predicted_difference_exponent(n, k, q, Axis::Radius, pressure, cfg.epsilon);
                let mut fit = DecayFit::from_samples(
                    format!("{qty}_R_k{k}_q{q}"),
                    qty,
                    k,
                    q,
                    Axis::Radius,
                    xs,
                    ys,
                    predicted,
                    cfg.slack,
                );
                if !failures.is_empty() && fit.xs.len() < 4 {
                    fit.status = FitStatus::Partial;
                }
                fits.push(fit);
            }
        }
    }
    Ok(SweepOutcome {
        fits,
        contraction,
        norms,
        failures,
    })
}

/// Single pipeline run at the fixed radius; fits the difference norms over
/// the measurement times against the predicted temporal exponents.
pub fn sweep_time(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    if cfg.times.len() < 3 {
        return Err(Error::Config("time sweep needs at least 3 times".into()));
    }
    let mut v0 = make_initial_data(cfg.grid, &cfg.initial)?;
    let mut ws = solve_whole_space(&mut v0, cfg.t_end, cfg.steps, &cfg.picard)?;
    let n = cfg.grid.dim() as f64;

    let mut contraction = Vec::new();
    let mut failures = Vec::new();
    let mut norms = Vec::new();
    let mut fits = Vec::new();
    match run_ball(
        &mut ws,
        cfg.radius_fixed,
        &cfg.params,
        &cfg.ks,
        &cfg.qs,
        &cfg.times,
    ) {
        Ok(mut run) => {
            contraction.push((cfg.radius_fixed, run.report.max_contraction()));
            norms.append(&mut run.norms);
            for &k in &cfg.ks {
                for &q in &cfg.qs {
                    let mut vel = Vec::new();
                    let mut pres = Vec::new();
                    for &t in &cfg.times {
                        let (v, p) = difference_norms(&mut ws, &mut run, t, k, q)?;
                        vel.push((t, v));
                        pres.push((t, p));
                    }
                    for (pressure, samples, qty) in [
                        (false, &vel, "velocity_difference"),
                        (true, &pres, "pressure_difference"),
                    ] {
                        let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
                        let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
                        let predicted = predicted_difference_exponent(
                            n,
                            k,
                            q,
                            Axis::Time,
                            pressure,
                            cfg.epsilon,
                        );
                        fits.push(DecayFit::from_samples(
                            format!("{qty}_t_k{k}_q{q}"),
                            qty,
                            k,
                            q,
                            Axis::Time,
                            xs,
                            ys,
                            predicted,
                            cfg.slack,
                        ));
                    }
                }
            }
        }
        Err(e) => failures.push((cfg.radius_fixed, e.to_string())),
    }
    Ok(SweepOutcome {
        fits,
        contraction,
        norms,
        failures,
    })
}

/// Configuration of the heat-flow decay check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StokesCheckConfig {
    pub grid: Grid,
    pub initial: InitialData,
    /// Exterior radii of the spatial fit.
    pub radii: Vec<f64>,
    /// Fixed time of the spatial fit.
    pub t_fixed: f64,
    /// Exterior radius of the temporal fit.
    pub radius_fixed: f64,
    /// Times of the temporal fit (uniform-grid multiples).
    pub times: Vec<f64>,
    pub ks: Vec<usize>,
    pub q: f64,
    pub slack: f64,
}

/// Exterior decay fits of the heat flow of the initial datum: spatial slope
/// over exterior radii at the fixed time and temporal slope at the fixed
/// exterior radius. Predicted exponents: spatial `-(n+1+k-(n-1)/q)`,
/// temporal `-(n+1+k-n/q)/2`.
pub fn stokes_decay_fits(cfg: &StokesCheckConfig) -> Result<Vec<DecayFit>> {
    if cfg.radii.len() < 4 || cfg.times.len() < 4 {
        return Err(Error::Config(
            "decay check needs at least 4 radii and 4 times".into(),
        ));
    }
    let mut v0 = make_initial_data(cfg.grid, &cfg.initial)?;
    let n = cfg.grid.dim() as f64;
    // evaluate the semigroup at the union of needed times
    let mut eval_times: Vec<f64> = cfg.times.clone();
    eval_times.push(cfg.t_fixed);
    eval_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eval_times.dedup();
    let mut fits = Vec::new();
    for &k in &cfg.ks {
        let spatial_pred = -(n + 1.0 + k as f64 - (n - 1.0) / cfg.q);
        let temporal_pred = -0.5 * (n + 1.0 + k as f64 - n / cfg.q);
        // spatial fit at t_fixed
        let mut slice = v0.heat_semigroup(cfg.t_fixed)?;
        slice.ensure_physical();
        let mut ys = Vec::with_capacity(cfg.radii.len());
        for &rho in &cfg.radii {
            ys.push(dk_lq_norm(&slice, k, cfg.q, &Region::exterior(rho))?);
        }
        fits.push(DecayFit::from_samples(
            format!("heatflow_exterior_R_k{k}_q{}", cfg.q),
            "heatflow_exterior",
            k,
            cfg.q,
            Axis::Radius,
            cfg.radii.clone(),
            ys,
            spatial_pred,
            cfg.slack,
        ));
        // temporal fit at radius_fixed
        let mut ys = Vec::with_capacity(cfg.times.len());
        for &t in &cfg.times {
            let mut s = v0.heat_semigroup(t)?;
            s.ensure_physical();
            ys.push(dk_lq_norm(&s, k, cfg.q, &Region::exterior(cfg.radius_fixed))?);
        }
        fits.push(DecayFit::from_samples(
            format!("heatflow_exterior_t_k{k}_q{}", cfg.q),
            "heatflow_exterior",
            k,
            cfg.q,
            Axis::Time,
            cfg.times.clone(),
            ys,
            temporal_pred,
            cfg.slack,
        ));
    }
    // keep the datum around as a trajectory consumer would
    let _ = stokes_evolve(&mut v0, &uniform_times(cfg.t_fixed.max(1e-6), 2))?;
    Ok(fits)
}

/// Predicted exponents of the intermediate-field estimates, keyed by the
/// norm-table quantity names.
fn estimate_prediction(quantity: &str, n: f64, k: f64, q: f64) -> Option<(f64, f64)> {
    // (radius exponent, time exponent)
    match quantity {
        "velocity" => Some((-(n + 1.0 + k - (n - 1.0) / q), -0.5 * (n + 1.0 + k - n / q))),
        "velocity_cutoff" => Some((-(n + 1.0 + k - (n - 1.0) / q), -0.5 * (n + 1.0 + k - n / q))),
        "pressure" => Some((-(n + k - (n - 1.0) / q), -0.5 * (n + k - n / q))),
        "forcing_cutoff" => Some((-(n + 1.0 + k - (n - 1.0) / q), -0.5 * (n + 1.0 + k - n / q))),
        "forcing_corrector" => Some((-(n + 1.0 + k - (n - 1.0) / q), f64::NAN)),
        "forcing_total" => Some((-(n + 1.0 + k - (n - 1.0) / q), -0.5 * (n + 1.0 + k - n / q))),
        "truncation" => Some((-(n + 1.0 + k - n / q), -0.5 * (n + 1.0 + k - n / q))),
        "residual_flow" => Some((-(n - 1.0 + k - n / q), f64::NAN)),
        "pressure_correction" => Some((-(n + k - (n - 1.0) / q), -0.5 * (n + k - n / q))),
        _ => None,
    }
}

/// Fit every measured intermediate quantity against its predicted exponent:
/// radius fits at the fixed time over the sweep radii, temporal fits at the
/// fixed radius over the sweep times. Rows with too little data are marked.
pub fn annulus_estimate_report(
    norms: &[NormRow],
    n_dim: usize,
    t_fixed: f64,
    radius_fixed: f64,
    slack: f64,
    epsilon: f64,
) -> Vec<DecayFit> {
    let n = n_dim as f64;
    let mut keys: Vec<(String, usize, f64)> = norms
        .iter()
        .map(|r| (r.quantity.clone(), r.k, r.q))
        .collect();
    keys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    keys.dedup();
    let mut fits = Vec::new();
    for (quantity, k, q) in keys {
        let pred = estimate_prediction(&quantity, n, k as f64, q);
        let Some((pred_r, pred_t)) = pred else { continue };
        let pred_t = if quantity == "residual_flow" {
            -0.5 * (n - 1.0 - epsilon + k as f64 - n / q)
        } else {
            pred_t
        };
        // radius fit at the fixed time
        let mut radial: Vec<(f64, f64)> = norms
            .iter()
            .filter(|r| {
                r.quantity == quantity
                    && r.k == k
                    && r.q == q
                    && (r.t - t_fixed).abs() <= 1e-9 * t_fixed.max(1.0)
            })
            .map(|r| (r.radius, r.value))
            .collect();
        radial.sort_by(|a, b| a.partial_cmp(b).unwrap());
        radial.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12);
        if radial.len() >= 3 {
            fits.push(DecayFit::from_samples(
                format!("{quantity}_R_k{k}_q{q}"),
                quantity.clone(),
                k,
                q,
                Axis::Radius,
                radial.iter().map(|s| s.0).collect(),
                radial.iter().map(|s| s.1).collect(),
                pred_r,
                slack,
            ));
        }
        // temporal fit at the fixed radius
        if pred_t.is_finite() {
            let mut temporal: Vec<(f64, f64)> = norms
                .iter()
                .filter(|r| {
                    r.quantity == quantity
                        && r.k == k
                        && r.q == q
                        && (r.radius - radius_fixed).abs() <= 1e-12
                        && r.t > 0.0
                })
                .map(|r| (r.t, r.value))
                .collect();
            temporal.sort_by(|a, b| a.partial_cmp(b).unwrap());
            temporal.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12);
            if temporal.len() >= 3 {
                fits.push(DecayFit::from_samples(
                    format!("{quantity}_t_k{k}_q{q}"),
                    quantity.clone(),
                    k,
                    q,
                    Axis::Time,
                    temporal.iter().map(|s| s.0).collect(),
                    temporal.iter().map(|s| s.1).collect(),
                    pred_t,
                    slack,
                ));
            }
        }
    }
    fits
}
