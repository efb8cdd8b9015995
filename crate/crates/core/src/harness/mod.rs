//! Parameter sweeps, log-log exponent fits, report emission and the
//! acceptance checks.

mod fits;
mod pipeline;
mod report;
mod sweeps;

pub mod acceptance;

pub use fits::{fit_loglog, Axis, DecayFit, FitStatus};
pub use pipeline::{
    make_initial_data, run_ball, solve_stokes, solve_whole_space, BallRun, InitialData,
    NormRow, PipelineParams, WholeSpaceRun,
};
pub use report::{write_report_csv, write_summary_json, RunSummary};
pub use sweeps::{
    annulus_estimate_report, stokes_decay_fits, sweep_radius, sweep_time, StokesCheckConfig,
    SweepConfig, SweepOutcome,
};
