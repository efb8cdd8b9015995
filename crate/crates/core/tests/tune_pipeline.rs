mod common;

use nse_transfer_core::harness::{
    run_ball, solve_whole_space, InitialData, PipelineParams, make_initial_data,
};
use nse_transfer_core::solver::IterSpec;
use nse_transfer_core::spectral::{dk_lq_norm, Grid, Region};
use std::time::Instant;

#[test]
#[ignore]
fn smoke_small() {
    let grid = Grid::new(3, 8.0, 64, true).unwrap();
    let init = InitialData { support_radius: 1.0, amplitude: 0.1, center: [0.0; 3] };
    let mut v0 = make_initial_data(grid, &init).unwrap();
    let t0 = Instant::now();
    let mut ws = solve_whole_space(&mut v0, 1.0, 4, &IterSpec::default()).unwrap();
    println!("whole-space solve: {:?}", t0.elapsed());
    let params = PipelineParams { eval_stride: 1, ..PipelineParams::default() };
    let t0 = Instant::now();
    let mut run = run_ball(&mut ws, 3.0, &params, &[0], &[2.0], &[1.0]).unwrap();
    println!("ball run R=3: {:?} iterations {} contraction {:?}", t0.elapsed(), run.report.iterations, run.report.contraction);
    // w ~ v in the interior ball
    let ti = ws.velocity.times.iter().position(|&t| (t - 1.0).abs() < 1e-9).unwrap();
    let mut dv = ws.velocity.slices[ti].clone();
    dv.add_scaled(&mut run.ball_velocity.slices[ti], -1.0);
    let core = Region::ball(1.5);
    let interior = dk_lq_norm(&dv, 0, 2.0, &core).unwrap();
    let full = dk_lq_norm(&dv, 0, 2.0, &Region::ball(3.0)).unwrap();
    let vnorm = dk_lq_norm(&ws.velocity.slices[ti], 0, 2.0, &core).unwrap();
    println!("|v-w| core {interior:.3e} ball {full:.3e} (v core {vnorm:.3e})");
    // support of w: exterior sup small
    let mut w = run.ball_velocity.slices[ti].clone();
    let ext = w.lq_norm(f64::INFINITY, &Region::exterior(3.0 + 2.0 * grid.spacing())).unwrap();
    let inn = w.max_abs();
    println!("w exterior sup {ext:.3e} vs interior {inn:.3e}");
    // div r
    let mut divr = common::fd_divergence(&mut run.truncated.slices[ti]);
    println!("fd div r sup {:.3e} vs r sup {:.3e}", divr.max_abs(), run.truncated.slices[ti].max_abs());
}
