mod common;

use nse_transfer_core::bogovskii::{bogovskii_solve, BogovskiiDomain, KernelQuad};
use nse_transfer_core::spectral::{dk_lq_norm, dk_lq_norm_scalar, Grid, Region};
use std::time::Instant;

#[test]
#[ignore]
fn full_sweep() {
    let len = 4.2;
    let t_all = Instant::now();
    let mut residuals = Vec::new();
    let mut ratios = Vec::new();
    for n in [32usize, 48, 64] {
        let grid = Grid::new(3, len, n, true).unwrap();
        let mut f = common::reference_datum(grid, 2.0);
        let dom = BogovskiiDomain::ball(2.0).unwrap();
        let t0 = Instant::now();
        let mut v = bogovskii_solve(&mut f, &dom, &KernelQuad::default()).unwrap();
        let dt = t0.elapsed();
        let div = common::fd_divergence(&mut v);
        let mut resid = div;
        resid.add_scaled(&mut f, -1.0);
        let ball = Region::ball(2.05);
        let num = resid.lq_norm(2.0, &ball).unwrap();
        let den = f.lq_norm(2.0, &ball).unwrap();
        residuals.push(num / den);
        // W^{1,2}/L^2 ratio from the same solve
        let mut vn: f64 = 0.0;
        for m in 0..=1 {
            vn = vn.max(dk_lq_norm(&v, m, 2.0, &ball).unwrap());
        }
        let fn_ = dk_lq_norm_scalar(&f, 0, 2.0, &ball).unwrap();
        ratios.push(vn / fn_);
        println!("N={n}: residual {:.4} ratio {:.4} [{dt:?}]", num / den, vn / fn_);
    }
    println!("residuals {residuals:?}");
    println!("ratios {ratios:?}  spread {:.4}", (ratios.iter().cloned().fold(f64::MIN, f64::max) - ratios.iter().cloned().fold(f64::MAX, f64::min)) / ratios[1]);
    println!("total {:?}", t_all.elapsed());
}
