//! Explicit integral right inverse of the divergence with zero boundary
//! trace:
//!
//! ```text
//! v(x) = Int_D f(y) (x-y)/|x-y|^n  Int_{|x-y|}^inf  g(y + z (x-y)/|x-y|) z^{n-1} dz dy
//! ```
//!
//! with `g` a normalised smooth bump supported in a ball the domain is
//! star-shaped with respect to. Ball mode uses one patch (bump at the
//! centre). Annulus mode covers the shell with overlapping cap sectors laid
//! out on a serpentine latitude grid, each star-shaped with respect to its
//! own interior bump ball; the data is split by a partition of unity and
//! mean-corrected along the chain with transfer bumps supported in
//! consecutive overlaps, so every patch datum integrates to zero.
//!
//! The cap angular radius obeys `cos(alpha) >= (inner + rho) / r_bump`:
//! along any segment from a sector point to a bump point the radius is a
//! convex function, so a non-negative radial derivative at the inner
//! boundary keeps the segment inside the shell. Construction re-validates
//! this by sampling segment radii. The patch count therefore grows with the
//! shell radius instead of being fixed.
//!
//! Evaluation sums sources into the cone of lattice points between each
//! source and the patch bump (the kernel support), with the weakly singular
//! `|x-y| <= r_loc` zone handled by a separate polar pass where the
//! `|x-y|^{1-n}` factor cancels against the polar Jacobian. Several data
//! sharing one domain are solved in a single sweep so the geometric kernel
//! work is amortised.

use crate::quad::gauss_legendre;
use crate::shape::{bump_profile, bump_unit_integral, smoothstep};
use crate::spectral::{dk_lq_norm, dk_lq_norm_scalar, Grid, Region, ScalarField, VectorField};
use crate::sum::pairwise_sum;
use crate::{Error, Result};
use ndarray::{ArrayD, IxDyn};

const BUMP_TABLE_LEN: usize = 4096;
const CHORD_TABLE_LEN: usize = 1024;

/// Smooth bump `norm * exp(-1/(1 - |x-c|^2/rho^2))` with unit volume
/// integral. Carries lookup tables for the radial profile and for the
/// chord moments
/// `M_k(p) = Int_{-w}^{w} g(sqrt(p^2 + s^2)) s^k ds`, `w = sqrt(rho^2-p^2)`,
/// which reduce every full-chord ray integral to two table reads: with the
/// foot parameter `z0` of the chord, `Int g z^k dz` over the whole chord is
/// `M0`, `z0 M0`, `M2 + z0^2 M0` for `k = 0, 1, 2` (odd moments vanish).
#[derive(Debug, Clone)]
pub struct Bump {
    pub center: [f64; 3],
    pub radius: f64,
    norm: f64,
    table: std::sync::Arc<Vec<f64>>,
    chord_m0: std::sync::Arc<Vec<f64>>,
    chord_m2: std::sync::Arc<Vec<f64>>,
}

impl Bump {
    pub fn new(center: [f64; 3], radius: f64) -> Self {
        let norm = 1.0 / (radius.powi(3) * bump_unit_integral(3));
        let table: Vec<f64> = (0..=BUMP_TABLE_LEN)
            .map(|i| bump_profile(i as f64 / BUMP_TABLE_LEN as f64))
            .collect();
        // chord moments on a uniform p^2 grid (linear interpolation in p^2)
        let (gx, gw) = gauss_legendre(24);
        let mut m0 = Vec::with_capacity(CHORD_TABLE_LEN + 1);
        let mut m2 = Vec::with_capacity(CHORD_TABLE_LEN + 1);
        for i in 0..=CHORD_TABLE_LEN {
            let p2_rel = i as f64 / CHORD_TABLE_LEN as f64;
            let w = radius * (1.0 - p2_rel).max(0.0).sqrt();
            let (mut a0, mut a2) = (0.0, 0.0);
            for (x, wq) in gx.iter().zip(&gw) {
                let svar = w * x;
                let u = (p2_rel * radius * radius + svar * svar) / (radius * radius);
                let g = norm * bump_profile(u) * wq * w;
                a0 += g;
                a2 += g * svar * svar;
            }
            m0.push(a0);
            m2.push(a2);
        }
        Bump {
            center,
            radius,
            norm,
            table: std::sync::Arc::new(table),
            chord_m0: std::sync::Arc::new(m0),
            chord_m2: std::sync::Arc::new(m2),
        }
    }

    #[inline]
    pub fn eval(&self, y: &[f64; 3]) -> f64 {
        let dx = y[0] - self.center[0];
        let dy = y[1] - self.center[1];
        let dz = y[2] - self.center[2];
        let u = (dx * dx + dy * dy + dz * dz) / (self.radius * self.radius);
        if u >= 1.0 {
            return 0.0;
        }
        let pos = u * BUMP_TABLE_LEN as f64;
        let i = pos as usize;
        let frac = pos - i as f64;
        self.norm * (self.table[i] * (1.0 - frac) + self.table[i + 1] * frac)
    }

    /// Chord moments `(M0, M2)` at squared impact parameter `p2`.
    #[inline]
    fn chord_moments(&self, p2: f64) -> (f64, f64) {
        let rel = p2 / (self.radius * self.radius);
        if rel >= 1.0 {
            return (0.0, 0.0);
        }
        let pos = rel * CHORD_TABLE_LEN as f64;
        let i = pos as usize;
        let frac = pos - i as f64;
        (
            self.chord_m0[i] * (1.0 - frac) + self.chord_m0[i + 1] * frac,
            self.chord_m2[i] * (1.0 - frac) + self.chord_m2[i + 1] * frac,
        )
    }

    /// Midpoint-rule integral over the grid lattice.
    pub fn lattice_integral(&self, grid: &Grid) -> f64 {
        let mut total = Vec::new();
        let h = grid.spacing();
        let lo = |c: f64| (((c - self.radius) + 0.5 * grid.len()) / h).floor().max(0.0) as usize;
        let hi = |c: f64| {
            ((((c + self.radius) + 0.5 * grid.len()) / h).ceil() as usize)
                .min(grid.points() - 1)
        };
        for i in lo(self.center[0])..=hi(self.center[0]) {
            for j in lo(self.center[1])..=hi(self.center[1]) {
                for k in lo(self.center[2])..=hi(self.center[2]) {
                    let y = [grid.coord(i), grid.coord(j), grid.coord(k)];
                    let v = self.eval(&y);
                    if v != 0.0 {
                        total.push(v);
                    }
                }
            }
        }
        pairwise_sum(&total) * grid.cell_volume()
    }
}

/// One star-shaped piece of the domain: a cap sector of the shell (or the
/// whole ball) together with the bump ball it is star-shaped towards.
#[derive(Debug, Clone)]
pub struct Patch {
    /// Cap axis (unit vector); irrelevant in ball mode.
    pub axis: [f64; 3],
    /// Cosine of the full cap angular radius; -1 covers every direction.
    pub cos_total: f64,
    /// Cosine of the partition plateau radius.
    pub cos_inner: f64,
    /// Radial range of the sector.
    pub r_lo: f64,
    pub r_hi: f64,
    pub bump: Bump,
}

impl Patch {
    fn cos_angle(&self, x: &[f64; 3]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if r == 0.0 {
            return 1.0;
        }
        (x[0] * self.axis[0] + x[1] * self.axis[1] + x[2] * self.axis[2]) / r
    }

    /// Raw partition weight: 1 on the plateau cap, 0 outside the total cap.
    pub fn weight_raw(&self, x: &[f64; 3]) -> f64 {
        if self.cos_total <= -1.0 {
            return 1.0;
        }
        let c = self.cos_angle(x);
        smoothstep((c - self.cos_total) / (self.cos_inner - self.cos_total))
    }

    fn sector_contains(&self, x: &[f64; 3], pad: f64) -> bool {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if r < self.r_lo - pad || r > self.r_hi + pad {
            return false;
        }
        if self.cos_total <= -1.0 {
            return true;
        }
        // angular pad scaled to a length pad at this radius
        let ang_pad = if r > 0.0 { pad / r } else { 1.0 };
        self.cos_angle(x) >= self.cos_total - ang_pad
    }
}

/// Domain shape selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainKind {
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

/// Star-shaped domain (ball) or patched annulus with a mean-transfer chain.
#[derive(Debug, Clone)]
pub struct BogovskiiDomain {
    pub kind: DomainKind,
    pub patches: Vec<Patch>,
    /// Transfer bumps between consecutive patches (`len = patches - 1`).
    pub transfers: Vec<Bump>,
    /// Spherical buckets mapping a direction to the patches whose caps can
    /// reach it, so partition weights stay O(overlap) per point.
    buckets: DirectionBuckets,
}

#[derive(Debug, Clone)]
struct DirectionBuckets {
    n_theta: usize,
    n_phi: usize,
    lists: Vec<Vec<u32>>,
}

impl DirectionBuckets {
    fn all(patch_count: usize) -> Self {
        DirectionBuckets {
            n_theta: 1,
            n_phi: 1,
            lists: vec![(0..patch_count as u32).collect()],
        }
    }

    fn build(patches: &[Patch]) -> Self {
        let n_theta = 64;
        let n_phi = 128;
        let mut lists = vec![Vec::new(); n_theta * n_phi];
        // bucket angular half-diagonal
        let d_theta = std::f64::consts::PI / n_theta as f64;
        let d_phi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let pad = 0.5 * (d_theta * d_theta + d_phi * d_phi).sqrt() + 1e-12;
        for (pi, patch) in patches.iter().enumerate() {
            let alpha = patch.cos_total.acos();
            let reach = (alpha + pad).cos();
            for bt in 0..n_theta {
                let theta = (bt as f64 + 0.5) * d_theta;
                for bp in 0..n_phi {
                    let phi = (bp as f64 + 0.5) * d_phi;
                    let dir = [
                        theta.sin() * phi.cos(),
                        theta.sin() * phi.sin(),
                        theta.cos(),
                    ];
                    let c = dir[0] * patch.axis[0]
                        + dir[1] * patch.axis[1]
                        + dir[2] * patch.axis[2];
                    if c >= reach {
                        lists[bt * n_phi + bp].push(pi as u32);
                    }
                }
            }
        }
        DirectionBuckets {
            n_theta,
            n_phi,
            lists,
        }
    }

    #[inline]
    fn candidates(&self, x: &[f64; 3]) -> &[u32] {
        if self.lists.len() == 1 {
            return &self.lists[0];
        }
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if r == 0.0 {
            return &self.lists[0];
        }
        let theta = (x[2] / r).clamp(-1.0, 1.0).acos();
        let phi = x[1].atan2(x[0]).rem_euclid(2.0 * std::f64::consts::PI);
        let bt = ((theta / std::f64::consts::PI) * self.n_theta as f64) as usize;
        let bp = ((phi / (2.0 * std::f64::consts::PI)) * self.n_phi as f64) as usize;
        let bt = bt.min(self.n_theta - 1);
        let bp = bp.min(self.n_phi - 1);
        &self.lists[bt * self.n_phi + bp]
    }
}

impl BogovskiiDomain {
    /// Partition weight numerator and normaliser at a point, via the
    /// bucket candidates.
    #[inline]
    pub(crate) fn weight_and_sum(&self, p: usize, x: &[f64; 3]) -> (f64, f64) {
        let mut wsum = 0.0;
        let mut wp = 0.0;
        for &q in self.buckets.candidates(x) {
            let w = self.patches[q as usize].weight_raw(x);
            wsum += w;
            if q as usize == p {
                wp = w;
            }
        }
        (wp, wsum)
    }

    /// Sparse list of `(patch, raw weight)` pairs at a point.
    #[inline]
    pub(crate) fn weights_at(&self, x: &[f64; 3]) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for &q in self.buckets.candidates(x) {
            let w = self.patches[q as usize].weight_raw(x);
            if w > 0.0 {
                out.push((q as usize, w));
            }
        }
        out
    }
}

impl BogovskiiDomain {
    /// Ball of the given radius, star-shaped with respect to the concentric
    /// half-radius ball that carries the bump.
    pub fn ball(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        let bump = Bump::new([0.0; 3], 0.5 * radius);
        Ok(BogovskiiDomain {
            kind: DomainKind::Ball { radius },
            patches: vec![Patch {
                axis: [0.0, 0.0, 1.0],
                cos_total: -1.0,
                cos_inner: 1.0,
                r_lo: 0.0,
                r_hi: radius,
                bump,
            }],
            transfers: Vec::new(),
            buckets: DirectionBuckets::all(1),
        })
    }

    /// Shell `inner < |x| < outer` covered by cap sectors on a serpentine
    /// latitude grid, chain-ordered for the mean transfer.
    pub fn annulus(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0) || !(outer > inner) {
            return Err(Error::Domain(format!(
                "annulus needs 0 < inner < outer, got [{inner}, {outer}]"
            )));
        }
        let thickness = outer - inner;
        let r_bump = inner + 0.5 * thickness;
        let rho = 0.3 * thickness;
        // star-shape constraint: segments from sector points to bump points
        // keep radius >= inner iff cos(alpha_total) >= (inner + rho)/r_bump
        let limit = (inner + rho) / r_bump;
        if limit >= 1.0 {
            return Err(Error::Domain(format!(
                "annulus [{inner}, {outer}] too thin relative to its radius"
            )));
        }
        let alpha_total = limit.acos() * 0.95;
        let alpha_in = alpha_total / 1.6;
        let rings = (std::f64::consts::PI / alpha_in).ceil() as usize;
        let dtheta = std::f64::consts::PI / rings as f64;
        let mut patches = Vec::new();
        for ring in 0..rings {
            let theta = (ring as f64 + 0.5) * dtheta;
            let m =
                ((2.0 * std::f64::consts::PI * theta.sin() / alpha_in).ceil() as usize).max(1);
            let mut ring_patches = Vec::with_capacity(m);
            for j in 0..m {
                let phi = (j as f64 + 0.5) * 2.0 * std::f64::consts::PI / m as f64;
                let axis = [
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                ];
                let center = [axis[0] * r_bump, axis[1] * r_bump, axis[2] * r_bump];
                ring_patches.push(Patch {
                    axis,
                    cos_total: alpha_total.cos(),
                    cos_inner: (0.8 * alpha_in).cos(),
                    r_lo: inner,
                    r_hi: outer,
                    bump: Bump::new(center, rho),
                });
            }
            // serpentine: reverse the azimuthal sweep on odd rings
            if ring % 2 == 1 {
                ring_patches.reverse();
            }
            patches.extend(ring_patches);
        }
        // transfer bumps in consecutive overlaps
        let rho_t = (0.25 * thickness).min(0.5 * rho).max(0.12 * thickness);
        let mut transfers = Vec::with_capacity(patches.len().saturating_sub(1));
        for w in patches.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let mid = [
                a.axis[0] + b.axis[0],
                a.axis[1] + b.axis[1],
                a.axis[2] + b.axis[2],
            ];
            let nm = (mid[0] * mid[0] + mid[1] * mid[1] + mid[2] * mid[2]).sqrt();
            if nm < 1e-12 {
                return Err(Error::Domain(
                    "degenerate patch chain: antipodal neighbours".into(),
                ));
            }
            let c = [
                mid[0] / nm * r_bump,
                mid[1] / nm * r_bump,
                mid[2] / nm * r_bump,
            ];
            transfers.push(Bump::new(c, rho_t));
        }
        let buckets = DirectionBuckets::build(&patches);
        let dom = BogovskiiDomain {
            kind: DomainKind::Annulus { inner, outer },
            patches,
            transfers,
            buckets,
        };
        dom.validate_star_shape()?;
        dom.validate_chain()?;
        Ok(dom)
    }

    pub fn region(&self) -> Region {
        match self.kind {
            DomainKind::Ball { radius } => Region::ball(radius),
            DomainKind::Annulus { inner, outer } => Region::annulus(inner, outer),
        }
    }

    pub fn contains(&self, x: &[f64], pad: f64) -> bool {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let r = r2.sqrt();
        match self.kind {
            DomainKind::Ball { radius } => r <= radius + pad,
            DomainKind::Annulus { inner, outer } => r >= inner - pad && r <= outer + pad,
        }
    }

    /// Sampled check that every segment between sector points and bump
    /// points stays inside the shell.
    fn validate_star_shape(&self) -> Result<()> {
        let (inner, outer) = match self.kind {
            DomainKind::Annulus { inner, outer } => (inner, outer),
            DomainKind::Ball { .. } => return Ok(()),
        };
        for patch in &self.patches {
            let alpha = patch.cos_total.acos();
            let (e1, e2) = frame(&patch.axis);
            let mut boundary = Vec::new();
            for &r in &[inner, 0.5 * (inner + outer), outer] {
                for &ang in &[0.0, 0.5 * alpha, alpha] {
                    for k in 0..8 {
                        let phi = k as f64 * std::f64::consts::PI / 4.0;
                        let dir = rotate(&patch.axis, &e1, &e2, ang, phi);
                        boundary.push([dir[0] * r, dir[1] * r, dir[2] * r]);
                    }
                }
            }
            let mut bump_pts = vec![patch.bump.center];
            for a in 0..3 {
                for s in [-1.0, 1.0] {
                    let mut p = patch.bump.center;
                    p[a] += s * patch.bump.radius;
                    bump_pts.push(p);
                }
            }
            for p in &boundary {
                for b in &bump_pts {
                    let d = min_segment_radius(p, b);
                    if d < inner - 1e-9 {
                        return Err(Error::Domain(format!(
                            "patch fails the star-shape check: segment dips to radius {d:.6} < {inner}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Transfer bumps must sit inside both neighbouring sectors.
    fn validate_chain(&self) -> Result<()> {
        for (i, t) in self.transfers.iter().enumerate() {
            for p in [&self.patches[i], &self.patches[i + 1]] {
                let mut probe = vec![t.center];
                for a in 0..3 {
                    for s in [-1.0, 1.0] {
                        let mut q = t.center;
                        q[a] += s * t.radius;
                        probe.push(q);
                    }
                }
                for q in &probe {
                    if !p.sector_contains(q, 1e-9) {
                        return Err(Error::Domain(format!(
                            "transfer bump {i} escapes its neighbouring sector"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn frame(axis: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let pick = if axis[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let mut e1 = [
        axis[1] * pick[2] - axis[2] * pick[1],
        axis[2] * pick[0] - axis[0] * pick[2],
        axis[0] * pick[1] - axis[1] * pick[0],
    ];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    for v in &mut e1 {
        *v /= n1;
    }
    let e2 = [
        axis[1] * e1[2] - axis[2] * e1[1],
        axis[2] * e1[0] - axis[0] * e1[2],
        axis[0] * e1[1] - axis[1] * e1[0],
    ];
    (e1, e2)
}

fn rotate(axis: &[f64; 3], e1: &[f64; 3], e2: &[f64; 3], ang: f64, phi: f64) -> [f64; 3] {
    let (sa, ca) = ang.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [
        ca * axis[0] + sa * (cp * e1[0] + sp * e2[0]),
        ca * axis[1] + sa * (cp * e1[1] + sp * e2[1]),
        ca * axis[2] + sa * (cp * e1[2] + sp * e2[2]),
    ]
}

/// Minimum of `|p + t (b - p)|` over `t in [0, 1]`.
fn min_segment_radius(p: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [b[0] - p[0], b[1] - p[1], b[2] - p[2]];
    let dd: f64 = d.iter().map(|v| v * v).sum();
    if dd == 0.0 {
        return (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    }
    let t = -(p[0] * d[0] + p[1] * d[1] + p[2] * d[2]) / dd;
    let t = t.clamp(0.0, 1.0);
    let q = [p[0] + t * d[0], p[1] + t * d[1], p[2] + t * d[2]];
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt()
}

/// Quadrature controls for the kernel application.
#[derive(Debug, Clone, Copy)]
pub struct KernelQuad {
    /// Gauss-Legendre nodes on each ray chord through the bump.
    pub ray_nodes: usize,
    /// Evaluate on every `eval_stride`-th lattice point and upsample.
    pub eval_stride: usize,
    /// Radius (in source-lattice spacings) of the polar singular zone.
    pub local_radius_cells: f64,
    /// Polar rule: Gauss-Legendre nodes in the polar cosine and uniform
    /// azimuth count.
    pub local_mu: usize,
    pub local_phi: usize,
    /// Radial Gauss-Legendre nodes of the polar pass.
    pub local_radial: usize,
    /// Inner fraction of the polar radius where the near pass takes over
    /// completely; the two passes blend smoothly in between.
    pub blend_inner_frac: f64,
    /// Beyond `far_split_cells * h` from a 2h source block, the block's
    /// sources act through their aggregated weight at the block centre.
    pub far_split_cells: f64,
}

impl Default for KernelQuad {
    fn default() -> Self {
        KernelQuad {
            ray_nodes: 6,
            eval_stride: 1,
            local_radius_cells: 4.0,
            local_mu: 6,
            local_phi: 10,
            local_radial: 5,
            blend_inner_frac: 0.5,
            far_split_cells: 8.0,
        }
    }
}

/// Solve `div v = f` for a single datum.
pub fn bogovskii_solve(
    f: &mut ScalarField,
    domain: &BogovskiiDomain,
    quad: &KernelQuad,
) -> Result<VectorField> {
    let data = std::slice::from_mut(f);
    Ok(bogovskii_solve_batch(data, domain, quad)?.pop().unwrap())
}

/// Solve `div v = f_d` for every datum in one geometric sweep.
pub fn bogovskii_solve_batch(
    data: &mut [ScalarField],
    domain: &BogovskiiDomain,
    quad: &KernelQuad,
) -> Result<Vec<VectorField>> {
    assert!(!data.is_empty());
    let grid = *data[0].grid();
    if grid.dim() != 3 {
        return Err(Error::Domain(
            "the divergence corrector is implemented for dimension 3".into(),
        ));
    }
    grid.validate_region(&domain.region())?;
    let n1 = grid.points();
    let stride = quad.eval_stride.max(1);
    if n1 % stride != 0 {
        return Err(Error::Argument(format!(
            "eval stride {stride} must divide the grid size {n1}"
        )));
    }
    let h = grid.spacing();
    let cell = grid.cell_volume();
    let r_loc = quad.local_radius_cells * h;
    let r_in = quad.blend_inner_frac.clamp(0.05, 0.95) * r_loc;
    let nd = data.len();

    for f in data.iter_mut() {
        f.ensure_physical();
    }
    let flats: Vec<&[f64]> = data
        .iter()
        .map(|f| f.phys_ref().as_slice().unwrap())
        .collect();
    let coords: Vec<f64> = (0..n1).map(|i| grid.coord(i)).collect();
    let mut active = vec![false; nd];
    for (d, flat) in flats.iter().enumerate() {
        let total = crate::sum::pairwise_sum_by(flat.len(), |i| flat[i]) * cell;
        let abs = crate::sum::pairwise_sum_by(flat.len(), |i| flat[i].abs()) * cell;
        if abs == 0.0 {
            continue;
        }
        active[d] = true;
        if total.abs() > 1e-8 * abs {
            return Err(Error::Compatibility(format!(
                "datum {d} has nonzero mean: |integral| = {:.3e} > 1e-8 * {:.3e}",
                total.abs(),
                abs
            )));
        }
        let mut max_out: f64 = 0.0;
        let mut max_all: f64 = 0.0;
        for i in 0..n1 {
            for j in 0..n1 {
                for k in 0..n1 {
                    let idx = (i * n1 + j) * n1 + k;
                    let v = flat[idx].abs();
                    max_all = max_all.max(v);
                    if v > 0.0 && !domain.contains(&[coords[i], coords[j], coords[k]], 0.5 * h) {
                        max_out = max_out.max(v);
                    }
                }
            }
        }
        if max_out > 1e-10 * max_all {
            return Err(Error::Domain(format!(
                "datum {d} has support escaping the domain (|f| = {max_out:.3e} outside)"
            )));
        }
    }

    let ne = n1 / stride;
    let he = h * stride as f64;
    // accumulators: [datum][eval lattice][component] (interleaved so each
    // hit touches one cache line per datum)
    let mut acc = vec![vec![[0.0f64; 3]; ne * ne * ne]; nd];
    let (gl_x, gl_w) = gauss_legendre(quad.ray_nodes);

    // support points and partition integrals for the chain transfer
    let n_patch = domain.patches.len();
    let shell_pts = collect_support_points(&grid, domain, &flats, &active);
    let mut patch_sums = vec![vec![0.0f64; n_patch]; nd];
    for &(i, j, k) in &shell_pts {
        let x = [coords[i], coords[j], coords[k]];
        let mut wsum = 0.0;
        let mut ws: Vec<(usize, f64)> = Vec::new();
        for (p, patch) in domain.patches.iter().enumerate() {
            let w = patch.weight_raw(&x);
            if w > 0.0 {
                ws.push((p, w));
                wsum += w;
            }
        }
        if wsum <= 0.0 {
            continue;
        }
        let idx = (i * n1 + j) * n1 + k;
        for (p, w) in ws {
            let theta = w / wsum;
            for d in 0..nd {
                if active[d] {
                    patch_sums[d][p] += theta * flats[d][idx] * cell;
                }
            }
        }
    }
    let mut chain = vec![vec![0.0f64; n_patch]; nd];
    for d in 0..nd {
        let mut run = 0.0;
        for p in 0..n_patch {
            run += patch_sums[d][p];
            chain[d][p] = run;
        }
    }
    let transfer_norm: Vec<f64> = domain
        .transfers
        .iter()
        .map(|t| t.lattice_integral(&grid))
        .collect();

    let (cap_mu, cap_wmu) = gauss_legendre(quad.local_mu);
    let n_cap_phi = quad.local_phi;
    let (rx, rw) = gauss_legendre(quad.local_radial);

    let t_setup = std::time::Instant::now();
    let mut dt_sources = std::time::Duration::ZERO;
    let mut dt_scatter = std::time::Duration::ZERO;
    let mut dt_polar = std::time::Duration::ZERO;
    for (p, patch) in domain.patches.iter().enumerate() {
        let t_src = std::time::Instant::now();
        // sources: partitioned datum plus incoming/outgoing transfers
        let mut sources: Vec<([f64; 3], Vec<f64>)> = Vec::new();
        for &(i, j, k) in &shell_pts {
            let x = [coords[i], coords[j], coords[k]];
            let w = patch.weight_raw(&x);
            if w <= 0.0 {
                continue;
            }
            let mut wsum = 0.0;
            for q in &domain.patches {
                wsum += q.weight_raw(&x);
            }
            let theta = w / wsum;
            let idx = (i * n1 + j) * n1 + k;
            let mut wts = vec![0.0; nd];
            let mut any = false;
            for d in 0..nd {
                if active[d] && flats[d][idx] != 0.0 {
                    wts[d] = theta * flats[d][idx] * cell;
                    any = true;
                }
            }
            if any {
                sources.push((x, wts));
            }
        }
        for (t_idx, sign) in [(p.wrapping_sub(1), 1.0), (p, -1.0)] {
            if (sign > 0.0 && p == 0) || (sign < 0.0 && p + 1 >= n_patch) {
                continue;
            }
            let t = &domain.transfers[t_idx];
            let norm = transfer_norm[t_idx];
            let lo = |c: f64| ((c - t.radius + 0.5 * grid.len()) / h).floor().max(0.0) as usize;
            let hi =
                |c: f64| (((c + t.radius + 0.5 * grid.len()) / h).ceil() as usize).min(n1 - 1);
            for i in lo(t.center[0])..=hi(t.center[0]) {
                for j in lo(t.center[1])..=hi(t.center[1]) {
                    for k in lo(t.center[2])..=hi(t.center[2]) {
                        let y = [coords[i], coords[j], coords[k]];
                        let g = t.eval(&y);
                        if g == 0.0 {
                            continue;
                        }
                        let mut wts = vec![0.0; nd];
                        let mut any = false;
                        for d in 0..nd {
                            if active[d] {
                                let c = sign * chain[d][t_idx];
                                if c != 0.0 {
                                    wts[d] = c * g / norm * cell;
                                    any = true;
                                }
                            }
                        }
                        if any {
                            sources.push((y, wts));
                        }
                    }
                }
            }
        }
        if sources.is_empty() {
            continue;
        }

        dt_sources += t_src.elapsed();
        let t_scat = std::time::Instant::now();
        let bump = &patch.bump;
        let c = bump.center;
        let rho = bump.radius;

        // full-chord ray integral via the moment tables; falls back to
        // Gauss-Legendre only when the chord is truncated (x inside the
        // bump ball)
        // main scatter over fine sources; per-source and per-column
        // invariants hoisted so the innermost loop is a handful of flops
        // per rejected candidate
        let rho2 = rho * rho;
        for (y, wts) in &sources {
            let mut lo_i = [0usize; 3];
            let mut hi_i = [0isize; 3];
            let mut empty = false;
            for a in 0..3 {
                let lo = y[a].min(c[a] - rho) - 1e-12;
                let hi = y[a].max(c[a] + rho) + 1e-12;
                lo_i[a] = (((lo + 0.5 * grid.len()) / he).ceil().max(0.0)) as usize;
                hi_i[a] = ((hi + 0.5 * grid.len()) / he).floor() as isize;
                if hi_i[a] >= ne as isize {
                    hi_i[a] = ne as isize - 1;
                }
                if (lo_i[a] as isize) > hi_i[a] {
                    empty = true;
                }
            }
            if empty {
                continue;
            }
            let oc = [y[0] - c[0], y[1] - c[1], y[2] - c[2]];
            let oc2 = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2];
            let active_w: Vec<(usize, f64)> = wts
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(d, w)| (d, *w))
                .collect();
            for ix in lo_i[0]..=hi_i[0] as usize {
                let dx = grid.coord(ix * stride) - y[0];
                for iy in lo_i[1]..=hi_i[1] as usize {
                    let dy = grid.coord(iy * stride) - y[1];
                    let d2_xy = dx * dx + dy * dy;
                    let bd_xy = oc[0] * dx + oc[1] * dy;
                    let row = (ix * ne + iy) * ne;
                    let mut dz = grid.coord(lo_i[2] * stride) - y[2];
                    for iz in lo_i[2]..=hi_i[2] as usize {
                        let d2 = d2_xy + dz * dz;
                        let bd = bd_xy + oc[2] * dz;
                        // forward test and cross-multiplied impact test
                        if bd < 0.0 && d2 > r_in * r_in && oc2 * d2 - bd * bd < rho2 * d2 {
                            let dist = d2.sqrt();
                            let far_w = if dist >= r_loc {
                                1.0
                            } else {
                                1.0 - smoothstep((r_loc - dist) / (r_loc - r_in))
                            };
                            if far_w > 0.0 {
                                let inv_d = 1.0 / dist;
                                let b = bd * inv_d;
                                let p2 = oc2 - b * b;
                                let z0 = -b;
                                let half_w = (rho2 - p2).max(0.0).sqrt();
                                let ray = if z0 - half_w + 1e-14 >= dist {
                                    let (m0, m2) = bump.chord_moments(p2);
                                    (m2 + z0 * z0 * m0) * far_w
                                } else {
                                    // truncated chord: x inside the bump ball
                                    let z_lo = dist;
                                    let z_hi = z0 + half_w;
                                    if z_hi > z_lo {
                                        let half = 0.5 * (z_hi - z_lo);
                                        let mid = 0.5 * (z_hi + z_lo);
                                        let mut r = 0.0;
                                        for (xg, wg) in gl_x.iter().zip(&gl_w) {
                                            let z = mid + half * xg;
                                            let zi = z * inv_d;
                                            let pt = [
                                                y[0] + zi * dx,
                                                y[1] + zi * dy,
                                                y[2] + zi * dz,
                                            ];
                                            r += wg * bump.eval(&pt) * z * z;
                                        }
                                        r * half * far_w
                                    } else {
                                        0.0
                                    }
                                };
                                if ray != 0.0 {
                                    let base = ray / d2;
                                    let flat_e = row + iz;
                                    let f0 = dx * inv_d * base;
                                    let f1 = dy * inv_d * base;
                                    let f2 = dz * inv_d * base;
                                    for &(d, w) in &active_w {
                                        let cell = &mut acc[d][flat_e];
                                        cell[0] += w * f0;
                                        cell[1] += w * f1;
                                        cell[2] += w * f2;
                                    }
                                }
                            }
                        }
                        dz += he;
                    }
                }
            }
        }

        dt_scatter += t_scat.elapsed();
        let t_pol = std::time::Instant::now();
        // polar pass over the singular zone |y - x| <= r_loc: the kernel
        // singularity cancels against the polar Jacobian and the chord
        // moments give the one-sided ray integrals after a foot shift
        let pad = r_loc + h;
        for ix in 0..ne {
            let xx = grid.coord(ix * stride);
            for iy in 0..ne {
                let xy = grid.coord(iy * stride);
                for iz in 0..ne {
                    let xz = grid.coord(iz * stride);
                    let x = [xx, xy, xz];
                    if !patch.sector_contains(&x, pad) {
                        continue;
                    }
                    let flat_e = (ix * ne + iy) * ne + iz;
                    let xc = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
                    let dist_c2 = xc[0] * xc[0] + xc[1] * xc[1] + xc[2] * xc[2];
                    let dist_c = dist_c2.sqrt();
                    let inside_bump = dist_c < rho;
                    let mu_lo = if inside_bump {
                        -1.0
                    } else {
                        (1.0 - (rho / dist_c) * (rho / dist_c)).sqrt()
                    };
                    let axis = if dist_c == 0.0 {
                        [0.0, 0.0, 1.0]
                    } else {
                        [-xc[0] / dist_c, -xc[1] / dist_c, -xc[2] / dist_c]
                    };
                    let (e1, e2) = frame(&axis);
                    for (mu, wmu) in cap_mu.iter().zip(&cap_wmu) {
                        let m = 0.5 * ((1.0 + mu) + mu_lo * (1.0 - mu));
                        let wm = 0.5 * (1.0 - mu_lo) * wmu;
                        let sth = (1.0 - m * m).max(0.0).sqrt();
                        for pphi in 0..n_cap_phi {
                            let phi = 2.0 * std::f64::consts::PI * pphi as f64
                                / n_cap_phi as f64;
                            let (spp, cpp) = phi.sin_cos();
                            let u = [
                                m * axis[0] + sth * (cpp * e1[0] + spp * e2[0]),
                                m * axis[1] + sth * (cpp * e1[1] + spp * e2[1]),
                                m * axis[2] + sth * (cpp * e1[2] + spp * e2[2]),
                            ];
                            let wu = wm * 2.0 * std::f64::consts::PI / n_cap_phi as f64;
                            let b = xc[0] * u[0] + xc[1] * u[1] + xc[2] * u[2];
                            let p2 = dist_c2 - b * b;
                            if p2 >= rho * rho {
                                continue;
                            }
                            let z0 = -b;
                            let half_w = (rho * rho - p2).sqrt();
                            let (q0, q1, q2);
                            if z0 - half_w >= 0.0 {
                                // full chord ahead of x
                                let (m0, m2) = bump.chord_moments(p2);
                                q0 = m0;
                                q1 = z0 * m0;
                                q2 = m2 + z0 * z0 * m0;
                            } else {
                                // x inside the ball: integrate the forward part
                                let t_lo = 0.0f64;
                                let t_hi = z0 + half_w;
                                if t_hi <= t_lo {
                                    continue;
                                }
                                let half = 0.5 * (t_hi - t_lo);
                                let mid = 0.5 * (t_hi + t_lo);
                                let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                                for (xg, wg) in gl_x.iter().zip(&gl_w) {
                                    let tau = mid + half * xg;
                                    let pt = [
                                        x[0] + tau * u[0],
                                        x[1] + tau * u[1],
                                        x[2] + tau * u[2],
                                    ];
                                    let g = bump.eval(&pt) * wg;
                                    a0 += g;
                                    a1 += g * tau;
                                    a2 += g * tau * tau;
                                }
                                q0 = a0 * half;
                                q1 = a1 * half;
                                q2 = a2 * half;
                            }
                            if q0 == 0.0 && q1 == 0.0 && q2 == 0.0 {
                                continue;
                            }
                            for (sg, sw) in rx.iter().zip(&rw) {
                                let svar = 0.5 * r_loc * (1.0 + sg);
                                let chi = if svar <= r_in {
                                    1.0
                                } else {
                                    smoothstep((r_loc - svar) / (r_loc - r_in))
                                };
                                if chi == 0.0 {
                                    continue;
                                }
                                let ws = 0.5 * r_loc * sw * wu * chi;
                                let ypt =
                                    [x[0] - svar * u[0], x[1] - svar * u[1], x[2] - svar * u[2]];
                                let ray_i = q2 + 2.0 * svar * q1 + svar * svar * q0;
                                if ray_i == 0.0 {
                                    continue;
                                }
                                let (w_raw, wsum) = domain.weight_and_sum(p, &ypt);
                                let theta = if w_raw > 0.0 { w_raw / wsum } else { 0.0 };
                                for d in 0..nd {
                                    if !active[d] {
                                        continue;
                                    }
                                    let mut fval = 0.0;
                                    if theta > 0.0 {
                                        fval = theta * tricubic(&grid, flats[d], &ypt);
                                    }
                                    if p > 0 {
                                        let tr = &domain.transfers[p - 1];
                                        let g = tr.eval(&ypt);
                                        if g != 0.0 {
                                            fval += chain[d][p - 1] * g / transfer_norm[p - 1];
                                        }
                                    }
                                    if p + 1 < n_patch {
                                        let tr = &domain.transfers[p];
                                        let g = tr.eval(&ypt);
                                        if g != 0.0 {
                                            fval -= chain[d][p] * g / transfer_norm[p];
                                        }
                                    }
                                    if fval == 0.0 {
                                        continue;
                                    }
                                    let w = fval * ws * ray_i;
                                    let cell = &mut acc[d][flat_e];
                                    cell[0] += w * u[0];
                                    cell[1] += w * u[1];
                                    cell[2] += w * u[2];
                                }
                            }
                        }
                    }
                }
            }
        }
        dt_polar += t_pol.elapsed();
    }
    if std::env::var("BOGOVSKII_TIMINGS").is_ok() {
        eprintln!(
            "[bogovskii timings] total {:?} sources {dt_sources:?} scatter {dt_scatter:?} polar {dt_polar:?}",
            t_setup.elapsed()
        );
    }
    // upsample to the full lattice
    let mut out = Vec::with_capacity(nd);
    for d in 0..nd {
        let mut comps = Vec::with_capacity(3);
        for cidx in 0..3 {
            let coarse: Vec<f64> = acc[d].iter().map(|cell| cell[cidx]).collect();
            let mut full = ArrayD::<f64>::zeros(IxDyn(&grid.shape()));
            let flat = full.as_slice_mut().unwrap();
            if stride == 1 {
                flat.copy_from_slice(&coarse);
            } else {
                upsample(&coarse, ne, stride, flat);
            }
            comps.push(ScalarField::from_physical(grid, full));
        }
        out.push(VectorField::from_components(comps));
    }
    Ok(out)
}

/// Lattice points carrying any datum support, reused for partition
/// integrals and source collection.
fn collect_support_points(
    grid: &Grid,
    domain: &BogovskiiDomain,
    flats: &[&[f64]],
    active: &[bool],
) -> Vec<(usize, usize, usize)> {
    let n1 = grid.points();
    let coords: Vec<f64> = (0..n1).map(|i| grid.coord(i)).collect();
    let mut out = Vec::new();
    for i in 0..n1 {
        for j in 0..n1 {
            for k in 0..n1 {
                let idx = (i * n1 + j) * n1 + k;
                let mut any = false;
                for (d, flat) in flats.iter().enumerate() {
                    if active[d] && flat[idx] != 0.0 {
                        any = true;
                        break;
                    }
                }
                if any && domain.contains(&[coords[i], coords[j], coords[k]], grid.spacing()) {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}

/// Catmull-Rom cubic kernel weights for the four taps around `frac`.
fn cubic_weights(frac: f64) -> [f64; 4] {
    let t = frac;
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Tricubic (Catmull-Rom) interpolation of a physical lattice field; C1 in
/// the sample point, so quadratures over moving stencils stay smooth.
pub(crate) fn tricubic(grid: &Grid, flat: &[f64], x: &[f64; 3]) -> f64 {
    let n1 = grid.points();
    let h = grid.spacing();
    let mut base = [0isize; 3];
    let mut w = [[0.0f64; 4]; 3];
    for a in 0..3 {
        let pos = (x[a] + 0.5 * grid.len()) / h;
        let f = pos.floor();
        base[a] = f as isize - 1;
        w[a] = cubic_weights(pos - f);
    }
    let wrap = |i: isize| -> usize { i.rem_euclid(n1 as isize) as usize };
    let mut acc = 0.0;
    for di in 0..4 {
        let wi = w[0][di];
        if wi == 0.0 {
            continue;
        }
        let io = wrap(base[0] + di as isize) * n1;
        for dj in 0..4 {
            let wj = w[1][dj];
            if wj == 0.0 {
                continue;
            }
            let jo = (io + wrap(base[1] + dj as isize)) * n1;
            let mut line = 0.0;
            for dk in 0..4 {
                line += w[2][dk] * flat[jo + wrap(base[2] + dk as isize)];
            }
            acc += wi * wj * line;
        }
    }
    acc
}

/// Trilinear upsample of a strided eval lattice to the full lattice.
fn upsample(coarse: &[f64], ne: usize, stride: usize, out: &mut [f64]) {
    let n1 = ne * stride;
    for i in 0..n1 {
        let (i0, fi) = split_coarse(i, stride, ne);
        for j in 0..n1 {
            let (j0, fj) = split_coarse(j, stride, ne);
            for k in 0..n1 {
                let (k0, fk) = split_coarse(k, stride, ne);
                let mut val = 0.0;
                for di in 0..2 {
                    let wi = if di == 0 { 1.0 - fi } else { fi };
                    if wi == 0.0 {
                        continue;
                    }
                    for dj in 0..2 {
                        let wj = if dj == 0 { 1.0 - fj } else { fj };
                        if wj == 0.0 {
                            continue;
                        }
                        for dk in 0..2 {
                            let wk = if dk == 0 { 1.0 - fk } else { fk };
                            if wk == 0.0 {
                                continue;
                            }
                            let idx = (((i0 + di) % ne) * ne + (j0 + dj) % ne) * ne
                                + (k0 + dk) % ne;
                            val += wi * wj * wk * coarse[idx];
                        }
                    }
                }
                out[(i * n1 + j) * n1 + k] = val;
            }
        }
    }
}

fn split_coarse(i: usize, stride: usize, ne: usize) -> (usize, f64) {
    let i0 = (i / stride).min(ne - 1);
    let frac = (i % stride) as f64 / stride as f64;
    (i0, frac)
}

/// `||v||_{W^{k,q}(D)} / ||f||_{W^{k-1,q}(D)}` with Sobolev norms taken as
/// the max of derivative-order norms over the domain region.
pub fn bogovskii_estimate_ratio(
    f: &mut ScalarField,
    domain: &BogovskiiDomain,
    k: usize,
    q: f64,
    quad: &KernelQuad,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::Argument("estimate ratio needs k >= 1".into()));
    }
    if !(q > 1.0) || q.is_infinite() {
        return Err(Error::Argument("estimate ratio needs q in (1, inf)".into()));
    }
    let region = domain.region();
    let v = bogovskii_solve(f, domain, quad)?;
    let mut num: f64 = 0.0;
    for m in 0..=k {
        num = num.max(dk_lq_norm(&v, m, q, &region)?);
    }
    let mut den: f64 = 0.0;
    for m in 0..k {
        den = den.max(dk_lq_norm_scalar(f, m, q, &region)?);
    }
    if den == 0.0 {
        return Err(Error::Argument(
            "estimate ratio undefined for zero datum".into(),
        ));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_has_unit_lattice_integral() {
        let grid = Grid::new(3, 4.0, 32, true).unwrap();
        let b = Bump::new([0.3, -0.2, 0.1], 0.8);
        let integral = b.lattice_integral(&grid);
        assert!((integral - 1.0).abs() < 1e-2, "lattice integral {integral}");
        // radial quadrature check of the continuum normalisation
        let fine = crate::quad::integrate(
            |r: f64| {
                crate::shape::bump_profile(r * r / (0.8f64 * 0.8)) * r * r
                    / (0.8f64.powi(3) * crate::shape::bump_unit_integral(3))
            },
            0.0,
            0.8,
            96,
        ) * 4.0
            * std::f64::consts::PI;
        assert!((fine - 1.0).abs() < 1e-10, "continuum normalisation {fine}");
    }

    #[test]
    fn ball_domain_rejects_bad_radius() {
        assert!(BogovskiiDomain::ball(-1.0).is_err());
        assert!(BogovskiiDomain::ball(2.0).is_ok());
    }

    #[test]
    fn annulus_domain_builds_and_validates() {
        for r in [2.0f64, 4.0, 6.0] {
            let d = BogovskiiDomain::annulus(r - 1.0, r).unwrap();
            assert!(d.patches.len() >= 8, "R={r}: {} patches", d.patches.len());
            assert_eq!(d.transfers.len(), d.patches.len() - 1);
        }
        assert!(BogovskiiDomain::annulus(3.0, 2.0).is_err());
    }

    #[test]
    fn zero_datum_gives_zero_field() {
        let grid = Grid::new(3, 5.0, 16, true).unwrap();
        let mut f = ScalarField::zeros(grid);
        let dom = BogovskiiDomain::ball(2.0).unwrap();
        let mut v = bogovskii_solve(&mut f, &dom, &KernelQuad::default()).unwrap();
        assert_eq!(v.max_abs(), 0.0);
    }

    #[test]
    fn nonzero_mean_is_rejected() {
        let grid = Grid::new(3, 5.0, 16, true).unwrap();
        let mut f = ScalarField::sample(grid, |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if r2 < 1.0 {
                1.0
            } else {
                0.0
            }
        });
        let dom = BogovskiiDomain::ball(2.0).unwrap();
        let err = bogovskii_solve(&mut f, &dom, &KernelQuad::default());
        assert!(matches!(err, Err(Error::Compatibility(_))));
    }

    #[test]
    fn support_escaping_domain_is_rejected() {
        let grid = Grid::new(3, 8.0, 16, true).unwrap();
        let mut f = ScalarField::sample(grid, |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if r2 < 9.0 {
                x[0]
            } else {
                0.0
            }
        });
        let dom = BogovskiiDomain::ball(2.0).unwrap();
        let err = bogovskii_solve(&mut f, &dom, &KernelQuad::default());
        assert!(matches!(err, Err(Error::Domain(_))));
    }
}
