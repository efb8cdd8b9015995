use super::fft::{fft_all_axes, FftDirection};
use super::grid::{Grid, Region, MAX_DIM};
use crate::sum::{max_by, pairwise_sum_by};
use crate::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;

/// Walk the flat row-major index space of an `n`-cube of side `len`,
/// maintaining the per-axis index odometer.
pub(crate) fn for_each_flat<F: FnMut(usize, &[usize])>(n: usize, len: usize, mut f: F) {
    let total = len.pow(n as u32);
    let mut idx = [0usize; MAX_DIM];
    for flat in 0..total {
        f(flat, &idx[..n]);
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] < len {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Decompose a flat row-major index into per-axis indices.
#[inline]
pub(crate) fn unflatten(mut flat: usize, n: usize, len: usize, out: &mut [usize; MAX_DIM]) {
    for a in (0..n).rev() {
        out[a] = flat % len;
        flat /= len;
    }
}

/// Walk the leading `n-1` axes; hands the flat offset of the row start and
/// the outer index tuple. The last axis is left to a contiguous inner loop,
/// which keeps multiplier passes memory-bound.
pub(crate) fn for_each_row<F: FnMut(usize, &[usize])>(n: usize, len: usize, mut f: F) {
    let rows = len.pow((n - 1) as u32);
    let mut idx = [0usize; MAX_DIM];
    for r in 0..rows {
        f(r * len, &idx[..n - 1]);
        for a in (0..n - 1).rev() {
            idx[a] += 1;
            if idx[a] < len {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Scalar samples on a [`Grid`], carried in physical and/or spectral form.
/// At least one representation is always present; conversions are cached
/// until a mutation drops the stale copy.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Grid,
    phys: Option<ArrayD<f64>>,
    spec: Option<ArrayD<Complex64>>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            phys: Some(ArrayD::zeros(IxDyn(&grid.shape()))),
            spec: None,
        }
    }

    pub fn from_physical(grid: Grid, phys: ArrayD<f64>) -> Self {
        assert_eq!(phys.shape(), grid.shape().as_slice());
        ScalarField {
            grid,
            phys: Some(phys),
            spec: None,
        }
    }

    pub fn from_spectral(grid: Grid, spec: ArrayD<Complex64>) -> Self {
        assert_eq!(spec.shape(), grid.shape().as_slice());
        ScalarField {
            grid,
            phys: None,
            spec: Some(spec),
        }
    }

    /// Sample `f(x)` at the cell centres.
    pub fn sample<F: FnMut(&[f64]) -> f64>(grid: Grid, mut f: F) -> Self {
        let coords: Vec<f64> = (0..grid.points()).map(|i| grid.coord(i)).collect();
        let mut data = ArrayD::zeros(IxDyn(&grid.shape()));
        let flat = data.as_slice_mut().unwrap();
        let mut x = [0.0f64; MAX_DIM];
        for_each_flat(grid.dim(), grid.points(), |i, idx| {
            for (a, &ia) in idx.iter().enumerate() {
                x[a] = coords[ia];
            }
            flat[i] = f(&x[..grid.dim()]);
        });
        ScalarField {
            grid,
            phys: Some(data),
            spec: None,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ensure_physical(&mut self) {
        if self.phys.is_none() {
            let mut buf = self.spec.as_ref().unwrap().clone();
            fft_all_axes(&mut buf, FftDirection::Inverse);
            let phys = buf.mapv(|c| c.re);
            self.phys = Some(phys);
        }
    }

    pub fn ensure_spectral(&mut self) {
        if self.spec.is_none() {
            let phys = self.phys.as_ref().unwrap();
            let mut buf = phys.mapv(|v| Complex64::new(v, 0.0));
            fft_all_axes(&mut buf, FftDirection::Forward);
            self.spec = Some(buf);
        }
    }

    /// Drop the physical copy (keep spectral) to save memory.
    pub fn drop_physical(&mut self) {
        if self.spec.is_some() {
            self.phys = None;
        }
    }

    /// Drop the spectral copy (keep physical) to save memory.
    pub fn drop_spectral(&mut self) {
        if self.phys.is_some() {
            self.spec = None;
        }
    }

    /// Physical samples; computes the inverse transform if needed.
    pub fn physical(&mut self) -> &ArrayD<f64> {
        self.ensure_physical();
        self.phys.as_ref().unwrap()
    }

    /// Spectral coefficients; computes the forward transform if needed.
    pub fn spectral(&mut self) -> &ArrayD<Complex64> {
        self.ensure_spectral();
        self.spec.as_ref().unwrap()
    }

    /// Physical samples without conversion; panics if absent.
    pub fn phys_ref(&self) -> &ArrayD<f64> {
        self.phys.as_ref().expect("field has no physical representation")
    }

    pub fn spec_ref(&self) -> &ArrayD<Complex64> {
        self.spec.as_ref().expect("field has no spectral representation")
    }

    /// Mutable physical access; invalidates the spectral copy.
    pub fn phys_mut(&mut self) -> &mut ArrayD<f64> {
        self.ensure_physical();
        self.spec = None;
        self.phys.as_mut().unwrap()
    }

    /// Mutable spectral access; invalidates the physical copy.
    pub fn spec_mut(&mut self) -> &mut ArrayD<Complex64> {
        self.ensure_spectral();
        self.phys = None;
        self.spec.as_mut().unwrap()
    }

    pub fn to_physical(mut self) -> Self {
        self.ensure_physical();
        self.spec = None;
        self
    }

    pub fn to_spectral(mut self) -> Self {
        self.ensure_spectral();
        self.phys = None;
        self
    }

    /// Apply a spectral multiplier `m(k)` where `k` is the wavenumber vector.
    /// `zero_nyquist` selects the differentiation convention for the tables.
    /// Generic slow path; the hot operators below use separable tables.
    pub fn multiplier_map<F: Fn(&[f64]) -> Complex64>(&self, zero_nyquist: bool, m: F) -> Self {
        let grid = self.grid;
        let mut out = self.clone();
        out.ensure_spectral();
        out.phys = None;
        let table = grid.freq_table(zero_nyquist);
        let spec = out.spec.as_mut().unwrap().as_slice_mut().unwrap();
        let mut k = [0.0f64; MAX_DIM];
        for_each_flat(grid.dim(), grid.points(), |i, idx| {
            for (a, &ia) in idx.iter().enumerate() {
                k[a] = table[ia];
            }
            spec[i] *= m(&k[..grid.dim()]);
        });
        out
    }

    /// Scale each mode by a real factor that is a function of `|k|^2`,
    /// evaluated through per-axis `k^2` tables.
    fn real_radial_multiplier_in_place<F: Fn(f64) -> f64>(&mut self, zero_nyquist: bool, m: F) {
        let grid = self.grid;
        self.ensure_spectral();
        self.phys = None;
        let n = grid.dim();
        let len = grid.points();
        let k2_table: Vec<f64> = grid
            .freq_table(zero_nyquist)
            .iter()
            .map(|k| k * k)
            .collect();
        let spec = self.spec.as_mut().unwrap().as_slice_mut().unwrap();
        for_each_row(n, len, |base, idx| {
            let mut k2p = 0.0;
            for (a, &ia) in idx.iter().enumerate() {
                let _ = a;
                k2p += k2_table[ia];
            }
            let row = &mut spec[base..base + len];
            for (i, v) in row.iter_mut().enumerate() {
                *v *= m(k2p + k2_table[i]);
            }
        });
    }

    /// Heat semigroup `e^{t Laplacian}`: spectral scaling by `exp(-t |k|^2)`.
    /// The Gaussian factor is separable, so it reduces to per-axis tables.
    pub fn heat_semigroup(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::Argument(format!("semigroup time must be >= 0, got {t}")));
        }
        let mut out = self.clone();
        out.heat_in_place(t);
        Ok(out)
    }

    pub(crate) fn heat_in_place(&mut self, t: f64) {
        let grid = self.grid;
        self.ensure_spectral();
        self.phys = None;
        let n = grid.dim();
        let len = grid.points();
        let table: Vec<f64> = grid
            .freq_table(false)
            .iter()
            .map(|k| (-t * k * k).exp())
            .collect();
        let spec = self.spec.as_mut().unwrap().as_slice_mut().unwrap();
        for_each_row(n, len, |base, idx| {
            let mut prefix = 1.0;
            for &ia in idx {
                prefix *= table[ia];
            }
            let row = &mut spec[base..base + len];
            for (i, v) in row.iter_mut().enumerate() {
                *v *= prefix * table[i];
            }
        });
    }

    /// Spectral derivative by the multi-index `index`; Nyquist rows zeroed.
    pub fn derivative(&self, index: &[usize]) -> Result<Self> {
        if index.len() != self.grid.dim() {
            return Err(Error::Argument(format!(
                "multi-index has {} entries for dimension {}",
                index.len(),
                self.grid.dim()
            )));
        }
        let order: usize = index.iter().sum();
        if order > self.grid.max_deriv() {
            return Err(Error::Argument(format!(
                "derivative order {order} exceeds configured maximum {}",
                self.grid.max_deriv()
            )));
        }
        let grid = self.grid;
        let table = grid.freq_table(true);
        // per-axis complex factor tables (i k)^m
        let axis_tables: Vec<Vec<Complex64>> = (0..grid.dim())
            .map(|a| {
                table
                    .iter()
                    .map(|&k| Complex64::new(0.0, k).powu(index[a] as u32))
                    .collect()
            })
            .collect();
        let mut out = self.clone();
        out.ensure_spectral();
        out.phys = None;
        let n = grid.dim();
        let len = grid.points();
        let spec = out.spec.as_mut().unwrap().as_slice_mut().unwrap();
        let last = &axis_tables[n - 1];
        for_each_row(n, len, |base, idx| {
            let mut prefix = Complex64::new(1.0, 0.0);
            for (a, &ia) in idx.iter().enumerate() {
                prefix *= axis_tables[a][ia];
            }
            let row = &mut spec[base..base + len];
            for (i, v) in row.iter_mut().enumerate() {
                *v *= prefix * last[i];
            }
        });
        Ok(out)
    }

    /// Spectral Laplacian (differentiation convention on the tables).
    pub fn laplacian(&self) -> Self {
        let mut out = self.clone();
        out.real_radial_multiplier_in_place(true, |k2| -k2);
        out
    }

    /// Solve `-Laplacian p = self` spectrally with the zero-mean convention;
    /// modes with vanishing table wavenumber are zeroed.
    pub fn neg_inv_laplacian(&self) -> Self {
        let mut out = self.clone();
        out.real_radial_multiplier_in_place(true, |k2| if k2 == 0.0 { 0.0 } else { 1.0 / k2 });
        out
    }

    /// Zero every mode outside the 2/3-rule band.
    pub fn dealias_in_place(&mut self) {
        let grid = self.grid;
        self.ensure_spectral();
        self.phys = None;
        let len = grid.points();
        let cutoff = len as i64 / 3;
        let bad: Vec<bool> = (0..len).map(|i| grid.mode(i).abs() > cutoff).collect();
        let zero = Complex64::new(0.0, 0.0);
        let spec = self.spec.as_mut().unwrap().as_slice_mut().unwrap();
        for_each_row(grid.dim(), len, |base, idx| {
            let row = &mut spec[base..base + len];
            if idx.iter().any(|&ia| bad[ia]) {
                row.fill(zero);
            } else {
                for (i, v) in row.iter_mut().enumerate() {
                    if bad[i] {
                        *v = zero;
                    }
                }
            }
        });
    }

    /// Pointwise physical product; the result is truncated by the 2/3 rule
    /// when the grid has dealiasing on.
    pub fn product(&mut self, other: &mut ScalarField) -> ScalarField {
        let grid = self.grid;
        let a = self.physical();
        let b = other.physical();
        let mut data = a.clone();
        data.zip_mut_with(b, |x, &y| *x *= y);
        let mut out = ScalarField::from_physical(grid, data);
        if grid.dealias() {
            out.dealias_in_place();
            out.ensure_physical();
        }
        out
    }

    /// In-place `self += c * other`, in physical space.
    pub fn add_scaled(&mut self, other: &mut ScalarField, c: f64) {
        let b = other.physical().clone();
        let a = self.phys_mut();
        a.zip_mut_with(&b, |x, &y| *x += c * y);
    }

    /// In-place `self += c * other` on spectral coefficients.
    pub fn add_spectral_scaled(&mut self, other: &mut ScalarField, c: Complex64) {
        other.ensure_spectral();
        self.ensure_spectral();
        self.phys = None;
        let b = other.spec_ref();
        self.spec
            .as_mut()
            .unwrap()
            .zip_mut_with(b, |x, &y| *x += c * y);
    }

    pub fn scale_in_place(&mut self, c: f64) {
        match (&mut self.phys, &mut self.spec) {
            (Some(p), s) => {
                p.mapv_inplace(|v| v * c);
                if let Some(s) = s {
                    s.mapv_inplace(|v| v * c);
                }
            }
            (None, Some(s)) => s.mapv_inplace(|v| v * c),
            (None, None) => unreachable!(),
        }
    }

    /// `L^q` norm over a region by midpoint quadrature with sharp masking.
    /// `q` may be `f64::INFINITY`.
    pub fn lq_norm(&mut self, q: f64, region: &Region) -> Result<f64> {
        if !(q >= 1.0) {
            return Err(Error::Argument(format!("q must be in [1, inf], got {q}")));
        }
        self.grid.validate_region(region)?;
        let grid = self.grid;
        let n = grid.dim();
        let len = grid.points();
        let coords: Vec<f64> = (0..len).map(|i| grid.coord(i)).collect();
        let flat = self.physical().as_slice().unwrap();
        let masked_val = |i: usize| -> Option<f64> {
            let mut idx = [0usize; MAX_DIM];
            unflatten(i, n, len, &mut idx);
            let mut x = [0.0f64; MAX_DIM];
            for a in 0..n {
                x[a] = coords[idx[a]];
            }
            if region.contains(&x[..n]) {
                Some(flat[i])
            } else {
                None
            }
        };
        if q.is_infinite() {
            let m = max_by(flat.len(), |i| masked_val(i).map_or(0.0, f64::abs));
            return Ok(m.max(0.0));
        }
        let cell = grid.cell_volume();
        let total = if q == 2.0 {
            pairwise_sum_by(flat.len(), |i| masked_val(i).map_or(0.0, |v| v * v))
        } else if q == 1.0 {
            pairwise_sum_by(flat.len(), |i| masked_val(i).map_or(0.0, f64::abs))
        } else {
            pairwise_sum_by(flat.len(), |i| {
                masked_val(i).map_or(0.0, |v| v.abs().powf(q))
            })
        };
        Ok((total * cell).powf(1.0 / q))
    }

    /// Discrete `L^2` inner product (physical samples, cell-volume weight).
    pub fn l2_inner(&mut self, other: &mut ScalarField) -> f64 {
        let cell = self.grid.cell_volume();
        let a = self.physical().as_slice().unwrap().to_vec();
        let b = other.physical().as_slice().unwrap();
        pairwise_sum_by(a.len(), |i| a[i] * b[i]) * cell
    }

    /// Parseval pairing: `L^2` norm computed from spectral coefficients.
    pub fn l2_norm_spectral(&mut self) -> f64 {
        let grid = self.grid;
        let total = grid.total_points() as f64;
        let spec = self.spectral().as_slice().unwrap();
        let s = pairwise_sum_by(spec.len(), |i| spec[i].norm_sqr());
        (s * grid.len().powi(grid.dim() as i32) / (total * total)).sqrt()
    }

    pub fn max_abs(&mut self) -> f64 {
        let flat = self.physical().as_slice().unwrap();
        max_by(flat.len(), |i| flat[i].abs()).max(0.0)
    }
}

/// `n`-component vector field sharing one grid.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Grid,
    comps: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            grid,
            comps: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn from_components(comps: Vec<ScalarField>) -> Self {
        assert!(!comps.is_empty());
        let grid = *comps[0].grid();
        assert_eq!(comps.len(), grid.dim());
        VectorField { grid, comps }
    }

    /// Sample a vector-valued function at the cell centres.
    pub fn sample<F: FnMut(&[f64], usize) -> f64>(grid: Grid, mut f: F) -> Self {
        let mut comps = Vec::with_capacity(grid.dim());
        for c in 0..grid.dim() {
            comps.push(ScalarField::sample(grid, |x| f(x, c)));
        }
        VectorField { grid, comps }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn comp(&self, c: usize) -> &ScalarField {
        &self.comps[c]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut ScalarField {
        &mut self.comps[c]
    }

    pub fn comps_mut(&mut self) -> &mut [ScalarField] {
        &mut self.comps
    }

    pub fn into_components(self) -> Vec<ScalarField> {
        self.comps
    }

    pub fn map<F: Fn(&ScalarField) -> ScalarField>(&self, f: F) -> Self {
        VectorField {
            grid: self.grid,
            comps: self.comps.iter().map(f).collect(),
        }
    }

    pub fn ensure_physical(&mut self) {
        for c in &mut self.comps {
            c.ensure_physical();
        }
    }

    pub fn ensure_spectral(&mut self) {
        for c in &mut self.comps {
            c.ensure_spectral();
        }
    }

    pub fn drop_spectral(&mut self) {
        for c in &mut self.comps {
            c.drop_spectral();
        }
    }

    pub fn drop_physical(&mut self) {
        for c in &mut self.comps {
            c.drop_physical();
        }
    }

    pub fn heat_semigroup(&self, t: f64) -> Result<Self> {
        let comps = self
            .comps
            .iter()
            .map(|c| c.heat_semigroup(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorField::from_components(comps))
    }

    pub fn derivative(&self, index: &[usize]) -> Result<Self> {
        let comps = self
            .comps
            .iter()
            .map(|c| c.derivative(index))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorField::from_components(comps))
    }

    pub fn laplacian(&self) -> Self {
        self.map(|c| c.laplacian())
    }

    pub fn dealias_in_place(&mut self) {
        for c in &mut self.comps {
            c.dealias_in_place();
        }
    }

    pub fn add_scaled(&mut self, other: &mut VectorField, c: f64) {
        for (a, b) in self.comps.iter_mut().zip(other.comps.iter_mut()) {
            a.add_scaled(b, c);
        }
    }

    pub fn add_spectral_scaled(&mut self, other: &mut VectorField, c: Complex64) {
        for (a, b) in self.comps.iter_mut().zip(other.comps.iter_mut()) {
            a.add_spectral_scaled(b, c);
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for a in &mut self.comps {
            a.scale_in_place(c);
        }
    }

    /// Leray projection onto divergence-free fields. The zero mode (and any
    /// mode whose table wavenumber vanishes) passes through unchanged.
    pub fn leray_project(&mut self) -> VectorField {
        let grid = self.grid;
        let n = grid.dim();
        self.ensure_spectral();
        let table = grid.freq_table(true);
        let mut out_specs: Vec<ArrayD<Complex64>> = self
            .comps
            .iter()
            .map(|c| c.spec_ref().clone())
            .collect();
        {
            let len = grid.points();
            let mut slices: Vec<&mut [Complex64]> = out_specs
                .iter_mut()
                .map(|s| s.as_slice_mut().unwrap())
                .collect();
            let mut k = [0.0f64; MAX_DIM];
            for_each_row(n, len, |base, idx| {
                let mut k2p = 0.0;
                for (a, &ia) in idx.iter().enumerate() {
                    k[a] = table[ia];
                    k2p += k[a] * k[a];
                }
                for i in 0..len {
                    let kl = table[i];
                    let k2 = k2p + kl * kl;
                    if k2 == 0.0 {
                        continue;
                    }
                    k[n - 1] = kl;
                    let mut dot = Complex64::new(0.0, 0.0);
                    for (c, s) in slices.iter().enumerate() {
                        dot += s[base + i] * k[c];
                    }
                    let p = dot / k2;
                    for (c, s) in slices.iter_mut().enumerate() {
                        s[base + i] -= k[c] * p;
                    }
                }
            });
        }
        VectorField::from_components(
            out_specs
                .into_iter()
                .map(|s| ScalarField::from_spectral(grid, s))
                .collect(),
        )
    }

    /// Spectral divergence (differentiation convention).
    pub fn divergence(&mut self) -> ScalarField {
        let grid = self.grid;
        let n = grid.dim();
        self.ensure_spectral();
        let table = grid.freq_table(true);
        let mut out = ArrayD::<Complex64>::zeros(IxDyn(&grid.shape()));
        {
            let len = grid.points();
            let out_flat = out.as_slice_mut().unwrap();
            let slices: Vec<&[Complex64]> = self
                .comps
                .iter()
                .map(|c| c.spec_ref().as_slice().unwrap())
                .collect();
            let mut k = [0.0f64; MAX_DIM];
            for_each_row(n, len, |base, idx| {
                for (a, &ia) in idx.iter().enumerate() {
                    k[a] = table[ia];
                }
                for i in 0..len {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (c, s) in slices.iter().enumerate().take(n - 1) {
                        acc += s[base + i] * k[c];
                    }
                    acc += slices[n - 1][base + i] * table[i];
                    // multiply by i k: (i k)(a+bi) = -k b + i k a
                    out_flat[base + i] = Complex64::new(-acc.im, acc.re);
                }
            });
        }
        ScalarField::from_spectral(grid, out)
    }

    /// Max spectral divergence relative to the solenoidality scale
    /// `max|u| * 2 pi N / L`; returns 0 for the zero field.
    pub fn max_div_relative(&mut self) -> f64 {
        let scale = {
            let mut m = 0.0f64;
            for c in &mut self.comps {
                m = m.max(c.max_abs());
            }
            m * 2.0 * self.grid.max_freq()
        };
        if scale == 0.0 {
            return 0.0;
        }
        let mut div = self.divergence();
        div.max_abs() / scale
    }

    /// Componentwise max of `L^q` norms (the sup-over-components convention).
    pub fn lq_norm(&mut self, q: f64, region: &Region) -> Result<f64> {
        let mut m = 0.0f64;
        for c in &mut self.comps {
            m = m.max(c.lq_norm(q, region)?);
        }
        Ok(m)
    }

    pub fn max_abs(&mut self) -> f64 {
        let mut m = 0.0f64;
        for c in &mut self.comps {
            m = m.max(c.max_abs());
        }
        m
    }

    pub fn l2_norm(&mut self) -> Result<f64> {
        self.lq_norm(2.0, &Region::WholeBox)
    }
}

/// All multi-indices of total order `k` in dimension `n`.
pub fn multi_indices(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, k: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 1 {
            prefix.push(k);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for j in 0..=k {
            prefix.push(j);
            go(n - 1, k - j, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(n, k, &mut Vec::new(), &mut out);
    out
}

/// `max_{|I|=k, j} || D^I u_j ||_{L^q(region)}` for a scalar field.
pub fn dk_lq_norm_scalar(u: &ScalarField, k: usize, q: f64, region: &Region) -> Result<f64> {
    let mut m = 0.0f64;
    for index in multi_indices(u.grid().dim(), k) {
        let mut d = u.derivative(&index)?;
        m = m.max(d.lq_norm(q, region)?);
    }
    Ok(m)
}

/// `max_{|I|=k, j} || D^I u_j ||_{L^q(region)}` for a vector field.
pub fn dk_lq_norm(u: &VectorField, k: usize, q: f64, region: &Region) -> Result<f64> {
    let mut m = 0.0f64;
    for c in 0..u.dim() {
        m = m.max(dk_lq_norm_scalar(u.comp(c), k, q, region)?);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(3, 8.0, 16, true).unwrap()
    }

    #[test]
    fn roundtrip_physical_spectral_physical() {
        let g = grid();
        let mut f = ScalarField::sample(g, |x| (2.0 * std::f64::consts::PI * x[0] / 8.0).sin());
        let orig = f.physical().clone();
        f.ensure_spectral();
        f.phys = None;
        let back = f.physical();
        let mut max_rel = 0.0f64;
        let scale = orig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in orig.iter().zip(back.iter()) {
            max_rel = max_rel.max((a - b).abs() / scale);
        }
        assert!(max_rel < 1e-12, "roundtrip relative error {max_rel}");
    }

    #[test]
    fn gradient_field_is_annihilated_by_projection() {
        let g = grid();
        let psi = ScalarField::sample(g, |x| {
            let c = 2.0 * std::f64::consts::PI / 8.0;
            (c * x[0]).sin() * (2.0 * c * x[1]).cos() + (c * x[2]).sin()
        });
        let comps: Vec<ScalarField> = (0..3)
            .map(|a| {
                let mut index = vec![0usize; 3];
                index[a] = 1;
                psi.derivative(&index).unwrap()
            })
            .collect();
        let mut grad = VectorField::from_components(comps);
        let mut proj = grad.leray_project();
        let residual = proj.max_abs();
        let scale = grad.max_abs();
        assert!(residual <= 1e-12 * scale.max(1.0), "residual {residual}");
    }

    #[test]
    fn solenoidal_mode_is_projection_fixed_point() {
        let g = grid();
        let c = 2.0 * std::f64::consts::PI / 8.0;
        let mut u = VectorField::sample(g, |x, comp| {
            if comp == 0 {
                (c * x[1]).sin()
            } else {
                0.0
            }
        });
        let before = u.clone();
        let mut proj = u.leray_project();
        let mut diff = proj.clone();
        diff.add_scaled(&mut before.clone(), -1.0);
        let rel = diff.max_abs() / proj.max_abs();
        assert!(rel < 1e-12, "fixed point violated: {rel}");
    }

    #[test]
    fn projection_is_idempotent_on_random_fields() {
        let g = grid();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED);
        let mut u = VectorField::sample(g, |_, _| rng.random_range(-1.0..1.0));
        let mut p1 = u.leray_project();
        let mut p2 = p1.leray_project();
        let mut diff = p2.clone();
        diff.add_scaled(&mut p1, -1.0);
        assert!(diff.max_abs() <= 1e-12 * p2.max_abs().max(1.0));
        // spectral divergence vanishes at coefficient level
        assert!(p2.max_div_relative() < 1e-12);
    }

    #[test]
    fn heat_semigroup_laws() {
        let g = grid();
        let mut u = ScalarField::sample(g, |x| {
            (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()
        });
        // identity at t = 0
        let mut id = u.heat_semigroup(0.0).unwrap();
        let mut diff = id.clone();
        diff.add_scaled(&mut u, -1.0);
        assert!(diff.max_abs() < 1e-13);
        // semigroup law
        let mut a = u
            .heat_semigroup(0.3)
            .unwrap()
            .heat_semigroup(0.5)
            .unwrap();
        let mut b = u.heat_semigroup(0.8).unwrap();
        let mut d = a.clone();
        d.add_scaled(&mut b, -1.0);
        let rel = d.max_abs() / b.max_abs();
        assert!(rel < 1e-12, "semigroup law violated: {rel}");
        // negative time rejected
        assert!(u.heat_semigroup(-1.0).is_err());
        // L2 contraction
        let n0 = u.l2_norm_spectral();
        let n1 = a.l2_norm_spectral();
        assert!(n1 <= n0 * (1.0 + 1e-14));
    }

    #[test]
    fn single_mode_heat_decay_matches_multiplier() {
        let g = grid();
        let c = 2.0 * std::f64::consts::PI / 8.0;
        let u = ScalarField::sample(g, |x| (c * x[0]).cos());
        let mut evolved = u.heat_semigroup(1.0).unwrap();
        let mut expected = ScalarField::sample(g, |x| (-c * c).exp() * (c * x[0]).cos());
        let mut d = evolved.clone();
        d.add_scaled(&mut expected, -1.0);
        assert!(d.max_abs() / expected.max_abs() < 1e-12);
    }

    #[test]
    fn derivative_of_constant_vanishes_and_eigenfunction_scales() {
        let g = grid();
        let c = ScalarField::sample(g, |_| 3.5);
        let mut d = c.derivative(&[1, 0, 0]).unwrap();
        assert!(d.max_abs() < 1e-12);

        let freq = 2.0 * std::f64::consts::PI / 8.0;
        let u = ScalarField::sample(g, |x| (freq * x[0]).sin());
        let mut d2 = u.derivative(&[2, 0, 0]).unwrap();
        let mut expected = ScalarField::sample(g, |x| -(freq * freq) * (freq * x[0]).sin());
        let mut diff = d2.clone();
        diff.add_scaled(&mut expected, -1.0);
        assert!(diff.max_abs() / expected.max_abs() < 1e-12);
    }

    #[test]
    fn mixed_partials_commute() {
        let g = grid();
        let c = 2.0 * std::f64::consts::PI / 8.0;
        let u = ScalarField::sample(g, |x| (c * x[0]).sin() * (c * x[1]).cos());
        let mut a = u.derivative(&[1, 0, 0]).unwrap().derivative(&[0, 1, 0]).unwrap();
        let mut b = u.derivative(&[0, 1, 0]).unwrap().derivative(&[1, 0, 0]).unwrap();
        let mut d = a.clone();
        d.add_scaled(&mut b, -1.0);
        assert!(d.max_abs() / b.max_abs().max(1e-300) < 1e-12);
    }

    #[test]
    fn derivative_order_cap_enforced() {
        let g = grid();
        let u = ScalarField::zeros(g);
        assert!(u.derivative(&[5, 0, 0]).is_err());
        assert!(u.derivative(&[2, 2, 1]).is_err());
        assert!(u.derivative(&[2, 1, 1]).is_ok());
    }

    #[test]
    fn parseval_holds() {
        let g = grid();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut u = ScalarField::sample(g, |_| rng.random_range(-1.0..1.0));
        let phys_norm = u.lq_norm(2.0, &Region::WholeBox).unwrap();
        let spec_norm = u.l2_norm_spectral();
        assert!((phys_norm - spec_norm).abs() / phys_norm < 1e-10);
    }

    #[test]
    fn projection_self_adjoint() {
        let g = grid();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut u = VectorField::sample(g, |_, _| rng.random_range(-1.0..1.0));
        let mut v = VectorField::sample(g, |_, _| rng.random_range(-1.0..1.0));
        let mut pu = u.leray_project();
        let mut pv = v.leray_project();
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for c in 0..3 {
            lhs += pu.comp_mut(c).l2_inner(v.comp_mut(c));
            rhs += u.comp_mut(c).l2_inner(pv.comp_mut(c));
        }
        assert!((lhs - rhs).abs() / lhs.abs().max(1e-300) < 1e-10);
    }

    #[test]
    fn whole_box_l1_of_ones_is_volume() {
        let g = grid();
        let mut u = ScalarField::sample(g, |_| 1.0);
        let v = u.lq_norm(1.0, &Region::WholeBox).unwrap();
        assert!((v - 512.0).abs() < 1e-9);
    }

    #[test]
    fn empty_annulus_norm_is_zero() {
        let g = grid();
        let mut u = ScalarField::sample(g, |_| 1.0);
        // degenerate annulus: measure-zero mask on cell centres
        let v = u.lq_norm(2.0, &Region::annulus(2.0 + 1e-9, 2.0 + 1e-9)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn multi_index_enumeration_counts() {
        assert_eq!(multi_indices(3, 0), vec![vec![0, 0, 0]]);
        assert_eq!(multi_indices(3, 1).len(), 3);
        assert_eq!(multi_indices(3, 2).len(), 6);
    }
}
