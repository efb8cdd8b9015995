use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hard cap on the spatial dimension; keeps index scratch on the stack.
pub const MAX_DIM: usize = 8;

/// Periodic computational box standing in for `R^n`: dimension `n`, side
/// length `len`, `points` samples per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    points: usize,
    len: f64,
    dealias: bool,
    #[serde(default = "default_max_deriv")]
    max_deriv: usize,
}

fn default_max_deriv() -> usize {
    4
}

impl Grid {
    pub fn new(n: usize, len: f64, points: usize, dealias: bool) -> Result<Self> {
        if n < 3 || n > MAX_DIM {
            return Err(Error::Grid(format!("dimension n={n} outside [3, {MAX_DIM}]")));
        }
        // powers of two are the fast path; the refinement suites also use
        // other even sizes (mixed-radix transforms handle them)
        if points < 8 || points % 2 != 0 {
            return Err(Error::Grid(format!(
                "points per axis must be even and >= 8, got {points}"
            )));
        }
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::Grid(format!("box side must be positive, got {len}")));
        }
        Ok(Grid {
            n,
            points,
            len,
            dealias,
            max_deriv: default_max_deriv(),
        })
    }

    pub fn with_max_deriv(mut self, k: usize) -> Self {
        self.max_deriv = k;
        self
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn dealias(&self) -> bool {
        self.dealias
    }

    pub fn max_deriv(&self) -> usize {
        self.max_deriv
    }

    /// Lattice spacing `h = L/N`.
    pub fn spacing(&self) -> f64 {
        self.len / self.points as f64
    }

    /// Cell volume `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.n as i32)
    }

    /// Total number of lattice points `N^n`.
    pub fn total_points(&self) -> usize {
        self.points.pow(self.n as u32)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.points; self.n]
    }

    /// Physical coordinate of lattice index `i` along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.len + i as f64 * self.spacing()
    }

    /// Signed integer mode of spectral index `i` along one axis.
    pub fn mode(&self, i: usize) -> i64 {
        let n = self.points as i64;
        let i = i as i64;
        if i <= n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Wavenumber table for one axis. `zero_nyquist` zeroes the `N/2` mode
    /// (the convention for derivatives).
    pub fn freq_table(&self, zero_nyquist: bool) -> Vec<f64> {
        let base = 2.0 * std::f64::consts::PI / self.len;
        (0..self.points)
            .map(|i| {
                if zero_nyquist && i == self.points / 2 {
                    0.0
                } else {
                    base * self.mode(i) as f64
                }
            })
            .collect()
    }

    /// True if the mode index passes the 2/3-rule cutoff on every axis.
    pub fn keep_mode(&self, idx: &[usize]) -> bool {
        let cutoff = self.points as i64 / 3;
        idx.iter().all(|&i| self.mode(i).abs() <= cutoff)
    }

    /// Largest wavenumber magnitude along an axis (used in solenoidality
    /// scales).
    pub fn max_freq(&self) -> f64 {
        std::f64::consts::PI * self.points as f64 / self.len
    }

    pub fn validate_region(&self, region: &Region) -> Result<()> {
        let max_r = match region {
            Region::WholeBox => return Ok(()),
            Region::Ball { radius } => *radius,
            Region::Annulus { outer, inner } => {
                if inner > outer {
                    return Err(Error::Region(format!(
                        "annulus inner radius {inner} exceeds outer radius {outer}"
                    )));
                }
                *outer
            }
            // The exterior region is measured inside the box, so its inner
            // radius must leave room.
            Region::Exterior { radius } => *radius,
        };
        if max_r >= 0.5 * self.len {
            return Err(Error::Region(format!(
                "region radius {max_r} does not fit inside the box (L/2 = {})",
                0.5 * self.len
            )));
        }
        Ok(())
    }
}

/// Origin-centred measurement region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
    Exterior { radius: f64 },
    WholeBox,
}

impl Region {
    pub fn ball(radius: f64) -> Self {
        Region::Ball { radius }
    }

    pub fn annulus(inner: f64, outer: f64) -> Self {
        Region::Annulus { inner, outer }
    }

    pub fn exterior(radius: f64) -> Self {
        Region::Exterior { radius }
    }

    /// Sharp membership test on a cell centre.
    pub fn contains(&self, x: &[f64]) -> bool {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match *self {
            Region::WholeBox => true,
            Region::Ball { radius } => r2 <= radius * radius,
            Region::Annulus { inner, outer } => r2 >= inner * inner && r2 <= outer * outer,
            Region::Exterior { radius } => r2 > radius * radius,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(Grid::new(2, 1.0, 16, true).is_err());
        assert!(Grid::new(3, 1.0, 15, true).is_err());
        assert!(Grid::new(3, 1.0, 4, true).is_err());
        assert!(Grid::new(3, 1.0, 48, true).is_ok());
        assert!(Grid::new(3, -1.0, 16, true).is_err());
        assert!(Grid::new(3, 8.0, 16, true).is_ok());
    }

    #[test]
    fn modes_wrap_and_nyquist_zeroes() {
        let g = Grid::new(3, 8.0, 16, true).unwrap();
        assert_eq!(g.mode(0), 0);
        assert_eq!(g.mode(1), 1);
        assert_eq!(g.mode(8), 8);
        assert_eq!(g.mode(9), -7);
        assert_eq!(g.mode(15), -1);
        let f = g.freq_table(true);
        assert_eq!(f[8], 0.0);
        let f = g.freq_table(false);
        assert!(f[8] > 0.0);
    }

    #[test]
    fn region_validation_respects_box() {
        let g = Grid::new(3, 8.0, 16, true).unwrap();
        assert!(g.validate_region(&Region::ball(3.9)).is_ok());
        assert!(g.validate_region(&Region::ball(4.0)).is_err());
        assert!(g.validate_region(&Region::annulus(3.0, 2.0)).is_err());
    }

    #[test]
    fn empty_annulus_contains_nothing_but_boundary() {
        let r = Region::annulus(2.0, 2.0);
        assert!(!r.contains(&[1.0, 0.0, 0.0]));
        assert!(!r.contains(&[2.5, 0.0, 0.0]));
        assert!(r.contains(&[2.0, 0.0, 0.0]));
    }
}
