//! Grids, discrete transforms, Fourier-multiplier calculus, Leray projection,
//! derivatives and region-restricted `L^q` norms.
//!
//! Conventions:
//! - The box is `[-L/2, L/2)^n` sampled at `N` points per axis,
//!   `x_i = -L/2 + i h` with `h = L/N`; the origin sits on the lattice.
//! - Forward transforms are unnormalised; the inverse carries `1/N^n`.
//! - Wavenumbers are `2 pi / L` multiples. The Nyquist mode is treated as
//!   zero when differentiating, so odd derivatives stay conjugate-symmetric.
//! - Reductions use fixed-tree pairwise summation (see [`crate::sum`]), so
//!   norms are bit-reproducible and independent of thread count.
//! - With `dealias` on, product results are truncated by the 2/3 rule.
//!   Evolution states are kept band-limited; sampled data (cutoffs) is not
//!   pre-truncated.

mod fft;
mod field;
mod grid;
mod io;

pub use field::{dk_lq_norm, dk_lq_norm_scalar, multi_indices, ScalarField, VectorField};

/// Row-major walk of the leading axes with a contiguous last-axis row,
/// shared by the crate's multiplier kernels.
pub(crate) use field::for_each_row;
pub use grid::{Grid, Region, MAX_DIM};
pub use io::{read_scalar, read_vector, write_scalar, write_vector};

#[allow(unused_imports)]
pub(crate) use fft::{fft_all_axes, FftDirection};
