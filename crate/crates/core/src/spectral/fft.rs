use ndarray::ArrayD;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FftDirection {
    Forward,
    Inverse,
}

fn plan(len: usize, dir: FftDirection) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, FftDirection), Arc<dyn Fft<f64>>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((len, dir))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            match dir {
                FftDirection::Forward => planner.plan_fft_forward(len),
                FftDirection::Inverse => planner.plan_fft_inverse(len),
            }
        })
        .clone()
}

/// In-place complex FFT along every axis of a row-major hypercube array.
/// Forward is unnormalised; inverse divides by `N^n` at the end.
pub fn fft_all_axes(data: &mut ArrayD<Complex64>, dir: FftDirection) {
    let shape: Vec<usize> = data.shape().to_vec();
    let n_axes = shape.len();
    let len = shape[0];
    debug_assert!(shape.iter().all(|&s| s == len));
    let fft = plan(len, dir);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let flat = data
        .as_slice_mut()
        .expect("field storage must be contiguous row-major");

    // Last axis: lanes are contiguous.
    for lane in flat.chunks_exact_mut(len) {
        fft.process_with_scratch(lane, &mut scratch);
    }

    // Remaining axes: gather strided lanes through a scratch buffer.
    let mut lane_buf = vec![Complex64::default(); len];
    for axis in (0..n_axes.saturating_sub(1)).rev() {
        // stride between consecutive entries of a lane along `axis`
        let stride = len.pow((n_axes - 1 - axis) as u32);
        let outer = len.pow(axis as u32);
        for o in 0..outer {
            let base_o = o * len * stride;
            for i in 0..stride {
                let base = base_o + i;
                for k in 0..len {
                    lane_buf[k] = flat[base + k * stride];
                }
                fft.process_with_scratch(&mut lane_buf, &mut scratch);
                for k in 0..len {
                    flat[base + k * stride] = lane_buf[k];
                }
            }
        }
    }

    if dir == FftDirection::Inverse {
        let norm = 1.0 / (flat.len() as f64);
        for v in flat.iter_mut() {
            *v *= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn roundtrip_recovers_signal() {
        let shape = IxDyn(&[8, 8, 8]);
        let mut data = ArrayD::from_shape_fn(shape.clone(), |ix| {
            Complex64::new((ix[0] as f64).sin() + ix[1] as f64 * 0.1 + ix[2] as f64, 0.0)
        });
        let orig = data.clone();
        fft_all_axes(&mut data, FftDirection::Forward);
        fft_all_axes(&mut data, FftDirection::Inverse);
        let max_err = data
            .iter()
            .zip(orig.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-12, "roundtrip error {max_err}");
    }

    #[test]
    fn forward_of_single_mode_is_delta() {
        // u(x) = exp(i 2pi j x / N) along the last axis -> single spectral bin
        let n = 16;
        let shape = IxDyn(&[n, n, n]);
        let j = 3usize;
        let mut data = ArrayD::from_shape_fn(shape, |ix| {
            let phase = 2.0 * std::f64::consts::PI * (j * ix[2]) as f64 / n as f64;
            Complex64::new(phase.cos(), phase.sin())
        });
        fft_all_axes(&mut data, FftDirection::Forward);
        let peak = data[[0, 0, j]].norm();
        assert!((peak - (n * n * n) as f64).abs() < 1e-6);
        let off = data[[0, 0, j + 1]].norm();
        assert!(off < 1e-6);
    }
}
