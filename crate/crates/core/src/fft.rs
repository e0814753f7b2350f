//! 2D FFT helpers on row-major complex buffers.
//!
//! Normalization convention, used everywhere in the crate:
//! * `fft2` is the plain unnormalized forward DFT,
//!   X_k = sum_n x_n exp(-2*pi*i*k*n/N) along each axis,
//! * `ifft2` is scaled by 1/(H*W), so `ifft2(fft2(x)) = x`,
//! * `ifft2_unnormalized` is the raw conjugate transpose of `fft2`,
//!   which is what operator adjoints need.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

fn fft2_dir(data: &mut [Complex64], height: usize, width: usize, direction: FftDirection) {
    assert_eq!(data.len(), height * width);
    let row_fft = plan(width, direction);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = plan(height, direction);
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            col[r] = data[r * width + c];
        }
        col_fft.process(&mut col);
        for r in 0..height {
            data[r * width + c] = col[r];
        }
    }
}

/// Unnormalized forward 2D FFT, in place.
pub fn fft2(data: &mut [Complex64], height: usize, width: usize) {
    fft2_dir(data, height, width, FftDirection::Forward);
}

/// Inverse 2D FFT scaled by 1/(H*W), in place.
pub fn ifft2(data: &mut [Complex64], height: usize, width: usize) {
    fft2_dir(data, height, width, FftDirection::Inverse);
    let scale = 1.0 / (height * width) as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Unnormalized inverse 2D FFT (the exact adjoint of `fft2`), in place.
pub fn ifft2_unnormalized(data: &mut [Complex64], height: usize, width: usize) {
    fft2_dir(data, height, width, FftDirection::Inverse);
}

/// Swap quadrants so the zero-frequency / center sample moves between
/// index 0 and index N/2. Requires even dimensions, where fftshift and
/// ifftshift coincide.
pub fn fftshift2(data: &mut [Complex64], height: usize, width: usize) {
    assert!(height % 2 == 0 && width % 2 == 0, "shift requires even dims");
    assert_eq!(data.len(), height * width);
    let (hh, hw) = (height / 2, width / 2);
    for r in 0..hh {
        for c in 0..width {
            let c2 = (c + hw) % width;
            data.swap(r * width + c, (r + hh) * width + c2);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_buf(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)))
            .collect()
    }

    #[test]
    fn round_trip_identity() {
        let (h, w) = (12, 20);
        let orig = random_buf(h * w, 3);
        let mut buf = orig.clone();
        fft2(&mut buf, h, w);
        ifft2(&mut buf, h, w);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_unnormalized_forward() {
        // ||FFT(x)||^2 = N^2 ||x||^2 for an N x N transform
        let n = 16;
        let x = random_buf(n * n, 11);
        let energy_in: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let mut buf = x;
        fft2(&mut buf, n, n);
        let energy_out: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
        let expect = (n * n) as f64 * energy_in;
        assert!((energy_out - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn forward_matches_direct_dft() {
        let (h, w) = (4, 6);
        let x = random_buf(h * w, 5);
        let mut buf = x.clone();
        fft2(&mut buf, h, w);
        for kr in 0..h {
            for kc in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let phase = -2.0
                            * std::f64::consts::PI
                            * (kr as f64 * r as f64 / h as f64 + kc as f64 * c as f64 / w as f64);
                        acc += x[r * w + c] * Complex64::from_polar(1.0, phase);
                    }
                }
                assert!((buf[kr * w + kc] - acc).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn fftshift_is_involution_even() {
        let (h, w) = (8, 6);
        let orig = random_buf(h * w, 9);
        let mut buf = orig.clone();
        fftshift2(&mut buf, h, w);
        assert_ne!(buf, orig);
        fftshift2(&mut buf, h, w);
        assert_eq!(buf, orig);
    }
}
