//! Image quality metrics computed on magnitude images: PSNR, SSIM, HFEN.
//!
//! PSNR uses the reference peak magnitude. SSIM uses an 11x11 Gaussian
//! window (sigma 1.5) over all fully interior window positions with
//! C1 = (0.01 L)^2, C2 = (0.03 L)^2, L = max reference magnitude. HFEN
//! is the relative L2 norm of the difference of 15x15
//! Laplacian-of-Gaussian filtered magnitudes (sigma 1.5, zero padding).

use crate::error::{Error, Result};
use crate::image::ComplexImage;

/// PSNR is capped here when MSE is zero.
pub const PSNR_CAP_DB: f64 = 200.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const HFEN_KERNEL: usize = 15;
pub const HFEN_SIGMA: f64 = 1.5;

/// Peak signal-to-noise ratio in dB on magnitude images.
pub fn psnr(x: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    if !x.same_shape(reference) {
        return Err(Error::DimensionMismatch("psnr image shapes".into()));
    }
    let xm = x.magnitude();
    let rm = reference.magnitude();
    let peak = rm.iter().cloned().fold(0.0f64, f64::max);
    if peak == 0.0 {
        return Err(Error::InvalidParameter("psnr reference is zero".into()));
    }
    let mse = xm
        .iter()
        .zip(&rm)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / xm.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean local SSIM on magnitude images with the reference peak as the
/// dynamic range L.
pub fn ssim(x: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    let rm = reference.magnitude();
    let peak = rm.iter().cloned().fold(0.0f64, f64::max);
    ssim_with_peak(x, reference, peak)
}

/// SSIM with an externally fixed dynamic range; symmetric in (x, y).
pub fn ssim_with_peak(x: &ComplexImage, y: &ComplexImage, peak: f64) -> Result<f64> {
    if !x.same_shape(y) {
        return Err(Error::DimensionMismatch("ssim image shapes".into()));
    }
    let (h, w) = (x.height(), x.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "ssim needs min side {SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let xm = x.magnitude();
    let ym = y.magnitude();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);

    // separable Gaussian-weighted local moments, valid positions only
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let filt = |img: &[f64]| -> Vec<f64> {
        // horizontal pass: (h) x (w - win + 1)
        let wo = w - SSIM_WINDOW + 1;
        let mut tmp = vec![0.0; h * wo];
        for r in 0..h {
            for c in 0..wo {
                let mut acc = 0.0;
                for (k, &gk) in g.iter().enumerate() {
                    acc += gk * img[r * w + c + k];
                }
                tmp[r * wo + c] = acc;
            }
        }
        // vertical pass: (h - win + 1) x (w - win + 1)
        let ho = h - SSIM_WINDOW + 1;
        let mut out = vec![0.0; ho * wo];
        for r in 0..ho {
            for c in 0..wo {
                let mut acc = 0.0;
                for (k, &gk) in g.iter().enumerate() {
                    acc += gk * tmp[(r + k) * wo + c];
                }
                out[r * wo + c] = acc;
            }
        }
        out
    };

    let xx: Vec<f64> = xm.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ym.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xm.iter().zip(&ym).map(|(a, b)| a * b).collect();
    let mu_x = filt(&xm);
    let mu_y = filt(&ym);
    let e_xx = filt(&xx);
    let e_yy = filt(&yy);
    let e_xy = filt(&xy);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let var_x = e_xx[i] - mu_x[i] * mu_x[i];
        let var_y = e_yy[i] - mu_y[i] * mu_y[i];
        let cov = e_xy[i] - mu_x[i] * mu_y[i];
        let num = (2.0 * mu_x[i] * mu_y[i] + c1) * (2.0 * cov + c2);
        let den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (var_x + var_y + c2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}

/// High-frequency error norm: ||LoG(|x|) - LoG(|ref|)||_2 / ||LoG(|ref|)||_2.
pub fn hfen(x: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    if !x.same_shape(reference) {
        return Err(Error::DimensionMismatch("hfen image shapes".into()));
    }
    let kernel = log_kernel(HFEN_KERNEL, HFEN_SIGMA);
    let lx = convolve_zero_pad(&x.magnitude(), x.height(), x.width(), &kernel, HFEN_KERNEL);
    let lr = convolve_zero_pad(
        &reference.magnitude(),
        reference.height(),
        reference.width(),
        &kernel,
        HFEN_KERNEL,
    );
    let ref_norm = lr.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(Error::InvalidParameter(
            "hfen reference has identically zero LoG response".into(),
        ));
    }
    let diff = lx
        .iter()
        .zip(&lr)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / ref_norm)
}

/// Normalized 1D Gaussian window of odd length.
fn gaussian_window(len: usize, sigma: f64) -> Vec<f64> {
    let half = (len / 2) as f64;
    let mut g: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= sum);
    g
}

/// Laplacian-of-Gaussian kernel, mean-subtracted so it sums to zero.
pub fn log_kernel(len: usize, sigma: f64) -> Vec<f64> {
    let half = (len / 2) as f64;
    let s2 = sigma * sigma;
    let mut gauss_sum = 0.0;
    let mut raw = vec![0.0; len * len];
    for r in 0..len {
        for c in 0..len {
            let dy = r as f64 - half;
            let dx = c as f64 - half;
            let r2 = dx * dx + dy * dy;
            let g = (-r2 / (2.0 * s2)).exp();
            gauss_sum += g;
            raw[r * len + c] = (r2 - 2.0 * s2) / (s2 * s2) * g;
        }
    }
    for v in raw.iter_mut() {
        *v /= gauss_sum;
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    for v in raw.iter_mut() {
        *v -= mean;
    }
    raw
}

/// Same-size 2D convolution with zero padding.
fn convolve_zero_pad(img: &[f64], h: usize, w: usize, kernel: &[f64], klen: usize) -> Vec<f64> {
    let pad = klen / 2;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for kr in 0..klen {
                let rr = r as isize + kr as isize - pad as isize;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for kc in 0..klen {
                    let cc = c as isize + kc as isize - pad as isize;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    acc += kernel[kr * klen + kc] * img[rr as usize * w + cc as usize];
                }
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Mean and population standard deviation, two-pass.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Streaming mean/std accumulator (Welford), used to cross-check the
/// two-pass aggregate.
#[derive(Default, Clone, Debug)]
pub struct StreamingStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl StreamingStats {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    pub fn std(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

/// Per-frame metrics of one (result, reference) pair.
#[derive(Clone, Debug)]
pub struct FrameMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub hfen: f64,
}

pub fn frame_metrics(x: &ComplexImage, reference: &ComplexImage) -> Result<FrameMetrics> {
    Ok(FrameMetrics {
        psnr_db: psnr(x, reference)?,
        ssim: ssim(x, reference)?,
        hfen: hfen(x, reference)?,
    })
}

/// Per-metric aggregate over frames.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub frames: Vec<FrameMetrics>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub hfen_mean: f64,
    pub hfen_std: f64,
}

impl MetricReport {
    pub fn from_frames(frames: Vec<FrameMetrics>) -> Self {
        let (psnr_mean, psnr_std) = mean_std(&frames.iter().map(|f| f.psnr_db).collect::<Vec<_>>());
        let (ssim_mean, ssim_std) = mean_std(&frames.iter().map(|f| f.ssim).collect::<Vec<_>>());
        let (hfen_mean, hfen_std) = mean_std(&frames.iter().map(|f| f.hfen).collect::<Vec<_>>());
        Self {
            frames,
            psnr_mean,
            psnr_std,
            ssim_mean,
            ssim_std,
            hfen_mean,
            hfen_std,
        }
    }
}
