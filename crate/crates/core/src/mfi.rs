//! Multi-frequency interpolation deblurring.
//!
//! The data is reconstructed at a bank of constant demodulation
//! frequencies f_l; each pixel is then combined from the base images
//! with coefficients c_l(f) fit by least squares so that
//! sum_l c_l exp(+i 2 pi f_l t) matches exp(+i 2 pi f t) over the
//! readout timestamps. Coefficients are tabulated on a 1 Hz grid and
//! looked up by the known field map value, clamped to the bank range.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::{ComplexImage, FieldMap};
use crate::trajectory::{KSpaceData, SpiralTrajectory};
use crate::transform::{nufft_adjoint_raw, DensityWeights, GriddingPlan};

const TWO_PI: f64 = 2.0 * PI;
/// Bank construction fails above this max relative fit residual.
pub const RESIDUAL_THRESHOLD: f64 = 0.01;
/// Singular values below max/COND_LIMIT are truncated in the fit.
const COND_LIMIT: f64 = 1e8;

/// Demodulation frequency bank with tabulated combination coefficients.
#[derive(Clone, Debug)]
pub struct MfiBank {
    frequencies: Vec<f64>,
    f_min: f64,
    f_max: f64,
    /// coefficient vectors on the 1 Hz grid: entry i corresponds to
    /// frequency f_min + i
    coeff_table: Vec<Vec<Complex64>>,
    fit_residual: f64,
    traj_id: u64,
}

impl MfiBank {
    pub fn n_bins(&self) -> usize {
        self.frequencies.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn range(&self) -> (f64, f64) {
        (self.f_min, self.f_max)
    }

    pub fn fit_residual(&self) -> f64 {
        self.fit_residual
    }

    pub fn traj_id(&self) -> u64 {
        self.traj_id
    }

    /// Coefficients for an arbitrary frequency, nearest 1 Hz table entry,
    /// clamped to the bank range. Returns whether clamping occurred.
    pub fn coefficients(&self, f_hz: f64) -> (&[Complex64], bool) {
        let clamped = f_hz < self.f_min || f_hz > self.f_max;
        let f = f_hz.clamp(self.f_min, self.f_max);
        let idx = ((f - self.f_min).round() as usize).min(self.coeff_table.len() - 1);
        (&self.coeff_table[idx], clamped)
    }
}

/// Default bin count: ceil((f_max - f_min) * t_read) * 2 + 1, clamped
/// to [3, 48].
pub fn default_bins(f_min: f64, f_max: f64, t_read: f64) -> usize {
    (((f_max - f_min) * t_read).ceil() as usize * 2 + 1).clamp(3, 48)
}

/// Fit the coefficient bank for one trajectory and frequency range.
pub fn build_mfi_bank(
    traj: &SpiralTrajectory,
    f_min: f64,
    f_max: f64,
    l_mfi: Option<usize>,
) -> Result<MfiBank> {
    if f_max < f_min {
        return Err(Error::InvalidParameter(format!(
            "frequency range [{f_min}, {f_max}] is empty"
        )));
    }
    // degenerate range: widen to +-1 Hz around the midpoint
    let (f_min, f_max) = if f_max - f_min < 1.0 {
        let mid = 0.5 * (f_min + f_max);
        (mid - 1.0, mid + 1.0)
    } else {
        (f_min, f_max)
    };
    let n_bins = match l_mfi {
        Some(l) if l < 2 => {
            return Err(Error::InvalidParameter(format!("bin count {l} < 2")));
        }
        Some(l) => l,
        None => default_bins(f_min, f_max, traj.readout_duration()),
    };
    let frequencies: Vec<f64> = (0..n_bins)
        .map(|l| f_min + l as f64 * (f_max - f_min) / (n_bins - 1) as f64)
        .collect();

    // fit over the unique per-interleaf timestamps; every interleaf
    // shares the same time base so replicating rows changes nothing
    let times = &traj.timestamps()[..traj.samples_per_interleaf()];
    let m = times.len();

    // basis columns E[:, l] = exp(+i 2 pi f_l t)
    let l = n_bins;
    let columns: Vec<Vec<Complex64>> = frequencies
        .iter()
        .map(|&fl| {
            times
                .iter()
                .map(|&t| Complex64::from_polar(1.0, TWO_PI * fl * t))
                .collect()
        })
        .collect();
    let svd = jacobi_svd(columns)?;
    let sigma_max = svd.sigma.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max <= 0.0 {
        return Err(Error::IllConditioned(f64::INFINITY));
    }
    let trunc = sigma_max / COND_LIMIT;

    // coefficients on the 1 Hz grid: c = V diag(1/sigma) U^H v
    let table_len = (f_max - f_min).round() as usize + 1;
    let mut coeff_table = Vec::with_capacity(table_len);
    let mut worst_residual = 0.0f64;
    for i in 0..table_len {
        let f = f_min + i as f64;
        let target: Vec<Complex64> = times
            .iter()
            .map(|&t| Complex64::from_polar(1.0, TWO_PI * f * t))
            .collect();
        let mut coeff = vec![Complex64::new(0.0, 0.0); l];
        for k in 0..l {
            if svd.sigma[k] <= trunc {
                continue;
            }
            let mut dot = Complex64::new(0.0, 0.0);
            for (uv, tv) in svd.u[k].iter().zip(&target) {
                dot += uv.conj() * tv;
            }
            let proj = dot / svd.sigma[k];
            for (c, vv) in coeff.iter_mut().zip(&svd.v[k]) {
                *c += vv * proj;
            }
        }
        // relative residual of the fit
        let mut err = 0.0;
        for (j, v) in target.iter().enumerate() {
            let mut fit = Complex64::new(0.0, 0.0);
            for (a, c) in coeff.iter().enumerate() {
                fit += Complex64::from_polar(1.0, TWO_PI * frequencies[a] * times[j]) * c;
            }
            err += (fit - v).norm_sqr();
        }
        let residual = (err / m as f64).sqrt();
        worst_residual = worst_residual.max(residual);
        coeff_table.push(coeff);
    }
    if worst_residual > RESIDUAL_THRESHOLD {
        return Err(Error::FitResidual {
            residual: worst_residual,
            threshold: RESIDUAL_THRESHOLD,
        });
    }
    Ok(MfiBank {
        frequencies,
        f_min,
        f_max,
        coeff_table,
        fit_residual: worst_residual,
        traj_id: traj.id(),
    })
}

/// Deblur one frame with the known field map. Returns the image and the
/// number of pixels whose field value was clamped to the bank range.
pub fn mfi_deblur(
    data: &KSpaceData,
    fmap: &FieldMap,
    bank: &MfiBank,
    traj: &SpiralTrajectory,
    plan: &GriddingPlan,
    density: &DensityWeights,
) -> Result<(ComplexImage, usize)> {
    if bank.traj_id != traj.id() || plan.traj_id() != traj.id() || data.trajectory_id != traj.id() {
        return Err(Error::PlanMismatch("mfi bank/plan/data trajectory".into()));
    }
    let n = plan.matrix();
    if fmap.height() != n || fmap.width() != n {
        return Err(Error::DimensionMismatch(format!(
            "field map {}x{} vs matrix {n}",
            fmap.height(),
            fmap.width()
        )));
    }
    if density.len() != data.len() {
        return Err(Error::DimensionMismatch("mfi density length".into()));
    }
    // base reconstructions at each demodulation frequency
    let base: Vec<ComplexImage> = bank
        .frequencies
        .iter()
        .map(|&fl| {
            let demod: Vec<Complex64> = data
                .samples
                .iter()
                .zip(traj.timestamps())
                .zip(density.values())
                .map(|((s, &t), &w)| s * w * Complex64::from_polar(1.0, TWO_PI * fl * t))
                .collect();
            nufft_adjoint_raw(&demod, plan)
        })
        .collect();

    let mut out = ComplexImage::zeros(n, n);
    let mut clamped = 0usize;
    for idx in 0..n * n {
        let (coeff, was_clamped) = bank.coefficients(fmap.data()[idx]);
        if was_clamped {
            clamped += 1;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (l, c) in coeff.iter().enumerate() {
            acc += c * base[l].data()[idx];
        }
        out.data_mut()[idx] = acc;
    }
    Ok((out, clamped))
}

struct Svd {
    /// left singular vectors, one M-vector per retained direction
    u: Vec<Vec<Complex64>>,
    sigma: Vec<f64>,
    /// right singular vectors, one L-vector per direction
    v: Vec<Vec<Complex64>>,
}

/// Thin SVD of a tall complex matrix given by columns, via one-sided
/// Jacobi rotations. Operates on the columns directly (no Gram matrix),
/// which preserves accuracy for badly conditioned exponential banks.
fn jacobi_svd(mut columns: Vec<Vec<Complex64>>) -> Result<Svd> {
    let l = columns.len();
    let mut v: Vec<Vec<Complex64>> = (0..l)
        .map(|i| {
            let mut e = vec![Complex64::new(0.0, 0.0); l];
            e[i] = Complex64::new(1.0, 0.0);
            e
        })
        .collect();
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..l {
            for q in (p + 1)..l {
                let alpha: f64 = columns[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = columns[q].iter().map(|z| z.norm_sqr()).sum();
                let mut gamma = Complex64::new(0.0, 0.0);
                for (a, b) in columns[p].iter().zip(&columns[q]) {
                    gamma += a.conj() * b;
                }
                let denom = (alpha * beta).sqrt();
                if denom == 0.0 || gamma.norm() <= 1e-15 * denom {
                    continue;
                }
                off = off.max(gamma.norm() / denom);
                // phase-align column q, then a real Jacobi rotation
                let phase = gamma / gamma.norm();
                let theta = 0.5 * (2.0 * gamma.norm()).atan2(alpha - beta);
                let (s, c) = theta.sin_cos();
                for j in 0..columns[p].len() {
                    let ap = columns[p][j];
                    let bq = columns[q][j] * phase.conj();
                    columns[p][j] = ap * c + bq * s;
                    columns[q][j] = -ap * s + bq * c;
                }
                for j in 0..l {
                    let vp = v[p][j];
                    let vq = v[q][j] * phase.conj();
                    v[p][j] = vp * c + vq * s;
                    v[q][j] = -vp * s + vq * c;
                }
            }
        }
        if off < 1e-14 {
            break;
        }
    }
    let mut sigma = Vec::with_capacity(l);
    let mut u = Vec::with_capacity(l);
    for col in columns.into_iter() {
        let norm: f64 = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("jacobi svd".into()));
        }
        if norm > 0.0 {
            u.push(col.iter().map(|z| z / norm).collect());
        } else {
            u.push(col);
        }
        sigma.push(norm);
    }
    Ok(Svd { u, sigma, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offres::simulate_blur_exact;
    use crate::rng::Rng;
    use crate::trajectory::make_spiral;
    use crate::transform::{nufft_adjoint, pipe_menon_density};

    #[test]
    fn jacobi_svd_reconstructs_matrix() {
        let mut rng = Rng::new(77);
        let (m, l) = (12usize, 4usize);
        let columns: Vec<Vec<Complex64>> = (0..l)
            .map(|_| {
                (0..m)
                    .map(|_| Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)))
                    .collect()
            })
            .collect();
        let svd = jacobi_svd(columns.clone()).unwrap();
        // E[j][a] = sum_k u[k][j] sigma[k] conj(v[k][a])
        for a in 0..l {
            for j in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..l {
                    acc += svd.u[k][j] * svd.sigma[k] * svd.v[k][a].conj();
                }
                assert!(
                    (acc - columns[a][j]).norm() < 1e-10,
                    "entry ({j}, {a}): {acc} vs {}",
                    columns[a][j]
                );
            }
        }
        // left singular vectors orthonormal
        for p in 0..l {
            for q in p..l {
                let mut dot = Complex64::new(0.0, 0.0);
                for j in 0..m {
                    dot += svd.u[p][j].conj() * svd.u[q][j];
                }
                let expect = if p == q { 1.0 } else { 0.0 };
                assert!((dot - Complex64::new(expect, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn bin_center_coefficients_are_indicators() {
        let traj = make_spiral(32, 2.52e-3, 4e-6, 13).unwrap();
        let bank = build_mfi_bank(&traj, -100.0, 100.0, Some(5)).unwrap();
        for (l, &fl) in bank.frequencies().iter().enumerate() {
            // bin frequencies here land on the 1 Hz grid
            let (coeff, clamped) = bank.coefficients(fl);
            assert!(!clamped);
            for (i, c) in coeff.iter().enumerate() {
                let expect = if i == l { 1.0 } else { 0.0 };
                assert!(
                    (c - Complex64::new(expect, 0.0)).norm() < 1e-10,
                    "bin {l} coeff {i}: {c}"
                );
            }
        }
    }

    #[test]
    fn degenerate_range_builds_three_bins() {
        let traj = make_spiral(16, 1e-3, 4e-6, 4).unwrap();
        let bank = build_mfi_bank(&traj, 0.0, 0.0, None).unwrap();
        assert_eq!(bank.n_bins(), 3);
        let (coeff, clamped) = bank.coefficients(0.0);
        assert!(!clamped);
        let total: Complex64 = coeff.iter().sum();
        assert!((total - Complex64::new(1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn long_readout_default_bins_fit_well() {
        let traj = make_spiral(84, 7.936e-3, 4e-6, 5).unwrap();
        let bank = build_mfi_bank(&traj, -150.0, 150.0, None).unwrap();
        assert_eq!(bank.n_bins(), default_bins(-150.0, 150.0, 7.936e-3));
        assert!(
            bank.fit_residual() < RESIDUAL_THRESHOLD,
            "residual {}",
            bank.fit_residual()
        );
    }

    #[test]
    fn invalid_range_rejected() {
        let traj = make_spiral(16, 1e-3, 4e-6, 4).unwrap();
        assert!(build_mfi_bank(&traj, 10.0, -10.0, None).is_err());
        assert!(build_mfi_bank(&traj, -10.0, 10.0, Some(1)).is_err());
    }

    #[test]
    fn constant_bin_center_map_equals_demodulated_recon() {
        let n = 32;
        let traj = make_spiral(n, 2.52e-3, 4e-6, 13).unwrap();
        let plan = GriddingPlan::build_default(n, &traj).unwrap();
        let density = pipe_menon_density(&traj, &plan, 20).unwrap();
        let bank = build_mfi_bank(&traj, -100.0, 100.0, Some(5)).unwrap();
        let f_bin = bank.frequencies()[3];

        let phantom = {
            let sigma = n as f64 / 6.0;
            ComplexImage::from_fn(n, n, |r, c| {
                let dy = r as f64 - (n / 2) as f64;
                let dx = c as f64 - (n / 2) as f64;
                Complex64::new((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp(), 0.0)
            })
        };
        let fmap = FieldMap::constant(n, n, f_bin).unwrap();
        let data = simulate_blur_exact(&phantom, &fmap, &traj).unwrap();

        let (mfi_img, clamped) = mfi_deblur(&data, &fmap, &bank, &traj, &plan, &density).unwrap();
        assert_eq!(clamped, 0);

        // direct demodulated gridding recon at the same frequency
        let demod: Vec<Complex64> = data
            .samples
            .iter()
            .zip(traj.timestamps())
            .map(|(s, &t)| s * Complex64::from_polar(1.0, TWO_PI * f_bin * t))
            .collect();
        let direct = nufft_adjoint(
            &KSpaceData {
                samples: demod,
                trajectory_id: traj.id(),
            },
            &plan,
            &density,
        )
        .unwrap();
        let err = mfi_img.sub(&direct).unwrap().l2_norm() / direct.l2_norm();
        assert!(err < 1e-6, "relative deviation {err}");
    }

    #[test]
    fn linear_in_the_data() {
        let n = 16;
        let traj = make_spiral(n, 2.52e-3, 4e-6, 8).unwrap();
        let plan = GriddingPlan::build_default(n, &traj).unwrap();
        let density = DensityWeights::unit(traj.n_samples());
        let bank = build_mfi_bank(&traj, -80.0, 80.0, Some(5)).unwrap();
        let mut rng = Rng::new(55);
        let fmap = FieldMap::new(
            n,
            n,
            (0..n * n).map(|_| rng.uniform(-80.0, 80.0)).collect(),
        )
        .unwrap();
        let mk = |rng: &mut Rng| KSpaceData {
            samples: (0..traj.n_samples())
                .map(|_| Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)))
                .collect(),
            trajectory_id: traj.id(),
        };
        let s1 = mk(&mut rng);
        let s2 = mk(&mut rng);
        let alpha = 1.3;
        let combo = KSpaceData {
            samples: s1
                .samples
                .iter()
                .zip(&s2.samples)
                .map(|(a, b)| a * alpha + b)
                .collect(),
            trajectory_id: traj.id(),
        };
        let (m1, _) = mfi_deblur(&s1, &fmap, &bank, &traj, &plan, &density).unwrap();
        let (m2, _) = mfi_deblur(&s2, &fmap, &bank, &traj, &plan, &density).unwrap();
        let (mc, _) = mfi_deblur(&combo, &fmap, &bank, &traj, &plan, &density).unwrap();
        let lin = m1.scale(alpha).add(&m2).unwrap();
        let err = mc.sub(&lin).unwrap().l2_norm() / lin.l2_norm();
        assert!(err < 1e-10, "linearity defect {err}");
    }

    #[test]
    fn out_of_range_field_values_clamp_and_count() {
        let n = 16;
        let traj = make_spiral(n, 2.52e-3, 4e-6, 8).unwrap();
        let plan = GriddingPlan::build_default(n, &traj).unwrap();
        let density = DensityWeights::unit(traj.n_samples());
        let bank = build_mfi_bank(&traj, -50.0, 50.0, Some(3)).unwrap();
        let mut vals = vec![0.0; n * n];
        vals[0] = 400.0;
        vals[1] = -400.0;
        let fmap = FieldMap::new(n, n, vals).unwrap();
        let data = KSpaceData {
            samples: vec![Complex64::new(1.0, 0.0); traj.n_samples()],
            trajectory_id: traj.id(),
        };
        let (_, clamped) = mfi_deblur(&data, &fmap, &bank, &traj, &plan, &density).unwrap();
        assert_eq!(clamped, 2);
    }

    #[test]
    fn recovers_psnr_on_smoothly_blurred_phantom() {
        let n = 32;
        let traj = make_spiral(n, 2.52e-3, 4e-6, 13).unwrap();
        let plan = GriddingPlan::build_default(n, &traj).unwrap();
        let density = pipe_menon_density(&traj, &plan, 20).unwrap();
        let sigma = n as f64 / 6.0;
        let phantom = ComplexImage::from_fn(n, n, |r, c| {
            let dy = r as f64 - (n / 2) as f64;
            let dx = c as f64 - (n / 2) as f64;
            Complex64::new((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp(), 0.0)
        });
        let fmap = FieldMap::new(
            n,
            n,
            (0..n * n)
                .map(|idx| {
                    let r = (idx / n) as f64 / n as f64 - 0.5;
                    let c = (idx % n) as f64 / n as f64 - 0.5;
                    100.0 * (PI * r).sin() * (PI * c).cos()
                })
                .collect(),
        )
        .unwrap();
        let data = simulate_blur_exact(&phantom, &fmap, &traj).unwrap();
        let uncorrected = nufft_adjoint(&data, &plan, &density).unwrap();
        let bank = build_mfi_bank(&traj, -100.0, 100.0, None).unwrap();
        let (deblurred, _) = mfi_deblur(&data, &fmap, &bank, &traj, &plan, &density).unwrap();
        let p_unc = crate::metrics::psnr(&uncorrected, &phantom).unwrap();
        let p_mfi = crate::metrics::psnr(&deblurred, &phantom).unwrap();
        assert!(p_mfi > p_unc, "MFI {p_mfi:.2} dB vs uncorrected {p_unc:.2} dB");
    }
}
