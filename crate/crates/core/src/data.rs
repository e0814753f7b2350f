//! Synthetic dynamic vocal-tract-like phantoms, field-map synthesis and
//! augmentation, and dataset assembly with subject-level splits.
//!
//! Each subject is a head-like ellipse of smoothly textured soft tissue
//! containing an airway cavity whose boundary deforms smoothly across
//! frames under a seeded low-frequency motion model. The field map is a
//! signed bump profile centered on the air-tissue boundaries, strongest
//! at the boundary and decaying with distance, which is where spiral
//! off-resonance blurring concentrates. Augmentation rescales and
//! offsets the map per frame: f' = alpha * f + beta.

use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::{ComplexImage, FieldMap};
use crate::offres::blur_frame;
use crate::rng::Rng;
use crate::trajectory::SpiralTrajectory;
use crate::transform::{DensityWeights, GriddingPlan};

const TWO_PI: f64 = 2.0 * PI;

// rng stream kinds so every draw site is independent
const STREAM_SUBJECT: u64 = 1 << 56;
const STREAM_AUGMENT: u64 = 2 << 56;
const STREAM_NOISE: u64 = 3 << 56;

#[derive(Clone, Debug)]
pub struct PhantomParams {
    pub seed: u64,
    pub matrix: usize,
    pub n_frames: usize,
    /// cavity boundary deformation amplitude, pixels
    pub motion_amplitude_px: f64,
    pub tissue_min: f64,
    pub tissue_max: f64,
    /// intensity edge width, pixels
    pub boundary_smoothness_px: f64,
    /// field map magnitude at the air-tissue boundary, Hz
    pub peak_offres_hz: f64,
    /// additive complex Gaussian k-space noise, relative to RMS signal
    /// (0 disables)
    pub kspace_noise_std: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            seed: 0,
            matrix: 84,
            n_frames: 40,
            motion_amplitude_px: 3.0,
            tissue_min: 0.4,
            tissue_max: 1.0,
            boundary_smoothness_px: 2.0,
            peak_offres_hz: 120.0,
            kspace_noise_std: 0.0,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        if self.matrix < 32 {
            return Err(Error::InvalidParameter(format!(
                "matrix {} < 32",
                self.matrix
            )));
        }
        if self.n_frames < 1 {
            return Err(Error::InvalidParameter("n_frames must be >= 1".into()));
        }
        if !(self.tissue_min > 0.0 && self.tissue_max > self.tissue_min) {
            return Err(Error::InvalidParameter("tissue intensity range".into()));
        }
        if !(self.boundary_smoothness_px > 0.0) || !(self.peak_offres_hz >= 0.0) {
            return Err(Error::InvalidParameter("phantom smoothness/field".into()));
        }
        Ok(())
    }
}

/// Field-map augmentation ranges for f' = alpha * f + beta.
#[derive(Clone, Debug)]
pub struct AugmentParams {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min_hz: f64,
    pub beta_max_hz: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            alpha_min: 0.5,
            alpha_max: 1.5,
            beta_min_hz: -50.0,
            beta_max_hz: 50.0,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_min.is_finite()
            && self.alpha_max.is_finite()
            && self.beta_min_hz.is_finite()
            && self.beta_max_hz.is_finite()
            && self.alpha_max >= self.alpha_min
            && self.beta_max_hz >= self.beta_min_hz;
        if !ok {
            return Err(Error::InvalidParameter("augmentation ranges".into()));
        }
        Ok(())
    }
}

/// Pointwise alpha * f + beta.
pub fn augment_fieldmap(f: &FieldMap, alpha: f64, beta_hz: f64) -> Result<FieldMap> {
    if !alpha.is_finite() || !beta_hz.is_finite() {
        return Err(Error::InvalidParameter("augmentation scalars".into()));
    }
    FieldMap::new(
        f.height(),
        f.width(),
        f.data().iter().map(|&v| alpha * v + beta_hz).collect(),
    )
}

/// Normalize a frame by its 98th-percentile magnitude (nearest rank).
/// Denormalization is exact multiplication by the returned scale.
pub fn normalize_frame(img: &ComplexImage) -> Result<(ComplexImage, f64)> {
    let mut mags = img.magnitude();
    if mags.iter().all(|&m| m == 0.0) {
        return Err(Error::Data("cannot normalize an all-zero frame".into()));
    }
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.98 * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    let scale = mags[rank - 1];
    if scale == 0.0 {
        return Err(Error::Data("98th percentile magnitude is zero".into()));
    }
    Ok((img.scale(1.0 / scale), scale))
}

// ----------------------------------------------------------------------
// phantom construction
// ----------------------------------------------------------------------

/// Smoothstep over [-width, width] in the signed coordinate d.
fn smooth01(d: f64, width: f64) -> f64 {
    let t = ((d / width + 1.0) * 0.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Signed bump: 0 at the boundary core is wrong for a susceptibility
/// profile, so this uses the derivative-of-Gaussian shape that peaks at
/// distance sigma with opposite signs on the two sides.
fn field_profile(d_px: f64, sigma_px: f64) -> f64 {
    let u = d_px / sigma_px;
    u * ((1.0 - u * u) / 2.0).exp()
}

struct SubjectAnatomy {
    // head ellipse
    head_a: f64,
    head_b: f64,
    head_cx: f64,
    head_cy: f64,
    // texture harmonics: (amplitude, freq_x, freq_y, phase)
    texture: Vec<(f64, f64, f64, f64)>,
    // cavity base
    cav_cx: f64,
    cav_cy: f64,
    cav_r0: f64,
    // cavity shape harmonics: (order m, amplitude, temporal freq, temporal phase, angular phase)
    cav_modes: Vec<(usize, f64, f64, f64, f64)>,
    // phase polynomial coefficient amplitudes and temporal parameters
    phase_amp: [f64; 6],
    phase_freq: [f64; 6],
    phase_shift: [f64; 6],
}

fn draw_anatomy(rng: &mut Rng, params: &PhantomParams) -> SubjectAnatomy {
    let texture = (1..=4)
        .map(|m| {
            (
                rng.uniform(0.3, 1.0) / m as f64,
                rng.uniform(0.5, 2.5),
                rng.uniform(0.5, 2.5),
                rng.uniform(0.0, TWO_PI),
            )
        })
        .collect();
    let motion = params.motion_amplitude_px / params.matrix as f64;
    let cav_modes = (1..=3)
        .map(|m| {
            (
                m,
                rng.uniform(0.3, 1.0) * motion / 1.8,
                rng.uniform(0.5, 2.0),
                rng.uniform(0.0, TWO_PI),
                rng.uniform(0.0, TWO_PI),
            )
        })
        .collect();
    // bounds keep |phase| <= 0.35 + 0.5*(0.5+0.5) + 0.25*(0.7*3) < pi/2
    let amp_bounds = [0.35, 0.5, 0.5, 0.7, 0.7, 0.7];
    let mut phase_amp = [0.0; 6];
    let mut phase_freq = [0.0; 6];
    let mut phase_shift = [0.0; 6];
    for i in 0..6 {
        phase_amp[i] = rng.uniform(-amp_bounds[i], amp_bounds[i]);
        phase_freq[i] = rng.uniform(0.5, 2.0);
        phase_shift[i] = rng.uniform(0.0, TWO_PI);
    }
    SubjectAnatomy {
        head_a: rng.uniform(0.32, 0.40),
        head_b: rng.uniform(0.36, 0.44),
        head_cx: rng.uniform(-0.02, 0.02),
        head_cy: rng.uniform(-0.02, 0.02),
        texture,
        cav_cx: rng.uniform(0.00, 0.10),
        cav_cy: rng.uniform(-0.08, 0.06),
        cav_r0: rng.uniform(0.08, 0.13),
        cav_modes,
        phase_amp,
        phase_freq,
        phase_shift,
    }
}

impl SubjectAnatomy {
    fn cavity_radius(&self, theta: f64, frame_frac: f64) -> f64 {
        let mut r = self.cav_r0;
        for &(m, amp, freq, tphase, aphase) in &self.cav_modes {
            r += amp
                * (TWO_PI * freq * frame_frac + tphase).sin()
                * (m as f64 * theta + aphase).cos();
        }
        r.max(0.02)
    }

    fn frame_phase(&self, x: f64, y: f64, frame_frac: f64) -> f64 {
        let monomials = [1.0, x, y, x * y, x * x, y * y];
        let mut p = 0.0;
        for i in 0..6 {
            p += self.phase_amp[i]
                * (TWO_PI * self.phase_freq[i] * frame_frac + self.phase_shift[i]).sin()
                * monomials[i];
        }
        p
    }

    fn texture_at(&self, x: f64, y: f64, lo: f64, hi: f64) -> f64 {
        let mut v = 0.0;
        let mut bound = 0.0;
        for &(amp, fx, fy, ph) in &self.texture {
            v += amp * (TWO_PI * (fx * x + fy * y) + ph).cos();
            bound += amp;
        }
        let unit = (v / bound + 1.0) * 0.5;
        lo + (hi - lo) * unit
    }
}

/// Generate one subject: `n_frames` co-registered (image, field map)
/// pairs with smooth cavity motion. Deterministic in the seed.
pub fn make_phantom_sequence(params: &PhantomParams) -> Result<Vec<(ComplexImage, FieldMap)>> {
    params.validate()?;
    let mut rng = Rng::stream(params.seed, STREAM_SUBJECT);
    let anatomy = draw_anatomy(&mut rng, params);
    let n = params.matrix;
    let smooth = params.boundary_smoothness_px;
    let field_sigma = (smooth * 1.25).max(1.5);
    let coords = crate::image::pixel_coordinates(n, n);

    let frames: Vec<(ComplexImage, FieldMap)> = (0..params.n_frames)
        .into_par_iter()
        .map(|frame| {
            let frac = frame as f64 / params.n_frames.max(1) as f64;
            let mut img_data = Vec::with_capacity(n * n);
            let mut map_data = Vec::with_capacity(n * n);
            for r in 0..n {
                for c in 0..n {
                    let x = coords.x[c];
                    let y = coords.y[r];
                    // signed pixel distance to the outer head boundary
                    // (positive inside tissue)
                    let ex = (x - anatomy.head_cx) / anatomy.head_a;
                    let ey = (y - anatomy.head_cy) / anatomy.head_b;
                    let rho = (ex * ex + ey * ey).sqrt();
                    let d_head =
                        (1.0 - rho) * anatomy.head_a.min(anatomy.head_b) * n as f64;
                    // signed pixel distance to the cavity boundary
                    // (positive in tissue, negative inside the airway)
                    let dx = x - anatomy.cav_cx;
                    let dy = y - anatomy.cav_cy;
                    let rad = (dx * dx + dy * dy).sqrt();
                    let theta = dy.atan2(dx);
                    let r_cav = anatomy.cavity_radius(theta, frac);
                    let d_cav = (rad - r_cav) * n as f64;

                    let magnitude = anatomy.texture_at(x, y, params.tissue_min, params.tissue_max)
                        * smooth01(d_head, smooth)
                        * smooth01(d_cav, smooth);
                    let phase = anatomy.frame_phase(x, y, frac);
                    img_data.push(Complex64::from_polar(magnitude, phase));

                    let field = params.peak_offres_hz
                        * (field_profile(d_cav, field_sigma) + field_profile(d_head, field_sigma));
                    map_data.push(field);
                }
            }
            let img = ComplexImage::new(n, n, img_data)?;
            let map = FieldMap::new(n, n, map_data)?;
            Ok((img, map))
        })
        .collect::<Result<_>>()?;
    Ok(frames)
}

// ----------------------------------------------------------------------
// dataset assembly
// ----------------------------------------------------------------------

/// One trajectory protocol with its reconstruction machinery.
#[derive(Clone)]
pub struct TrajectorySet {
    pub label: String,
    pub traj: SpiralTrajectory,
    pub plan: Arc<GriddingPlan>,
    pub density: DensityWeights,
}

/// Everything recorded for one frame of one subject.
#[derive(Clone)]
pub struct DatasetRecord {
    pub subject: usize,
    pub frame: usize,
    pub truth: ComplexImage,
    pub fmap: FieldMap,
    pub fmap_aug: FieldMap,
    /// one blurred image per trajectory, in trajectory-set order
    pub blurred: Vec<ComplexImage>,
    /// 98th-percentile normalization scale per blurred image
    pub scales: Vec<f64>,
    pub alpha: f64,
    pub beta_hz: f64,
}

/// Subject-index split; a subject never straddles splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    pub fn of(&self, subject: usize) -> &'static str {
        if self.train.contains(&subject) {
            "train"
        } else if self.val.contains(&subject) {
            "val"
        } else {
            "test"
        }
    }
}

/// Split subjects by the 23:5:5 ratio, minimum one subject per split.
pub fn split_subjects(n_subjects: usize) -> Result<SplitAssignment> {
    if n_subjects < 3 {
        return Err(Error::InvalidParameter(format!(
            "{n_subjects} subjects cannot populate train/val/test"
        )));
    }
    let part = |n: usize| -> usize { ((n as f64 * 5.0 / 33.0).round() as usize).max(1) };
    let n_val = part(n_subjects);
    let n_test = part(n_subjects);
    if n_val + n_test >= n_subjects {
        return Err(Error::InvalidParameter(format!(
            "{n_subjects} subjects leave no training split"
        )));
    }
    let n_train = n_subjects - n_val - n_test;
    Ok(SplitAssignment {
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n_subjects).collect(),
    })
}

pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub splits: SplitAssignment,
    pub n_subjects: usize,
    pub n_frames: usize,
}

/// Deterministic per-subject seed derivation.
pub fn subject_seed(master: u64, subject: usize) -> u64 {
    Rng::stream(master, STREAM_SUBJECT | subject as u64).next_u64()
}

/// Per-frame augmentation draw (alpha, beta).
pub fn augmentation_draw(master: u64, subject: usize, frame: usize, aug: &AugmentParams) -> (f64, f64) {
    let mut rng = Rng::stream(
        master,
        STREAM_AUGMENT | ((subject as u64) << 28) | frame as u64,
    );
    (
        rng.uniform(aug.alpha_min, aug.alpha_max),
        rng.uniform(aug.beta_min_hz, aug.beta_max_hz),
    )
}

/// Exact blurred k-space for one frame and trajectory, with the seeded
/// noise draw when enabled. Shared by dataset generation and by the
/// deblurring pipeline so both see identical data.
pub fn simulate_frame_kspace(
    master_seed: u64,
    noise_std: f64,
    subject: usize,
    frame: usize,
    traj_index: usize,
    truth: &ComplexImage,
    fmap_aug: &FieldMap,
    traj: &SpiralTrajectory,
) -> Result<crate::trajectory::KSpaceData> {
    let mut ks = crate::offres::simulate_blur_exact(truth, fmap_aug, traj)?;
    if noise_std > 0.0 {
        let rms = (ks.samples.iter().map(|s| s.norm_sqr()).sum::<f64>()
            / ks.samples.len() as f64)
            .sqrt();
        let std = noise_std * rms;
        let mut nrng = Rng::stream(
            master_seed,
            STREAM_NOISE | ((subject as u64) << 36) | ((traj_index as u64) << 28) | frame as u64,
        );
        for s in ks.samples.iter_mut() {
            *s += Complex64::new(nrng.normal(0.0, std), nrng.normal(0.0, std));
        }
    }
    Ok(ks)
}

/// Generate and blur all frames of one subject.
pub fn build_subject_records(
    subject: usize,
    params: &PhantomParams,
    aug: &AugmentParams,
    trajectories: &[TrajectorySet],
) -> Result<Vec<DatasetRecord>> {
    aug.validate()?;
    let mut subject_params = params.clone();
    subject_params.seed = subject_seed(params.seed, subject);
    let frames = make_phantom_sequence(&subject_params)?;
    frames
        .into_iter()
        .enumerate()
        .map(|(frame, (truth, fmap))| {
            let (alpha, beta_hz) = augmentation_draw(params.seed, subject, frame, aug);
            let fmap_aug = augment_fieldmap(&fmap, alpha, beta_hz)?;
            let mut blurred = Vec::with_capacity(trajectories.len());
            let mut scales = Vec::with_capacity(trajectories.len());
            for (t_idx, set) in trajectories.iter().enumerate() {
                let ks = simulate_frame_kspace(
                    params.seed,
                    params.kspace_noise_std,
                    subject,
                    frame,
                    t_idx,
                    &truth,
                    &fmap_aug,
                    &set.traj,
                )?;
                let img = crate::transform::nufft_adjoint(&ks, &set.plan, &set.density)?;
                let (_, scale) = normalize_frame(&img)?;
                blurred.push(img);
                scales.push(scale);
            }
            Ok(DatasetRecord {
                subject,
                frame,
                truth,
                fmap,
                fmap_aug,
                blurred,
                scales,
                alpha,
                beta_hz,
            })
        })
        .collect()
}

/// Build the full synthetic dataset with subject splits.
pub fn build_dataset(
    n_subjects: usize,
    params: &PhantomParams,
    aug: &AugmentParams,
    trajectories: &[TrajectorySet],
) -> Result<Dataset> {
    let splits = split_subjects(n_subjects)?;
    let mut records = Vec::with_capacity(n_subjects * params.n_frames);
    for subject in 0..n_subjects {
        records.extend(build_subject_records(subject, params, aug, trajectories)?);
    }
    Ok(Dataset {
        records,
        splits,
        n_subjects,
        n_frames: params.n_frames,
    })
}
