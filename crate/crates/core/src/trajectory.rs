//! Spiral k-space trajectory generation.
//!
//! Constant-angular-velocity Archimedean spirals parameterized by readout
//! duration T_read: radius grows linearly in time up to the Nyquist
//! radius matrix/2 cycles/FOV, and the turn count is chosen so that the
//! interleaf set jointly spaces adjacent turns exactly 1 cycle/FOV apart.
//! Each interleaf is its own excitation, so per-sample timestamps restart
//! at zero at the start of every interleaf.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Ordered k-space sample locations (cycles/FOV) with per-sample
/// acquisition timestamps (seconds since the start of the readout).
#[derive(Clone, Debug)]
pub struct SpiralTrajectory {
    kx: Vec<f64>,
    ky: Vec<f64>,
    t: Vec<f64>,
    n_interleaves: usize,
    samples_per_interleaf: usize,
    readout_duration: f64,
    dwell_time: f64,
    id: u64,
}

impl SpiralTrajectory {
    /// Validated construction from explicit samples (interleaf-major order).
    pub fn from_samples(
        kx: Vec<f64>,
        ky: Vec<f64>,
        t: Vec<f64>,
        n_interleaves: usize,
        readout_duration: f64,
        dwell_time: f64,
    ) -> Result<Self> {
        if kx.len() != ky.len() || kx.len() != t.len() {
            return Err(Error::DimensionMismatch(
                "trajectory kx, ky, t lengths differ".into(),
            ));
        }
        if n_interleaves == 0 || kx.is_empty() || kx.len() % n_interleaves != 0 {
            return Err(Error::InvalidParameter(
                "sample count must be a positive multiple of n_interleaves".into(),
            ));
        }
        if !(readout_duration > 0.0) || !(dwell_time > 0.0) {
            return Err(Error::InvalidParameter(
                "readout_duration and dwell_time must be positive".into(),
            ));
        }
        let per = kx.len() / n_interleaves;
        for i in 0..n_interleaves {
            let seg = &t[i * per..(i + 1) * per];
            if seg[0] != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "interleaf {i} does not start at t = 0"
                )));
            }
            if seg.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidParameter(format!(
                    "interleaf {i} timestamps not strictly increasing"
                )));
            }
        }
        if kx.iter().chain(&ky).chain(&t).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory samples".into()));
        }
        let id = content_id(&kx, &ky, &t, n_interleaves, readout_duration, dwell_time);
        Ok(Self {
            kx,
            ky,
            t,
            n_interleaves,
            samples_per_interleaf: per,
            readout_duration,
            dwell_time,
            id,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.kx.len()
    }

    pub fn n_interleaves(&self) -> usize {
        self.n_interleaves
    }

    pub fn samples_per_interleaf(&self) -> usize {
        self.samples_per_interleaf
    }

    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    /// Seconds since readout start, per sample; restarts at 0 for each
    /// interleaf (each interleaf is a separate excitation).
    pub fn timestamps(&self) -> &[f64] {
        &self.t
    }

    pub fn readout_duration(&self) -> f64 {
        self.readout_duration
    }

    pub fn dwell_time(&self) -> f64 {
        self.dwell_time
    }

    pub fn max_radius(&self) -> f64 {
        self.kx
            .iter()
            .zip(&self.ky)
            .map(|(x, y)| (x * x + y * y).sqrt())
            .fold(0.0f64, f64::max)
    }

    /// Content hash used to detect mismatched plan/data pairs.
    pub fn id(&self) -> u64 {
        self.id
    }
}

/// Complex sample vector aligned 1:1 with the trajectory that produced it.
#[derive(Clone, Debug)]
pub struct KSpaceData {
    pub samples: Vec<Complex64>,
    pub trajectory_id: u64,
}

impl KSpaceData {
    pub fn new(samples: Vec<Complex64>, traj: &SpiralTrajectory) -> Result<Self> {
        if samples.len() != traj.n_samples() {
            return Err(Error::DimensionMismatch(format!(
                "k-space samples {} != trajectory samples {}",
                samples.len(),
                traj.n_samples()
            )));
        }
        Ok(Self {
            samples,
            trajectory_id: traj.id(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// FNV-1a over the raw parameter and sample bits.
fn content_id(
    kx: &[f64],
    ky: &[f64],
    t: &[f64],
    n_interleaves: usize,
    readout_duration: f64,
    dwell_time: f64,
) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bits: u64| {
        for byte in bits.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(n_interleaves as u64);
    eat(readout_duration.to_bits());
    eat(dwell_time.to_bits());
    for v in kx.iter().chain(ky).chain(t) {
        eat(v.to_bits());
    }
    h
}

/// Generate a uniform-density Archimedean spiral.
///
/// Per interleaf i, samples at tau_j = j*dwell for j = 0..floor(t_read/dwell)-1,
/// radius r(tau) = k_max*tau/t_read with k_max = matrix/2 cycles/FOV, and
/// angle theta(tau) = 2*pi*n_turns*tau/t_read + 2*pi*i/n_interleaves with
/// n_turns = matrix/(2*n_interleaves), which makes adjacent turns of the
/// combined interleaf set Nyquist-spaced.
pub fn make_spiral(
    matrix: usize,
    t_read: f64,
    dwell: f64,
    n_interleaves: usize,
) -> Result<SpiralTrajectory> {
    if matrix < 8 {
        return Err(Error::InvalidParameter(format!("matrix {matrix} < 8")));
    }
    if !(t_read > 0.0) {
        return Err(Error::InvalidParameter("t_read must be > 0".into()));
    }
    if !(dwell > 0.0) {
        return Err(Error::InvalidParameter("dwell must be > 0".into()));
    }
    if n_interleaves == 0 {
        return Err(Error::InvalidParameter("n_interleaves must be >= 1".into()));
    }
    let ratio = t_read / dwell;
    if ratio < 16.0 {
        return Err(Error::InvalidParameter(format!(
            "t_read/dwell = {ratio:.2} < 16"
        )));
    }
    // guard against 629.9999... from the division
    let per = (ratio + 1e-9).floor() as usize;
    let k_max = matrix as f64 / 2.0;
    let n_turns = matrix as f64 / (2.0 * n_interleaves as f64);

    let total = per * n_interleaves;
    let mut kx = Vec::with_capacity(total);
    let mut ky = Vec::with_capacity(total);
    let mut t = Vec::with_capacity(total);
    for i in 0..n_interleaves {
        let rot = 2.0 * PI * i as f64 / n_interleaves as f64;
        for j in 0..per {
            let tau = j as f64 * dwell;
            let frac = tau / t_read;
            let r = k_max * frac;
            let theta = 2.0 * PI * n_turns * frac + rot;
            kx.push(r * theta.cos());
            ky.push(r * theta.sin());
            t.push(tau);
        }
    }
    SpiralTrajectory::from_samples(kx, ky, t, n_interleaves, t_read, dwell)
}
