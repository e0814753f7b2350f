//! Binary file formats, run configuration, and dataset manifests.
//!
//! Four fixed-header little-endian formats cover all artifacts:
//! * CIMG — complex image, interleaved (re, im) f32 payload
//! * FMAP — field map, f32 Hz payload
//! * TRAJ — trajectory, f64 (kx, ky) payload, interleaf-major
//! * MODL — CNN checkpoint ("SDBM"), f32 parameters in layer order
//!
//! Internal numerics stay f64; files store f32 (except trajectories).
//! Configuration is one JSON document with a schema version; unknown
//! keys are rejected and missing keys take the documented defaults.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

use crate::cnn::{CnnModel, ConvLayer, ConvSpec, TrainConfig};
use crate::data::{AugmentParams, PhantomParams};
use crate::error::{Error, Result};
use crate::image::{ComplexImage, FieldMap};
use crate::ir::CgConfig;
use crate::trajectory::SpiralTrajectory;

const CIMG_MAGIC: &[u8; 4] = b"CIMG";
const FMAP_MAGIC: &[u8; 4] = b"FMAP";
const TRAJ_MAGIC: &[u8; 4] = b"TRAJ";
const MODL_MAGIC: &[u8; 4] = b"SDBM";
const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("{} file truncated", self.what)));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expect {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}",
                self.what,
                String::from_utf8_lossy(got)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported version {v}",
                self.what
            )));
        }
        Ok(())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn f32_payload(out: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

// ----------------------------------------------------------------------
// CIMG
// ----------------------------------------------------------------------

pub fn write_cimg(path: &Path, img: &ComplexImage) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * img.n_pixels());
    buf.extend_from_slice(CIMG_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(img.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(img.width() as u32).to_le_bytes());
    f32_payload(&mut buf, img.data().iter().flat_map(|v| [v.re, v.im]));
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_cimg(path: &Path) -> Result<ComplexImage> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf, "CIMG");
    r.magic(CIMG_MAGIC)?;
    r.version()?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let payload = r.take(8 * h * w)?;
    r.done()?;
    let data: Vec<Complex64> = payload
        .chunks_exact(8)
        .map(|c| {
            Complex64::new(
                f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
            )
        })
        .collect();
    ComplexImage::new(h, w, data)
}

// ----------------------------------------------------------------------
// FMAP
// ----------------------------------------------------------------------

pub fn write_fmap(path: &Path, fmap: &FieldMap) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * fmap.data().len());
    buf.extend_from_slice(FMAP_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(fmap.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(fmap.width() as u32).to_le_bytes());
    f32_payload(&mut buf, fmap.data().iter().cloned());
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_fmap(path: &Path) -> Result<FieldMap> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf, "FMAP");
    r.magic(FMAP_MAGIC)?;
    r.version()?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let payload = r.take(4 * h * w)?;
    r.done()?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FieldMap::new(h, w, data)
}

// ----------------------------------------------------------------------
// TRAJ
// ----------------------------------------------------------------------

pub fn write_traj(path: &Path, traj: &SpiralTrajectory) -> Result<()> {
    let n = traj.n_samples();
    let mut buf = Vec::with_capacity(28 + 16 * n);
    buf.extend_from_slice(TRAJ_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(traj.n_interleaves() as u32).to_le_bytes());
    buf.extend_from_slice(&(traj.samples_per_interleaf() as u32).to_le_bytes());
    buf.extend_from_slice(&traj.dwell_time().to_le_bytes());
    buf.extend_from_slice(&traj.readout_duration().to_le_bytes());
    for j in 0..n {
        buf.extend_from_slice(&traj.kx()[j].to_le_bytes());
        buf.extend_from_slice(&traj.ky()[j].to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_traj(path: &Path) -> Result<SpiralTrajectory> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf, "TRAJ");
    r.magic(TRAJ_MAGIC)?;
    r.version()?;
    let n_interleaves = r.u32()? as usize;
    let per = r.u32()? as usize;
    let dwell = r.f64()?;
    let t_read = r.f64()?;
    let total = n_interleaves.checked_mul(per).ok_or_else(|| {
        Error::Format("TRAJ: sample count overflow".into())
    })?;
    let mut kx = Vec::with_capacity(total);
    let mut ky = Vec::with_capacity(total);
    for _ in 0..total {
        kx.push(r.f64()?);
        ky.push(r.f64()?);
    }
    r.done()?;
    // timestamps are implicit: arithmetic within each interleaf
    let mut t = Vec::with_capacity(total);
    for _ in 0..n_interleaves {
        for j in 0..per {
            t.push(j as f64 * dwell);
        }
    }
    SpiralTrajectory::from_samples(kx, ky, t, n_interleaves, t_read, dwell)
}

// ----------------------------------------------------------------------
// MODL
// ----------------------------------------------------------------------

pub fn write_model(path: &Path, model: &CnnModel) -> Result<()> {
    let layers = model.layers();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODL_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        buf.extend_from_slice(&(layer.spec.in_channels as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.spec.out_channels as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.spec.kernel as u32).to_le_bytes());
    }
    for layer in layers {
        f32_payload(&mut buf, layer.weights.iter().cloned());
        f32_payload(&mut buf, layer.bias.iter().cloned());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<CnnModel> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf, "MODL");
    r.magic(MODL_MAGIC)?;
    r.version()?;
    let n_layers = r.u32()? as usize;
    if n_layers > 16 {
        return Err(Error::Format(format!(
            "MODL: implausible layer count {n_layers}"
        )));
    }
    let mut specs = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let cin = r.u32()? as usize;
        let cout = r.u32()? as usize;
        let k = r.u32()? as usize;
        specs.push(ConvSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            // the final layer is linear, all others ReLU
            has_relu: i + 1 < n_layers,
        });
    }
    let mut layers = Vec::with_capacity(n_layers);
    for spec in specs {
        let n_w = spec
            .in_channels
            .checked_mul(spec.out_channels)
            .and_then(|v| v.checked_mul(spec.kernel * spec.kernel))
            .ok_or_else(|| Error::Format("MODL: layer size overflow".into()))?;
        let weights: Vec<f64> = r
            .take(4 * n_w)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let bias: Vec<f64> = r
            .take(4 * spec.out_channels)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        layers.push(ConvLayer {
            spec,
            weights,
            bias,
        });
    }
    r.done()?;
    CnnModel::from_layers(layers)
}

// ----------------------------------------------------------------------
// run configuration
// ----------------------------------------------------------------------

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryProtocol {
    pub t_read_s: f64,
    pub n_interleaves: usize,
}

impl Default for TrajectoryProtocol {
    fn default() -> Self {
        Self {
            t_read_s: 2.52e-3,
            n_interleaves: 13,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub dwell_s: f64,
    pub short: TrajectoryProtocol,
    pub long: TrajectoryProtocol,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            dwell_s: 4e-6,
            short: TrajectoryProtocol::default(),
            long: TrajectoryProtocol {
                t_read_s: 7.936e-3,
                n_interleaves: 5,
            },
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GriddingConfig {
    pub oversampling: f64,
    pub kernel_width: usize,
    pub density_iters: usize,
}

impl Default for GriddingConfig {
    fn default() -> Self {
        Self {
            oversampling: 2.0,
            kernel_width: 6,
            // the weight vector settles noticeably past the textbook 20
            density_iters: 40,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub n_subjects: usize,
    pub n_frames: usize,
    pub motion_amplitude_px: f64,
    pub tissue_min: f64,
    pub tissue_max: f64,
    pub boundary_smoothness_px: f64,
    pub peak_offres_hz: f64,
    pub kspace_noise_std: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let p = PhantomParams::default();
        Self {
            n_subjects: 7,
            n_frames: p.n_frames,
            motion_amplitude_px: p.motion_amplitude_px,
            tissue_min: p.tissue_min,
            tissue_max: p.tissue_max,
            boundary_smoothness_px: p.boundary_smoothness_px,
            peak_offres_hz: p.peak_offres_hz,
            kspace_noise_std: p.kspace_noise_std,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min_hz: f64,
    pub beta_max_hz: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let a = AugmentParams::default();
        Self {
            alpha_min: a.alpha_min,
            alpha_max: a.alpha_max,
            beta_min_hz: a.beta_min_hz,
            beta_max_hz: a.beta_max_hz,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MfiConfig {
    /// bank bin count; null selects the time-bandwidth heuristic
    pub bins: Option<usize>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IrConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub lambda: f64,
    pub warm_start: bool,
    pub self_check: bool,
}

impl Default for IrConfig {
    fn default() -> Self {
        let c = CgConfig::default();
        Self {
            max_iters: c.max_iters,
            tol: c.tol,
            lambda: c.lambda,
            warm_start: c.warm_start,
            self_check: c.self_check,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda_gdl: f64,
    pub patience: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            lambda_gdl: t.lambda_gdl,
            patience: t.patience,
        }
    }
}

/// All module defaults in one human-readable document.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub matrix: usize,
    /// physical field of view, metadata only; the math runs on FOV = 1
    pub fov_cm: f64,
    pub trajectory: TrajectoryConfig,
    pub gridding: GriddingConfig,
    pub phantom: PhantomConfig,
    pub augment: AugmentConfig,
    pub mfi: MfiConfig,
    pub ir: IrConfig,
    pub cnn: CnnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            seed: 42,
            matrix: 84,
            fov_cm: 20.0,
            trajectory: TrajectoryConfig::default(),
            gridding: GriddingConfig::default(),
            phantom: PhantomConfig::default(),
            augment: AugmentConfig::default(),
            mfi: MfiConfig::default(),
            ir: IrConfig::default(),
            cnn: CnnConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        if cfg.schema_version != 1 {
            return Err(Error::Config(format!(
                "unsupported config schema version {}",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix < 32 {
            return Err(Error::Config(format!("matrix {} < 32", self.matrix)));
        }
        self.phantom_params()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.augment_params()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.cg_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn phantom_params(&self) -> PhantomParams {
        PhantomParams {
            seed: self.seed,
            matrix: self.matrix,
            n_frames: self.phantom.n_frames,
            motion_amplitude_px: self.phantom.motion_amplitude_px,
            tissue_min: self.phantom.tissue_min,
            tissue_max: self.phantom.tissue_max,
            boundary_smoothness_px: self.phantom.boundary_smoothness_px,
            peak_offres_hz: self.phantom.peak_offres_hz,
            kspace_noise_std: self.phantom.kspace_noise_std,
        }
    }

    pub fn augment_params(&self) -> AugmentParams {
        AugmentParams {
            alpha_min: self.augment.alpha_min,
            alpha_max: self.augment.alpha_max,
            beta_min_hz: self.augment.beta_min_hz,
            beta_max_hz: self.augment.beta_max_hz,
        }
    }

    pub fn cg_config(&self) -> CgConfig {
        CgConfig {
            max_iters: self.ir.max_iters,
            tol: self.ir.tol,
            lambda: self.ir.lambda,
            warm_start: self.ir.warm_start,
            self_check: self.ir.self_check,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.cnn.learning_rate,
            batch_size: self.cnn.batch_size,
            epochs: self.cnn.epochs,
            beta1: self.cnn.beta1,
            beta2: self.cnn.beta2,
            epsilon: self.cnn.epsilon,
            lambda_gdl: self.cnn.lambda_gdl,
            patience: self.cnn.patience,
            seed: self.seed,
        }
    }
}

// ----------------------------------------------------------------------
// dataset manifest
// ----------------------------------------------------------------------

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TrajectoryManifest {
    pub label: String,
    pub t_read_s: f64,
    pub dwell_s: f64,
    pub n_interleaves: usize,
    pub n_samples: usize,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct FrameManifest {
    pub subject: usize,
    pub frame: usize,
    pub alpha: f64,
    pub beta_hz: f64,
    /// normalization scale per trajectory, in trajectory order
    pub scales: Vec<f64>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CountManifest {
    pub cimg_truth: usize,
    pub cimg_blurred: usize,
    pub fmap: usize,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Manifest {
    pub schema_version: u32,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub matrix: usize,
    pub n_subjects: usize,
    pub n_frames: usize,
    pub splits: SplitManifest,
    pub trajectories: Vec<TrajectoryManifest>,
    pub frames: Vec<FrameManifest>,
    pub counts: CountManifest,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Small manifest written next to deblur outputs so evaluation can
/// refuse cross-config comparisons.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ResultManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub method: String,
    pub trajectory: String,
    pub frames: Vec<String>,
}

impl ResultManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
