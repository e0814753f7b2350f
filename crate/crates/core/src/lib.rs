//! Simulation and removal of spatially varying off-resonance blurring in
//! spiral real-time MRI.
//!
//! The library covers the full synthetic pipeline: spiral trajectory
//! generation, exact and gridding-based non-uniform Fourier transforms,
//! an off-resonance forward model (exact and time-segmented), three
//! deblurring engines (multi-frequency interpolation, CG-based iterative
//! reconstruction, and a small residual CNN trained from scratch),
//! synthetic vocal-tract phantoms with field-map augmentation, image
//! quality metrics, and binary file formats plus the batch pipeline that
//! drives them.

pub mod cnn;
pub mod data;
pub mod error;
pub mod fft;
pub mod image;
pub mod io;
pub mod ir;
pub mod metrics;
pub mod mfi;
pub mod offres;
pub mod pipeline;
pub mod rng;
pub mod trajectory;
pub mod transform;

pub use error::{Error, Result};
pub use image::{inner_product, pixel_coordinates, ComplexImage, FieldMap, PixelGrid};
pub use rng::Rng;
pub use trajectory::{make_spiral, KSpaceData, SpiralTrajectory};
