//! Segmentation pipeline for volumetric OCT scans: MetaImage I/O,
//! preprocessing, overlapping patch extraction in 2D/2.5D/3D, prediction
//! stitching, Dice evaluation with per-vendor cross-validation, and report
//! rendering.
//!
//! Numeric stages are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the on-disk working precision.

pub mod augment;
pub mod backends;
pub mod error;
pub mod eval;
pub mod patch_engine;
pub mod preprocess;
pub mod scalar;
pub mod volume;
pub mod volume_io;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use volume::{
    Dims3, FluidClass, Image2, IntensityVolume, LabelVolume, ProbField, Vendor, Volume, NUM_CLASSES,
};

/// Intensity volume at the working precision.
pub type OctVolume = IntensityVolume<f32>;
/// Double-precision intensity volume.
pub type OctVolume64 = IntensityVolume<f64>;
/// Probability field at the working precision.
pub type ProbVolume = ProbField<f32>;
pub type ProbVolume64 = ProbField<f64>;
