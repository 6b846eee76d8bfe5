//! Segmentation backends and the class-weighted loss.
//!
//! A backend turns one input window into a 4-channel probability window.
//! The output covers the window's full in-plane extent; its depth is the
//! whole slab for 3D inputs and the centre plane otherwise.

mod external;
mod loss;
mod oracle;
mod threshold;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use external::ExternalBackend;
pub use loss::{class_weights, cross_entropy, weighted_cross_entropy, ClassWeights, LOG_CLAMP};
pub use oracle::OracleBackend;
pub use threshold::{ThresholdBackend, DEFAULT_BANDS};

use crate::error::{arg, Error, Result};
use crate::patch_engine::{Anchor, DepthMode, Patch, PatchPrediction};
use crate::scalar::Scalar;
use crate::volume::{Dims3, NUM_CLASSES, SIMPLEX_TOLERANCE};

/// Full-image (`F`) or overlapping-patch (`P`) inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    F,
    P,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::F => "F",
            Variant::P => "P",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "F" | "f" => Ok(Variant::F),
            "P" | "p" => Ok(Variant::P),
            _ => Err(Error::Argument(format!("variant must be F or P, got {s:?}"))),
        }
    }
}

/// One inference call.
#[derive(Debug, Clone, Copy)]
pub struct PredictRequest<'a, T> {
    pub volume_id: &'a str,
    /// Geometry of the (preprocessed) volume the patch was cut from.
    pub volume_dims: Dims3,
    pub depth_mode: DepthMode,
    pub patch: &'a Patch<T>,
}

impl<T: Copy> PredictRequest<'_, T> {
    /// Anchor and (width, height, depth) of the expected output window.
    pub fn output_window(&self) -> (Anchor, usize, usize, usize) {
        let p = self.patch;
        let depth = match self.depth_mode {
            DepthMode::D3 => p.depth,
            _ => 1,
        };
        (p.anchor, p.width, p.height, depth)
    }

    /// Index of the input plane matching output plane `k`.
    pub fn input_plane(&self, k: usize) -> usize {
        match self.depth_mode {
            DepthMode::D2 | DepthMode::D3 => k,
            DepthMode::D25 { radius } => radius,
        }
    }
}

/// The seat for a segmentation model. Implementations must be safe to call
/// concurrently on disjoint requests.
pub trait SegmentationBackend<T: Scalar>: Send + Sync {
    /// Model tag used in reports, e.g. `unet`, `threshold`, `oracle`.
    fn descriptor(&self) -> &str;

    fn predict(&self, req: &PredictRequest<'_, T>) -> Result<PatchPrediction<T>>;
}

/// Checks a backend output against the request and the simplex invariant.
pub fn check_prediction<T: Scalar>(req: &PredictRequest<'_, T>, pred: &PatchPrediction<T>) -> Result<()> {
    let (anchor, w, h, d) = req.output_window();
    if pred.anchor != anchor || (pred.width, pred.height, pred.depth) != (w, h, d) {
        return Err(Error::Internal(format!(
            "backend returned window {:?} {}x{}x{} for request {:?} {w}x{h}x{d}",
            pred.anchor, pred.width, pred.height, pred.depth, anchor
        )));
    }
    let n = pred.voxel_count();
    for i in 0..n {
        let s: f64 = (0..NUM_CLASSES).map(|c| pred.probs[c * n + i].as_f64()).sum();
        if (s - 1.0).abs() > SIMPLEX_TOLERANCE || (0..NUM_CLASSES).any(|c| !(pred.probs[c * n + i] >= T::zero())) {
            return Err(Error::Validation(format!("backend output at voxel {i} is off the simplex")));
        }
    }
    Ok(())
}

/// Training hyper-parameters carried into reports as metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub optimizer: String,
    pub decay: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub shuffle_each_epoch: bool,
    pub loss: String,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            optimizer: "adam".into(),
            decay: 0.95,
            lr_start: 1e-3,
            lr_end: 1e-4,
            epochs: 100,
            shuffle_each_epoch: true,
            loss: "weighted-cross-entropy".into(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return arg(format!(
                "learning rates must satisfy lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        if self.epochs == 0 {
            return arg("epochs must be > 0");
        }
        Ok(())
    }
}
