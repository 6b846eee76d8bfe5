//! Patch grids, extraction, stitching and label post-processing.

mod extract;
mod grid;
mod morphology;
pub mod spill;
mod stitch;

pub use extract::{extract, extract_patch, Patch};
pub use grid::{plan_grid, Anchor, DepthMode, PatchGrid};
pub use morphology::{binary_close, close_all, close_mask};
pub use stitch::{labelize, stitch, PatchPrediction, Stitcher};
