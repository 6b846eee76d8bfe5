use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{dice, fluid_confusions, ConfusionCounts};
use super::report::DiceRecord;
use crate::backends::{check_prediction, PredictRequest, SegmentationBackend, Variant};
use crate::error::{arg, Error, Result};
use crate::patch_engine::{close_all, extract_patch, labelize, plan_grid, Anchor, DepthMode, PatchGrid, PatchPrediction, Stitcher};
use crate::preprocess::{preprocess_intensity, resize_volume, PreprocessConfig};
use crate::scalar::Scalar;
use crate::volume::{FluidClass, IntensityVolume, LabelVolume, Vendor, Volume};

/// How per-volume results combine into one score per vendor and fluid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    /// Mean of per-volume Dice.
    #[default]
    Macro,
    /// Dice of the voxel counts summed over volumes.
    Micro,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Macro => "macro",
            Pooling::Micro => "micro",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "macro" => Ok(Pooling::Macro),
            "micro" => Ok(Pooling::Micro),
            _ => Err(Error::Argument(format!("pooling must be macro or micro, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preprocess: PreprocessConfig,
    pub patch: (usize, usize),
    pub overlap: f64,
    pub depth_mode: DepthMode,
    pub variant: Variant,
    /// Square closing radius applied per fluid after labelling; 0 skips it.
    pub closing_radius: usize,
    pub pooling: Pooling,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            patch: (128, 128),
            overlap: 0.75,
            depth_mode: DepthMode::D2,
            variant: Variant::P,
            closing_radius: 1,
            pooling: Pooling::Macro,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.depth_mode.validate()?;
        if self.variant == Variant::P {
            plan_grid(self.target(), self.patch, self.overlap)?;
        }
        Ok(())
    }

    /// Working in-plane size for the configured depth mode.
    pub fn target(&self) -> (usize, usize) {
        match self.depth_mode {
            DepthMode::D2 => self.preprocess.target_2d,
            _ => self.preprocess.target_vol,
        }
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        let g = match self.variant {
            Variant::P => plan_grid(self.target(), self.patch, self.overlap)?,
            Variant::F => PatchGrid::full_image(self.target()),
        };
        Ok(g.with_depth_mode(self.depth_mode))
    }
}

/// Result of one test volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeScore {
    pub volume_id: String,
    pub vendor: Vendor,
    /// IRF, SRF, PED.
    pub counts: [ConfusionCounts; 3],
}

impl VolumeScore {
    pub fn dice(&self) -> [f64; 3] {
        self.counts.map(dice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub scores: Vec<VolumeScore>,
    pub records: Vec<DiceRecord>,
}

/// Canonical (z-major, then y, then x) order of the grid's windows.
fn canonical_anchors(grid: &PatchGrid) -> Vec<(usize, usize)> {
    let mut a = grid.anchors.clone();
    a.sort_by_key(|&(x, y)| (y, x));
    a
}

fn predict_one<T: Scalar, B: SegmentationBackend<T> + ?Sized>(
    backend: &B,
    vol: &IntensityVolume<T>,
    grid: &PatchGrid,
    anchor: (usize, usize),
    z: usize,
) -> Result<PatchPrediction<T>> {
    let patch = extract_patch(&vol.voxels, grid.depth_mode, anchor, (grid.patch_w, grid.patch_h), z)
        .map_err(|e| e.in_stage(&vol.id, "extract"))?;
    let req = PredictRequest {
        volume_id: &vol.id,
        volume_dims: vol.dims(),
        depth_mode: grid.depth_mode,
        patch: &patch,
    };
    let pred = backend.predict(&req).map_err(|e| e.in_stage(&vol.id, "predict"))?;
    check_prediction(&req, &pred).map_err(|e| e.in_stage(&vol.id, "predict"))?;
    Ok(pred)
}

/// Runs the backend over every window of `grid` and returns argmax labels.
///
/// 2D and 2.5D stitch one B-scan at a time; 3D windows span the volume and
/// are merged in canonical order, a few in flight at once. Memory stays at a
/// handful of windows plus one probability plane (or volume for 3D).
pub fn predict_labels<T: Scalar, B: SegmentationBackend<T> + ?Sized>(
    backend: &B,
    vol: &IntensityVolume<T>,
    grid: &PatchGrid,
) -> Result<LabelVolume> {
    let dims = vol.dims();
    if grid.image_dims != (dims.width, dims.height) {
        return arg(format!(
            "grid planned for {}x{} but {} is {dims}",
            grid.image_dims.0, grid.image_dims.1, vol.id
        ));
    }
    let order = canonical_anchors(grid);
    let tag = |e: Error| e.in_stage(&vol.id, "stitch");
    if grid.depth_mode == DepthMode::D3 {
        let mut st = Stitcher::new(grid, dims, 0..dims.depth).map_err(tag)?;
        let chunk = rayon::current_num_threads().max(1);
        for group in order.chunks(chunk) {
            let preds: Vec<PatchPrediction<T>> = group
                .par_iter()
                .map(|&a| predict_one(backend, vol, grid, a, 0))
                .collect::<Result<_>>()?;
            for p in &preds {
                st.add(p).map_err(tag)?;
            }
        }
        return Ok(labelize(&st.finish(vol.id.clone()).map_err(tag)?));
    }
    let planes: Vec<Vec<u8>> = (0..dims.depth)
        .into_par_iter()
        .map(|z| {
            let mut st = Stitcher::new(grid, dims, z..z + 1).map_err(tag)?;
            for &a in &order {
                let p = predict_one(backend, vol, grid, a, z)?;
                debug_assert_eq!(p.anchor, Anchor::new(a.0, a.1, z));
                st.add(&p).map_err(tag)?;
            }
            Ok(labelize(&st.finish(vol.id.clone()).map_err(tag)?).data().to_vec())
        })
        .collect::<Result<_>>()?;
    let voxels = Volume::new(dims, planes.concat())?;
    LabelVolume::new(vol.id.clone(), voxels)
}

/// Preprocessed truth and post-processed prediction for one volume, both at
/// the working resolution.
pub fn segment_case<T: Scalar, B: SegmentationBackend<T> + ?Sized>(
    cfg: &ExperimentConfig,
    backend: &B,
    volume: &IntensityVolume<T>,
    truth: &LabelVolume,
) -> Result<(LabelVolume, LabelVolume)> {
    let id = volume.id.as_str();
    if volume.dims() != truth.dims() {
        return Err(Error::Validation(format!("image {} and labels {} differ", volume.dims(), truth.dims()))
            .in_stage(id, "load"));
    }
    let target = cfg.target();
    let pre = preprocess_intensity(volume, target, &cfg.preprocess).map_err(|e| e.in_stage(id, "preprocess"))?;
    let mut truth = resize_volume(truth, target).map_err(|e| e.in_stage(id, "preprocess"))?;
    truth.id = id.to_string();
    let grid = cfg.grid().map_err(|e| e.in_stage(id, "plan_grid"))?;
    let mut pred = predict_labels(backend, &pre, &grid)?;
    if cfg.closing_radius > 0 {
        pred = close_all(&pred, cfg.closing_radius).map_err(|e| e.in_stage(id, "close"))?;
    }
    Ok((pred, truth))
}

pub fn score_case<T: Scalar, B: SegmentationBackend<T> + ?Sized>(
    cfg: &ExperimentConfig,
    backend: &B,
    vendor: Vendor,
    volume: &IntensityVolume<T>,
    truth: &LabelVolume,
) -> Result<VolumeScore> {
    let (pred, truth) = segment_case(cfg, backend, volume, truth)?;
    let counts = fluid_confusions(&pred, &truth).map_err(|e| e.in_stage(&volume.id, "dice"))?;
    Ok(VolumeScore {
        volume_id: volume.id.clone(),
        vendor,
        counts,
    })
}

/// One record per (vendor, fluid) present in `scores`.
pub fn aggregate(
    scores: &[VolumeScore],
    dimension: &str,
    model: &str,
    variant: Variant,
    fold: usize,
    pooling: Pooling,
) -> Vec<DiceRecord> {
    let mut out = Vec::new();
    for vendor in Vendor::ALL {
        let mut mine: Vec<&VolumeScore> = scores.iter().filter(|s| s.vendor == vendor).collect();
        if mine.is_empty() {
            continue;
        }
        mine.sort_by(|a, b| a.volume_id.cmp(&b.volume_id));
        for (k, fluid) in FluidClass::FLUIDS.into_iter().enumerate() {
            let value = match pooling {
                Pooling::Macro => mine.iter().map(|s| dice(s.counts[k])).sum::<f64>() / mine.len() as f64,
                Pooling::Micro => dice(mine.iter().fold(ConfusionCounts::default(), |acc, s| acc + s.counts[k])),
            };
            out.push(DiceRecord {
                dimension: dimension.to_string(),
                model: model.to_string(),
                variant,
                vendor,
                fluid,
                dice: value,
                fold,
                n_volumes: mine.len(),
            });
        }
    }
    out
}

/// Scores the fold's test volumes and averages them per vendor.
///
/// `load` yields image and labels for a volume id. Volumes are processed in
/// parallel; results are ordered by volume id, so output does not depend on
/// scheduling.
pub fn run_experiment<T, B, L>(
    cfg: &ExperimentConfig,
    backend: &B,
    test: &[(Vendor, String)],
    load: L,
    fold: usize,
) -> Result<FoldResult>
where
    T: Scalar,
    B: SegmentationBackend<T> + ?Sized,
    L: Fn(&str) -> Result<(IntensityVolume<T>, LabelVolume)> + Sync,
{
    cfg.validate()?;
    if test.is_empty() {
        return arg(format!("fold {fold} has no test volumes"));
    }
    let mut order: Vec<&(Vendor, String)> = test.iter().collect();
    order.sort_by(|a, b| a.1.cmp(&b.1));
    let scores: Vec<VolumeScore> = order
        .par_iter()
        .map(|(vendor, id)| {
            let (image, labels) = load(id).map_err(|e| e.in_stage(id, "load"))?;
            score_case(cfg, backend, *vendor, &image, &labels)
        })
        .collect::<Result<_>>()?;
    let records = aggregate(
        &scores,
        cfg.depth_mode.label(),
        backend.descriptor(),
        cfg.variant,
        fold,
        cfg.pooling,
    );
    Ok(FoldResult { scores, records })
}
