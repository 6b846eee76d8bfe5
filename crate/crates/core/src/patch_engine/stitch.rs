use std::ops::Range;

use rayon::prelude::*;

use super::grid::{Anchor, PatchGrid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{Dims3, LabelVolume, ProbField, Volume, NUM_CLASSES};

/// Per-patch class probabilities, channel-major over a `width x height x depth` window.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPrediction<T> {
    pub anchor: Anchor,
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub probs: Vec<T>,
}

impl<T: Scalar> PatchPrediction<T> {
    pub fn new(anchor: Anchor, width: usize, height: usize, depth: usize, probs: Vec<T>) -> Result<Self> {
        if probs.len() != NUM_CLASSES * width * height * depth {
            return Err(Error::Argument(format!(
                "prediction {width}x{height}x{depth} needs {} values, got {}",
                NUM_CLASSES * width * height * depth,
                probs.len()
            )));
        }
        Ok(Self {
            anchor,
            width,
            height,
            depth,
            probs,
        })
    }

    /// One-hot encoding of a window of labels (values must be `0..=3`).
    pub fn one_hot(anchor: Anchor, width: usize, height: usize, depth: usize, labels: &[u8]) -> Result<Self> {
        let n = width * height * depth;
        if labels.len() != n {
            return Err(Error::Argument("label window size mismatch".into()));
        }
        let mut probs = vec![T::zero(); NUM_CLASSES * n];
        for (i, &l) in labels.iter().enumerate() {
            let c = l as usize;
            if c >= NUM_CLASSES {
                return Err(Error::Validation(format!("label {l} outside 0..=3")));
            }
            probs[c * n + i] = T::one();
        }
        Ok(Self {
            anchor,
            width,
            height,
            depth,
            probs,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.width * self.height * self.depth
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.voxel_count();
        &self.probs[c * n..(c + 1) * n]
    }
}

/// Accumulates overlapping predictions into a slab `z_range` of a volume.
///
/// Contributions are summed in the order they are added; feeding predictions
/// in canonical anchor order yields schedule-independent results.
pub struct Stitcher<'g, T> {
    grid: &'g PatchGrid,
    dims: Dims3,
    z_range: Range<usize>,
    sums: Vec<T>,
    counts: Vec<u32>,
}

impl<'g, T: Scalar> Stitcher<'g, T> {
    pub fn new(grid: &'g PatchGrid, dims: Dims3, z_range: Range<usize>) -> Result<Self> {
        if grid.image_dims != (dims.width, dims.height) {
            return Err(Error::Argument(format!(
                "grid planned for {}x{} but target is {}x{}",
                grid.image_dims.0, grid.image_dims.1, dims.width, dims.height
            )));
        }
        if z_range.start >= z_range.end || z_range.end > dims.depth {
            return Err(Error::Argument(format!(
                "slab {z_range:?} invalid for depth {}",
                dims.depth
            )));
        }
        let n = dims.plane_len() * z_range.len();
        Ok(Self {
            grid,
            dims,
            z_range,
            sums: vec![T::zero(); NUM_CLASSES * n],
            counts: vec![0; n],
        })
    }

    fn check(&self, pred: &PatchPrediction<T>) -> Result<()> {
        let a = pred.anchor;
        if !self.grid.contains_anchor(a.x, a.y) {
            return Err(Error::Argument(format!("anchor ({}, {}) is not in the grid", a.x, a.y)));
        }
        if pred.width != self.grid.patch_w || pred.height != self.grid.patch_h {
            return Err(Error::Argument(format!(
                "prediction is {}x{} but grid patches are {}x{}",
                pred.width, pred.height, self.grid.patch_w, self.grid.patch_h
            )));
        }
        if a.z + pred.depth > self.dims.depth {
            return Err(Error::Argument(format!(
                "prediction slices {}..{} exceed depth {}",
                a.z,
                a.z + pred.depth,
                self.dims.depth
            )));
        }
        Ok(())
    }

    /// Adds the part of `pred` that overlaps this slab.
    pub fn add(&mut self, pred: &PatchPrediction<T>) -> Result<()> {
        self.check(pred)?;
        let a = pred.anchor;
        let z_lo = a.z.max(self.z_range.start);
        let z_hi = (a.z + pred.depth).min(self.z_range.end);
        if z_lo >= z_hi {
            return Ok(());
        }
        let plane = self.dims.plane_len();
        let slab_n = plane * self.z_range.len();
        let pred_n = pred.voxel_count();
        let pw = pred.width;
        let pred_plane = pw * pred.height;
        for z in z_lo..z_hi {
            let out_z = (z - self.z_range.start) * plane;
            let in_z = (z - a.z) * pred_plane;
            for py in 0..pred.height {
                let out_row = out_z + (a.y + py) * self.dims.width + a.x;
                let in_row = in_z + py * pw;
                for c in &mut self.counts[out_row..out_row + pw] {
                    *c += 1;
                }
                for ch in 0..NUM_CLASSES {
                    let dst = &mut self.sums[ch * slab_n + out_row..ch * slab_n + out_row + pw];
                    let src = &pred.probs[ch * pred_n + in_row..ch * pred_n + in_row + pw];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
        Ok(())
    }

    /// Mean over covering patches, renormalised to unit channel sum.
    pub fn finish(self, id: impl Into<String>) -> Result<ProbField<T>> {
        let n = self.counts.len();
        let mut data = self.sums;
        for i in 0..n {
            let count = self.counts[i];
            if count == 0 {
                let (x, y, z) = (
                    i % self.dims.width,
                    (i / self.dims.width) % self.dims.height,
                    i / self.dims.plane_len() + self.z_range.start,
                );
                return Err(Error::Coverage { x, y, z });
            }
            let k = T::of(count as f64);
            let mut total = T::zero();
            for ch in 0..NUM_CLASSES {
                let v = data[ch * n + i] / k;
                data[ch * n + i] = v;
                total += v;
            }
            if !(total > T::zero()) {
                let (x, y) = (i % self.dims.width, (i / self.dims.width) % self.dims.height);
                return Err(Error::Validation(format!(
                    "stitched probabilities at ({x}, {y}) sum to {total}"
                )));
            }
            if total != T::one() {
                for ch in 0..NUM_CLASSES {
                    data[ch * n + i] /= total;
                }
            }
        }
        let dims = Dims3::new(self.dims.width, self.dims.height, self.z_range.len());
        ProbField::from_raw(id, dims, data)
    }
}

/// Merges patch predictions into a full probability volume.
///
/// Each voxel receives the mean over every covering patch. Predictions are
/// merged in canonical anchor order, one z-plane per task, so the result is
/// identical for any input ordering and any thread count.
pub fn stitch<T: Scalar>(preds: &[PatchPrediction<T>], grid: &PatchGrid, dims: Dims3) -> Result<ProbField<T>> {
    stitch_named("", preds, grid, dims)
}

pub(crate) fn stitch_named<T: Scalar>(
    id: &str,
    preds: &[PatchPrediction<T>],
    grid: &PatchGrid,
    dims: Dims3,
) -> Result<ProbField<T>> {
    let mut order: Vec<&PatchPrediction<T>> = preds.iter().collect();
    order.sort_by_key(|p| p.anchor);
    if let Some(w) = order.windows(2).find(|w| w[0].anchor == w[1].anchor) {
        let a = w[0].anchor;
        return Err(Error::Argument(format!(
            "duplicate prediction for anchor ({}, {}, {})",
            a.x, a.y, a.z
        )));
    }
    let planes: Vec<ProbField<T>> = (0..dims.depth)
        .into_par_iter()
        .map(|z| {
            let mut s = Stitcher::new(grid, dims, z..z + 1)?;
            for p in order.iter().filter(|p| p.anchor.z <= z && z < p.anchor.z + p.depth) {
                s.add(p)?;
            }
            s.finish(id)
        })
        .collect::<Result<_>>()?;

    let n = dims.voxel_count();
    let plane = dims.plane_len();
    let mut data = vec![T::zero(); NUM_CLASSES * n];
    for (z, p) in planes.iter().enumerate() {
        for ch in 0..NUM_CLASSES {
            data[ch * n + z * plane..ch * n + (z + 1) * plane].copy_from_slice(p.channel(ch));
        }
    }
    ProbField::from_raw(id, dims, data)
}

/// Per-voxel argmax; ties go to the lowest class index.
pub fn labelize<T: Scalar>(prob: &ProbField<T>) -> LabelVolume {
    let dims = prob.dims();
    let n = dims.voxel_count();
    let labels: Vec<u8> = (0..n)
        .map(|i| {
            let mut best = 0usize;
            let mut best_p = prob.data()[i];
            for c in 1..NUM_CLASSES {
                let p = prob.data()[c * n + i];
                if p > best_p {
                    best = c;
                    best_p = p;
                }
            }
            best as u8
        })
        .collect();
    LabelVolume::new(prob.id.clone(), Volume::new(dims, labels).expect("dims match"))
        .expect("argmax is a valid class")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch_engine::plan_grid;

    fn field(p: [f64; 4]) -> ProbField<f64> {
        ProbField::from_raw("t", Dims3::new(1, 1, 1), p.to_vec()).unwrap()
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(labelize(&field([0.7, 0.1, 0.1, 0.1])).data(), &[0]);
        assert_eq!(labelize(&field([0.25; 4])).data(), &[0]);
        assert_eq!(labelize(&field([0.1, 0.2, 0.5, 0.2])).data(), &[2]);
        assert_eq!(labelize(&field([0.1, 0.4, 0.1, 0.4])).data(), &[1]);
    }

    fn one_hot_preds(grid: &PatchGrid, depth: usize, class: u8) -> Vec<PatchPrediction<f32>> {
        let n = grid.patch_w * grid.patch_h;
        (0..depth)
            .flat_map(|z| {
                grid.anchors.iter().map(move |&(x, y)| {
                    PatchPrediction::one_hot(Anchor::new(x, y, z), grid.patch_w, grid.patch_h, 1, &vec![class; n])
                        .unwrap()
                })
            })
            .collect()
    }

    #[test]
    fn consensus_background() {
        let g = plan_grid((40, 30), (16, 16), 0.5).unwrap();
        let d = Dims3::new(40, 30, 2);
        let f = stitch(&one_hot_preds(&g, 2, 0), &g, d).unwrap();
        f.validate().unwrap();
        assert!(f.channel(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn interior_voxel_sixteen_way_mean() {
        let g = plan_grid((384, 384), (128, 128), 0.75).unwrap();
        let d = Dims3::new(384, 384, 1);
        // brute-force rectangle membership for the probe voxel
        let probe = (200usize, 190usize);
        let covering = g
            .anchors
            .iter()
            .filter(|&&(x, y)| (x..x + 128).contains(&probe.0) && (y..y + 128).contains(&probe.1))
            .count();
        assert_eq!(covering, 16);
        let f = stitch(&one_hot_preds(&g, 1, 1), &g, d).unwrap();
        let i = d.index(probe.0, probe.1, 0);
        assert_eq!(f.voxel(i), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_patch_is_coverage_error() {
        let g = plan_grid((32, 32), (16, 16), 0.0).unwrap();
        let mut preds = one_hot_preds(&g, 1, 0);
        preds.pop();
        match stitch(&preds, &g, Dims3::new(32, 32, 1)) {
            Err(Error::Coverage { x, y, z }) => assert_eq!((x, y, z), (16, 16, 0)),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn foreign_anchor_rejected() {
        let g = plan_grid((32, 32), (16, 16), 0.0).unwrap();
        let mut preds = one_hot_preds(&g, 1, 0);
        preds[0].anchor.x = 3;
        assert!(stitch(&preds, &g, Dims3::new(32, 32, 1)).is_err());
    }

    #[test]
    fn duplicates_rejected() {
        let g = plan_grid((32, 32), (16, 16), 0.0).unwrap();
        let mut preds = one_hot_preds(&g, 1, 0);
        preds.push(preds[0].clone());
        assert!(stitch(&preds, &g, Dims3::new(32, 32, 1)).is_err());
    }
}
