use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

/// How many B-scans a patch spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DepthMode {
    D2,
    /// Slab of `2 * radius + 1` neighbouring B-scans centred on the target slice.
    D25 { radius: usize },
    D3,
}

impl Default for DepthMode {
    fn default() -> Self {
        DepthMode::D2
    }
}

impl DepthMode {
    pub const D25_DEFAULT: DepthMode = DepthMode::D25 { radius: 1 };

    pub fn validate(&self) -> Result<()> {
        match self {
            DepthMode::D25 { radius: 0 } => arg("2.5D radius must be >= 1"),
            _ => Ok(()),
        }
    }

    /// Report label: `2D`, `2.5D` or `3D`.
    pub fn label(&self) -> &'static str {
        match self {
            DepthMode::D2 => "2D",
            DepthMode::D25 { .. } => "2.5D",
            DepthMode::D3 => "3D",
        }
    }

    /// Depth of an extracted patch for a volume of `volume_depth` slices.
    pub fn patch_depth(&self, volume_depth: usize) -> usize {
        match *self {
            DepthMode::D2 => 1,
            DepthMode::D25 { radius } => 2 * radius + 1,
            DepthMode::D3 => volume_depth,
        }
    }
}

impl fmt::Display for DepthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthMode::D2 => f.write_str("2d"),
            DepthMode::D25 { radius: 1 } => f.write_str("2.5d"),
            DepthMode::D25 { radius } => write!(f, "2.5d:{radius}"),
            DepthMode::D3 => f.write_str("3d"),
        }
    }
}

impl FromStr for DepthMode {
    type Err = Error;

    /// Accepts `2d`, `2.5d`, `2.5d:R`, `3d` (also `d2`, `d25`, `d3`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (head, radius) = match s.split_once(':') {
            Some((h, r)) => (
                h.to_string(),
                Some(r.parse::<usize>().map_err(|_| Error::Argument(format!("bad radius in {s:?}")))?),
            ),
            None => (s.clone(), None),
        };
        let mode = match head.as_str() {
            "2d" | "d2" => DepthMode::D2,
            "2.5d" | "d25" | "25d" => DepthMode::D25 {
                radius: radius.unwrap_or(1),
            },
            "3d" | "d3" => DepthMode::D3,
            _ => return Err(Error::Argument(format!("unknown depth mode {s:?}"))),
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// Patch origin in voxel coordinates. Ordering is canonical merge order:
/// by slice, then row-major within the slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Anchor {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Anchor {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        Self { z, y, x }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_w: usize,
    pub patch_h: usize,
    pub overlap: f64,
    pub stride_x: usize,
    pub stride_y: usize,
    /// Top-left `(x, y)` positions, row-major and duplicate-free.
    pub anchors: Vec<(usize, usize)>,
    pub image_dims: (usize, usize),
    pub depth_mode: DepthMode,
}

fn stride_for(patch: usize, overlap: f64) -> usize {
    ((patch as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Regular lattice positions plus a final edge-anchored one when the lattice
/// stops short of the far edge.
fn axis_anchors(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = len - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().expect("non-empty") != last {
        out.push(last);
    }
    out
}

/// Plans an overlapping grid of `patch = (w, h)` windows over `image_dims = (w, h)`.
pub fn plan_grid(image_dims: (usize, usize), patch: (usize, usize), overlap: f64) -> Result<PatchGrid> {
    let (iw, ih) = image_dims;
    let (pw, ph) = patch;
    if pw == 0 || ph == 0 {
        return arg("patch dimensions must be positive");
    }
    if pw > iw || ph > ih {
        return arg(format!("patch {pw}x{ph} is larger than image {iw}x{ih}"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return arg(format!("overlap must lie in [0, 1), got {overlap}"));
    }
    let stride_x = stride_for(pw, overlap);
    let stride_y = stride_for(ph, overlap);
    let xs = axis_anchors(iw, pw, stride_x);
    let ys = axis_anchors(ih, ph, stride_y);
    let anchors = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    Ok(PatchGrid {
        patch_w: pw,
        patch_h: ph,
        overlap,
        stride_x,
        stride_y,
        anchors,
        image_dims,
        depth_mode: DepthMode::D2,
    })
}

impl PatchGrid {
    pub fn with_depth_mode(mut self, mode: DepthMode) -> Self {
        self.depth_mode = mode;
        self
    }

    /// A single window covering the whole image (full-image inference).
    pub fn full_image(image_dims: (usize, usize)) -> Self {
        plan_grid(image_dims, image_dims, 0.0).expect("patch equals image")
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn contains_anchor(&self, x: usize, y: usize) -> bool {
        self.anchors
            .binary_search_by(|&(ax, ay)| (ay, ax).cmp(&(y, x)))
            .is_ok()
    }

    /// Number of patch rectangles containing pixel `(x, y)`.
    pub fn coverage_count(&self, x: usize, y: usize) -> usize {
        self.anchors
            .iter()
            .filter(|&&(ax, ay)| x >= ax && x < ax + self.patch_w && y >= ay && y < ay + self.patch_h)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force lattice: every multiple of the stride that fits, plus the
    /// far-edge position, deduplicated and sorted.
    fn brute_axis(len: usize, patch: usize, stride: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..len).filter(|a| a % stride == 0 && a + patch <= len).collect();
        v.push(len - patch);
        v.sort();
        v.dedup();
        v
    }

    #[test]
    fn exact_fit_384() {
        let g = plan_grid((384, 384), (128, 128), 0.75).unwrap();
        assert_eq!(g.stride_x, 32);
        assert_eq!(g.len(), 81);
        let xs: Vec<usize> = g.anchors.iter().filter(|a| a.1 == 0).map(|a| a.0).collect();
        assert_eq!(xs, brute_axis(384, 128, 32));
        assert_eq!(xs, (0..=256).step_by(32).collect::<Vec<_>>());
    }

    #[test]
    fn edge_anchor_572() {
        let g = plan_grid((572, 572), (128, 128), 0.75).unwrap();
        let xs: Vec<usize> = g.anchors.iter().filter(|a| a.1 == 0).map(|a| a.0).collect();
        assert_eq!(xs, brute_axis(572, 128, 32));
        assert_eq!(xs.len(), 15);
        assert_eq!(*xs.last().unwrap(), 444);
        assert_eq!(g.len(), 225);
    }

    #[test]
    fn patch_equals_image() {
        for ov in [0.0, 0.5, 0.9] {
            let g = plan_grid((128, 128), (128, 128), ov).unwrap();
            assert_eq!(g.anchors, vec![(0, 0)]);
        }
    }

    #[test]
    fn invalid_requests() {
        assert!(plan_grid((100, 100), (128, 128), 0.5).is_err());
        assert!(plan_grid((200, 200), (128, 128), 1.0).is_err());
        assert!(plan_grid((200, 200), (128, 128), -0.1).is_err());
    }

    #[test]
    fn interior_coverage_is_sixteen() {
        let g = plan_grid((384, 384), (128, 128), 0.75).unwrap();
        assert_eq!(g.coverage_count(192, 200), 16);
        assert_eq!(g.coverage_count(0, 0), 1);
    }

    #[test]
    fn depth_mode_parse() {
        assert_eq!("2.5d".parse::<DepthMode>().unwrap(), DepthMode::D25 { radius: 1 });
        assert_eq!("d25:2".parse::<DepthMode>().unwrap(), DepthMode::D25 { radius: 2 });
        assert_eq!("3D".parse::<DepthMode>().unwrap(), DepthMode::D3);
        assert!("2.5d:0".parse::<DepthMode>().is_err());
        assert_eq!(DepthMode::D25 { radius: 1 }.patch_depth(49), 3);
    }
}
