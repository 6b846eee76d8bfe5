use rayon::prelude::*;

use super::grid::{Anchor, DepthMode, PatchGrid};
use crate::error::{Error, Result};
use crate::volume::Volume;

/// A window cut from a volume. `data` holds `depth` planes of
/// `width * height` values, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch<T> {
    /// Top-left corner; `z` is the target slice (D2, D25) or 0 (D3).
    pub anchor: Anchor,
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Patch<T> {
    pub fn plane(&self, k: usize) -> &[T] {
        let n = self.width * self.height;
        &self.data[k * n..(k + 1) * n]
    }
}

/// Cuts the window at `(x, y)` for target slice `z`. D25 slabs replicate the
/// edge slice beyond the volume boundary; D3 ignores `z` and spans all slices.
pub fn extract_patch<T: Copy>(
    vol: &Volume<T>,
    mode: DepthMode,
    anchor: (usize, usize),
    size: (usize, usize),
    z: usize,
) -> Result<Patch<T>> {
    let d = vol.dims();
    let (x0, y0) = anchor;
    let (w, h) = size;
    if x0 + w > d.width || y0 + h > d.height {
        return Err(Error::Internal(format!(
            "patch ({x0}, {y0}) {w}x{h} exceeds {}x{} image",
            d.width, d.height
        )));
    }
    let slices: Vec<usize> = match mode {
        DepthMode::D2 => vec![z],
        DepthMode::D25 { radius } => {
            let r = radius as isize;
            (-r..=r)
                .map(|o| (z as isize + o).clamp(0, d.depth as isize - 1) as usize)
                .collect()
        }
        DepthMode::D3 => (0..d.depth).collect(),
    };
    let anchor_z = if mode == DepthMode::D3 { 0 } else { z };
    let mut data = Vec::with_capacity(w * h * slices.len());
    for &s in &slices {
        let plane = vol.plane(s);
        for y in y0..y0 + h {
            let row = y * d.width;
            data.extend_from_slice(&plane[row + x0..row + x0 + w]);
        }
    }
    Ok(Patch {
        anchor: Anchor::new(x0, y0, anchor_z),
        width: w,
        height: h,
        depth: slices.len(),
        data,
    })
}

/// One patch per grid anchor for slice `z`, in grid order.
pub fn extract<T: Copy + Send + Sync>(vol: &Volume<T>, grid: &PatchGrid, z: usize) -> Result<Vec<Patch<T>>> {
    let d = vol.dims();
    grid.depth_mode.validate()?;
    if grid.image_dims != (d.width, d.height) {
        return Err(Error::Argument(format!(
            "grid planned for {}x{} but volume is {}x{}",
            grid.image_dims.0, grid.image_dims.1, d.width, d.height
        )));
    }
    if grid.depth_mode != DepthMode::D3 && z >= d.depth {
        return Err(Error::Argument(format!("slice {z} out of range for depth {}", d.depth)));
    }
    grid.anchors
        .par_iter()
        .map(|&a| extract_patch(vol, grid.depth_mode, a, (grid.patch_w, grid.patch_h), z))
        .collect()
}
