//! On-disk patch batches: a raw little-endian `f32` payload plus a text
//! sidecar index listing the grid parameters and one anchor per line.
//!
//! ```text
//! volume_id = case01
//! volume_dims = 384x384x49
//! patch = 128x128
//! overlap = 0.75
//! depth_mode = 2d
//! shape = 128 128 1
//! channels = 1
//! data = case01_z0003.raw
//! anchors
//! 0 0 3
//! 32 0 3
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::extract::Patch;
use super::grid::{plan_grid, Anchor, DepthMode, PatchGrid};
use super::stitch::PatchPrediction;
use crate::error::{Error, Result};
use crate::volume::{Dims3, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchIndex {
    pub volume_id: String,
    pub volume_dims: Dims3,
    pub patch: (usize, usize),
    pub overlap: f64,
    pub depth_mode: DepthMode,
    /// Per-entry (width, height, depth).
    pub shape: (usize, usize, usize),
    /// 1 for intensity patches, 4 for predictions.
    pub channels: usize,
    pub data_file: String,
    pub anchors: Vec<Anchor>,
}

impl BatchIndex {
    pub fn grid(&self) -> Result<PatchGrid> {
        Ok(plan_grid(
            (self.volume_dims.width, self.volume_dims.height),
            self.patch,
            self.overlap,
        )?
        .with_depth_mode(self.depth_mode))
    }

    fn entry_len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2 * self.channels
    }

    fn render(&self) -> String {
        let mut s = format!(
            "volume_id = {}\nvolume_dims = {}\npatch = {}x{}\noverlap = {}\ndepth_mode = {}\nshape = {} {} {}\nchannels = {}\ndata = {}\nanchors\n",
            self.volume_id,
            self.volume_dims,
            self.patch.0,
            self.patch.1,
            self.overlap,
            self.depth_mode,
            self.shape.0,
            self.shape.1,
            self.shape.2,
            self.channels,
            self.data_file
        );
        for a in &self.anchors {
            s.push_str(&format!("{} {} {}\n", a.x, a.y, a.z));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("patch index: {m}"));
        let mut lines = text.lines();
        let mut kv = std::collections::BTreeMap::new();
        for line in lines.by_ref() {
            let line = line.trim();
            if line == "anchors" {
                break;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| bad(&format!("missing {k}")));
        let nums = |s: &str| -> Result<Vec<usize>> {
            s.split(|c: char| c == 'x' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<usize>().map_err(|_| bad(s)))
                .collect()
        };
        let patch = nums(get("patch")?)?;
        let shape = nums(get("shape")?)?;
        if patch.len() != 2 || shape.len() != 3 {
            return Err(bad("patch/shape arity"));
        }
        let mut anchors = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let v = nums(line)?;
            if v.len() != 3 {
                return Err(bad(line));
            }
            anchors.push(Anchor::new(v[0], v[1], v[2]));
        }
        Ok(Self {
            volume_id: get("volume_id")?.to_string(),
            volume_dims: get("volume_dims")?.parse()?,
            patch: (patch[0], patch[1]),
            overlap: get("overlap")?.parse().map_err(|_| bad("overlap"))?,
            depth_mode: get("depth_mode")?.parse()?,
            shape: (shape[0], shape[1], shape[2]),
            channels: get("channels")?.parse().map_err(|_| bad("channels"))?,
            data_file: get("data")?.to_string(),
            anchors,
        })
    }
}

fn write_batch(dir: &Path, name: &str, mut index: BatchIndex, payload: impl Iterator<Item = f32>) -> Result<PathBuf> {
    let raw_path = dir.join(format!("{name}.raw"));
    index.data_file = format!("{name}.raw");
    let f = fs::File::create(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let mut w = BufWriter::new(f);
    for v in payload {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&raw_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&raw_path, e))?;
    let idx_path = dir.join(format!("{name}.idx"));
    fs::write(&idx_path, index.render()).map_err(|e| Error::io(&idx_path, e))?;
    Ok(idx_path)
}

fn header_for(volume_id: &str, volume_dims: Dims3, grid: &PatchGrid, shape: (usize, usize, usize), channels: usize, anchors: Vec<Anchor>) -> BatchIndex {
    BatchIndex {
        volume_id: volume_id.to_string(),
        volume_dims,
        patch: (grid.patch_w, grid.patch_h),
        overlap: grid.overlap,
        depth_mode: grid.depth_mode,
        shape,
        channels,
        data_file: String::new(),
        anchors,
    }
}

/// Spills intensity patches; returns the index path.
pub fn write_patch_batch(
    dir: &Path,
    name: &str,
    volume_id: &str,
    volume_dims: Dims3,
    grid: &PatchGrid,
    patches: &[Patch<f32>],
) -> Result<PathBuf> {
    let shape = patches
        .first()
        .map(|p| (p.width, p.height, p.depth))
        .ok_or_else(|| Error::Argument("empty patch batch".into()))?;
    if patches.iter().any(|p| (p.width, p.height, p.depth) != shape) {
        return Err(Error::Argument("patches in a batch must share one shape".into()));
    }
    let index = header_for(volume_id, volume_dims, grid, shape, 1, patches.iter().map(|p| p.anchor).collect());
    write_batch(dir, name, index, patches.iter().flat_map(|p| p.data.iter().copied()))
}

/// Spills patch predictions; returns the index path.
pub fn write_prediction_batch(
    dir: &Path,
    name: &str,
    volume_id: &str,
    volume_dims: Dims3,
    grid: &PatchGrid,
    preds: &[PatchPrediction<f32>],
) -> Result<PathBuf> {
    let shape = preds
        .first()
        .map(|p| (p.width, p.height, p.depth))
        .ok_or_else(|| Error::Argument("empty prediction batch".into()))?;
    if preds.iter().any(|p| (p.width, p.height, p.depth) != shape) {
        return Err(Error::Argument("predictions in a batch must share one shape".into()));
    }
    let index = header_for(volume_id, volume_dims, grid, shape, NUM_CLASSES, preds.iter().map(|p| p.anchor).collect());
    write_batch(dir, name, index, preds.iter().flat_map(|p| p.probs.iter().copied()))
}

fn read_batch(idx_path: &Path) -> Result<(BatchIndex, Vec<f32>)> {
    let text = fs::read_to_string(idx_path).map_err(|e| Error::io(idx_path, e))?;
    let index = BatchIndex::parse(&text)?;
    let raw_path = idx_path.parent().unwrap_or_else(|| Path::new(".")).join(&index.data_file);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = (index.entry_len() * index.anchors.len() * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::PayloadSize {
            path: raw_path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((index, values))
}

pub fn read_patch_batch(idx_path: &Path) -> Result<(BatchIndex, Vec<Patch<f32>>)> {
    let (index, values) = read_batch(idx_path)?;
    if index.channels != 1 {
        return Err(Error::Format(format!("{} holds predictions, not patches", idx_path.display())));
    }
    let len = index.entry_len();
    let (w, h, d) = index.shape;
    let patches = index
        .anchors
        .iter()
        .zip(values.chunks_exact(len))
        .map(|(&anchor, chunk)| Patch {
            anchor,
            width: w,
            height: h,
            depth: d,
            data: chunk.to_vec(),
        })
        .collect();
    Ok((index, patches))
}

pub fn read_prediction_batch(idx_path: &Path) -> Result<(BatchIndex, Vec<PatchPrediction<f32>>)> {
    let (index, values) = read_batch(idx_path)?;
    if index.channels != NUM_CLASSES {
        return Err(Error::Format(format!("{} does not hold 4-channel predictions", idx_path.display())));
    }
    let len = index.entry_len();
    let (w, h, d) = index.shape;
    let preds = index
        .anchors
        .iter()
        .zip(values.chunks_exact(len))
        .map(|(&anchor, chunk)| PatchPrediction::new(anchor, w, h, d, chunk.to_vec()))
        .collect::<Result<_>>()?;
    Ok((index, preds))
}
