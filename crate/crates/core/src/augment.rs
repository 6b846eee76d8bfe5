//! Seeded in-plane rotation and translation of image/label training pairs.
//!
//! Multi-plane samples (2.5D slabs, 3D stacks) transform every plane with
//! the same parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::scalar::Scalar;
use crate::volume::Volume;

/// An image stack and its label planes, sharing in-plane dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: Volume<T>,
    pub labels: Volume<u8>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(image: Volume<T>, labels: Volume<u8>) -> Result<Self> {
        let (a, b) = (image.dims(), labels.dims());
        if (a.width, a.height) != (b.width, b.height) {
            return arg(format!("image {a} and labels {b} differ in-plane"));
        }
        Ok(Self { image, labels })
    }

    fn width(&self) -> usize {
        self.image.dims().width
    }

    fn height(&self) -> usize {
        self.image.dims().height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Angles are drawn uniformly from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    /// Shifts are drawn uniformly from `[-translate_px, translate_px]` per axis.
    pub translate_px: usize,
    pub copies_per_sample: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            translate_px: 16,
            copies_per_sample: 0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return arg(format!("rotation range must be >= 0, got {}", self.rotation_deg));
        }
        Ok(())
    }
}

/// cos/sin with exact values at multiples of 90 degrees.
fn snapped_cos_sin(degrees: f64) -> (f64, f64) {
    let t = degrees.to_radians();
    let snap = |v: f64| {
        if v.abs() < 1e-12 {
            0.0
        } else if (v.abs() - 1.0).abs() < 1e-12 {
            v.signum()
        } else {
            v
        }
    };
    (snap(t.cos()), snap(t.sin()))
}

/// Rotates about the image centre. A source point `p` lands at
/// `c + R(theta) (p - c)`; with y pointing down, positive angles turn
/// clockwise on screen. Images are resampled bilinearly, labels by nearest
/// neighbour, and uncovered pixels are filled with 0.
pub fn rotate<T: Scalar>(sample: &Sample<T>, degrees: f64) -> Result<Sample<T>> {
    if !degrees.is_finite() {
        return arg("rotation angle must be finite");
    }
    if degrees == 0.0 {
        return Ok(sample.clone());
    }
    let (w, h) = (sample.width(), sample.height());
    let (cos, sin) = snapped_cos_sin(degrees);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    // inverse map: destination -> source
    let src_of = |x: usize, y: usize| -> (f64, f64) {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
    };

    let mut image = sample.image.clone();
    for z in 0..sample.image.dims().depth {
        let src = sample.image.plane(z);
        let dst = image.plane_mut(z);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = src_of(x, y);
                dst[x + w * y] = bilinear_or_zero(src, w, h, sx, sy);
            }
        }
    }
    let mut labels = sample.labels.clone();
    for z in 0..sample.labels.dims().depth {
        let src = sample.labels.plane(z);
        let dst = labels.plane_mut(z);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = src_of(x, y);
                let (rx, ry) = (sx.round(), sy.round());
                dst[x + w * y] = if rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h {
                    src[rx as usize + w * ry as usize]
                } else {
                    0
                };
            }
        }
    }
    Ok(Sample { image, labels })
}

fn bilinear_or_zero<T: Scalar>(src: &[T], w: usize, h: usize, sx: f64, sy: f64) -> T {
    const EPS: f64 = 1e-9;
    if sx < -EPS || sy < -EPS || sx > (w - 1) as f64 + EPS || sy > (h - 1) as f64 + EPS {
        return T::zero();
    }
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let at = |x: usize, y: usize| src[x + w * y].as_f64();
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    T::of(top * (1.0 - fy) + bottom * fy)
}

fn shift_plane<V: Copy + Default>(src: &[V], dst: &mut [V], w: usize, h: usize, dx: isize, dy: isize) {
    for y in 0..h {
        for x in 0..w {
            let sx = x as isize - dx;
            let sy = y as isize - dy;
            dst[x + w * y] = if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                src[sx as usize + w * sy as usize]
            } else {
                V::default()
            };
        }
    }
}

/// Integer shift: the pixel at `(x, y)` moves to `(x + dx, y + dy)`;
/// vacated pixels become 0.
pub fn translate<T: Scalar>(sample: &Sample<T>, dx: isize, dy: isize) -> Result<Sample<T>> {
    let (w, h) = (sample.width(), sample.height());
    if dx.unsigned_abs() >= w || dy.unsigned_abs() >= h {
        return arg(format!("shift ({dx}, {dy}) must be smaller than the {w}x{h} image"));
    }
    let mut image = sample.image.clone();
    for z in 0..sample.image.dims().depth {
        shift_plane(sample.image.plane(z), image.plane_mut(z), w, h, dx, dy);
    }
    let mut labels = sample.labels.clone();
    for z in 0..sample.labels.dims().depth {
        shift_plane(sample.labels.plane(z), labels.plane_mut(z), w, h, dx, dy);
    }
    Ok(Sample { image, labels })
}

/// SplitMix64 finaliser; derives independent sub-seeds.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn augmented_copy<T: Scalar>(sample: &Sample<T>, cfg: &AugmentConfig, index: usize, copy: usize) -> Result<Sample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, index as u64, copy as u64));
    let angle = if cfg.rotation_deg > 0.0 {
        rng.random_range(-cfg.rotation_deg..=cfg.rotation_deg)
    } else {
        0.0
    };
    let t = cfg.translate_px as i64;
    let max_dx = (sample.width() as i64 - 1).min(t);
    let max_dy = (sample.height() as i64 - 1).min(t);
    let dx = rng.random_range(-max_dx..=max_dx);
    let dy = rng.random_range(-max_dy..=max_dy);
    translate(&rotate(sample, angle)?, dx as isize, dy as isize)
}

/// Each input followed by `copies_per_sample` augmented copies. Every copy
/// draws its parameters from a generator keyed by (seed, sample, copy), so
/// output is independent of scheduling.
pub fn augment_set<T: Scalar>(samples: &[Sample<T>], cfg: &AugmentConfig) -> Result<Vec<Sample<T>>> {
    cfg.validate()?;
    if cfg.copies_per_sample == 0 {
        return Ok(samples.to_vec());
    }
    let groups: Vec<Vec<Sample<T>>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut out = Vec::with_capacity(1 + cfg.copies_per_sample);
            out.push(s.clone());
            for c in 0..cfg.copies_per_sample {
                out.push(augmented_copy(s, cfg, i, c).map_err(|e| Error::Internal(e.to_string()))?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(groups.into_iter().flatten().collect())
}
