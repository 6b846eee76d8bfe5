//! Band-coded synthetic volumes with known labels.
//!
//! Background voxels sit below the first threshold band and each fluid's
//! voxels inside its own band, so [`ThresholdBackend`] with default bands
//! recovers the labels from the raw phantom.
//!
//! [`ThresholdBackend`]: crate::backends::ThresholdBackend

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::mix_seed;
use crate::error::{arg, Result};
use crate::volume::{Dims3, FluidClass, IntensityVolume, LabelVolume, Volume};

pub const MIN_PHANTOM_DIMS: Dims3 = Dims3::new(64, 64, 4);

/// Intensity range for each class, background first.
pub const INTENSITY_BANDS: [(f32, f32); 4] = [(0.02, 0.20), (0.30, 0.45), (0.55, 0.70), (0.80, 0.95)];

/// Axis-aligned ellipsoid in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub class: FluidClass,
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Blob {
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x as f64, y as f64, z as f64];
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    /// Inclusive voxel bounds per axis, or `None` if the ellipsoid leaves `dims`.
    fn bounds(&self, dims: Dims3) -> Option<[(usize, usize); 3]> {
        let lens = [dims.width, dims.height, dims.depth];
        let mut out = [(0, 0); 3];
        for a in 0..3 {
            let lo = (self.center[a] - self.radii[a]).ceil();
            let hi = (self.center[a] + self.radii[a]).floor();
            if lo < 0.0 || hi > (lens[a] - 1) as f64 || lo > hi {
                return None;
            }
            out[a] = (lo as usize, hi as usize);
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FluidSpec {
    pub blobs: Vec<Blob>,
}

impl FluidSpec {
    pub fn empty() -> Self {
        Self::default()
    }

    /// `per_class` ellipsoids of each fluid at random, non-touching positions.
    ///
    /// Blobs sharing a B-scan keep an in-plane gap of at least `margin`
    /// pixels, so per-slice closing never merges them.
    pub fn random(seed: u64, dims: Dims3, per_class: usize) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5eed, 1));
        let margin = [4 * dims.width.div_ceil(256), 4 * dims.height.div_ceil(256)];
        let mut placed: Vec<(Blob, [(usize, usize); 3])> = Vec::new();
        for class in FluidClass::FLUIDS {
            for _ in 0..per_class {
                let mut ok = false;
                for _ in 0..1000 {
                    let rx = rng.random_range(dims.width as f64 / 24.0..=dims.width as f64 / 10.0).round();
                    let ry = rng.random_range(dims.height as f64 / 24.0..=dims.height as f64 / 10.0).round();
                    let rz = rng.random_range(1.0..=(dims.depth as f64 / 4.0).max(1.0)).round();
                    let cx = rng.random_range(rx..=dims.width as f64 - 1.0 - rx).round();
                    let cy = rng.random_range(ry..=dims.height as f64 - 1.0 - ry).round();
                    let cz = rng.random_range(rz..=dims.depth as f64 - 1.0 - rz).round();
                    let blob = Blob { class, center: [cx, cy, cz], radii: [rx, ry, rz] };
                    let Some(b) = blob.bounds(dims) else { continue };
                    let clear = placed.iter().all(|(_, o)| {
                        let gap = |a: usize| {
                            if b[a].0 > o[a].1 {
                                b[a].0 - o[a].1 - 1
                            } else if o[a].0 > b[a].1 {
                                o[a].0 - b[a].1 - 1
                            } else {
                                0
                            }
                        };
                        let z_apart = b[2].0 > o[2].1 || o[2].0 > b[2].1;
                        z_apart || gap(0) >= margin[0] || gap(1) >= margin[1]
                    });
                    if clear {
                        placed.push((blob, b));
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    return arg(format!("could not place {per_class} blobs per class in {dims}"));
                }
            }
        }
        Ok(Self { blobs: placed.into_iter().map(|(b, _)| b).collect() })
    }
}

fn check_dims(dims: Dims3) -> Result<()> {
    let m = MIN_PHANTOM_DIMS;
    if dims.width < m.width || dims.height < m.height || dims.depth < m.depth {
        return arg(format!("phantom must be at least {m}, got {dims}"));
    }
    Ok(())
}

/// Phantom intensities and labels. Later blobs overwrite earlier ones where
/// they overlap.
pub fn synth_phantom(
    seed: u64,
    dims: Dims3,
    spec: &FluidSpec,
    id: &str,
) -> Result<(IntensityVolume<f32>, LabelVolume)> {
    check_dims(dims)?;
    let mut labels = vec![0u8; dims.voxel_count()];
    for (i, blob) in spec.blobs.iter().enumerate() {
        let Some([(x0, x1), (y0, y1), (z0, z1)]) = blob.bounds(dims) else {
            return arg(format!(
                "blob {i} at {:?} with radii {:?} does not fit in {dims}",
                blob.center, blob.radii
            ));
        };
        if blob.class == FluidClass::Background {
            return arg(format!("blob {i} must be a fluid class"));
        }
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if blob.contains(x, y, z) {
                        labels[dims.index(x, y, z)] = blob.class.label();
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1a7e, 2));
    let intensity: Vec<f32> = labels
        .iter()
        .map(|&l| {
            let (lo, hi) = INTENSITY_BANDS[l as usize];
            rng.random_range(lo..=hi)
        })
        .collect();
    let labels = LabelVolume::new(id, Volume::new(dims, labels)?)?;
    let image = IntensityVolume::new(id, Volume::new(dims, intensity)?)?;
    Ok((image, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::DEFAULT_BANDS;

    #[test]
    fn empty_spec_is_background() {
        let (img, lab) = synth_phantom(1, Dims3::new(64, 64, 4), &FluidSpec::empty(), "e").unwrap();
        assert_eq!(lab.fluid_voxel_count(), 0);
        assert!(img.voxels.data().iter().all(|&v| (v as f64) <= DEFAULT_BANDS[0]));
    }

    #[test]
    fn bands_sit_between_thresholds() {
        let b = DEFAULT_BANDS;
        let edges = [0.0, b[0], b[1], b[2], 1.0];
        for (c, (lo, hi)) in INTENSITY_BANDS.iter().enumerate() {
            assert!(*lo as f64 > edges[c] || c == 0);
            assert!((*hi as f64) <= edges[c + 1]);
        }
    }

    #[test]
    fn deterministic() {
        let d = Dims3::new(64, 64, 6);
        let spec = FluidSpec::random(3, d, 2).unwrap();
        let a = synth_phantom(3, d, &spec, "p").unwrap();
        let b = synth_phantom(3, d, &FluidSpec::random(3, d, 2).unwrap(), "p").unwrap();
        assert_eq!(a.0.voxels, b.0.voxels);
        assert_eq!(a.1, b.1);
        assert_ne!(a.0.voxels, synth_phantom(4, d, &spec, "p").unwrap().0.voxels);
    }

    #[test]
    fn oversize_blob_rejected() {
        let spec = FluidSpec {
            blobs: vec![Blob { class: FluidClass::Irf, center: [5.0, 30.0, 2.0], radii: [8.0, 8.0, 1.0] }],
        };
        assert!(synth_phantom(0, Dims3::new(64, 64, 4), &spec, "x").is_err());
        assert!(synth_phantom(0, Dims3::new(32, 64, 4), &FluidSpec::empty(), "x").is_err());
    }
}
