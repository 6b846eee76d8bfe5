//! Resizing, intensity normalisation, B-scan denoising and training-slice
//! selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::scalar::Scalar;
use crate::volume::{Image2, IntensityVolume, LabelVolume, Vendor, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

/// B-scan denoiser applied after resizing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Denoiser {
    None,
    Gaussian {
        sigma: f64,
    },
    /// Non-local means with a square search window and square comparison patch.
    Nlm {
        search_radius: usize,
        patch_radius: usize,
        h: f64,
    },
}

impl Denoiser {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Denoiser::None => Ok(()),
            Denoiser::Gaussian { sigma } if sigma > 0.0 && sigma.is_finite() => Ok(()),
            Denoiser::Gaussian { sigma } => arg(format!("gaussian sigma must be > 0, got {sigma}")),
            Denoiser::Nlm { h, .. } if !(h > 0.0 && h.is_finite()) => {
                arg(format!("nlm h must be > 0, got {h}"))
            }
            Denoiser::Nlm { search_radius: 0, .. } => arg("nlm search radius must be >= 1"),
            Denoiser::Nlm { .. } => Ok(()),
        }
    }

    pub fn apply<T: Scalar>(&self, slice: &Image2<T>) -> Result<Image2<T>> {
        self.validate()?;
        Ok(match *self {
            Denoiser::None => slice.clone(),
            Denoiser::Gaussian { sigma } => gaussian_blur(slice, sigma),
            Denoiser::Nlm {
                search_radius,
                patch_radius,
                h,
            } => nl_means(slice, search_radius, patch_radius, h),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlicePolicy {
    /// Keep only B-scans with at least one fluid voxel.
    DiseasedOnly,
    All,
}

impl SlicePolicy {
    /// Topcon keeps every slice; the other vendors train on diseased B-scans.
    pub fn default_for(vendor: Option<Vendor>) -> Self {
        match vendor {
            Some(Vendor::Topcon) => SlicePolicy::All,
            _ => SlicePolicy::DiseasedOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// In-plane size for 2D inputs.
    pub target_2d: (usize, usize),
    /// In-plane size for 2.5D and 3D inputs; depth is kept.
    pub target_vol: (usize, usize),
    pub denoiser: Denoiser,
    /// `None` selects the per-vendor default.
    pub slice_policy: Option<SlicePolicy>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_2d: (572, 572),
            target_vol: (384, 384),
            denoiser: Denoiser::None,
            slice_policy: None,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (w, h)) in [("target_2d", self.target_2d), ("target_vol", self.target_vol)] {
            if w == 0 || h == 0 {
                return arg(format!("{name} must be positive, got {w}x{h}"));
            }
        }
        self.denoiser.validate()
    }

    pub fn slice_policy_for(&self, vendor: Option<Vendor>) -> SlicePolicy {
        self.slice_policy.unwrap_or_else(|| SlicePolicy::default_for(vendor))
    }
}

/// Maps a destination index to its continuous source coordinate (pixel centres aligned).
#[inline]
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    let s = (dst as f64 + 0.5) * (src_len as f64 / dst_len as f64) - 0.5;
    s.clamp(0.0, (src_len - 1) as f64)
}

#[inline]
fn nearest_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let s = ((dst as f64 + 0.5) * (src_len as f64 / dst_len as f64)).floor() as usize;
    s.min(src_len - 1)
}

#[inline]
fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    let v = a + (b - a) * t;
    // keep rounding from stepping outside [a, b]
    v.max(a.min(b)).min(a.max(b))
}

fn check_target(target: (usize, usize)) -> Result<()> {
    if target.0 == 0 || target.1 == 0 {
        return arg(format!("resize target must be positive, got {}x{}", target.0, target.1));
    }
    Ok(())
}

/// Nearest-neighbour resize for any copyable element type.
pub fn resize_nearest<T: Copy>(image: &Image2<T>, target: (usize, usize)) -> Result<Image2<T>> {
    check_target(target)?;
    let (tw, th) = target;
    let xs: Vec<usize> = (0..tw).map(|x| nearest_index(x, image.width(), tw)).collect();
    let ys: Vec<usize> = (0..th).map(|y| nearest_index(y, image.height(), th)).collect();
    Ok(Image2::from_fn(tw, th, |x, y| image.get(xs[x], ys[y])))
}

fn resize_bilinear<T: Scalar>(image: &Image2<T>, target: (usize, usize)) -> Result<Image2<T>> {
    check_target(target)?;
    let (tw, th) = target;
    let (sw, sh) = (image.width(), image.height());
    let taps = |len: usize, src_len: usize| -> Vec<(usize, usize, T)> {
        (0..len)
            .map(|d| {
                let s = source_coord(d, src_len, len);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, T::of(s - i0 as f64))
            })
            .collect()
    };
    let xt = taps(tw, sw);
    let yt = taps(th, sh);

    // Horizontal pass into a tw x sh buffer, then vertical.
    let mut tmp = vec![T::zero(); tw * sh];
    for y in 0..sh {
        for (x, &(x0, x1, fx)) in xt.iter().enumerate() {
            tmp[x + tw * y] = lerp(image.get(x0, y), image.get(x1, y), fx);
        }
    }
    Ok(Image2::from_fn(tw, th, |x, y| {
        let (y0, y1, fy) = yt[y];
        lerp(tmp[x + tw * y0], tmp[x + tw * y1], fy)
    }))
}

/// Resizes a float slice to `target = (width, height)`.
pub fn resize_slice<T: Scalar>(
    image: &Image2<T>,
    target: (usize, usize),
    mode: ResizeMode,
) -> Result<Image2<T>> {
    match mode {
        ResizeMode::Bilinear => resize_bilinear(image, target),
        ResizeMode::Nearest => resize_nearest(image, target),
    }
}

/// Volumes that can be resized in-plane, keeping their depth.
pub trait Resample: Sized {
    fn resized(&self, target: (usize, usize)) -> Result<Self>;
}

fn resize_planes<T: Copy + Send + Sync>(
    vol: &Volume<T>,
    f: impl Fn(&Image2<T>) -> Result<Image2<T>> + Sync,
) -> Result<Volume<T>> {
    let planes: Vec<Image2<T>> = (0..vol.dims().depth)
        .into_par_iter()
        .map(|z| f(&vol.plane_image(z)))
        .collect::<Result<_>>()?;
    Volume::from_planes(&planes)
}

impl<T: Scalar> Resample for IntensityVolume<T> {
    fn resized(&self, target: (usize, usize)) -> Result<Self> {
        check_target(target)?;
        let d = self.dims();
        let voxels = resize_planes(&self.voxels, |p| resize_bilinear(p, target))?;
        let mut out = self.with_voxels(voxels);
        out.spacing = self.spacing.map(|[sx, sy, sz]| {
            [
                sx * d.width as f64 / target.0 as f64,
                sy * d.height as f64 / target.1 as f64,
                sz,
            ]
        });
        Ok(out)
    }
}

impl Resample for LabelVolume {
    fn resized(&self, target: (usize, usize)) -> Result<Self> {
        check_target(target)?;
        let voxels = resize_planes(self.voxels(), |p| resize_nearest(p, target))?;
        LabelVolume::new(self.id.clone(), voxels)
    }
}

/// Bilinear for intensities, nearest-neighbour for labels.
pub fn resize_volume<V: Resample>(vol: &V, target: (usize, usize)) -> Result<V> {
    vol.resized(target)
}

/// Per-volume min-max scaling to `[0, 1]`; a constant volume maps to zeros.
pub fn normalize<T: Scalar>(vol: &IntensityVolume<T>) -> Result<IntensityVolume<T>> {
    let data = vol.voxels.data();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{}: non-finite intensity", vol.id)));
    }
    let (lo, hi) = data
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let voxels = if hi > lo {
        let range = hi - lo;
        vol.voxels
            .map(|v| ((v - lo) / range).max(T::zero()).min(T::one()))
    } else {
        vol.voxels.map(|_| T::zero())
    };
    Ok(vol.with_voxels(voxels))
}

/// Applies the configured denoiser to one B-scan.
pub fn denoise<T: Scalar>(slice: &Image2<T>, cfg: &PreprocessConfig) -> Result<Image2<T>> {
    cfg.denoiser.apply(slice)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur<T: Scalar>(image: &Image2<T>, sigma: f64) -> Image2<T> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (image.width(), image.height());
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kw) in k.iter().enumerate() {
                acc += kw * image.get_clamped(x as isize + j as isize - r, y as isize).as_f64();
            }
            tmp[x + w * y] = acc;
        }
    }
    Image2::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for (j, &kw) in k.iter().enumerate() {
            let yy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
            acc += kw * tmp[x + w * yy];
        }
        T::of(acc)
    })
}

/// Pixelwise non-local means. Patch distances use edge replication.
pub fn nl_means<T: Scalar>(image: &Image2<T>, search_radius: usize, patch_radius: usize, h: f64) -> Image2<T> {
    let (w, hgt) = (image.width(), image.height());
    let src: Vec<f64> = image.data().iter().map(|v| v.as_f64()).collect();
    let at = |x: isize, y: isize| -> f64 {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, hgt as isize - 1) as usize;
        src[cx + w * cy]
    };
    let sr = search_radius as isize;
    let pr = patch_radius as isize;
    let patch_area = ((2 * pr + 1) * (2 * pr + 1)) as f64;
    let h2 = h * h;

    let rows: Vec<Vec<T>> = (0..hgt)
        .into_par_iter()
        .map(|y| {
            let y = y as isize;
            (0..w as isize)
                .map(|x| {
                    let mut wsum = 0.0;
                    let mut acc = 0.0;
                    for qy in (y - sr)..=(y + sr) {
                        for qx in (x - sr)..=(x + sr) {
                            let mut d2 = 0.0;
                            for oy in -pr..=pr {
                                for ox in -pr..=pr {
                                    let diff = at(x + ox, y + oy) - at(qx + ox, qy + oy);
                                    d2 += diff * diff;
                                }
                            }
                            let wgt = (-(d2 / patch_area) / h2).exp();
                            wsum += wgt;
                            acc += wgt * at(qx, qy);
                        }
                    }
                    T::of(acc / wsum)
                })
                .collect()
        })
        .collect();
    Image2::new(w, hgt, rows.into_iter().flatten().collect()).expect("same dims as input")
}

/// Indices of B-scans selected for training, strictly increasing.
pub fn filter_slices(labels: &LabelVolume, policy: SlicePolicy) -> Vec<usize> {
    let depth = labels.dims().depth;
    match policy {
        SlicePolicy::All => (0..depth).collect(),
        SlicePolicy::DiseasedOnly => (0..depth)
            .filter(|&z| labels.plane(z).iter().any(|&v| v != 0))
            .collect(),
    }
}

/// Resize to `target`, normalise, then denoise every B-scan.
pub fn preprocess_intensity<T: Scalar>(
    vol: &IntensityVolume<T>,
    target: (usize, usize),
    cfg: &PreprocessConfig,
) -> Result<IntensityVolume<T>> {
    cfg.validate()?;
    let resized = resize_volume(vol, target)?;
    let normed = normalize(&resized)?;
    if cfg.denoiser == Denoiser::None {
        return Ok(normed);
    }
    let planes: Vec<Image2<T>> = (0..normed.dims().depth)
        .into_par_iter()
        .map(|z| denoise(&normed.voxels.plane_image(z), cfg))
        .collect::<Result<_>>()?;
    Ok(normed.with_voxels(Volume::from_planes(&planes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rand_image(seed: u64, w: usize, h: usize) -> Image2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image2::from_fn(w, h, |_, _| rng.random::<f32>())
    }

    #[test]
    fn constant_survives_resize() {
        let img = Image2::filled(37, 11, 0.5f32);
        let out = resize_slice(&img, (64, 90), ResizeMode::Bilinear).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn cirrus_slice_to_working_size() {
        let img = Image2::filled(512, 1024, 0.0f32);
        let out = resize_slice(&img, (572, 572), ResizeMode::Bilinear).unwrap();
        assert_eq!((out.width(), out.height()), (572, 572));
    }

    #[test]
    fn zero_target_is_rejected() {
        let img = Image2::filled(4, 4, 0.0f32);
        assert!(resize_slice(&img, (0, 4), ResizeMode::Nearest).is_err());
        assert!(resize_slice(&img, (4, 0), ResizeMode::Bilinear).is_err());
    }

    #[test]
    fn checkerboard_nearest_upscale() {
        let img = Image2::from_fn(4, 4, |x, y| ((x + y) % 2) as f32);
        let out = resize_slice(&img, (8, 8), ResizeMode::Nearest).unwrap();
        // brute-force nearest map: centre of dst pixel i sits at (i + 0.5) / 2 in source units
        for y in 0..8 {
            for x in 0..8 {
                let sx = ((x as f64 + 0.5) / 2.0).floor() as usize;
                let sy = ((y as f64 + 0.5) / 2.0).floor() as usize;
                assert_eq!(out.get(x, y), img.get(sx, sy));
            }
        }
    }

    #[test]
    fn bilinear_within_source_range() {
        for seed in 0..20 {
            let img = rand_image(seed, 13, 7);
            let (lo, hi) = img
                .data()
                .iter()
                .fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            let out = resize_slice(&img, (29, 5), ResizeMode::Bilinear).unwrap();
            assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
        }
    }

    #[test]
    fn spectralis_volume_to_384() {
        let v = IntensityVolume::new("s", Volume::filled(Dims3::new(512, 496, 49), 0.3f32)).unwrap();
        let r = resize_volume(&v, (384, 384)).unwrap();
        assert_eq!(r.dims(), Dims3::new(384, 384, 49));
    }

    #[test]
    fn label_resize_preserves_alphabet_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<u8> = (0..20 * 15 * 3).map(|_| if rng.random_bool(0.3) { 2 } else { 0 }).collect();
        let l = LabelVolume::new("l", Volume::new(Dims3::new(20, 15, 3), data).unwrap()).unwrap();
        let r = resize_volume(&l, (33, 9)).unwrap();
        assert!(r.data().iter().all(|&v| v == 0 || v == 2));
        assert_eq!(r.dims().depth, 3);
        let same = resize_volume(&l, (20, 15)).unwrap();
        assert_eq!(same, l);
    }

    #[test]
    fn normalize_cases() {
        let v = IntensityVolume::new("n", Volume::new(Dims3::new(3, 1, 1), vec![10.0f64, 20.0, 30.0]).unwrap()).unwrap();
        assert_eq!(normalize(&v).unwrap().voxels.data(), &[0.0, 0.5, 1.0]);

        let c = IntensityVolume::new("c", Volume::filled(Dims3::new(2, 2, 2), 4.2f32)).unwrap();
        assert!(normalize(&c).unwrap().voxels.data().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = IntensityVolume::new(
            "r",
            Volume::new(Dims3::new(6, 5, 4), (0..120).map(|_| rng.random_range(-3.0f32..7.0)).collect()).unwrap(),
        )
        .unwrap();
        let once = normalize(&r).unwrap();
        assert_eq!(normalize(&once).unwrap(), once);
    }

    #[test]
    fn normalize_rejects_non_finite() {
        let mut v = IntensityVolume::new("n", Volume::filled(Dims3::new(2, 1, 1), 1.0f32)).unwrap();
        v.voxels.set(0, 0, 0, f32::INFINITY);
        assert!(normalize(&v).is_err());
    }

    #[test]
    fn denoise_none_is_identity() {
        let img = rand_image(1, 9, 9);
        let cfg = PreprocessConfig::default();
        assert_eq!(denoise(&img, &cfg).unwrap(), img);
    }

    #[test]
    fn gaussian_on_constant() {
        let img = Image2::filled(12, 10, 0.7f32);
        let cfg = PreprocessConfig {
            denoiser: Denoiser::Gaussian { sigma: 1.5 },
            ..Default::default()
        };
        let out = denoise(&img, &cfg).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn invalid_denoiser_params() {
        let img = Image2::filled(4, 4, 0.0f32);
        for d in [
            Denoiser::Gaussian { sigma: 0.0 },
            Denoiser::Nlm { search_radius: 2, patch_radius: 1, h: -1.0 },
        ] {
            let cfg = PreprocessConfig { denoiser: d, ..Default::default() };
            assert!(denoise(&img, &cfg).is_err());
        }
    }

    fn noisy_phantom() -> (Image2<f32>, Image2<f32>) {
        let clean = Image2::from_fn(64, 64, |x, y| {
            let dx = x as f32 - 32.0;
            let dy = y as f32 - 28.0;
            if dx * dx / 200.0 + dy * dy / 80.0 <= 1.0 { 0.6 } else { 0.1 }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0f32, 0.05).unwrap();
        let noisy = clean.map(|v| v + noise.sample(&mut rng));
        (clean, noisy)
    }

    fn mae(a: &Image2<f32>, b: &Image2<f32>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.data().len() as f64
    }

    #[test]
    fn gaussian_reduces_error_on_noisy_phantom() {
        let (clean, noisy) = noisy_phantom();
        let cfg = PreprocessConfig { denoiser: Denoiser::Gaussian { sigma: 1.0 }, ..Default::default() };
        let out = denoise(&noisy, &cfg).unwrap();
        assert!(mae(&out, &clean) < mae(&noisy, &clean));
    }

    #[test]
    fn nlm_reduces_error_on_noisy_phantom() {
        let (clean, noisy) = noisy_phantom();
        let cfg = PreprocessConfig {
            denoiser: Denoiser::Nlm { search_radius: 4, patch_radius: 1, h: 0.08 },
            ..Default::default()
        };
        let out = denoise(&noisy, &cfg).unwrap();
        assert!(mae(&out, &clean) < mae(&noisy, &clean));
    }

    #[test]
    fn slice_filtering() {
        let d = Dims3::new(6, 6, 49);
        let healthy = LabelVolume::zeros("h", d);
        assert!(filter_slices(&healthy, SlicePolicy::DiseasedOnly).is_empty());
        assert_eq!(filter_slices(&healthy, SlicePolicy::All), (0..49).collect::<Vec<_>>());

        let mut sick = LabelVolume::zeros("s", d);
        sick.set(1, 2, 3, crate::FluidClass::Irf);
        sick.set(5, 5, 17, crate::FluidClass::Ped);
        // brute-force per-slice scan
        let expected: Vec<usize> = (0..49)
            .filter(|&z| (0..6).any(|y| (0..6).any(|x| sick.get(x, y, z) != crate::FluidClass::Background)))
            .collect();
        assert_eq!(expected, vec![3, 17]);
        assert_eq!(filter_slices(&sick, SlicePolicy::DiseasedOnly), expected);
    }

    #[test]
    fn default_policy_by_vendor() {
        assert_eq!(SlicePolicy::default_for(Some(Vendor::Topcon)), SlicePolicy::All);
        assert_eq!(SlicePolicy::default_for(Some(Vendor::Cirrus)), SlicePolicy::DiseasedOnly);
    }
}
