use super::{PredictRequest, SegmentationBackend};
use crate::error::{arg, Result};
use crate::patch_engine::PatchPrediction;
use crate::scalar::Scalar;

/// Band edges matching the phantom generator's intensity coding.
pub const DEFAULT_BANDS: [f64; 3] = [0.25, 0.5, 0.75];

/// Classifies each pixel by intensity band:
/// `<= b1` background, `<= b2` IRF, `<= b3` SRF, otherwise PED.
#[derive(Debug, Clone)]
pub struct ThresholdBackend<T> {
    bands: [T; 3],
}

impl<T: Scalar> ThresholdBackend<T> {
    pub fn new(bands: [T; 3]) -> Result<Self> {
        let [b1, b2, b3] = bands;
        if !(T::zero() <= b1 && b1 < b2 && b2 < b3 && b3 <= T::one()) {
            return arg(format!("bands must satisfy 0 <= b1 < b2 < b3 <= 1, got {b1}, {b2}, {b3}"));
        }
        Ok(Self { bands })
    }

    pub fn with_default_bands() -> Self {
        Self { bands: DEFAULT_BANDS.map(T::of) }
    }

    pub fn bands(&self) -> [T; 3] {
        self.bands
    }

    pub fn classify(&self, v: T) -> u8 {
        let [b1, b2, b3] = self.bands;
        if v <= b1 {
            0
        } else if v <= b2 {
            1
        } else if v <= b3 {
            2
        } else {
            3
        }
    }
}

impl<T: Scalar> SegmentationBackend<T> for ThresholdBackend<T> {
    fn descriptor(&self) -> &str {
        "threshold"
    }

    fn predict(&self, req: &PredictRequest<'_, T>) -> Result<PatchPrediction<T>> {
        let (anchor, w, h, d) = req.output_window();
        let mut labels = Vec::with_capacity(w * h * d);
        for k in 0..d {
            labels.extend(req.patch.plane(req.input_plane(k)).iter().map(|&v| self.classify(v)));
        }
        PatchPrediction::one_hot(anchor, w, h, d, &labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch_engine::{Anchor, DepthMode, Patch};
    use crate::volume::Dims3;

    #[test]
    fn band_lookup() {
        let b = ThresholdBackend::new([0.25f32, 0.5, 0.75]).unwrap();
        assert_eq!(b.classify(0.6), 2);
        assert_eq!(b.classify(0.25), 0);
        assert_eq!(b.classify(0.9), 3);
        assert!(ThresholdBackend::new([0.5f32, 0.25, 0.75]).is_err());
        assert!(ThresholdBackend::new([0.1f32, 0.5, 1.5]).is_err());
    }

    #[test]
    fn zero_image_is_background() {
        let b = ThresholdBackend::new([0.25f64, 0.5, 0.75]).unwrap();
        let patch = Patch { anchor: Anchor::new(0, 0, 0), width: 4, height: 4, depth: 1, data: vec![0.0; 16] };
        let req = PredictRequest { volume_id: "v", volume_dims: Dims3::new(4, 4, 1), depth_mode: DepthMode::D2, patch: &patch };
        let p = b.predict(&req).unwrap();
        assert!(p.channel(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn d25_uses_centre_plane() {
        let b = ThresholdBackend::new([0.25f32, 0.5, 0.75]).unwrap();
        let mut data = vec![0.0f32; 3];
        data[1] = 0.6;
        let patch = Patch { anchor: Anchor::new(0, 0, 4), width: 1, height: 1, depth: 3, data };
        let req = PredictRequest { volume_id: "v", volume_dims: Dims3::new(1, 1, 9), depth_mode: DepthMode::D25 { radius: 1 }, patch: &patch };
        let p = b.predict(&req).unwrap();
        assert_eq!(p.depth, 1);
        assert_eq!(p.probs, vec![0.0, 0.0, 1.0, 0.0]);
    }
}
