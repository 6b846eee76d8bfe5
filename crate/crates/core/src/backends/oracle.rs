use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::{PredictRequest, SegmentationBackend};
use crate::error::{Error, Result};
use crate::patch_engine::PatchPrediction;
use crate::preprocess::resize_volume;
use crate::scalar::Scalar;
use crate::volume::{Dims3, LabelVolume};

/// Answers every request with the one-hot ground truth of the window.
///
/// When a request comes from a volume resized in-plane, the truth is resized
/// the same way (nearest neighbour) before windowing.
#[derive(Debug, Default)]
pub struct OracleBackend {
    truth: BTreeMap<String, Arc<LabelVolume>>,
    resized: Mutex<BTreeMap<(String, Dims3), Arc<LabelVolume>>>,
}

impl OracleBackend {
    pub fn new(truth: LabelVolume) -> Self {
        Self::from_volumes([truth])
    }

    pub fn from_volumes(truth: impl IntoIterator<Item = LabelVolume>) -> Self {
        Self {
            truth: truth.into_iter().map(|l| (l.id.clone(), Arc::new(l))).collect(),
            resized: Mutex::new(BTreeMap::new()),
        }
    }

    fn truth_for(&self, id: &str, dims: Dims3) -> Result<Arc<LabelVolume>> {
        let truth = self
            .truth
            .get(id)
            .ok_or_else(|| Error::Lookup(format!("no ground truth for volume {id}")))?;
        if truth.dims() == dims {
            return Ok(truth.clone());
        }
        if truth.dims().depth != dims.depth {
            return Err(Error::Bounds(format!(
                "truth {} has depth {}, request volume {dims}",
                id,
                truth.dims().depth
            )));
        }
        let key = (id.to_string(), dims);
        let mut cache = self.resized.lock().expect("oracle cache poisoned");
        if let Some(v) = cache.get(&key) {
            return Ok(v.clone());
        }
        let v = Arc::new(resize_volume(truth.as_ref(), (dims.width, dims.height))?);
        cache.insert(key, v.clone());
        Ok(v)
    }
}

impl<T: Scalar> SegmentationBackend<T> for OracleBackend {
    fn descriptor(&self) -> &str {
        "oracle"
    }

    fn predict(&self, req: &PredictRequest<'_, T>) -> Result<PatchPrediction<T>> {
        let (anchor, w, h, d) = req.output_window();
        let truth = self.truth_for(req.volume_id, req.volume_dims)?;
        let td = truth.dims();
        if anchor.x + w > td.width || anchor.y + h > td.height || anchor.z + d > td.depth {
            return Err(Error::Bounds(format!(
                "window ({}, {}, {}) {w}x{h}x{d} outside truth {td}",
                anchor.x, anchor.y, anchor.z
            )));
        }
        let mut labels = Vec::with_capacity(w * h * d);
        for z in anchor.z..anchor.z + d {
            let plane = truth.plane(z);
            for y in anchor.y..anchor.y + h {
                labels.extend_from_slice(&plane[y * td.width + anchor.x..y * td.width + anchor.x + w]);
            }
        }
        PatchPrediction::one_hot(anchor, w, h, d, &labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::check_prediction;
    use crate::patch_engine::{Anchor, DepthMode, Patch};
    use crate::volume::Volume;

    fn truth() -> LabelVolume {
        let d = Dims3::new(6, 4, 2);
        LabelVolume::new("t", Volume::new(d, (0..48).map(|i| (i % 4) as u8).collect()).unwrap()).unwrap()
    }

    #[test]
    fn windows_are_one_hot_truth() {
        let b = OracleBackend::new(truth());
        let patch = Patch { anchor: Anchor::new(2, 1, 1), width: 3, height: 2, depth: 1, data: vec![0.0f32; 6] };
        let req = PredictRequest { volume_id: "t", volume_dims: Dims3::new(6, 4, 2), depth_mode: DepthMode::D2, patch: &patch };
        let p = b.predict(&req).unwrap();
        check_prediction(&req, &p).unwrap();
        let t = truth();
        for (k, (x, y)) in [(2, 1), (3, 1), (4, 1), (2, 2), (3, 2), (4, 2)].into_iter().enumerate() {
            let c = t.get(x, y, 1).index();
            assert_eq!(p.channel(c)[k], 1.0);
        }
    }

    #[test]
    fn out_of_bounds_and_unknown() {
        let b = OracleBackend::new(truth());
        let patch = Patch { anchor: Anchor::new(4, 0, 0), width: 3, height: 2, depth: 1, data: vec![0.0f32; 6] };
        let req = PredictRequest { volume_id: "t", volume_dims: Dims3::new(6, 4, 2), depth_mode: DepthMode::D2, patch: &patch };
        assert!(matches!(b.predict(&req), Err(Error::Bounds(_))));
        let req = PredictRequest { volume_id: "nope", ..req };
        assert!(matches!(b.predict(&req), Err(Error::Lookup(_))));
    }
}
