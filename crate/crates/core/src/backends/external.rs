use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{PredictRequest, SegmentationBackend};
use crate::error::{Error, Result};
use crate::patch_engine::PatchPrediction;
use crate::scalar::Scalar;
use crate::volume::{ProbField, NUM_CLASSES};
use crate::volume_io::{prob_path, read_prob};

/// Serves probabilities precomputed by an external model, stored as
/// `<volume_id>_prob.mhd` files in one directory.
#[derive(Debug)]
pub struct ExternalBackend<T> {
    dir: PathBuf,
    descriptor: String,
    cache: Mutex<BTreeMap<String, Arc<ProbField<T>>>>,
}

impl<T: Scalar> ExternalBackend<T> {
    pub fn new(dir: impl Into<PathBuf>, descriptor: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            descriptor: descriptor.into(),
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Fails with a lookup error if the prediction file for `volume_id` is missing.
    pub fn resolve(&self, volume_id: &str) -> Result<PathBuf> {
        let p = prob_path(&self.dir, volume_id);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Lookup(format!(
                "no prediction for volume {volume_id} in {}",
                self.dir.display()
            )))
        }
    }

    /// Loads (once) and validates the stored field for `volume_id`.
    pub fn field(&self, volume_id: &str) -> Result<Arc<ProbField<T>>> {
        // file reads are serialised under the cache lock
        let mut cache = self.cache.lock().expect("prediction cache poisoned");
        if let Some(f) = cache.get(volume_id) {
            return Ok(f.clone());
        }
        let path = self.resolve(volume_id)?;
        let field: ProbField<T> = read_prob(&path)?;
        field.validate()?;
        let field = Arc::new(field);
        cache.insert(volume_id.to_string(), field.clone());
        Ok(field)
    }
}

impl<T: Scalar> SegmentationBackend<T> for ExternalBackend<T> {
    fn descriptor(&self) -> &str {
        &self.descriptor
    }

    fn predict(&self, req: &PredictRequest<'_, T>) -> Result<PatchPrediction<T>> {
        let field = self.field(req.volume_id)?;
        let fd = field.dims();
        if fd != req.volume_dims {
            return Err(Error::Validation(format!(
                "stored prediction for {} is {fd}, volume is {}",
                req.volume_id, req.volume_dims
            )));
        }
        let (anchor, w, h, d) = req.output_window();
        if anchor.x + w > fd.width || anchor.y + h > fd.height || anchor.z + d > fd.depth {
            return Err(Error::Bounds(format!("window outside stored field {fd}")));
        }
        let mut probs = Vec::with_capacity(NUM_CLASSES * w * h * d);
        for c in 0..NUM_CLASSES {
            let ch = field.channel(c);
            for z in anchor.z..anchor.z + d {
                for y in anchor.y..anchor.y + h {
                    let row = fd.index(anchor.x, y, z);
                    probs.extend_from_slice(&ch[row..row + w]);
                }
            }
        }
        PatchPrediction::new(anchor, w, h, d, probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch_engine::{labelize, Anchor, DepthMode, Patch};
    use crate::volume::Dims3;
    use crate::volume_io::write_volume;

    #[test]
    fn uniform_field_labels_background_and_unknown_id_fails() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dims3::new(5, 4, 3);
        write_volume(&ProbField::<f32>::uniform("v1", d), &prob_path(dir.path(), "v1")).unwrap();
        let b = ExternalBackend::<f32>::new(dir.path(), "unet");
        let f = b.field("v1").unwrap();
        assert!(labelize(&f).data().iter().all(|&v| v == 0));

        let patch = Patch { anchor: Anchor::new(1, 1, 2), width: 2, height: 2, depth: 1, data: vec![0.0; 4] };
        let req = PredictRequest { volume_id: "v1", volume_dims: d, depth_mode: DepthMode::D2, patch: &patch };
        let p = b.predict(&req).unwrap();
        assert!(p.probs.iter().all(|&v| v == 0.25));

        let req = PredictRequest { volume_id: "v2", ..req };
        match b.predict(&req) {
            Err(Error::Lookup(m)) => assert!(m.contains("v2")),
            other => panic!("expected lookup error, got {other:?}"),
        }
    }

    #[test]
    fn simplex_violation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dims3::new(2, 2, 1);
        let bad = ProbField::<f32>::from_raw("v", d, vec![0.5; 16]).unwrap();
        write_volume(&bad, &prob_path(dir.path(), "v")).unwrap();
        let b = ExternalBackend::<f32>::new(dir.path(), "ext");
        assert!(matches!(b.field("v"), Err(Error::Validation(_))));
    }
}
