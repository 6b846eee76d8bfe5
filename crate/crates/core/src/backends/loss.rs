//! Median-frequency class balancing and the weighted cross-entropy it feeds.

use crate::error::{arg, Error, Result};
use crate::scalar::Scalar;
use crate::volume::{LabelVolume, ProbField, NUM_CLASSES};

/// Probabilities are clamped to `[LOG_CLAMP, 1]` before taking logs.
pub const LOG_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights<T> {
    pub w: [T; NUM_CLASSES],
}

impl<T: Scalar> ClassWeights<T> {
    pub fn new(w: [T; NUM_CLASSES]) -> Result<Self> {
        if w.iter().any(|v| !(v.is_finite() && *v > T::zero())) {
            return arg(format!("class weights must be finite and positive, got {w:?}"));
        }
        Ok(Self { w })
    }

    pub fn unit() -> Self {
        Self { w: [T::one(); NUM_CLASSES] }
    }

    pub fn scaled(&self, k: T) -> Result<Self> {
        Self::new(self.w.map(|v| v * k))
    }
}

/// `w_c = median(freq) / freq_c` over the classes present in the pooled
/// voxels; absent classes receive the largest present weight.
pub fn class_weights<T: Scalar>(train_labels: &[LabelVolume]) -> Result<ClassWeights<T>> {
    let mut counts = [0u64; NUM_CLASSES];
    for l in train_labels {
        for (c, n) in l.class_counts().into_iter().enumerate() {
            counts[c] += n;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return arg("class weights need at least one labelled voxel");
    }
    let freq: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(c, &n)| (c, n as f64 / total as f64))
        .collect();
    let mut sorted: Vec<f64> = freq.iter().map(|&(_, f)| f).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
    };
    let mut w = [f64::NAN; NUM_CLASSES];
    for &(c, f) in &freq {
        w[c] = median / f;
    }
    let max_present = freq.iter().map(|&(c, _)| w[c]).fold(f64::MIN, f64::max);
    for v in &mut w {
        if v.is_nan() {
            *v = max_present;
        }
    }
    ClassWeights::new(w.map(T::of))
}

/// Mean over voxels of `-w[t] * ln(max(p_t, LOG_CLAMP))` where `t` is the true class.
pub fn weighted_cross_entropy<T: Scalar>(prob: &ProbField<T>, truth: &LabelVolume, w: &ClassWeights<T>) -> Result<T> {
    if prob.dims() != truth.dims() {
        return Err(Error::Argument(format!(
            "probability field {} and labels {} differ",
            prob.dims(),
            truth.dims()
        )));
    }
    let n = truth.dims().voxel_count();
    let weights = w.w.map(|v| v.as_f64());
    let mut acc = 0.0f64;
    for (i, &t) in truth.data().iter().enumerate() {
        let c = t as usize;
        let p = prob.data()[c * n + i].as_f64().clamp(LOG_CLAMP, 1.0);
        acc += -weights[c] * p.ln();
    }
    Ok(T::of(acc / n as f64))
}

/// Unweighted cross-entropy.
pub fn cross_entropy<T: Scalar>(prob: &ProbField<T>, truth: &LabelVolume) -> Result<T> {
    weighted_cross_entropy(prob, truth, &ClassWeights::unit())
}
