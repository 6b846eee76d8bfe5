use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{FluidClass, LabelVolume};

/// Per-class voxel tallies of a prediction against a reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

fn check_dims(pred: &LabelVolume, truth: &LabelVolume) -> Result<()> {
    if pred.dims() != truth.dims() {
        return Err(Error::Argument(format!(
            "prediction {} and reference {} differ in shape",
            pred.dims(),
            truth.dims()
        )));
    }
    Ok(())
}

pub fn confusion(pred: &LabelVolume, truth: &LabelVolume, cls: FluidClass) -> Result<ConfusionCounts> {
    check_dims(pred, truth)?;
    let v = cls.label();
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p == v, t == v) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Confusion counts for IRF, SRF and PED in one pass.
pub fn fluid_confusions(pred: &LabelVolume, truth: &LabelVolume) -> Result<[ConfusionCounts; 3]> {
    check_dims(pred, truth)?;
    // joint[p][t]
    let mut joint = [[0u64; 4]; 4];
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        joint[p as usize][t as usize] += 1;
    }
    let total = pred.data().len() as u64;
    Ok(FluidClass::FLUIDS.map(|cls| {
        let k = cls.index();
        let tp = joint[k][k];
        let pred_k: u64 = joint[k].iter().sum();
        let truth_k: u64 = joint.iter().map(|row| row[k]).sum();
        let (fp, fn_) = (pred_k - tp, truth_k - tp);
        ConfusionCounts { tp, fp, fn_, tn: total - tp - fp - fn_ }
    }))
}

/// `2 tp / (2 tp + fp + fn)`; 1.0 when the class is absent from both.
pub fn dice(c: ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return 1.0;
    }
    (2 * c.tp) as f64 / denom as f64
}

/// Dice for IRF, SRF, PED.
pub fn dice_volume(pred: &LabelVolume, truth: &LabelVolume) -> Result<[f64; 3]> {
    Ok(fluid_confusions(pred, truth)?.map(dice))
}
