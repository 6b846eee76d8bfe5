use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::mix_seed;
use crate::error::{arg, Error, Result};
use crate::volume::Vendor;

/// Volume ids per vendor.
pub type Inventory = BTreeMap<Vendor, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: BTreeMap<Vendor, Vec<String>>,
    pub test: BTreeMap<Vendor, Vec<String>>,
}

impl Fold {
    pub fn test_ids(&self) -> impl Iterator<Item = (Vendor, &str)> {
        self.test.iter().flat_map(|(&v, ids)| ids.iter().map(move |id| (v, id.as_str())))
    }

    pub fn train_ids(&self) -> impl Iterator<Item = (Vendor, &str)> {
        self.train.iter().flat_map(|(&v, ids)| ids.iter().map(move |id| (v, id.as_str())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Reads `volume_id,vendor` rows.
pub fn read_inventory<R: Read>(input: R) -> Result<Inventory> {
    let mut r = csv::Reader::from_reader(input);
    let mut inv = Inventory::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(format!("inventory: {e}")))?;
        if rec.len() != 2 {
            return Err(Error::Format(format!("inventory row has {} fields, expected 2", rec.len())));
        }
        let vendor: Vendor = rec[1].parse()?;
        inv.entry(vendor).or_default().push(rec[0].trim().to_string());
    }
    for ids in inv.values_mut() {
        ids.sort();
    }
    Ok(inv)
}

pub fn write_inventory<W: Write>(inv: &Inventory, out: W) -> Result<()> {
    let fail = |e: csv::Error| Error::Format(format!("writing inventory: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["volume_id", "vendor"]).map_err(fail)?;
    for (vendor, ids) in inv {
        for id in ids {
            w.write_record([id.as_str(), vendor.name()]).map_err(fail)?;
        }
    }
    w.flush().map_err(|e| Error::Format(format!("writing inventory: {e}")))
}

/// Sizes of the `k` test groups for `n` volumes.
///
/// Groups take `ceil(n / k)` volumes each until the inventory runs out, so
/// 24 volumes split 8/8/8 and 22 split 8/8/6. When that would leave a group
/// empty the sizes fall back to differing by at most one.
pub fn group_sizes(n: usize, k: usize) -> Vec<usize> {
    let chunk = n.div_ceil(k);
    if chunk * (k - 1) < n {
        let mut left = n;
        return (0..k)
            .map(|_| {
                let s = chunk.min(left);
                left -= s;
                s
            })
            .collect();
    }
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Per-vendor shuffled split; fold `i` tests group `i` of every vendor.
pub fn make_folds(inventory: &Inventory, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return arg(format!("fold count must be >= 2, got {k}"));
    }
    let mut folds = vec![
        Fold {
            train: BTreeMap::new(),
            test: BTreeMap::new(),
        };
        k
    ];
    for (vi, (&vendor, ids)) in inventory.iter().enumerate() {
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return arg(format!("{vendor} inventory lists a volume twice"));
        }
        if ids.len() < k {
            return arg(format!("{vendor} has {} volumes, fewer than {k} folds", ids.len()));
        }
        let mut order: Vec<String> = unique.into_iter().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, vi as u64 + 1, vendor as u64));
        order.shuffle(&mut rng);

        let mut groups = Vec::with_capacity(k);
        let mut start = 0;
        for size in group_sizes(order.len(), k) {
            let mut g = order[start..start + size].to_vec();
            g.sort();
            groups.push(g);
            start += size;
        }
        for (i, fold) in folds.iter_mut().enumerate() {
            let mut train: Vec<String> = groups
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, g)| g.iter().cloned())
                .collect();
            train.sort();
            fold.train.insert(vendor, train);
            fold.test.insert(vendor, groups[i].clone());
        }
    }
    Ok(FoldPlan { k, seed, folds })
}

impl FoldPlan {
    /// Checks disjointness and coverage against `inventory`.
    pub fn validate(&self, inventory: &Inventory) -> Result<()> {
        if self.folds.len() != self.k {
            return Err(Error::Validation(format!("plan has {} folds, expected {}", self.folds.len(), self.k)));
        }
        for (vendor, ids) in inventory {
            let all: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
            let mut seen = BTreeSet::new();
            for (i, f) in self.folds.iter().enumerate() {
                let test: BTreeSet<&str> = f.test.get(vendor).into_iter().flatten().map(String::as_str).collect();
                let train: BTreeSet<&str> = f.train.get(vendor).into_iter().flatten().map(String::as_str).collect();
                if !test.is_disjoint(&train) {
                    return Err(Error::Validation(format!("fold {i}: {vendor} train and test overlap")));
                }
                if test.union(&train).copied().collect::<BTreeSet<_>>() != all {
                    return Err(Error::Validation(format!("fold {i}: {vendor} train and test do not cover the inventory")));
                }
                for id in test {
                    if !seen.insert(id) {
                        return Err(Error::Validation(format!("{vendor} volume {id} is tested in two folds")));
                    }
                }
            }
            if seen != all {
                return Err(Error::Validation(format!("{vendor}: some volumes are never tested")));
            }
        }
        Ok(())
    }

    /// Writes `fold,vendor,role,volume_id` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::Format(format!("writing fold plan: {e}"));
        w.write_record(["fold", "vendor", "role", "volume_id"]).map_err(fail)?;
        for (i, f) in self.folds.iter().enumerate() {
            for (role, ids) in [("test", f.test_ids().collect::<Vec<_>>()), ("train", f.train_ids().collect())] {
                for (vendor, id) in ids {
                    w.write_record([i.to_string().as_str(), vendor.name(), role, id]).map_err(fail)?;
                }
            }
        }
        w.flush().map_err(|e| Error::Format(format!("writing fold plan: {e}")))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut folds: Vec<Fold> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Format(format!("fold plan: {e}")))?;
            if rec.len() != 4 {
                return Err(Error::Format(format!("fold plan row has {} fields, expected 4", rec.len())));
            }
            let i: usize = rec[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad fold index {:?}", &rec[0])))?;
            let vendor: Vendor = rec[1].parse()?;
            while folds.len() <= i {
                folds.push(Fold {
                    train: BTreeMap::new(),
                    test: BTreeMap::new(),
                });
            }
            let side = match &rec[2] {
                "test" => &mut folds[i].test,
                "train" => &mut folds[i].train,
                other => return Err(Error::Format(format!("bad fold role {other:?}"))),
            };
            side.entry(vendor).or_default().push(rec[3].to_string());
        }
        Ok(FoldPlan { k: folds.len(), seed, folds })
    }
}
