//! Seeded k-fold cross-validation plans.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Shuffles `ids` with a seeded generator, then cuts the result into `k`
/// contiguous validation blocks whose sizes differ by at most one. The first
/// `n % k` blocks take the extra element.
pub fn make_folds(ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::FoldPlan(format!("need at least 2 folds, got {k}")));
    }
    if k > ids.len() {
        return Err(Error::FoldPlan(format!("{k} folds over {} ids", ids.len())));
    }
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::FoldPlan("duplicate ids".into()));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (order.len() / k, order.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let val = order[start..start + len].to_vec();
        let train = order[..start].iter().chain(&order[start + len..]).cloned().collect();
        folds.push(Fold { train, val });
        start += len;
    }
    Ok(FoldPlan { k, seed, folds })
}

impl FoldPlan {
    /// Checks the partition properties against the full id set: each fold's
    /// train and validation sets are disjoint and cover `ids`, and the
    /// validation sets partition `ids`.
    pub fn validate(&self, ids: &[String]) -> Result<()> {
        let all: HashSet<&String> = ids.iter().collect();
        if self.folds.len() != self.k {
            return Err(Error::FoldPlan(format!("{} folds recorded for k = {}", self.folds.len(), self.k)));
        }
        let mut covered = HashSet::new();
        for (i, f) in self.folds.iter().enumerate() {
            if f.val.is_empty() || f.train.is_empty() {
                return Err(Error::FoldPlan(format!("fold {i} is empty")));
            }
            let train: HashSet<&String> = f.train.iter().collect();
            let val: HashSet<&String> = f.val.iter().collect();
            if train.len() != f.train.len() || val.len() != f.val.len() {
                return Err(Error::FoldPlan(format!("fold {i} repeats an id")));
            }
            if let Some(id) = val.intersection(&train).next() {
                return Err(Error::FoldPlan(format!("fold {i}: validation id {id} is also a training id")));
            }
            if train.len() + val.len() != all.len() || !train.union(&val).all(|id| all.contains(id)) {
                return Err(Error::FoldPlan(format!("fold {i} does not cover the id set")));
            }
            for id in &f.val {
                if !covered.insert(id) {
                    return Err(Error::FoldPlan(format!("id {id} validated in more than one fold")));
                }
            }
        }
        if covered.len() != all.len() {
            return Err(Error::FoldPlan("validation sets do not cover the id set".into()));
        }
        Ok(())
    }
}
