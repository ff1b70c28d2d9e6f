use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{seed, NarbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn contains_train(&self, id: &str) -> bool {
        self.train.binary_search_by(|x| x.as_str().cmp(id)).is_ok()
    }

    pub fn contains_val(&self, id: &str) -> bool {
        self.val.binary_search_by(|x| x.as_str().cmp(id)).is_ok()
    }

    pub fn contains_test(&self, id: &str) -> bool {
        self.test.binary_search_by(|x| x.as_str().cmp(id)).is_ok()
    }
}

fn count(ratio: f64, n: usize) -> usize {
    // the epsilon absorbs 0.1 * 30 = 3.0000000000000004 style noise both ways
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Document-level k-fold assignments with an 80/10/10-style ratio.
///
/// Ids are shuffled once with `seed`; fold `f` takes its test block at
/// offset `f * n / k` and its validation block right after it (wrapping).
/// Val and test sizes are floored (minimum one document each) and the
/// remainder goes to train. Each partition list is sorted.
pub fn make_splits(doc_ids: &[String], k: usize, ratios: SplitRatios, seed: u64) -> Result<Vec<SplitAssignment>> {
    let n = doc_ids.len();
    if k < 2 {
        return Err(NarbError::InvalidArgument(format!("need k >= 2 folds, got {k}")));
    }
    if k > n {
        return Err(NarbError::InvalidArgument(format!(
            "cannot make {k} folds from {n} documents"
        )));
    }
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-6 || ratios.val < 0.0 || ratios.test < 0.0 || ratios.train <= 0.0 {
        return Err(NarbError::InvalidArgument(format!("bad split ratios {ratios:?}")));
    }
    let unique: HashSet<&String> = doc_ids.iter().collect();
    if unique.len() != n {
        return Err(NarbError::InvalidArgument("duplicate document ids".into()));
    }
    let n_test = count(ratios.test, n).max(1);
    let n_val = count(ratios.val, n).max(1);
    if n_test + n_val >= n {
        return Err(NarbError::InvalidArgument(format!(
            "{n} documents leave nothing for training"
        )));
    }

    let mut order: Vec<&String> = doc_ids.iter().collect();
    order.sort();
    order.shuffle(&mut seed::rng(seed));

    let folds = (0..k)
        .map(|fold_id| {
            let offset = fold_id * n / k;
            let pick = |from: usize, len: usize| -> Vec<String> {
                let mut v: Vec<String> = (0..len).map(|i| order[(from + i) % n].clone()).collect();
                v.sort();
                v
            };
            let test = pick(offset, n_test);
            let val = pick(offset + n_test, n_val);
            let train = pick(offset + n_test + n_val, n - n_test - n_val);
            SplitAssignment {
                fold_id,
                train,
                val,
                test,
            }
        })
        .collect();
    Ok(folds)
}
