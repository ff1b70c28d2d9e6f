use rand::seq::SliceRandom;

use super::{rank_metrics, RankingOutcome};
use crate::par::*;
use crate::seed;
use crate::{NarbError, Result};

/// Monte-Carlo MAP of uniformly random rankings over pools with the given
/// `(pool size, positives)` shapes.
pub fn random_ranking_map(shapes: &[(usize, usize)], shuffles: usize, seed: u64) -> Result<f64> {
    if shapes.is_empty() || shuffles == 0 {
        return Err(NarbError::InvalidArgument("need at least one pool shape and one shuffle".into()));
    }
    for &(n, r) in shapes {
        if r == 0 || r >= n {
            return Err(NarbError::UndefinedMetric(format!("pool of {n} with {r} positives")));
        }
    }
    let total: f64 = (0..shuffles)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng(seed::derive(seed, "random-map", s as u64));
            let mut sum = 0.0;
            for &(n, r) in shapes {
                let mut labels: Vec<bool> = (0..n).map(|i| i < r).collect();
                labels.shuffle(&mut rng);
                let o = RankingOutcome::from_ranked_labels(labels).expect("both classes");
                sum += rank_metrics(&o).ap;
            }
            sum / shapes.len() as f64
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / shuffles as f64)
}

/// Closed-form expected AP of a uniformly random ranking of `n` items with
/// `r` positives.
pub fn expected_random_ap(n: usize, r: usize) -> f64 {
    let h: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let n_f = n as f64;
    if n == 1 {
        return 1.0;
    }
    (h + (r as f64 - 1.0) / (n_f - 1.0) * (n_f - h)) / n_f
}
