//! Ranking and classification metrics with fold aggregation.

mod random;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{NarbError, Result};

pub use random::{expected_random_ap, random_ranking_map};
pub use report::{read_results_csv, write_results_csv, write_results_json, ResultRow, RunHeader};

/// Labels and scores of one ranked candidate pool, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingOutcome {
    labels: Vec<bool>,
    scores: Vec<f64>,
}

impl RankingOutcome {
    /// Labels already in ranked order; ranks are treated as strict.
    pub fn from_ranked_labels(labels: Vec<bool>) -> Result<Self> {
        let n = labels.len();
        let scores = (0..n).map(|i| (n - i) as f64).collect();
        Self::checked(labels, scores)
    }

    /// Ranks candidates by descending score, ties kept in candidate order.
    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(NarbError::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
        }
        let order = rank_order(scores);
        Self::checked(
            order.iter().map(|&i| labels[i]).collect(),
            order.iter().map(|&i| scores[i]).collect(),
        )
    }

    fn checked(labels: Vec<bool>, scores: Vec<f64>) -> Result<Self> {
        if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
            return Err(NarbError::UndefinedMetric(
                "a ranking outcome needs at least one positive and one negative".into(),
            ));
        }
        Ok(RankingOutcome { labels, scores })
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

/// Candidate indices by descending score; equal scores keep index order.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub mrr: f64,
    pub ap: f64,
    pub pairwise_accuracy: f64,
}

pub fn rank_metrics(outcome: &RankingOutcome) -> RankMetrics {
    let labels = &outcome.labels;
    let first = labels.iter().position(|&l| l).expect("validated outcome");
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if l {
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
        }
    }
    // A positive beats every negative ranked below it with a strictly lower
    // score; tied scores count as failures.
    let n_pos = hits;
    let n_neg = labels.len() - n_pos;
    let mut correct = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        if !l {
            continue;
        }
        correct += labels
            .iter()
            .enumerate()
            .skip(i + 1)
            .filter(|&(j, &lj)| !lj && outcome.scores[j] < outcome.scores[i])
            .count();
    }
    RankMetrics {
        mrr: 1.0 / (first + 1) as f64,
        ap: precision_sum / n_pos as f64,
        pairwise_accuracy: correct as f64 / (n_pos * n_neg) as f64,
    }
}

/// Unweighted mean over examples (MAP, mean MRR, mean pairwise accuracy).
pub fn mean_rank_metrics(per_example: &[RankMetrics]) -> Result<RankMetrics> {
    if per_example.is_empty() {
        return Err(NarbError::UndefinedMetric("no ranked examples".into()));
    }
    let n = per_example.len() as f64;
    let sum = |f: fn(&RankMetrics) -> f64| per_example.iter().map(f).sum::<f64>() / n;
    Ok(RankMetrics {
        mrr: sum(|m| m.mrr),
        ap: sum(|m| m.ap),
        pairwise_accuracy: sum(|m| m.pairwise_accuracy),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub f1: f64,
    pub accuracy: f64,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
}

/// F1 and accuracy predicting positive for `score >= threshold`, plus AUROC.
pub fn classification_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ClassMetrics> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(NarbError::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= threshold;
        match (pred, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        if pred == l {
            correct += 1;
        }
    }
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    Ok(ClassMetrics {
        f1,
        accuracy: correct as f64 / labels.len() as f64,
        auroc: auroc(scores, labels).ok(),
    })
}

/// Rank-sum AUROC; tied positive/negative pairs count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(NarbError::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(NarbError::UndefinedMetric("AUROC needs both classes".into()));
    }
    // Midranks over the ascending sort.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_id: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Per-metric mean and sample standard deviation across folds.
pub fn aggregate_folds(reports: &[FoldReport]) -> Result<BTreeMap<String, MeanStd>> {
    if reports.len() < 2 {
        return Err(NarbError::InvalidArgument(format!(
            "aggregation needs at least 2 folds, got {}",
            reports.len()
        )));
    }
    let names: Vec<&String> = reports[0].values.keys().collect();
    for r in &reports[1..] {
        if r.values.keys().collect::<Vec<_>>() != names {
            return Err(NarbError::InvalidData(format!(
                "fold {} reports a different metric set than fold {}",
                r.fold_id, reports[0].fold_id
            )));
        }
    }
    Ok(names
        .into_iter()
        .map(|name| {
            let mut v: Vec<f64> = reports.iter().map(|r| r.values[name]).collect();
            // Sorting makes the sums independent of fold order.
            v.sort_by(f64::total_cmp);
            (name.clone(), mean_std(&v))
        })
        .collect())
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    MeanStd { mean, std: var.sqrt() }
}
