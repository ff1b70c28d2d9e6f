//! k-fold probe runs over document-level splits.

use serde::{Deserialize, Serialize};

use crate::corpus::SplitAssignment;
use crate::metrics::RankMetrics;
use crate::par::*;
use crate::pools::{partition_by_fold, RankingExample};
use crate::probes::{evaluate, train_probe, Embeddings, Scorer, ScorerKind, TrainConfig};
use crate::{seed, NarbError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_id: usize,
    pub metrics: RankMetrics,
    pub scorer: Scorer,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub test_examples: Vec<RankingExample>,
    pub test_scores: Vec<Vec<f64>>,
}

impl FoldResult {
    pub fn mix_weights(&self) -> Option<Vec<f64>> {
        self.scorer.mix_weights()
    }
}

/// Trains and tests one probe per fold. Each fold gets its own seed
/// stream; results come back in fold order whatever the thread count.
pub fn cross_validate(
    examples: &[RankingExample],
    folds: &[SplitAssignment],
    emb: Option<&Embeddings>,
    kind: ScorerKind,
    config: &TrainConfig,
) -> Result<Vec<FoldResult>> {
    if folds.is_empty() {
        return Err(NarbError::InvalidArgument("no folds".into()));
    }
    folds
        .par_iter()
        .map(|fold| {
            let (train, val, test) = partition_by_fold(examples, fold);
            if test.is_empty() {
                return Err(NarbError::InvalidData(format!("fold {} has no test examples", fold.fold_id)));
            }
            let cfg = TrainConfig {
                seed: seed::derive(config.seed, "train", fold.fold_id as u64),
                ..config.clone()
            };
            let trained = train_probe(&train, &val, emb, kind, &cfg)?;
            let (metrics, test_scores) = evaluate(&trained.scorer, &test, emb)?;
            Ok(FoldResult {
                fold_id: fold.fold_id,
                metrics,
                scorer: trained.scorer,
                config: cfg,
                best_epoch: trained.best_epoch,
                test_examples: test,
                test_scores,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}
