use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::nn::Adam;
use super::{Embeddings, LayerSelector, Scorer, ScorerKind, SpanInput, DEFAULT_HIDDEN};
use crate::corpus::Span;
use crate::metrics::{mean_rank_metrics, rank_metrics, rank_order, RankMetrics, RankingOutcome};
use crate::pools::RankingExample;
use crate::seed;
use crate::{NarbError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Anchors per batch.
    pub batch_size: usize,
    /// Epochs without a validation-MAP gain before stopping.
    pub patience: usize,
    pub seed: u64,
    pub layer_selector: LayerSelector,
    pub hidden: usize,
    pub in_batch_negatives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            patience: 5,
            seed: 0,
            layer_selector: LayerSelector::AllLayers,
            hidden: DEFAULT_HIDDEN,
            in_batch_negatives: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(NarbError::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(NarbError::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(NarbError::InvalidArgument("batch_size must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_map: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub scorer: Scorer,
    /// Epoch whose parameters were kept (1-based; 0 when nothing trained).
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub warnings: Vec<String>,
}

fn input<'a>(span: &'a Span, emb: Option<&'a Embeddings>) -> Result<SpanInput<'a>> {
    Ok(SpanInput {
        span,
        emb: emb.map(|e| e.get(span)).transpose()?,
    })
}

fn usable(ex: &RankingExample) -> bool {
    ex.labels.iter().any(|&l| l) && ex.labels.iter().any(|&l| !l)
}

/// Trains a ranking probe with pairwise loss and in-batch negatives,
/// keeping the parameters of the epoch with the best validation MAP.
pub fn train_probe(
    train: &[RankingExample],
    val: &[RankingExample],
    emb: Option<&Embeddings>,
    kind: ScorerKind,
    config: &TrainConfig,
) -> Result<TrainedProbe> {
    config.validate()?;
    let (dim, n_layers) = match (kind.needs_embeddings(), emb) {
        (true, None) => return Err(NarbError::InvalidArgument(format!("{kind} scorer needs an embedding store"))),
        (true, Some(e)) => {
            if e.selector != config.layer_selector {
                return Err(NarbError::InvalidArgument(format!(
                    "embeddings loaded for {}, config asks for {}",
                    e.selector, config.layer_selector
                )));
            }
            (e.dim, e.n_layers)
        }
        (false, _) => (0, 1),
    };
    let emb = if kind.needs_embeddings() { emb } else { None };
    let mut scorer = Scorer::new(kind, dim, config.layer_selector, n_layers, config.hidden, config.seed)?;
    let mut warnings = Vec::new();
    let examples: Vec<&RankingExample> = train
        .iter()
        .filter(|ex| {
            let ok = usable(ex);
            if !ok {
                warnings.push(format!("example {} lacks a positive or a negative; skipped", ex.example_id));
            }
            ok
        })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    if scorer.n_params() == 0 || examples.is_empty() {
        return Ok(TrainedProbe {
            scorer,
            best_epoch: 0,
            history: Vec::new(),
            warnings,
        });
    }

    let mut opt = Adam::new(scorer.n_params(), config.learning_rate);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut grad = vec![0.0; scorer.n_params()];
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(config.seed, "probe-epoch", epoch as u64)));
        let mut epoch_loss = 0.0;
        let mut epoch_pairs = 0usize;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_pairs = 0usize;
            for &i in batch {
                let ex = examples[i];
                let (spans, labels) = batch_pool(ex, batch.iter().map(|&j| examples[j]), kind, config.in_batch_negatives);
                let anchor = input(&ex.anchor, emb)?;
                let cands = spans.iter().map(|s| input(s, emb)).collect::<Result<Vec<_>>>()?;
                let (loss, pairs) = scorer.pool_loss(&anchor, &cands, &labels, Some(&mut grad))?;
                epoch_loss += loss;
                batch_pairs += pairs;
            }
            if batch_pairs == 0 {
                continue;
            }
            epoch_pairs += batch_pairs;
            let scale = 1.0 / batch_pairs as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut scorer.params, &grad);
        }
        let loss = epoch_loss / epoch_pairs.max(1) as f64;
        if !loss.is_finite() || scorer.params.iter().any(|p| !p.is_finite()) {
            return Err(NarbError::Divergence { epoch, loss });
        }
        let val_map = if val.is_empty() {
            None
        } else {
            Some(evaluate(&scorer, val, emb)?.0.ap)
        };
        log::debug!("{kind} epoch {epoch}: loss {loss:.5} val MAP {val_map:?}");
        history.push(EpochLog { epoch, loss, val_map });
        let score = val_map.unwrap_or(f64::NEG_INFINITY);
        match &best {
            Some((b, _, _)) if score <= *b && val_map.is_some() => {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((score, epoch, scorer.params.clone()));
                since_best = 0;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    scorer.params = params;
    Ok(TrainedProbe {
        scorer,
        best_epoch,
        history,
        warnings,
    })
}

/// The example's own pool plus positives of other anchors in the batch as
/// extra negatives. Those sharing the anchor's group, the anchor itself and
/// its own candidates are left out, as are cross-document spans for scorers
/// that need a token distance.
fn batch_pool<'a>(
    ex: &'a RankingExample,
    batch: impl Iterator<Item = &'a RankingExample>,
    kind: ScorerKind,
    in_batch: bool,
) -> (Vec<&'a Span>, Vec<bool>) {
    let mut spans: Vec<&Span> = ex.candidates.iter().collect();
    let mut labels = ex.labels.clone();
    if !in_batch {
        return (spans, labels);
    }
    let mut seen: HashSet<&Span> = ex.candidates.iter().collect();
    seen.insert(&ex.anchor);
    for other in batch {
        if std::ptr::eq(other, ex) || other.group_id == ex.group_id {
            continue;
        }
        for p in other.positives() {
            if kind.needs_same_document() && p.doc_id != ex.anchor.doc_id {
                continue;
            }
            if seen.insert(p) {
                spans.push(p);
                labels.push(false);
            }
        }
    }
    (spans, labels)
}

/// Candidate indices of one example by descending score (ties keep
/// candidate order), with their scores.
pub fn rank_candidates(scorer: &Scorer, example: &RankingExample, emb: Option<&Embeddings>) -> Result<Vec<(usize, f64)>> {
    let scores = example_scores(scorer, example, emb)?;
    Ok(rank_order(&scores).into_iter().map(|i| (i, scores[i])).collect())
}

pub fn example_scores(scorer: &Scorer, example: &RankingExample, emb: Option<&Embeddings>) -> Result<Vec<f64>> {
    let emb = if scorer.kind.needs_embeddings() { emb } else { None };
    let anchor = input(&example.anchor, emb)?;
    let cands = example.candidates.iter().map(|s| input(s, emb)).collect::<Result<Vec<_>>>()?;
    scorer.score_candidates(&anchor, &cands)
}

/// Per-example scores for a set of examples, and their mean metrics.
/// Examples without both classes are skipped.
pub fn evaluate(scorer: &Scorer, examples: &[RankingExample], emb: Option<&Embeddings>) -> Result<(RankMetrics, Vec<Vec<f64>>)> {
    let mut per = Vec::new();
    let mut all_scores = Vec::new();
    for ex in examples.iter().filter(|e| usable(e)) {
        let scores = example_scores(scorer, ex, emb)?;
        per.push(rank_metrics(&RankingOutcome::from_scores(&scores, &ex.labels)?));
        all_scores.push(scores);
    }
    Ok((mean_rank_metrics(&per)?, all_scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pools::{CandidateTag, Task};

    fn ex(id: &str, group: &str, doc: &str, pos: &[usize], neg: &[usize]) -> RankingExample {
        let sp = |s: usize| Span::new(doc, s, s + 1).unwrap();
        let mut candidates: Vec<Span> = pos.iter().map(|&s| sp(s)).collect();
        candidates.extend(neg.iter().map(|&s| sp(s)));
        let labels = (0..candidates.len()).map(|i| i < pos.len()).collect();
        RankingExample {
            example_id: id.into(),
            task: Task::Rhetorical,
            anchor: sp(0),
            group_id: group.into(),
            tags: vec![CandidateTag::Branch; candidates.len()],
            candidates,
            labels,
            seed: 0,
        }
    }

    #[test]
    fn in_batch_negatives_respect_groups_and_documents() {
        let a = ex("a", "g1", "d", &[1], &[50]);
        let b = ex("b", "g2", "d", &[2, 50], &[60]);
        let c = ex("c", "g1", "d", &[3], &[70]);
        let e = ex("e", "g3", "other", &[4], &[80]);
        let batch = [a.clone(), b, c, e];
        let (spans, labels) = batch_pool(&batch[0], batch.iter(), ScorerKind::Linear, true);
        let starts: Vec<_> = spans.iter().map(|s| (s.doc_id.as_str(), s.start)).collect();
        // b's 50 duplicates an own negative; c shares the group
        assert_eq!(starts, [("d", 1), ("d", 50), ("d", 2), ("other", 4)]);
        assert_eq!(labels, [true, false, false, false]);
        let (spans, _) = batch_pool(&batch[0], batch.iter(), ScorerKind::Distance, true);
        assert_eq!(spans.len(), 3);
        let (spans, _) = batch_pool(&batch[0], batch.iter(), ScorerKind::Linear, false);
        assert_eq!(spans.len(), 2);
    }

    #[test]
    fn distance_probe_learns_nearness() {
        let mut train = Vec::new();
        for i in 0..40 {
            let doc = format!("d{i}");
            let mut e = ex(&format!("x{i}"), &format!("g{i}"), &doc, &[3, 6], &[200, 350, 500, 90]);
            e.anchor = Span::new(doc, 1, 2).unwrap();
            train.push(e);
        }
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = train_probe(&train[..30], &train[30..], None, ScorerKind::Distance, &cfg).unwrap();
        let (m, _) = evaluate(&out.scorer, &train[30..], None).unwrap();
        assert_eq!(m.ap, 1.0);
        let ranked = rank_candidates(&out.scorer, &train[35], None).unwrap();
        assert_eq!(ranked[0].0, 0);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(train_probe(&[], &[], None, ScorerKind::Distance, &cfg).is_err());
        assert!(train_probe(&[], &[], None, ScorerKind::Linear, &TrainConfig::default()).is_err());
    }
}
