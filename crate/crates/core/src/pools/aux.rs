use std::collections::HashSet;

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LitBankDoc, Span, WithWarnings};
use crate::{seed, NarbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxTask {
    Event,
    Entity,
    Coref,
    Quote,
}

impl AuxTask {
    pub fn is_pair(self) -> bool {
        matches!(self, AuxTask::Coref | AuxTask::Quote)
    }
}

impl std::str::FromStr for AuxTask {
    type Err = NarbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "event" => Ok(AuxTask::Event),
            "entity" => Ok(AuxTask::Entity),
            "coref" => Ok(AuxTask::Coref),
            "quote" => Ok(AuxTask::Quote),
            _ => Err(NarbError::InvalidArgument(format!("unknown auxiliary task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuxInstance {
    pub task: AuxTask,
    pub span_1: Span,
    pub span_2: Option<Span>,
    pub label: bool,
}

impl AuxInstance {
    pub fn validate(&self) -> Result<()> {
        match (&self.span_2, self.task.is_pair()) {
            (Some(s2), true) if s2.doc_id == self.span_1.doc_id => Ok(()),
            (None, false) => Ok(()),
            _ => Err(NarbError::InvalidData(format!(
                "{:?} instance at {} has the wrong span arity",
                self.task,
                self.span_1.key()
            ))),
        }
    }

    pub fn doc_id(&self) -> &str {
        &self.span_1.doc_id
    }
}

fn single(task: AuxTask, span: Span, label: bool) -> AuxInstance {
    AuxInstance {
        task,
        span_1: span,
        span_2: None,
        label,
    }
}

fn pair(task: AuxTask, a: Span, b: Span, label: bool) -> AuxInstance {
    AuxInstance {
        task,
        span_1: a,
        span_2: Some(b),
        label,
    }
}

/// Keeps `min(|pos|, |neg|)` of each class, sampling without replacement
/// from the larger side and preserving the original order.
fn balance(
    mut pos: Vec<AuxInstance>,
    mut neg: Vec<AuxInstance>,
    rng: &mut seed::Rng,
) -> Vec<AuxInstance> {
    let n = pos.len().min(neg.len());
    let shrink = |v: &mut Vec<AuxInstance>, rng: &mut seed::Rng| {
        if v.len() > n {
            let mut keep = index::sample(rng, v.len(), n).into_vec();
            keep.sort_unstable();
            *v = keep.into_iter().map(|i| v[i].clone()).collect();
        }
    };
    shrink(&mut neg, rng);
    shrink(&mut pos, rng);
    pos.extend(neg);
    pos
}

/// Builds class-balanced instances for one auxiliary task.
pub fn build_aux_instances(task: AuxTask, docs: &[LitBankDoc], seed: u64) -> Result<WithWarnings<Vec<AuxInstance>>> {
    let mut rng = seed::rng(seed);
    let mut warnings = Vec::new();
    let mut pos = Vec::new();
    let mut neg = Vec::new();

    match task {
        AuxTask::Event => {
            for d in docs {
                let events: HashSet<usize> = d.annotations.events.iter().map(|s| s.start).collect();
                for s in &d.annotations.events {
                    pos.push(single(task, s.clone(), true));
                }
                for t in 0..d.document.token_count() {
                    if !events.contains(&t) {
                        neg.push(single(task, Span::new(d.document.doc_id.clone(), t, t + 1)?, false));
                    }
                }
            }
        }
        AuxTask::Entity => {
            let all: Vec<&Span> = docs.iter().flat_map(|d| &d.annotations.entities).collect();
            if all.is_empty() {
                return Ok(WithWarnings::new(Vec::new(), vec!["no entity annotations".into()]));
            }
            let mean_len = all.iter().map(|s| s.len()).sum::<usize>() as f64 / all.len() as f64;
            let max_len = ((2.0 * mean_len).round() as usize).max(1);
            for d in docs {
                let ents = &d.annotations.entities;
                pos.extend(ents.iter().map(|s| single(task, s.clone(), true)));
                let n_tok = d.document.token_count();
                let mut taken: HashSet<Span> = HashSet::new();
                let mut drawn = 0;
                for _ in 0..100 * ents.len() {
                    if drawn == ents.len() {
                        break;
                    }
                    let len = rng.random_range(1..=max_len);
                    if len > n_tok {
                        continue;
                    }
                    let start = rng.random_range(0..=n_tok - len);
                    let span = Span::new(d.document.doc_id.clone(), start, start + len)?;
                    if ents.iter().any(|e| e.overlaps(&span)) || !taken.insert(span.clone()) {
                        continue;
                    }
                    neg.push(single(task, span, false));
                    drawn += 1;
                }
                if drawn < ents.len() {
                    warnings.push(format!(
                        "{}: only {drawn} of {} entity negatives found",
                        d.document.doc_id,
                        ents.len()
                    ));
                }
            }
        }
        AuxTask::Coref => {
            for d in docs {
                let chains = &d.annotations.coref_chains;
                for c in chains {
                    for i in 0..c.mentions.len() {
                        for j in i + 1..c.mentions.len() {
                            pos.push(pair(task, c.mentions[i].clone(), c.mentions[j].clone(), true));
                        }
                    }
                }
                for (ci, a) in chains.iter().enumerate() {
                    for b in &chains[ci + 1..] {
                        for ma in &a.mentions {
                            for mb in &b.mentions {
                                let (x, y) = if ma <= mb { (ma, mb) } else { (mb, ma) };
                                neg.push(pair(task, x.clone(), y.clone(), false));
                            }
                        }
                    }
                }
            }
        }
        AuxTask::Quote => {
            for d in docs {
                let quotes = &d.annotations.quotes;
                for q in quotes {
                    pos.push(pair(task, q.quote.clone(), q.speaker.clone(), true));
                    let mut others: Vec<&Span> = Vec::new();
                    let mut seen_ids = HashSet::new();
                    for o in quotes {
                        if o.speaker_id != q.speaker_id && seen_ids.insert(o.speaker_id.as_str()) {
                            others.push(&o.speaker);
                        }
                    }
                    if let Some(&s) = others.choose(&mut rng) {
                        neg.push(pair(task, q.quote.clone(), s.clone(), false));
                    }
                }
            }
        }
    }

    if pos.is_empty() {
        warnings.push(format!("{task:?}: no positive instances"));
    }
    if neg.len() < pos.len() {
        warnings.push(format!(
            "{task:?}: {} negatives for {} positives; positives downsampled",
            neg.len(),
            pos.len()
        ));
    }
    Ok(WithWarnings::new(balance(pos, neg, &mut rng), warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorefChain, Document, LitBankAnnotations, Quote};

    fn doc(id: &str, n_tokens: usize) -> Document {
        let words: Vec<String> = (0..n_tokens).map(|i| format!("t{i}")).collect();
        Document::new(id, words.join(" "))
    }

    fn litbank() -> Vec<LitBankDoc> {
        let sp = |d: &str, s: usize, e: usize| Span::new(d, s, e).unwrap();
        vec![
            LitBankDoc {
                document: doc("d1", 60),
                annotations: LitBankAnnotations {
                    doc_id: "d1".into(),
                    events: vec![sp("d1", 3, 4), sp("d1", 9, 10), sp("d1", 20, 21)],
                    entities: vec![sp("d1", 0, 2), sp("d1", 30, 31)],
                    coref_chains: vec![
                        CorefChain {
                            entity_id: "A".into(),
                            mentions: vec![sp("d1", 0, 2), sp("d1", 12, 13), sp("d1", 40, 41)],
                        },
                        CorefChain {
                            entity_id: "B".into(),
                            mentions: vec![sp("d1", 30, 31)],
                        },
                    ],
                    quotes: vec![
                        Quote { quote: sp("d1", 14, 19), speaker: sp("d1", 12, 13), speaker_id: "A".into() },
                        Quote { quote: sp("d1", 32, 36), speaker: sp("d1", 30, 31), speaker_id: "B".into() },
                    ],
                },
            },
            LitBankDoc {
                document: doc("d2", 30),
                annotations: LitBankAnnotations {
                    doc_id: "d2".into(),
                    events: vec![sp("d2", 5, 6)],
                    entities: vec![sp("d2", 1, 2)],
                    coref_chains: vec![CorefChain {
                        entity_id: "C".into(),
                        mentions: vec![sp("d2", 1, 2), sp("d2", 7, 8)],
                    }],
                    quotes: vec![Quote { quote: sp("d2", 10, 14), speaker: sp("d2", 7, 8), speaker_id: "C".into() }],
                },
            },
        ]
    }

    fn count(v: &[AuxInstance]) -> (usize, usize) {
        let p = v.iter().filter(|i| i.label).count();
        (p, v.len() - p)
    }

    #[test]
    fn events_balanced_and_negatives_are_non_events() {
        let docs = litbank();
        let out = build_aux_instances(AuxTask::Event, &docs, 42).unwrap().value;
        assert_eq!(count(&out), (4, 4));
        let events: HashSet<_> = docs.iter().flat_map(|d| d.annotations.events.clone()).collect();
        for i in out.iter().filter(|i| !i.label) {
            assert_eq!(i.span_1.len(), 1);
            assert!(!events.contains(&i.span_1));
        }
    }

    #[test]
    fn coref_chain_of_three_gives_three_pairs() {
        let out = build_aux_instances(AuxTask::Coref, &litbank(), 42).unwrap().value;
        // chain A (3 mentions) -> 3 pairs, chain C (2) -> 1, chain B (1) -> 0;
        // d1 has 3 x 1 cross-entity pairs, d2 a single entity. Balancing
        // trims the 4 positives down to 3.
        assert_eq!(count(&out), (3, 3));
        for i in &out {
            assert_eq!(i.span_1.doc_id, i.span_2.as_ref().unwrap().doc_id);
        }
    }

    #[test]
    fn quote_negative_needs_second_speaker() {
        let out = build_aux_instances(AuxTask::Quote, &litbank(), 42).unwrap();
        // d2 has one speaker -> no negative; balance drops one positive
        assert_eq!(count(&out.value), (2, 2));
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn entity_negatives_avoid_entities() {
        let docs = litbank();
        let out = build_aux_instances(AuxTask::Entity, &docs, 42).unwrap().value;
        assert_eq!(count(&out), (3, 3));
        for i in out.iter().filter(|i| !i.label) {
            let d = docs.iter().find(|d| d.document.doc_id == i.span_1.doc_id).unwrap();
            assert!(d.annotations.entities.iter().all(|e| !e.overlaps(&i.span_1)));
            assert!(i.span_1.len() <= 3); // mean length 4/3 -> max 3
        }
    }

    #[test]
    fn seed_42_is_reproducible() {
        for task in [AuxTask::Event, AuxTask::Entity, AuxTask::Coref, AuxTask::Quote] {
            let a = build_aux_instances(task, &litbank(), 42).unwrap();
            let b = build_aux_instances(task, &litbank(), 42).unwrap();
            assert_eq!(a, b);
        }
    }
}
