//! Synthetic corpora and activation stores with known structure, used as
//! oracles by the tests, the acceptance suite and the benches.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{AspCorpus, BranchSet, Document, Pattern, Span, Token};
use crate::pools::{CandidateTag, RankingExample, Task};
use crate::seed;
use crate::store::{Pooling, SpanEmbedding, StoreMeta};

/// Ranking examples with a matching in-memory store.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub meta: StoreMeta,
    pub records: Vec<SpanEmbedding>,
    pub examples: Vec<RankingExample>,
}

fn gaussian(rng: &mut seed::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// One document per example: span 0 is the anchor, the next `n_pos` are
/// positives, the rest negatives. `layer_vectors(rng, anchor, is_pos)`
/// returns the `L x d` values of a candidate.
fn build(
    name: &str,
    n_examples: usize,
    n_pos: usize,
    n_neg: usize,
    n_layers: usize,
    dim: usize,
    seed: u64,
    mut vectors: impl FnMut(&mut seed::Rng, Option<&[f64]>, bool) -> (Vec<f64>, Vec<f64>),
) -> SynthData {
    let meta = StoreMeta::new(format!("synthetic-{name}"), n_layers, dim, Pooling::Mean);
    let mut records = Vec::new();
    let mut examples = Vec::new();
    for i in 0..n_examples {
        let mut rng = seed::rng(seed::derive(seed, name, i as u64));
        let doc = format!("{name}{i:04}");
        let sp = |s: usize| Span::new(doc.clone(), s, s + 1).expect("non-empty");
        let (anchor_all, anchor_key) = vectors(&mut rng, None, true);
        let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        records.push(SpanEmbedding {
            span: sp(0),
            values: to_f32(&anchor_all),
        });
        let mut candidates = Vec::new();
        let mut labels = Vec::new();
        for c in 0..n_pos + n_neg {
            let pos = c < n_pos;
            let (v, _) = vectors(&mut rng, Some(&anchor_key), pos);
            records.push(SpanEmbedding {
                span: sp(c + 1),
                values: to_f32(&v),
            });
            candidates.push(sp(c + 1));
            labels.push(pos);
        }
        let tags = labels
            .iter()
            .map(|&p| if p { CandidateTag::Branch } else { CandidateTag::SermonNegative })
            .collect();
        examples.push(RankingExample {
            example_id: format!("{name}:{i}"),
            task: Task::Rhetorical,
            anchor: sp(0),
            group_id: format!("{name}-group-{i}"),
            candidates,
            labels,
            tags,
            seed,
        });
    }
    SynthData { meta, records, examples }
}

/// Positives are the anchor plus Gaussian noise of scale `sigma`; negatives
/// are independent standard normal vectors. Single-layer store.
pub fn planted_pools(n_examples: usize, n_pos: usize, n_neg: usize, dim: usize, sigma: f64, seed: u64) -> SynthData {
    build("planted", n_examples, n_pos, n_neg, 1, dim, seed, |rng, anchor, pos| match anchor {
        None => {
            let a = gaussian(rng, dim);
            (a.clone(), a)
        }
        Some(a) if pos => {
            let v: Vec<f64> = a.iter().zip(gaussian(rng, dim)).map(|(x, e)| x + sigma * e).collect();
            (v, Vec::new())
        }
        Some(_) => (gaussian(rng, dim), Vec::new()),
    })
}

/// Like [`planted_pools`] on layer `signal_layer` only; every other layer
/// holds fresh noise for every span.
pub fn layer_signal_pools(
    n_examples: usize,
    n_pos: usize,
    n_neg: usize,
    n_layers: usize,
    signal_layer: usize,
    dim: usize,
    sigma: f64,
    seed: u64,
) -> SynthData {
    assert!(signal_layer < n_layers);
    build("layered", n_examples, n_pos, n_neg, n_layers, dim, seed, |rng, anchor, pos| {
        let mut all = Vec::with_capacity(n_layers * dim);
        let mut key = Vec::new();
        for l in 0..n_layers {
            let row = if l != signal_layer {
                gaussian(rng, dim)
            } else {
                match anchor {
                    None => {
                        key = gaussian(rng, dim);
                        key.clone()
                    }
                    Some(a) if pos => a.iter().zip(gaussian(rng, dim)).map(|(x, e)| x + sigma * e).collect(),
                    Some(_) => gaussian(rng, dim),
                }
            };
            all.extend(row);
        }
        (all, key)
    })
}

/// Standard-normal noise for every span, with no relation to labels.
pub fn noise_store<'a>(spans: impl IntoIterator<Item = &'a Span>, n_layers: usize, dim: usize, seed: u64) -> (StoreMeta, Vec<SpanEmbedding>) {
    let meta = StoreMeta::new("synthetic-noise", n_layers, dim, Pooling::Mean);
    let mut spans: Vec<&Span> = spans.into_iter().collect();
    spans.sort();
    spans.dedup();
    let records = spans
        .into_iter()
        .map(|s| {
            let mut rng = seed::rng(seed::derive(seed, &format!("noise/{}", s.key()), 0));
            SpanEmbedding {
                span: s.clone(),
                values: (0..n_layers * dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .map(|x: f64| x as f32)
                    .collect(),
            }
        })
        .collect();
    (meta, records)
}

const SYLLABLES: [&str; 16] = [
    "ta", "ri", "mus", "que", "sa", "ni", "tas", "ui", "ta", "mor", "e", "re", "tur", "in", "fir", "ma",
];

/// Sermon-like corpus where each branch set is a run of 2..=5 short spans
/// separated by gaps of at most 3 tokens, as rhetorical parallels are local.
pub fn asp_like_corpus(n_sermons: usize, sets_per_sermon: usize, tokens_per_sermon: usize, seed: u64) -> AspCorpus {
    let mut corpus = AspCorpus::default();
    for s in 0..n_sermons {
        let mut rng = seed::rng(seed::derive(seed, "asp-like", s as u64));
        let doc_id = format!("sermo{s:03}");
        let mut text = String::new();
        let mut tokens = Vec::with_capacity(tokens_per_sermon);
        for t in 0..tokens_per_sermon {
            if t > 0 {
                text.push(if t % 12 == 0 { '\n' } else { ' ' });
            }
            let n_syl = rng.random_range(1..=3);
            let word: String = (0..n_syl).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
            let start = text.len(); // ASCII only
            text.push_str(&word);
            tokens.push(Token {
                surface: word.clone(),
                char_start: start,
                char_end: start + word.len(),
            });
        }
        let document = Document::from_tokens(doc_id.clone(), text, tokens).expect("consistent tokens");
        // Place sets in disjoint slots.
        let slot = tokens_per_sermon / sets_per_sermon.max(1);
        for k in 0..sets_per_sermon {
            let n_branches = rng.random_range(2..=5);
            let mut spans = Vec::new();
            let mut at = k * slot + rng.random_range(0..=slot / 4);
            for _ in 0..n_branches {
                let len = rng.random_range(3..=8);
                if at + len > (k + 1) * slot {
                    break;
                }
                spans.push(Span::new(doc_id.clone(), at, at + len).expect("non-empty"));
                at += len + rng.random_range(0..=3);
            }
            if spans.len() < 2 {
                continue;
            }
            corpus.branch_sets.push(BranchSet {
                set_id: format!("{doc_id}-set{k}"),
                sermon_id: doc_id.clone(),
                branches: spans,
                pattern: if rng.random_bool(0.5) { Pattern::Synchystic } else { Pattern::Chiastic },
            });
        }
        corpus.sermons.push(document);
    }
    corpus
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_shapes_and_determinism() {
        let a = planted_pools(3, 2, 5, 8, 0.1, 1);
        assert_eq!(a.examples.len(), 3);
        assert_eq!(a.records.len(), 3 * 8);
        assert!(a.examples.iter().all(|e| e.candidates.len() == 7 && e.n_positive() == 2));
        let b = planted_pools(3, 2, 5, 8, 0.1, 1);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn layer_signal_record_width() {
        let d = layer_signal_pools(2, 1, 3, 4, 2, 5, 0.1, 0);
        assert!(d.records.iter().all(|r| r.values.len() == 20));
    }

    #[test]
    fn asp_like_sets_are_valid() {
        let c = asp_like_corpus(3, 6, 400, 2);
        assert_eq!(c.sermons.len(), 3);
        assert!(!c.branch_sets.is_empty());
        for s in &c.branch_sets {
            s.validate().unwrap();
            let doc = c.sermon(&s.sermon_id).unwrap();
            assert!(s.branches.iter().all(|b| doc.contains(b)));
            for w in s.branches.windows(2) {
                assert!(!w[0].overlaps(&w[1]));
            }
        }
        for d in &c.sermons {
            d.validate().unwrap();
        }
    }
}
