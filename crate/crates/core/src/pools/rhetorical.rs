use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CandidateTag, RankingExample, Task};
use crate::corpus::{AspCorpus, Span, WithWarnings};
use crate::par::*;
use crate::{seed, NarbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    #[default]
    AllBranches,
    FirstBranchOnly,
}

/// Draws up to `n` mutually disjoint spans of `len_pool` lengths from a
/// document of `n_tokens` tokens, none overlapping `forbidden`.
fn sample_negatives(
    doc_id: &str,
    n_tokens: usize,
    forbidden: &[Span],
    len_pool: &[usize],
    n: usize,
    rng: &mut seed::Rng,
) -> Vec<Span> {
    let mut chosen: Vec<Span> = Vec::with_capacity(n);
    let clash = |s: &Span, chosen: &[Span]| forbidden.iter().chain(chosen).any(|f| f.overlaps(s));
    let budget = 200 * n;
    for _ in 0..budget {
        if chosen.len() == n {
            return chosen;
        }
        let len = *len_pool.choose(rng).expect("non-empty length pool");
        if len > n_tokens {
            continue;
        }
        let start = rng.random_range(0..=n_tokens - len);
        let span = Span {
            doc_id: doc_id.to_string(),
            start,
            end: start + len,
        };
        if !clash(&span, &chosen) {
            chosen.push(span);
        }
    }
    // crowded document: greedy scan with the shortest length
    let len = *len_pool.iter().min().expect("non-empty length pool");
    if len <= n_tokens {
        let mut starts: Vec<usize> = (0..=n_tokens - len).collect();
        starts.shuffle(rng);
        for start in starts {
            if chosen.len() == n {
                break;
            }
            let span = Span {
                doc_id: doc_id.to_string(),
                start,
                end: start + len,
            };
            if !clash(&span, &chosen) {
                chosen.push(span);
            }
        }
    }
    chosen
}

/// Builds ranking examples from annotated branch sets.
///
/// Each anchor branch gets the other branches of its set as positives and
/// `n_neg` contiguous spans from the same sermon as negatives. Negative
/// lengths follow the corpus-wide branch length distribution; they never
/// overlap a branch of the anchor's set or each other.
pub fn build_rhetorical_pools(
    corpus: &AspCorpus,
    n_neg: usize,
    seed: u64,
    anchors: AnchorMode,
) -> Result<WithWarnings<Vec<RankingExample>>> {
    if n_neg == 0 {
        return Err(NarbError::InvalidArgument("n_neg must be >= 1".into()));
    }
    let len_pool: Vec<usize> = corpus
        .branch_sets
        .iter()
        .flat_map(|s| s.branches.iter().map(Span::len))
        .collect();
    if len_pool.is_empty() {
        return Ok(WithWarnings::new(Vec::new(), vec!["no branch sets".into()]));
    }

    let per_set: Vec<Result<(Vec<RankingExample>, Vec<String>)>> = corpus
        .branch_sets
        .par_iter()
        .map(|set| {
            set.validate()?;
            let sermon = corpus.sermon(&set.sermon_id).ok_or_else(|| {
                NarbError::InvalidData(format!("set `{}`: unknown sermon `{}`", set.set_id, set.sermon_id))
            })?;
            let n_anchor = match anchors {
                AnchorMode::AllBranches => set.branches.len(),
                AnchorMode::FirstBranchOnly => 1,
            };
            let mut examples = Vec::with_capacity(n_anchor);
            let mut warnings = Vec::new();
            for ai in 0..n_anchor {
                let anchor = &set.branches[ai];
                let example_seed = seed::derive(seed, &format!("rhetorical-pool/{}", set.set_id), ai as u64);
                let mut rng = seed::rng(example_seed);
                let negatives =
                    sample_negatives(&sermon.doc_id, sermon.token_count(), &set.branches, &len_pool, n_neg, &mut rng);
                if negatives.len() < n_neg {
                    warnings.push(format!(
                        "set `{}` anchor {ai}: sermon `{}` yields only {} of {n_neg} negatives",
                        set.set_id,
                        sermon.doc_id,
                        negatives.len()
                    ));
                }
                if negatives.is_empty() {
                    continue;
                }
                let mut picks: Vec<(Span, bool, CandidateTag)> = set
                    .branches
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != ai)
                    .map(|(_, b)| (b.clone(), true, CandidateTag::Branch))
                    .chain(negatives.into_iter().map(|s| (s, false, CandidateTag::SermonNegative)))
                    .collect();
                picks.shuffle(&mut rng);
                let example = RankingExample {
                    example_id: format!("rhet:{}:{ai}", set.set_id),
                    task: Task::Rhetorical,
                    anchor: anchor.clone(),
                    group_id: set.set_id.clone(),
                    candidates: picks.iter().map(|p| p.0.clone()).collect(),
                    labels: picks.iter().map(|p| p.1).collect(),
                    tags: picks.iter().map(|p| p.2).collect(),
                    seed: example_seed,
                };
                example.validate()?;
                examples.push(example);
            }
            Ok((examples, warnings))
        })
        .collect();

    let mut examples = Vec::new();
    let mut warnings = Vec::new();
    for r in per_set {
        let (e, w) = r?;
        examples.extend(e);
        warnings.extend(w);
    }
    Ok(WithWarnings::new(examples, warnings))
}
