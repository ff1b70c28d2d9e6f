use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::{CandidateTag, RankingExample, Task};
use crate::corpus::{AnalogyKind, ArnRelations, Narrative, WithWarnings};
use crate::par::*;
use crate::{seed, NarbError, Result};

/// Builds one pool per anchor narrative: `x_pos` stories sharing its
/// proverb and `y_neg` stories that do not.
///
/// Positives balance near and far analogies when the relation file marks
/// both (untagged same-proverb stories count as far). Negatives take
/// annotated near distractors for up to half the slots, the rest uniformly
/// from other proverbs. Each anchor draws from its own seed stream.
pub fn build_narrative_pools(
    narratives: &[Narrative],
    relations: &ArnRelations,
    x_pos: usize,
    y_neg: usize,
    seed: u64,
) -> Result<WithWarnings<Vec<RankingExample>>> {
    if x_pos == 0 || y_neg == 0 {
        return Err(NarbError::InvalidArgument("x_pos and y_neg must be >= 1".into()));
    }
    let mut by_proverb: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, n) in narratives.iter().enumerate() {
        by_proverb.entry(n.proverb_id.as_str()).or_default().push(i);
    }

    let results: Vec<Result<std::result::Result<RankingExample, String>>> = (0..narratives.len())
        .into_par_iter()
        .map(|ai| {
            let anchor = &narratives[ai];
            let anchor_id = &anchor.document.doc_id;
            let group = &by_proverb[anchor.proverb_id.as_str()];
            let others = group.len() - 1;
            if others < x_pos {
                return Ok(Err(format!(
                    "anchor `{anchor_id}`: proverb `{}` has {others} other stories, need {x_pos}; skipped",
                    anchor.proverb_id
                )));
            }
            let available_neg = narratives.len() - group.len();
            if y_neg > available_neg {
                return Err(NarbError::InvalidArgument(format!(
                    "anchor `{anchor_id}`: y_neg={y_neg} exceeds the {available_neg} available negatives"
                )));
            }
            let example_seed = seed::derive(seed, "narrative-pool", ai as u64);
            let mut rng = seed::rng(example_seed);
            let kind = |ci: usize| relations.get(&(anchor_id.clone(), narratives[ci].document.doc_id.clone())).copied();

            let (mut near, mut far): (Vec<usize>, Vec<usize>) = group
                .iter()
                .copied()
                .filter(|&ci| ci != ai)
                .partition(|&ci| kind(ci) == Some(AnalogyKind::NearAnalogy));
            near.shuffle(&mut rng);
            far.shuffle(&mut rng);
            let mut want_near = (x_pos / 2).min(near.len());
            if far.len() < x_pos - want_near {
                want_near = x_pos - far.len();
            }
            let mut picks: Vec<(usize, bool, CandidateTag)> = near[..want_near]
                .iter()
                .map(|&ci| (ci, true, CandidateTag::NearAnalogy))
                .chain(far[..x_pos - want_near].iter().map(|&ci| (ci, true, CandidateTag::FarAnalogy)))
                .collect();

            let mut negatives: Vec<usize> = (0..narratives.len())
                .filter(|&ci| narratives[ci].proverb_id != anchor.proverb_id)
                .collect();
            let (mut near_d, mut rest): (Vec<usize>, Vec<usize>) =
                negatives.drain(..).partition(|&ci| kind(ci) == Some(AnalogyKind::NearDistractor));
            near_d.shuffle(&mut rng);
            rest.shuffle(&mut rng);
            let take_near = near_d.len().min(y_neg / 2);
            rest.extend_from_slice(&near_d[take_near..]);
            rest.shuffle(&mut rng);
            picks.extend(near_d[..take_near].iter().map(|&ci| (ci, false, CandidateTag::NearDistractor)));
            picks.extend(rest[..y_neg - take_near].iter().map(|&ci| {
                let tag = match kind(ci) {
                    Some(AnalogyKind::NearDistractor) => CandidateTag::NearDistractor,
                    _ => CandidateTag::FarDistractor,
                };
                (ci, false, tag)
            }));
            picks.shuffle(&mut rng);

            let mut candidates = Vec::with_capacity(picks.len());
            for &(ci, _, _) in &picks {
                candidates.push(narratives[ci].document.full_span()?);
            }
            let example = RankingExample {
                example_id: format!("narr:{anchor_id}"),
                task: Task::Narrative,
                anchor: anchor.document.full_span()?,
                group_id: anchor.proverb_id.clone(),
                candidates,
                labels: picks.iter().map(|p| p.1).collect(),
                tags: picks.iter().map(|p| p.2).collect(),
                seed: example_seed,
            };
            example.validate()?;
            Ok(Ok(example))
        })
        .collect();

    let mut examples = Vec::new();
    let mut warnings = Vec::new();
    for r in results {
        match r? {
            Ok(e) => examples.push(e),
            Err(w) => warnings.push(w),
        }
    }
    Ok(WithWarnings::new(examples, warnings))
}
