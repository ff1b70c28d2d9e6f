use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{text_similarity, AnnotatedText, Method};
use crate::corpus::WithWarnings;
use crate::metrics::{auroc, RunHeader};
use crate::par::*;
use crate::{seed, NarbError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledPair {
    pub pair_id: String,
    pub a: usize,
    pub b: usize,
    /// Same group.
    pub label: bool,
}

/// Samples `n_pairs` unordered pairs, half within a group and half across
/// groups. Falls back to fewer pairs, with a warning, when a side runs out.
pub fn sample_pairs(items: &[AnnotatedText], n_pairs: usize, seed: u64) -> Result<WithWarnings<Vec<SampledPair>>> {
    let groups: Vec<&str> = items
        .iter()
        .map(|t| {
            t.group
                .as_deref()
                .ok_or_else(|| NarbError::InvalidData(format!("`{}` has no group for pair labeling", t.id)))
        })
        .collect::<Result<_>>()?;
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            if groups[i] == groups[j] {
                same.push((i, j));
            } else {
                diff.push((i, j));
            }
        }
    }
    let mut rng = seed::rng(seed::derive(seed, "baseline-pairs", 0));
    same.shuffle(&mut rng);
    diff.shuffle(&mut rng);
    let want_same = n_pairs / 2;
    let want_diff = n_pairs - want_same;
    let mut warnings = Vec::new();
    let k = want_same.min(same.len()).min(want_diff.min(diff.len()));
    if k < want_same {
        warnings.push(format!(
            "asked for {n_pairs} balanced pairs; only {} same-group and {} cross-group pairs exist, using {k} of each",
            same.len(),
            diff.len()
        ));
    }
    let (n_same, n_diff) = if k < want_same { (k, k) } else { (want_same, want_diff) };
    let mut pairs: Vec<SampledPair> = same[..n_same]
        .iter()
        .map(|&p| (p, true))
        .chain(diff[..n_diff].iter().map(|&p| (p, false)))
        .map(|((a, b), label)| SampledPair {
            pair_id: format!("{}|{}", items[a].id, items[b].id),
            a,
            b,
            label,
        })
        .collect();
    pairs.sort_by(|x, y| x.pair_id.cmp(&y.pair_id));
    Ok(WithWarnings::new(pairs, warnings))
}

/// Min-max scaling; a constant column maps to 0.5 and reports `true`.
pub fn normalize_column(raw: &[f64]) -> (Vec<f64>, bool) {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.is_empty() || !(max > min) {
        return (vec![0.5; raw.len()], true);
    }
    (raw.iter().map(|v| (v - min) / (max - min)).collect(), false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair_id: String,
    pub label: bool,
    pub method: Method,
    pub raw: f64,
    pub normalized: f64,
}

/// Raw and per-method min-max normalized scores for every pair.
pub fn score_pairs(items: &[AnnotatedText], pairs: &[SampledPair], methods: &[Method]) -> Result<WithWarnings<Vec<PairScore>>> {
    let raw: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|p| {
            methods
                .iter()
                .map(|&m| text_similarity(m, &items[p.a], &items[p.b]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(pairs.len() * methods.len());
    let mut warnings = Vec::new();
    for (k, &m) in methods.iter().enumerate() {
        let column: Vec<f64> = raw.iter().map(|r| r[k]).collect();
        let (norm, constant) = normalize_column(&column);
        if constant {
            warnings.push(format!("{m} is constant over the {} pairs; normalized to 0.5", pairs.len()));
        }
        for ((p, &r), n) in pairs.iter().zip(&column).zip(norm) {
            out.push(PairScore {
                pair_id: p.pair_id.clone(),
                label: p.label,
                method: m,
                raw: r,
                normalized: n,
            });
        }
    }
    Ok(WithWarnings::new(out, warnings))
}

/// Mann-Whitney AUC of same-group over cross-group normalized scores.
pub fn separation_auc(scores: &[PairScore], method: Method) -> Result<f64> {
    let (s, l): (Vec<f64>, Vec<bool>) = scores
        .iter()
        .filter(|p| p.method == method)
        .map(|p| (p.normalized, p.label))
        .unzip();
    auroc(&s, &l)
}

#[derive(Serialize)]
struct Row<'a> {
    pair_id: &'a str,
    label: u8,
    method: &'static str,
    raw: f64,
    normalized: f64,
}

pub fn write_scores_csv(path: &Path, header: &RunHeader, scores: &[PairScore]) -> Result<()> {
    let mut buf = format!(
        "# config_hash={}\n# seed={}\n# content_version={}\n",
        header.config_hash, header.seed, header.content_version
    )
    .into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for s in scores {
            w.serialize(Row {
                pair_id: &s.pair_id,
                label: s.label as u8,
                method: s.method.name(),
                raw: s.raw,
                normalized: s.normalized,
            })?;
        }
        w.flush().map_err(|e| NarbError::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| NarbError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_column(&[2.0, 4.0, 6.0]), (vec![0.0, 0.5, 1.0], false));
        assert_eq!(normalize_column(&[0.0, 0.3, 1.0]).0, vec![0.0, 0.3, 1.0]);
        assert_eq!(normalize_column(&[-3.0, 7.0]).0, vec![0.0, 1.0]);
        assert_eq!(normalize_column(&[4.0, 4.0]), (vec![0.5, 0.5], true));
    }

    fn item(id: &str, group: &str, words: &[&str]) -> AnnotatedText {
        AnnotatedText {
            id: id.into(),
            group: Some(group.into()),
            tokens: words.iter().map(|w| w.to_string()).collect(),
            lemmas: Vec::new(),
            pos: Vec::new(),
            heads: Vec::new(),
            deprels: Vec::new(),
            vector: None,
        }
    }

    fn corpus() -> Vec<AnnotatedText> {
        vec![
            item("a1", "a", &["x", "y", "z"]),
            item("a2", "a", &["x", "y", "w"]),
            item("a3", "a", &["x", "z", "w"]),
            item("b1", "b", &["p", "q", "r"]),
            item("b2", "b", &["p", "q", "s"]),
            item("b3", "b", &["p", "r", "s"]),
        ]
    }

    #[test]
    fn balanced_and_deterministic() {
        let c = corpus();
        let p = sample_pairs(&c, 6, 1).unwrap().value;
        assert_eq!(p.iter().filter(|x| x.label).count(), 3);
        assert_eq!(p.len(), 6);
        assert_eq!(p, sample_pairs(&c, 6, 1).unwrap().value);
        let short = sample_pairs(&c, 20, 1).unwrap();
        assert_eq!(short.value.len(), 12);
        assert_eq!(short.warnings.len(), 1);
    }

    #[test]
    fn lexical_overlap_separates_groups() {
        let c = corpus();
        let p = sample_pairs(&c, 12, 3).unwrap().value;
        let s = score_pairs(&c, &p, &[Method::JaccardTokens]).unwrap().value;
        assert_eq!(separation_auc(&s, Method::JaccardTokens).unwrap(), 1.0);
        assert!(s.iter().all(|x| (0.0..=1.0).contains(&x.normalized)));
    }

    #[test]
    fn missing_group_is_error() {
        let mut c = corpus();
        c[0].group = None;
        assert!(sample_pairs(&c, 4, 0).is_err());
    }
}
