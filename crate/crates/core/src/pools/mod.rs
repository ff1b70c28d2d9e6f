//! Anchor-based ranking examples and auxiliary classification instances.

mod aux;
mod narrative;
mod rhetorical;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{Span, SplitAssignment};
use crate::{NarbError, Result};

pub use aux::{build_aux_instances, AuxInstance, AuxTask};
pub use narrative::build_narrative_pools;
pub use rhetorical::{build_rhetorical_pools, AnchorMode};

pub const DEFAULT_X_POS: usize = 4;
pub const DEFAULT_Y_NEG: usize = 16;
pub const DEFAULT_N_NEG: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Narrative,
    Rhetorical,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Narrative => "narrative",
            Task::Rhetorical => "rhetorical",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = NarbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "narrative" => Ok(Task::Narrative),
            "rhetorical" => Ok(Task::Rhetorical),
            _ => Err(NarbError::InvalidArgument(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateTag {
    NearAnalogy,
    FarAnalogy,
    NearDistractor,
    FarDistractor,
    Branch,
    SermonNegative,
}

/// One anchor with its labeled candidate pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingExample {
    pub example_id: String,
    pub task: Task,
    pub anchor: Span,
    /// Proverb id (narrative) or branch-set id (rhetorical) of the anchor.
    pub group_id: String,
    pub candidates: Vec<Span>,
    pub labels: Vec<bool>,
    pub tags: Vec<CandidateTag>,
    pub seed: u64,
}

impl RankingExample {
    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = &Span> {
        self.candidates
            .iter()
            .zip(&self.labels)
            .filter_map(|(c, &l)| l.then_some(c))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.candidates.len();
        if self.labels.len() != n || self.tags.len() != n {
            return Err(NarbError::InvalidData(format!(
                "{}: candidates/labels/tags lengths differ",
                self.example_id
            )));
        }
        let pos = self.n_positive();
        if pos == 0 || pos == n {
            return Err(NarbError::InvalidData(format!(
                "{}: needs at least one positive and one negative",
                self.example_id
            )));
        }
        if self.candidates.contains(&self.anchor) {
            return Err(NarbError::InvalidData(format!(
                "{}: anchor appears among its candidates",
                self.example_id
            )));
        }
        let mut sorted = self.candidates.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(NarbError::InvalidData(format!(
                "{}: duplicate candidate",
                self.example_id
            )));
        }
        Ok(())
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| NarbError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| NarbError::io(path, e))?;
    }
    w.flush().map_err(|e| NarbError::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| NarbError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| NarbError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| NarbError::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Splits examples into (train, val, test) by the fold membership of the
/// anchor's document. Examples of documents outside the fold are dropped.
pub fn partition_by_fold(
    examples: &[RankingExample],
    fold: &SplitAssignment,
) -> (Vec<RankingExample>, Vec<RankingExample>, Vec<RankingExample>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for ex in examples {
        let doc = &ex.anchor.doc_id;
        if fold.contains_train(doc) {
            out.0.push(ex.clone());
        } else if fold.contains_val(doc) {
            out.1.push(ex.clone());
        } else if fold.contains_test(doc) {
            out.2.push(ex.clone());
        }
    }
    out
}

pub fn write_pools(path: &Path, examples: &[RankingExample]) -> Result<()> {
    write_jsonl(path, examples)
}

pub fn read_pools(path: &Path) -> Result<Vec<RankingExample>> {
    let examples: Vec<RankingExample> = read_jsonl(path)?;
    for e in &examples {
        e.validate()?;
    }
    Ok(examples)
}

pub fn write_aux(path: &Path, instances: &[AuxInstance]) -> Result<()> {
    write_jsonl(path, instances)
}

pub fn read_aux(path: &Path) -> Result<Vec<AuxInstance>> {
    let v: Vec<AuxInstance> = read_jsonl(path)?;
    for i in &v {
        i.validate()?;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> RankingExample {
        RankingExample {
            example_id: "e".into(),
            task: Task::Rhetorical,
            anchor: Span::new("s", 0, 3).unwrap(),
            group_id: "g".into(),
            candidates: vec![Span::new("s", 4, 6).unwrap(), Span::new("s", 10, 12).unwrap()],
            labels: vec![true, false],
            tags: vec![CandidateTag::Branch, CandidateTag::SermonNegative],
            seed: 1,
        }
    }

    #[test]
    fn validate_catches_violations() {
        assert!(example().validate().is_ok());
        let mut e = example();
        e.labels = vec![true, true];
        assert!(e.validate().is_err());
        let mut e = example();
        e.candidates[1] = e.anchor.clone();
        assert!(e.validate().is_err());
        let mut e = example();
        e.candidates[1] = e.candidates[0].clone();
        assert!(e.validate().is_err());
    }

    #[test]
    fn pools_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pools.jsonl");
        write_pools(&p, &[example(), example()]).unwrap();
        assert_eq!(read_pools(&p).unwrap(), vec![example(), example()]);
    }
}
