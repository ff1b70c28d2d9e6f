use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Document;
use crate::{NarbError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub document: Document,
    pub proverb_id: String,
    pub acceptability: f64,
}

/// Relation of a candidate story to an anchor, as annotated in ARN triplets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalogyKind {
    NearAnalogy,
    FarAnalogy,
    NearDistractor,
    FarDistractor,
}

/// `(anchor id, candidate id) -> kind`.
pub type ArnRelations = HashMap<(String, String), AnalogyKind>;

#[derive(Deserialize)]
struct NarrativeLine {
    id: String,
    text: String,
    proverb_id: String,
}

#[derive(Deserialize)]
struct RelationLine {
    anchor: String,
    candidate: String,
    tag: AnalogyKind,
}

/// Casefolded text with whitespace runs collapsed; the dedup key.
pub(crate) fn dedup_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn read_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let f = File::open(path).map_err(|e| NarbError::io(path, e))?;
    Ok(BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l)))
}

fn read_acceptability(path: &Path) -> Result<HashMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| NarbError::InvalidData(format!("{}: {e}", path.display())))?;
    let mut scores = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| NarbError::parse(path, line, e.to_string()))?;
        if rec.len() != 2 {
            return Err(NarbError::parse(path, line, "expected two columns `id,score`"));
        }
        let score = match rec[1].parse::<f64>() {
            Ok(s) => s,
            // header row
            Err(_) if line == 1 => continue,
            Err(_) => return Err(NarbError::parse(path, line, format!("bad score `{}`", &rec[1]))),
        };
        if !(0.0..=1.0).contains(&score) {
            return Err(NarbError::parse(path, line, format!("score {score} outside [0,1]")));
        }
        scores.insert(rec[0].to_string(), score);
    }
    Ok(scores)
}

/// Loads ARN narratives, keeping those with acceptability `>= threshold`.
///
/// Exact duplicates (casefolded, whitespace-collapsed) collapse onto the
/// copy with the highest acceptability before the threshold is applied, so
/// raising the threshold can only shrink the result.
pub fn load_arn(narratives_path: &Path, acceptability_path: &Path, threshold: f64) -> Result<Vec<Narrative>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(NarbError::InvalidArgument(format!(
            "acceptability threshold {threshold} outside [0,1]"
        )));
    }
    let scores = read_acceptability(acceptability_path)?;

    let mut all: Vec<Narrative> = Vec::new();
    let mut seen_ids = HashMap::new();
    for (line, text) in read_lines(narratives_path)? {
        let text = text.map_err(|e| NarbError::io(narratives_path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: NarrativeLine = serde_json::from_str(&text)
            .map_err(|e| NarbError::parse(narratives_path, line, e.to_string()))?;
        if seen_ids.insert(rec.id.clone(), line).is_some() {
            return Err(NarbError::parse(
                narratives_path,
                line,
                format!("duplicate narrative id `{}`", rec.id),
            ));
        }
        let acceptability = *scores
            .get(&rec.id)
            .ok_or_else(|| NarbError::MissingScore(rec.id.clone()))?;
        all.push(Narrative {
            document: Document::new(rec.id, rec.text),
            proverb_id: rec.proverb_id,
            acceptability,
        });
    }

    let mut best: HashMap<String, usize> = HashMap::new();
    for (i, n) in all.iter().enumerate() {
        let key = dedup_key(&n.document.text);
        match best.get(&key) {
            Some(&j) if all[j].acceptability >= n.acceptability => {}
            _ => {
                best.insert(key, i);
            }
        }
    }
    let mut keep: Vec<usize> = best.into_values().collect();
    keep.sort_unstable();
    Ok(keep
        .into_iter()
        .filter(|&i| all[i].acceptability >= threshold)
        .map(|i| all[i].clone())
        .collect())
}

/// Reads near/far annotations: JSON-lines of `{anchor, candidate, tag}`.
pub fn load_arn_relations(path: &Path) -> Result<ArnRelations> {
    let mut out = ArnRelations::new();
    for (line, text) in read_lines(path)? {
        let text = text.map_err(|e| NarbError::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: RelationLine =
            serde_json::from_str(&text).map_err(|e| NarbError::parse(path, line, e.to_string()))?;
        out.insert((rec.anchor, rec.candidate), rec.tag);
    }
    Ok(out)
}
