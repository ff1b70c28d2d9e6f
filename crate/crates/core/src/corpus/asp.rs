use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Document, Span, WithWarnings};
use crate::{NarbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Synchystic,
    Chiastic,
    #[default]
    #[serde(other)]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSet {
    pub set_id: String,
    pub sermon_id: String,
    /// Sorted by start offset.
    pub branches: Vec<Span>,
    pub pattern: Pattern,
}

impl BranchSet {
    pub fn validate(&self) -> Result<()> {
        let n = self.branches.len();
        if !(2..=5).contains(&n) {
            return Err(NarbError::InvalidData(format!(
                "branch set `{}` has {n} branches (expected 2..=5)",
                self.set_id
            )));
        }
        for (i, b) in self.branches.iter().enumerate() {
            if b.doc_id != self.sermon_id {
                return Err(NarbError::InvalidData(format!(
                    "branch {} of set `{}` lies outside sermon `{}`",
                    b.key(),
                    self.set_id,
                    self.sermon_id
                )));
            }
            if self.branches[..i].contains(b) {
                return Err(NarbError::InvalidData(format!(
                    "set `{}` repeats branch {}",
                    self.set_id,
                    b.key()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AspCorpus {
    pub sermons: Vec<Document>,
    pub branch_sets: Vec<BranchSet>,
}

impl AspCorpus {
    pub fn sermon(&self, id: &str) -> Option<&Document> {
        self.sermons.iter().find(|d| d.doc_id == id)
    }

    pub fn mean_branches(&self) -> f64 {
        if self.branch_sets.is_empty() {
            return 0.0;
        }
        let total: usize = self.branch_sets.iter().map(|s| s.branches.len()).sum();
        total as f64 / self.branch_sets.len() as f64
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CharRange {
    Pair([usize; 2]),
    Named { start: usize, end: usize },
}

impl CharRange {
    fn bounds(&self) -> (usize, usize) {
        match *self {
            CharRange::Pair([s, e]) => (s, e),
            CharRange::Named { start, end } => (start, end),
        }
    }
}

#[derive(Deserialize)]
struct SetRecord {
    set_id: String,
    sermon_id: String,
    #[serde(default)]
    pattern: Pattern,
    branches: Vec<CharRange>,
}

/// Loads sermons (`<sermon_id>.txt` files in `sermons_dir`) and the JSON
/// array of branch-set annotations with character offsets.
pub fn load_asp(sermons_dir: &Path, annotations_path: &Path) -> Result<WithWarnings<AspCorpus>> {
    let mut files: Vec<_> = std::fs::read_dir(sermons_dir)
        .map_err(|e| NarbError::io(sermons_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();

    let mut sermons = Vec::with_capacity(files.len());
    for path in &files {
        let text = std::fs::read_to_string(path).map_err(|e| NarbError::io(path, e))?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| NarbError::InvalidData(format!("bad sermon file name {}", path.display())))?;
        sermons.push(Document::new(id, text));
    }
    let index: HashMap<&str, usize> = sermons
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.as_str(), i))
        .collect();

    let raw = std::fs::read_to_string(annotations_path).map_err(|e| NarbError::io(annotations_path, e))?;
    let records: Vec<SetRecord> = serde_json::from_str(&raw)
        .map_err(|e| NarbError::parse(annotations_path, e.line(), e.to_string()))?;

    let mut warnings = Vec::new();
    let mut branch_sets = Vec::with_capacity(records.len());
    for rec in records {
        let doc = index
            .get(rec.sermon_id.as_str())
            .map(|&i| &sermons[i])
            .ok_or_else(|| {
                NarbError::InvalidData(format!(
                    "set `{}` references unknown sermon `{}`",
                    rec.set_id, rec.sermon_id
                ))
            })?;
        let mut branches = Vec::with_capacity(rec.branches.len());
        for range in &rec.branches {
            let (s, e) = range.bounds();
            let (span, widened) = doc.align_char_range(s, e)?;
            if widened {
                warnings.push(format!(
                    "set `{}`: chars {s}..{e} of `{}` widened to tokens {}..{}",
                    rec.set_id, rec.sermon_id, span.start, span.end
                ));
            }
            branches.push(span);
        }
        branches.sort_by_key(|b| (b.start, b.end));
        let set = BranchSet {
            set_id: rec.set_id,
            sermon_id: rec.sermon_id,
            branches,
            pattern: rec.pattern,
        };
        set.validate()?;
        branch_sets.push(set);
    }

    Ok(WithWarnings::new(AspCorpus { sermons, branch_sets }, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(annotations: serde_json::Value) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let sdir = dir.path().join("sermons");
        std::fs::create_dir(&sdir).unwrap();
        std::fs::write(
            sdir.join("s1.txt"),
            "ut satietas sitiret, uirtus infirmaretur, sanitas uulneraretur, uita moreretur.",
        )
        .unwrap();
        std::fs::write(sdir.join("notes.md"), "ignored").unwrap();
        std::fs::write(dir.path().join("ann.json"), annotations.to_string()).unwrap();
        dir
    }

    #[test]
    fn three_branch_set_ingested_sorted() {
        let dir = write_fixture(serde_json::json!([
            {"set_id": "a", "sermon_id": "s1", "pattern": "synchystic",
             "branches": [[42, 62], [3, 19], {"start": 21, "end": 40}]}
        ]));
        let out = load_asp(&dir.path().join("sermons"), &dir.path().join("ann.json")).unwrap();
        let c = out.value;
        assert_eq!(c.sermons.len(), 1);
        assert_eq!(c.branch_sets.len(), 1);
        let set = &c.branch_sets[0];
        assert_eq!(set.branches.len(), 3);
        assert!(set.branches.windows(2).all(|w| w[0].start < w[1].start));
        assert_eq!(set.pattern, Pattern::Synchystic);
        let doc = c.sermon("s1").unwrap();
        assert_eq!(doc.span_text(&set.branches[0]).unwrap(), "satietas sitiret");
        assert!(out.warnings.is_empty(), "{:?}", out.warnings);
    }

    #[test]
    fn misaligned_span_widens_with_warning() {
        let dir = write_fixture(serde_json::json!([
            {"set_id": "a", "sermon_id": "s1", "branches": [[5, 19], [21, 40]]}
        ]));
        let out = load_asp(&dir.path().join("sermons"), &dir.path().join("ann.json")).unwrap();
        assert_eq!(out.warnings.len(), 1);
        let c = out.value;
        let doc = c.sermon("s1").unwrap();
        assert_eq!(doc.span_text(&c.branch_sets[0].branches[0]).unwrap(), "satietas sitiret");
        assert_eq!(c.branch_sets[0].pattern, Pattern::Unknown);
    }

    #[test]
    fn span_outside_text_is_error() {
        let dir = write_fixture(serde_json::json!([
            {"set_id": "a", "sermon_id": "s1", "branches": [[3, 19], [70, 500]]}
        ]));
        let err = load_asp(&dir.path().join("sermons"), &dir.path().join("ann.json")).unwrap_err();
        assert!(matches!(err, NarbError::SpanOutOfText { .. }), "{err}");
    }

    #[test]
    fn single_branch_set_rejected() {
        let dir = write_fixture(serde_json::json!([
            {"set_id": "a", "sermon_id": "s1", "branches": [[3, 19]]}
        ]));
        assert!(load_asp(&dir.path().join("sermons"), &dir.path().join("ann.json")).is_err());
    }

    #[test]
    fn loading_twice_is_equal() {
        let dir = write_fixture(serde_json::json!([
            {"set_id": "a", "sermon_id": "s1", "branches": [[3, 19], [21, 40]]}
        ]));
        let a = load_asp(&dir.path().join("sermons"), &dir.path().join("ann.json")).unwrap();
        let b = load_asp(&dir.path().join("sermons"), &dir.path().join("ann.json")).unwrap();
        assert_eq!(a, b);
    }
}
