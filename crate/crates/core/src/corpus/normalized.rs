//! Normalized corpus file: JSON-lines, one document per line with its
//! annotations embedded.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AspCorpus, BranchSet, CorefChain, Document, LitBankAnnotations, LitBankDoc, Narrative, Quote, Span};
use crate::{NarbError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DocAnnotations {
    Narrative {
        proverb_id: String,
        acceptability: f64,
    },
    Sermon {
        branch_sets: Vec<BranchSet>,
    },
    Litbank {
        events: Vec<Span>,
        entities: Vec<Span>,
        coref_chains: Vec<CorefChain>,
        quotes: Vec<Quote>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub document: Document,
    pub annotations: DocAnnotations,
}

impl CorpusRecord {
    pub fn from_narrative(n: &Narrative) -> Self {
        CorpusRecord {
            document: n.document.clone(),
            annotations: DocAnnotations::Narrative {
                proverb_id: n.proverb_id.clone(),
                acceptability: n.acceptability,
            },
        }
    }

    pub fn from_asp(corpus: &AspCorpus) -> Vec<Self> {
        corpus
            .sermons
            .iter()
            .map(|d| CorpusRecord {
                document: d.clone(),
                annotations: DocAnnotations::Sermon {
                    branch_sets: corpus
                        .branch_sets
                        .iter()
                        .filter(|s| s.sermon_id == d.doc_id)
                        .cloned()
                        .collect(),
                },
            })
            .collect()
    }

    pub fn from_litbank(doc: &LitBankDoc) -> Self {
        let a = &doc.annotations;
        CorpusRecord {
            document: doc.document.clone(),
            annotations: DocAnnotations::Litbank {
                events: a.events.clone(),
                entities: a.entities.clone(),
                coref_chains: a.coref_chains.clone(),
                quotes: a.quotes.clone(),
            },
        }
    }
}

/// Narratives contained in a normalized corpus (other kinds are ignored).
pub fn narratives(records: &[CorpusRecord]) -> Vec<Narrative> {
    records
        .iter()
        .filter_map(|r| match &r.annotations {
            DocAnnotations::Narrative {
                proverb_id,
                acceptability,
            } => Some(Narrative {
                document: r.document.clone(),
                proverb_id: proverb_id.clone(),
                acceptability: *acceptability,
            }),
            _ => None,
        })
        .collect()
}

pub fn asp(records: &[CorpusRecord]) -> AspCorpus {
    let mut out = AspCorpus::default();
    for r in records {
        if let DocAnnotations::Sermon { branch_sets } = &r.annotations {
            out.sermons.push(r.document.clone());
            out.branch_sets.extend(branch_sets.iter().cloned());
        }
    }
    out
}

pub fn litbank(records: &[CorpusRecord]) -> Vec<LitBankDoc> {
    records
        .iter()
        .filter_map(|r| match &r.annotations {
            DocAnnotations::Litbank {
                events,
                entities,
                coref_chains,
                quotes,
            } => Some(LitBankDoc {
                document: r.document.clone(),
                annotations: LitBankAnnotations {
                    doc_id: r.document.doc_id.clone(),
                    events: events.clone(),
                    entities: entities.clone(),
                    coref_chains: coref_chains.clone(),
                    quotes: quotes.clone(),
                },
            }),
            _ => None,
        })
        .collect()
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| NarbError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| NarbError::io(path, e))?;
    }
    w.flush().map_err(|e| NarbError::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let f = File::open(path).map_err(|e| NarbError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| NarbError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| NarbError::parse(path, i + 1, e.to_string()))?;
        rec.document.validate()?;
        out.push(rec);
    }
    Ok(out)
}
