//! Non-neural similarity baselines over extractor annotations: lexical
//! overlap, BLEU, POS sequences, dependency trees and sentence embeddings.

mod lexical;
mod pairs;
mod tree;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{NarbError, Result};

pub use lexical::{bleu, jaccard, levenshtein, ngrams, symmetric_bleu};
pub use pairs::{
    normalize_column, sample_pairs, score_pairs, separation_auc, write_scores_csv, PairScore, SampledPair,
};
pub use tree::{tree_edit_distance, wl_kernel, LabeledTree};

/// Trees larger than this (nodes, virtual root excluded) skip exact edit
/// distance and use the WL kernel.
pub const GED_MAX_NODES: usize = 25;
pub const WL_ITERATIONS: usize = 3;

/// One annotated document or span, as emitted by the extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedText {
    pub id: String,
    /// Proverb id or branch-set id; used to label sampled pairs.
    #[serde(default)]
    pub group: Option<String>,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub lemmas: Vec<String>,
    #[serde(default)]
    pub pos: Vec<String>,
    /// 1-based head per token, 0 for the root.
    #[serde(default)]
    pub heads: Vec<usize>,
    #[serde(default)]
    pub deprels: Vec<String>,
    #[serde(default)]
    pub vector: Option<Vec<f64>>,
}

impl AnnotatedText {
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for (name, len) in [
            ("lemmas", self.lemmas.len()),
            ("pos", self.pos.len()),
            ("heads", self.heads.len()),
            ("deprels", self.deprels.len()),
        ] {
            if len != 0 && len != n {
                return Err(NarbError::InvalidData(format!(
                    "`{}`: {name} has {len} entries for {n} tokens",
                    self.id
                )));
            }
        }
        if let Some(h) = self.heads.iter().find(|&&h| h > n) {
            return Err(NarbError::InvalidData(format!("`{}`: head {h} out of range", self.id)));
        }
        Ok(())
    }

    /// Lowercased tokens with punctuation characters removed; tokens that
    /// become empty are dropped. Returns the kept indices too.
    fn normalized(&self, words: &[String]) -> (Vec<String>, Vec<usize>) {
        let mut out = Vec::new();
        let mut kept = Vec::new();
        for (i, w) in words.iter().enumerate() {
            let n: String = w.chars().filter(|c| !c.is_ascii_punctuation() && !is_punct(*c)).flat_map(char::to_lowercase).collect();
            if !n.is_empty() {
                out.push(n);
                kept.push(i);
            }
        }
        (out, kept)
    }

    fn layer<'a>(&'a self, name: &str, v: &'a [String]) -> Result<&'a [String]> {
        if v.is_empty() {
            return Err(NarbError::InvalidData(format!("`{}` lacks the {name} layer", self.id)));
        }
        Ok(v)
    }

    fn tree(&self) -> Result<LabeledTree> {
        self.layer("deprels", &self.deprels)?;
        if self.heads.is_empty() {
            return Err(NarbError::InvalidData(format!("`{}` lacks the heads layer", self.id)));
        }
        Ok(LabeledTree::from_heads(&self.heads, &self.deprels))
    }
}

fn is_punct(c: char) -> bool {
    matches!(c, '«' | '»' | '“' | '”' | '‘' | '’' | '—' | '–' | '…' | '¿' | '¡')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    JaccardTokens,
    JaccardLemmas,
    Jaccard3grams,
    Bleu,
    PosEdit,
    PosJaccard,
    DepGed,
    DepWlKernel,
    SemanticCosine,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::JaccardTokens,
        Method::JaccardLemmas,
        Method::Jaccard3grams,
        Method::Bleu,
        Method::PosEdit,
        Method::PosJaccard,
        Method::DepGed,
        Method::DepWlKernel,
        Method::SemanticCosine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::JaccardTokens => "jaccard_tokens",
            Method::JaccardLemmas => "jaccard_lemmas",
            Method::Jaccard3grams => "jaccard_3grams",
            Method::Bleu => "bleu",
            Method::PosEdit => "pos_edit",
            Method::PosJaccard => "pos_jaccard",
            Method::DepGed => "dep_ged",
            Method::DepWlKernel => "dep_wl_kernel",
            Method::SemanticCosine => "semantic_cosine",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = NarbError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| NarbError::InvalidArgument(format!("unknown baseline method `{s}`")))
    }
}

/// Similarity of two annotated texts; larger means more similar. Edit
/// distances come back negated.
pub fn text_similarity(method: Method, a: &AnnotatedText, b: &AnnotatedText) -> Result<f64> {
    if a.tokens.is_empty() || b.tokens.is_empty() {
        return Err(NarbError::InvalidData(format!("empty token list in `{}` or `{}`", a.id, b.id)));
    }
    let toks = |t: &AnnotatedText| t.normalized(&t.tokens).0;
    Ok(match method {
        Method::JaccardTokens => jaccard(toks(a), toks(b)),
        Method::JaccardLemmas => {
            let la = a.normalized(a.layer("lemmas", &a.lemmas)?).0;
            let lb = b.normalized(b.layer("lemmas", &b.lemmas)?).0;
            jaccard(la, lb)
        }
        Method::Jaccard3grams => jaccard(ngrams(&toks(a), 3), ngrams(&toks(b), 3)),
        Method::Bleu => symmetric_bleu(&toks(a), &toks(b)),
        Method::PosEdit => -(levenshtein(&content_pos(a)?, &content_pos(b)?) as f64),
        Method::PosJaccard => jaccard(content_pos(a)?, content_pos(b)?),
        Method::DepGed => {
            let (ta, tb) = (a.tree()?, b.tree()?);
            if a.tokens.len().max(b.tokens.len()) > GED_MAX_NODES {
                wl_kernel(&ta, &tb, WL_ITERATIONS)
            } else {
                -(tree_edit_distance(&ta, &tb) as f64)
            }
        }
        Method::DepWlKernel => wl_kernel(&a.tree()?, &b.tree()?, WL_ITERATIONS),
        Method::SemanticCosine => {
            let missing = |t: &AnnotatedText| NarbError::InvalidData(format!("`{}` lacks the vector layer", t.id));
            let va = a.vector.as_deref().ok_or_else(|| missing(a))?;
            let vb = b.vector.as_deref().ok_or_else(|| missing(b))?;
            crate::probes::cosine(va, vb)?
        }
    })
}

/// POS tags of the tokens that survive normalization.
fn content_pos(t: &AnnotatedText) -> Result<Vec<String>> {
    let pos = t.layer("pos", &t.pos)?;
    let (_, kept) = t.normalized(&t.tokens);
    Ok(kept.into_iter().map(|i| pos[i].clone()).collect())
}

/// True when the pair is routed from exact edit distance to the WL kernel.
pub fn ged_routed(a: &AnnotatedText, b: &AnnotatedText) -> bool {
    a.tokens.len().max(b.tokens.len()) > GED_MAX_NODES
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotatedText>> {
    let file = File::open(path).map_err(|e| NarbError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| NarbError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: AnnotatedText = serde_json::from_str(&line).map_err(|e| NarbError::parse(path, i + 1, e.to_string()))?;
        t.validate().map_err(|e| NarbError::parse(path, i + 1, e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}
