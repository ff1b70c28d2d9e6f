//! LitBank annotation readers.
//!
//! Expected layout under the root directory, one file per document id:
//!
//! ```text
//! events/<doc>.tsv    token \t EVENT|O            (blank line between sentences)
//! entities/<doc>.tsv  token \t L1 \t L2 ...       (nested BIO layers; L1 is the first annotator layer)
//! coref/<doc>.ann     brat: `T<n>\t<TYPE> <start> <end>\t<text>` mentions and
//!                     `R<n>\tCoreference Arg1:T<a> Arg2:T<b>` links
//! quotes/<doc>.tsv    QUOTE \t <qid> \t <sent> \t <tok> \t <end sent> \t <end tok (incl.)> \t <text>
//!                     ATTRIB \t <qid> \t <speaker mention T-id>
//! ```
//!
//! Brat offsets index the text formed by joining tokens with single spaces
//! and sentences with newlines, which is also the document text built here.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Document, Span, Token, WithWarnings};
use crate::{NarbError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefChain {
    pub entity_id: String,
    pub mentions: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    pub quote: Span,
    pub speaker: Span,
    pub speaker_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LitBankAnnotations {
    pub doc_id: String,
    pub events: Vec<Span>,
    pub entities: Vec<Span>,
    pub coref_chains: Vec<CorefChain>,
    pub quotes: Vec<Quote>,
}

impl LitBankAnnotations {
    /// `(events, entities, coref mentions, quotes)`.
    pub fn counts(&self) -> (usize, usize, usize, usize) {
        (
            self.events.len(),
            self.entities.len(),
            self.coref_chains.iter().map(|c| c.mentions.len()).sum(),
            self.quotes.len(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.events.iter().find(|e| e.len() != 1) {
            return Err(NarbError::InvalidData(format!("event {} is not one token", e.key())));
        }
        if let Some(c) = self.coref_chains.iter().find(|c| c.mentions.is_empty()) {
            return Err(NarbError::InvalidData(format!("empty coref chain `{}`", c.entity_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LitBankDoc {
    pub document: Document,
    pub annotations: LitBankAnnotations,
}

const LAYERS: [(&str, &str); 4] = [
    ("events", "tsv"),
    ("entities", "tsv"),
    ("coref", "ann"),
    ("quotes", "tsv"),
];

type Sentences = Vec<Vec<Vec<String>>>;

/// Reads a token-per-line TSV into sentences of rows (columns split by tab).
fn read_token_tsv(path: &Path) -> Result<Sentences> {
    let raw = std::fs::read_to_string(path).map_err(|e| NarbError::io(path, e))?;
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for line in raw.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        current.push(line.split('\t').map(str::to_string).collect());
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

fn build_document(doc_id: &str, sentences: &Sentences) -> Result<(Document, Vec<usize>)> {
    let mut text = String::new();
    let mut tokens = Vec::new();
    let mut sentence_starts = Vec::with_capacity(sentences.len());
    let mut pos = 0;
    for (si, sent) in sentences.iter().enumerate() {
        if si > 0 {
            text.push('\n');
            pos += 1;
        }
        sentence_starts.push(tokens.len());
        for (ti, row) in sent.iter().enumerate() {
            if ti > 0 {
                text.push(' ');
                pos += 1;
            }
            let surface = row[0].clone();
            let n = surface.chars().count();
            text.push_str(&surface);
            tokens.push(Token {
                surface,
                char_start: pos,
                char_end: pos + n,
            });
            pos += n;
        }
    }
    Ok((Document::from_tokens(doc_id, text, tokens)?, sentence_starts))
}

fn bio_spans(doc_id: &str, sentences: &Sentences, column: usize) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut idx = 0;
    for sent in sentences {
        let mut open: Option<usize> = None;
        for row in sent {
            let tag = row.get(column).map(String::as_str).unwrap_or("O");
            let begins = tag.starts_with("B-");
            let inside = tag.starts_with("I-");
            if let Some(start) = open {
                if !inside {
                    spans.push(Span::new(doc_id, start, idx)?);
                    open = None;
                }
            }
            if begins || (inside && open.is_none()) {
                open = Some(idx);
            }
            idx += 1;
        }
        if let Some(start) = open {
            spans.push(Span::new(doc_id, start, idx)?);
        }
    }
    Ok(spans)
}

struct BratMentions {
    mentions: BTreeMap<String, Span>,
    links: Vec<(String, String)>,
}

fn read_brat(path: &Path, doc: &Document) -> Result<BratMentions> {
    let raw = std::fs::read_to_string(path).map_err(|e| NarbError::io(path, e))?;
    let mut mentions = BTreeMap::new();
    let mut links = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.first().and_then(|f| f.chars().next()) {
            Some('T') => {
                let spec: Vec<&str> = fields.get(1).map(|s| s.split(' ').collect()).unwrap_or_default();
                if spec.len() < 3 {
                    return Err(NarbError::parse(path, line_no, "malformed text-bound annotation"));
                }
                let s: usize = spec[1]
                    .parse()
                    .map_err(|_| NarbError::parse(path, line_no, "bad start offset"))?;
                let e: usize = spec[spec.len() - 1]
                    .parse()
                    .map_err(|_| NarbError::parse(path, line_no, "bad end offset"))?;
                let (span, _) = doc.align_char_range(s, e)?;
                mentions.insert(fields[0].to_string(), span);
            }
            Some('R') => {
                let args: Vec<&str> = fields.get(1).map(|s| s.split(' ').collect()).unwrap_or_default();
                if args.len() != 3 || args[0] != "Coreference" {
                    continue;
                }
                let a = args[1].trim_start_matches("Arg1:");
                let b = args[2].trim_start_matches("Arg2:");
                links.push((a.to_string(), b.to_string()));
            }
            _ => {}
        }
    }
    Ok(BratMentions { mentions, links })
}

fn find(parent: &mut HashMap<String, String>, x: &str) -> String {
    let mut root = x.to_string();
    while let Some(p) = parent.get(&root) {
        if *p == root {
            break;
        }
        root = p.clone();
    }
    parent.insert(x.to_string(), root.clone());
    root
}

fn coref_chains(brat: &BratMentions) -> (Vec<CorefChain>, HashMap<String, String>) {
    let mut parent: HashMap<String, String> =
        brat.mentions.keys().map(|k| (k.clone(), k.clone())).collect();
    for (a, b) in &brat.links {
        if !parent.contains_key(a) || !parent.contains_key(b) {
            continue;
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            // smaller position wins so chain ids are stable
            let (keep, drop) = if brat.mentions[&ra] <= brat.mentions[&rb] { (ra, rb) } else { (rb, ra) };
            parent.insert(drop, keep);
        }
    }
    let mut groups: BTreeMap<String, Vec<Span>> = BTreeMap::new();
    let mut chain_of = HashMap::new();
    for (tid, span) in &brat.mentions {
        let root = find(&mut parent, tid);
        chain_of.insert(tid.clone(), root.clone());
        groups.entry(root).or_default().push(span.clone());
    }
    let chains = groups
        .into_iter()
        .map(|(entity_id, mut mentions)| {
            mentions.sort();
            mentions.dedup();
            CorefChain { entity_id, mentions }
        })
        .collect();
    (chains, chain_of)
}

#[allow(clippy::too_many_arguments)]
fn read_quotes(
    path: &Path,
    doc: &Document,
    sentence_starts: &[usize],
    brat: Option<&BratMentions>,
    chains: &[CorefChain],
    chain_of: &HashMap<String, String>,
    warnings: &mut Vec<String>,
) -> Result<Vec<Quote>> {
    let raw = std::fs::read_to_string(path).map_err(|e| NarbError::io(path, e))?;
    let mut quote_spans: BTreeMap<String, Span> = BTreeMap::new();
    let mut attributions: Vec<(String, String)> = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        match f.first().copied() {
            Some("QUOTE") => {
                if f.len() < 6 {
                    return Err(NarbError::parse(path, i + 1, "QUOTE row needs 6 fields"));
                }
                let num = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| NarbError::parse(path, i + 1, format!("bad index `{s}`")))
                };
                let (ss, st, es, et) = (num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?);
                let abs = |s: usize, t: usize| -> Result<usize> {
                    sentence_starts
                        .get(s)
                        .map(|b| b + t)
                        .ok_or_else(|| NarbError::parse(path, i + 1, format!("no sentence {s}")))
                };
                let span = Span::new(doc.doc_id.clone(), abs(ss, st)?, abs(es, et)? + 1)?;
                if !doc.contains(&span) {
                    return Err(NarbError::parse(path, i + 1, "quote outside document"));
                }
                quote_spans.insert(f[1].to_string(), span);
            }
            Some("ATTRIB") if f.len() >= 3 => attributions.push((f[1].to_string(), f[2].to_string())),
            _ => {}
        }
    }

    let mut quotes = Vec::new();
    for (qid, mention) in attributions {
        let Some(quote) = quote_spans.get(&qid) else {
            warnings.push(format!("{}: attribution for unknown quote `{qid}`", doc.doc_id));
            continue;
        };
        let chain_id = brat.and_then(|_| chain_of.get(&mention));
        let Some(chain) = chain_id.and_then(|id| chains.iter().find(|c| &c.entity_id == id)) else {
            warnings.push(format!("{}: quote `{qid}` speaker `{mention}` has no coref mention", doc.doc_id));
            continue;
        };
        // the speaker's mention closest to the quote
        let dist = |s: &Span| {
            if s.end <= quote.start {
                quote.start - s.end
            } else if s.start >= quote.end {
                s.start - quote.end
            } else {
                0
            }
        };
        let speaker = chain.mentions.iter().min_by_key(|s| (dist(s), s.start)).cloned();
        if let Some(speaker) = speaker {
            quotes.push(Quote {
                quote: quote.clone(),
                speaker,
                speaker_id: chain.entity_id.clone(),
            });
        }
    }
    quotes.sort_by(|a, b| a.quote.cmp(&b.quote));
    Ok(quotes)
}

fn layer_path(root: &Path, layer: &str, ext: &str, doc_id: &str) -> PathBuf {
    root.join(layer).join(format!("{doc_id}.{ext}"))
}

/// Loads every document that appears in at least one layer directory.
pub fn load_litbank(root: &Path) -> Result<WithWarnings<Vec<LitBankDoc>>> {
    let mut ids = std::collections::BTreeSet::new();
    for (layer, ext) in LAYERS {
        let dir = root.join(layer);
        if !dir.is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(&dir).map_err(|e| NarbError::io(&dir, e))? {
            let path = entry.map_err(|e| NarbError::io(&dir, e))?.path();
            if path.extension().is_some_and(|x| x == ext) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.insert(stem.to_string());
                }
            }
        }
    }
    if ids.is_empty() {
        return Err(NarbError::InvalidData(format!(
            "no LitBank annotation files under {}",
            root.display()
        )));
    }

    let mut warnings = Vec::new();
    let mut docs = Vec::with_capacity(ids.len());
    for doc_id in ids {
        let events_path = layer_path(root, "events", "tsv", &doc_id);
        let entities_path = layer_path(root, "entities", "tsv", &doc_id);
        let events_tsv = events_path.is_file().then(|| read_token_tsv(&events_path)).transpose()?;
        let entities_tsv = entities_path.is_file().then(|| read_token_tsv(&entities_path)).transpose()?;
        let Some(token_source) = events_tsv.as_ref().or(entities_tsv.as_ref()) else {
            warnings.push(format!("{doc_id}: no token layer (events/entities tsv); skipped"));
            continue;
        };
        let (document, sentence_starts) = build_document(&doc_id, token_source)?;
        if let (Some(ev), Some(en)) = (&events_tsv, &entities_tsv) {
            let count = |s: &Sentences| s.iter().map(Vec::len).sum::<usize>();
            if count(ev) != count(en) {
                return Err(NarbError::InvalidData(format!(
                    "{doc_id}: events and entities disagree on token count"
                )));
            }
        }

        let mut ann = LitBankAnnotations {
            doc_id: doc_id.clone(),
            ..Default::default()
        };
        match &events_tsv {
            Some(ev) => {
                let mut idx = 0;
                for row in ev.iter().flatten() {
                    if row.get(1).is_some_and(|t| t == "EVENT") {
                        ann.events.push(Span::new(doc_id.clone(), idx, idx + 1)?);
                    }
                    idx += 1;
                }
            }
            None => warnings.push(format!("{doc_id}: missing events layer")),
        }
        match &entities_tsv {
            Some(en) => ann.entities = bio_spans(&doc_id, en, 1)?,
            None => warnings.push(format!("{doc_id}: missing entities layer")),
        }

        let coref_path = layer_path(root, "coref", "ann", &doc_id);
        let brat = if coref_path.is_file() {
            Some(read_brat(&coref_path, &document)?)
        } else {
            warnings.push(format!("{doc_id}: missing coref layer"));
            None
        };
        let (chains, chain_of) = brat.as_ref().map(coref_chains).unwrap_or_default();
        ann.coref_chains = chains;

        let quotes_path = layer_path(root, "quotes", "tsv", &doc_id);
        if quotes_path.is_file() {
            ann.quotes = read_quotes(
                &quotes_path,
                &document,
                &sentence_starts,
                brat.as_ref(),
                &ann.coref_chains,
                &chain_of,
                &mut warnings,
            )?;
        } else {
            warnings.push(format!("{doc_id}: missing quotes layer"));
        }
        ann.validate()?;
        docs.push(LitBankDoc {
            document,
            annotations: ann,
        });
    }
    Ok(WithWarnings::new(docs, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(root: &Path, rel: &str, body: &str) {
        let p = root.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, body).unwrap();
    }

    #[test]
    fn two_events_one_entity() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "events/d1.tsv", "Alice\tO\nran\tEVENT\n.\tO\n\nShe\tO\nfell\tEVENT\n");
        write(dir.path(), "entities/d1.tsv", "Alice\tB-PER\tO\nran\tO\tO\n.\tO\tO\n\nShe\tO\tB-PER\nfell\tO\tO\n");
        let out = load_litbank(dir.path()).unwrap();
        assert_eq!(out.value.len(), 1);
        let doc = &out.value[0];
        assert_eq!(doc.annotations.counts(), (2, 1, 0, 0));
        assert_eq!(doc.document.text, "Alice ran .\nShe fell");
        // coref and quotes layers missing
        assert_eq!(out.warnings.len(), 2);
    }

    #[test]
    fn coref_chains_and_quote_speaker() {
        let dir = tempfile::tempdir().unwrap();
        // text: "Alice said :\n“ Go home . ”\nBob nodded ; she left"
        write(
            dir.path(),
            "events/d.tsv",
            "Alice\tO\nsaid\tEVENT\n:\tO\n\n“\tO\nGo\tO\nhome\tO\n.\tO\n”\tO\n\nBob\tO\nnodded\tEVENT\n;\tO\nshe\tO\nleft\tEVENT\n",
        );
        write(dir.path(), "entities/d.tsv", "Alice\tB-PER\nsaid\tO\n:\tO\n\n“\tO\nGo\tO\nhome\tO\n.\tO\n”\tO\n\nBob\tB-PER\nnodded\tO\n;\tO\nshe\tB-PER\nleft\tO\n");
        // offsets: Alice 0-5; Bob at line 3. Line1 "Alice said :" (12) + \n => line 2 starts 13
        // line 2 "“ Go home . ”" = 13 chars => line 3 starts 27: Bob 27-30, she 40-43
        write(
            dir.path(),
            "coref/d.ann",
            "T1\tPER 0 5\tAlice\nT2\tPER 27 30\tBob\nT3\tPER 40 43\tshe\nR1\tCoreference Arg1:T3 Arg2:T1\n",
        );
        write(dir.path(), "quotes/d.tsv", "QUOTE\tQ1\t1\t0\t1\t4\t“ Go home . ”\nATTRIB\tQ1\tT3\n");
        let out = load_litbank(dir.path()).unwrap();
        assert!(out.warnings.is_empty(), "{:?}", out.warnings);
        let ann = &out.value[0].annotations;
        assert_eq!(ann.coref_chains.len(), 2);
        let alice = ann.coref_chains.iter().find(|c| c.entity_id == "T1").unwrap();
        assert_eq!(alice.mentions.len(), 2);
        assert_eq!(ann.quotes.len(), 1);
        let q = &ann.quotes[0];
        assert_eq!((q.quote.start, q.quote.end), (3, 8));
        assert_eq!(q.speaker_id, "T1");
        // Alice ends 2 tokens before the quote, "she" starts 3 after it
        assert_eq!(q.speaker.start, 0);
        assert_eq!(ann.counts(), (3, 3, 3, 1));
    }

    #[test]
    fn empty_root_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_litbank(dir.path()).is_err());
    }
}
