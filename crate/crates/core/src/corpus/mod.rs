//! Document/span data model and the corpus loaders.

mod arn;
mod asp;
mod litbank;
pub mod normalized;
mod splits;
mod tokenize;

use serde::{Deserialize, Serialize};

use crate::{NarbError, Result};

pub use arn::{load_arn, load_arn_relations, AnalogyKind, ArnRelations, Narrative};
pub use asp::{load_asp, AspCorpus, BranchSet, Pattern};
pub use litbank::{load_litbank, CorefChain, LitBankAnnotations, LitBankDoc, Quote};
pub use normalized::{read_corpus, write_corpus, CorpusRecord, DocAnnotations};
pub use splits::{make_splits, SplitAssignment, SplitRatios};
pub use tokenize::tokenize;

/// A value together with the non-fatal problems met while producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct WithWarnings<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> WithWarnings<T> {
    pub fn new(value: T, warnings: Vec<String>) -> Self {
        for w in &warnings {
            log::warn!("{w}");
        }
        WithWarnings { value, warnings }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// Character (not byte) offsets into the document text, half-open.
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(doc_id: impl Into<String>, start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(NarbError::InvalidData(format!(
                "empty or reversed span {start}..{end}"
            )));
        }
        Ok(Span {
            doc_id: doc_id.into(),
            start,
            end,
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Store key, `doc:start:end`.
    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.doc_id, self.start, self.end)
    }

    pub fn parse_key(key: &str) -> Result<Self> {
        let mut parts = key.rsplitn(3, ':');
        let end = parts.next();
        let start = parts.next();
        let doc = parts.next();
        match (doc, start, end) {
            (Some(doc), Some(start), Some(end)) => {
                let start = start
                    .parse()
                    .map_err(|_| NarbError::InvalidData(format!("bad span key `{key}`")))?;
                let end = end
                    .parse()
                    .map_err(|_| NarbError::InvalidData(format!("bad span key `{key}`")))?;
                Span::new(doc, start, end)
            }
            _ => Err(NarbError::InvalidData(format!("bad span key `{key}`"))),
        }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.doc_id == other.doc_id && self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl Document {
    /// Tokenizes `text` with the whitespace-plus-punctuation tokenizer.
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Document {
            doc_id: doc_id.into(),
            text,
            tokens,
        }
    }

    /// Builds a document from pre-tokenized text, checking the offsets.
    pub fn from_tokens(doc_id: impl Into<String>, text: String, tokens: Vec<Token>) -> Result<Self> {
        let doc = Document {
            doc_id: doc_id.into(),
            text,
            tokens,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.text.chars().count();
        let mut prev_end = 0;
        for (i, t) in self.tokens.iter().enumerate() {
            if t.char_start >= t.char_end || t.char_start < prev_end || t.char_end > len {
                return Err(NarbError::InvalidData(format!(
                    "token {i} of `{}` has bad offsets {}..{}",
                    self.doc_id, t.char_start, t.char_end
                )));
            }
            prev_end = t.char_end;
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// The whole document as a span (used for narrative-level refs).
    pub fn full_span(&self) -> Result<Span> {
        Span::new(self.doc_id.clone(), 0, self.tokens.len())
    }

    pub fn contains(&self, span: &Span) -> bool {
        span.doc_id == self.doc_id && span.start < span.end && span.end <= self.tokens.len()
    }

    /// Character range covered by a token span.
    pub fn span_char_range(&self, span: &Span) -> Result<(usize, usize)> {
        if !self.contains(span) {
            return Err(NarbError::InvalidData(format!(
                "span {} not inside `{}` ({} tokens)",
                span.key(),
                self.doc_id,
                self.tokens.len()
            )));
        }
        Ok((
            self.tokens[span.start].char_start,
            self.tokens[span.end - 1].char_end,
        ))
    }

    pub fn char_slice(&self, start: usize, end: usize) -> String {
        self.text.chars().skip(start).take(end.saturating_sub(start)).collect()
    }

    pub fn span_text(&self, span: &Span) -> Result<String> {
        let (s, e) = self.span_char_range(span)?;
        Ok(self.char_slice(s, e))
    }

    /// Maps a character range to the smallest enclosing token span.
    ///
    /// Returns the span and whether it had to be widened past the given
    /// character boundaries (i.e. the range cut through a token).
    pub fn align_char_range(&self, start: usize, end: usize) -> Result<(Span, bool)> {
        let len = self.char_len();
        if start >= end || end > len {
            return Err(NarbError::SpanOutOfText {
                doc_id: self.doc_id.clone(),
                start,
                end,
                len,
            });
        }
        let first = self.tokens.partition_point(|t| t.char_end <= start);
        let last = self.tokens.partition_point(|t| t.char_start < end);
        if first >= last {
            return Err(NarbError::InvalidData(format!(
                "chars {start}..{end} of `{}` cover no token",
                self.doc_id
            )));
        }
        let widened = self.tokens[first].char_start < start || self.tokens[last - 1].char_end > end;
        Ok((Span::new(self.doc_id.clone(), first, last)?, widened))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn key_round_trip_with_colon_in_id() {
        let s = Span::new("serm:12", 3, 9).unwrap();
        assert_eq!(s.key(), "serm:12:3:9");
        assert_eq!(Span::parse_key(&s.key()).unwrap(), s);
    }

    #[test]
    fn empty_span_rejected() {
        assert!(Span::new("d", 4, 4).is_err());
        assert!(Span::new("d", 5, 4).is_err());
    }

    #[test]
    fn alignment_widens_outward() {
        let doc = Document::new("d", "satietas sitiret, uirtus infirmaretur");
        // "tas sitir" cuts through two words
        let (span, widened) = doc.align_char_range(5, 14).unwrap();
        assert!(widened);
        assert_eq!(doc.span_text(&span).unwrap(), "satietas sitiret");
        let (exact, widened) = doc.align_char_range(0, 8).unwrap();
        assert!(!widened);
        assert_eq!((exact.start, exact.end), (0, 1));
    }

    #[test]
    fn alignment_outside_text_is_error() {
        let doc = Document::new("d", "uita moreretur");
        assert!(matches!(
            doc.align_char_range(3, 40),
            Err(NarbError::SpanOutOfText { .. })
        ));
        assert!(doc.align_char_range(4, 5).is_err()); // whitespace only
    }

    #[test]
    fn non_ascii_offsets_are_chars() {
        let doc = Document::new("d", "héllo wörld");
        assert_eq!(doc.tokens[1].char_start, 6);
        assert_eq!(doc.span_text(&Span::new("d", 1, 2).unwrap()).unwrap(), "wörld");
    }

    proptest! {
        #[test]
        fn token_char_token_round_trip(words in proptest::collection::vec("[a-z]{1,6}|[,.;]", 1..30),
                                       a in 0usize..30, b in 0usize..30) {
            let text = words.join(" ");
            let doc = Document::new("d", text);
            let n = doc.token_count();
            let (s, e) = (a % n, b % n);
            let (s, e) = (s.min(e), s.max(e) + 1);
            let span = Span::new("d", s, e).unwrap();
            let (cs, ce) = doc.span_char_range(&span).unwrap();
            let (back, widened) = doc.align_char_range(cs, ce).unwrap();
            prop_assert_eq!(back, span);
            prop_assert!(!widened);
        }

        #[test]
        fn tokens_are_ordered_and_in_bounds(text in "\\PC{0,80}") {
            let doc = Document::new("d", text);
            prop_assert!(doc.validate().is_ok());
        }
    }
}
