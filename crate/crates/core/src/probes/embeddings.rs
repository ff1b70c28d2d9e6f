use std::collections::HashMap;

use super::LayerSelector;
use crate::corpus::Span;
use crate::store::{EmbedStore, Pooling, SpanEmbedding, StoreMeta};
use crate::{NarbError, Result};

/// Pooled span vectors converted to f64 under one layer selector: `d`
/// values per span for a single layer, `L x d` for all layers.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub selector: LayerSelector,
    pub n_layers: usize,
    pub dim: usize,
    vectors: HashMap<Span, Vec<f64>>,
}

impl Embeddings {
    pub fn from_records(meta: &StoreMeta, records: impl IntoIterator<Item = SpanEmbedding>, selector: LayerSelector) -> Result<Self> {
        if meta.pooling == Pooling::Tokens {
            return Err(NarbError::InvalidArgument(
                "ranking probes need a pooled store, not token-level states".into(),
            ));
        }
        if let LayerSelector::Single(l) = selector {
            if l >= meta.n_layers {
                return Err(NarbError::InvalidArgument(format!("layer {l} out of {} in store", meta.n_layers)));
            }
        }
        let mut vectors = HashMap::new();
        for rec in records {
            if rec.values.len() != meta.record_len(&rec.span) {
                return Err(NarbError::Shape(format!("record {} has {} values", rec.span.key(), rec.values.len())));
            }
            let layers: Vec<usize> = match selector {
                LayerSelector::Single(l) => vec![l],
                LayerSelector::AllLayers => (0..meta.n_layers).collect(),
            };
            let mut v = Vec::with_capacity(layers.len() * meta.dim);
            for l in layers {
                let row = rec.layer(meta, l);
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(NarbError::NonFinite { layer: l, key: rec.span.key() });
                }
                v.extend(row.iter().map(|&x| x as f64));
            }
            vectors.insert(rec.span, v);
        }
        Ok(Embeddings {
            selector,
            n_layers: meta.n_layers,
            dim: meta.dim,
            vectors,
        })
    }

    /// Loads exactly the given spans; a missing one is an error naming it.
    pub fn from_store<'a>(store: &EmbedStore, spans: impl IntoIterator<Item = &'a Span>, selector: LayerSelector) -> Result<Self> {
        let mut wanted: Vec<&Span> = spans.into_iter().collect();
        wanted.sort();
        wanted.dedup();
        let records = wanted.into_iter().map(|s| store.get(s)).collect::<Result<Vec<_>>>()?;
        Self::from_records(store.meta(), records, selector)
    }

    pub fn get(&self, span: &Span) -> Result<&[f64]> {
        self.vectors
            .get(span)
            .map(Vec::as_slice)
            .ok_or_else(|| NarbError::MissingKey(span.key()))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}
