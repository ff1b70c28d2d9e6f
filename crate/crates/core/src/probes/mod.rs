//! Ranking probes over frozen span activations, and self-attentive span
//! classifiers for the auxiliary tasks.
//!
//! All parameters live in flat `f64` vectors; gradients are written by hand
//! and checked against finite differences in the tests.

mod embeddings;
mod features;
mod io;
mod nn;
mod scorer;
mod span_rep;
mod train;

pub use embeddings::Embeddings;
pub use features::{cosine, dist_features, pair_features};
pub use io::{load_probe, save_probe, write_rankings_csv, ProbeHeader};
pub use scorer::{pairwise_loss, LayerSelector, Scorer, ScorerKind, SpanInput, DEFAULT_HIDDEN, DIST_SCALE};
pub use span_rep::{
    evaluate_span_classifier, train_span_classifier, HeadKind, SpanClassifierConfig, SpanRepModel, TokenEmbeddings,
    TrainedSpanClassifier,
};
pub use train::{evaluate, example_scores, rank_candidates, train_probe, EpochLog, TrainConfig, TrainedProbe};
