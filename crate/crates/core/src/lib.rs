//! Probing and prompting toolkit for narrative and rhetorical parallelism.
//!
//! The crate is organised along the pipeline:
//!
//! - [`corpus`]: loading narratives, sermons and LitBank annotations into a
//!   uniform document/span model, plus cross-validation splits.
//! - [`pools`]: anchor-based ranking examples and auxiliary span
//!   classification instances.
//! - [`store`]: the `NARB1` binary store of layer-wise span activations,
//!   span pooling and the scalar layer mixture.
//! - [`probes`]: feature maps, scorers, the pairwise ranking trainer and
//!   the self-attentive span classifier.
//! - [`metrics`]: MAP / MRR / pairwise accuracy, F1 / AUROC / accuracy and
//!   fold aggregation.
//! - [`baselines`]: lexical, syntactic and semantic similarity baselines.
//! - [`prompt`]: structured prompted ranking against chat-completion APIs.
//! - [`experiment`]: k-fold probe training and testing.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is on and plain iterators otherwise.

pub mod baselines;
pub mod corpus;
pub mod experiment;
mod error;
pub mod metrics;
pub mod par;
pub mod pools;
pub mod probes;
pub mod prompt;
pub mod seed;
pub mod store;
pub mod synth;

pub use error::{NarbError, Result};
