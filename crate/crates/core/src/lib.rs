//! Topic-model-assisted annotation engine.
//!
//! The crate is organised around the annotation loop:
//!
//! - [`corpus`]: loading, tokenizing and featurizing documents.
//! - [`topic_models`]: collapsed Gibbs LDA, supervised LDA with binary
//!   responses, and import of externally computed topic distributions.
//! - [`classifier`]: an incrementally trained softmax classifier over
//!   tf-idf (+ topic) features.
//! - [`active_learning`]: entropy-based preference scores and document
//!   selection, optionally organised by dominant topic.
//! - [`metrics`]: purity, ARI, adjusted NMI and NPMI coherence.
//! - [`session`]: an event-sourced annotation session.
//! - [`simulation`]: a scripted annotator benchmark harness.

pub mod active_learning;
pub mod classifier;
pub mod corpus;
pub mod metrics;
pub mod session;
pub mod simulation;
pub mod sparse;
pub mod topic_models;

pub use corpus::{Corpus, Document, Vocabulary};
pub use sparse::SparseVec;
