//! Annotator fingerprinting and position mining for crowd-annotated corpora.
//!
//! The crate is organized as a pipeline:
//!
//! * [`corpus`] loads items, annotators and annotations and tokenizes text.
//! * [`agreement`] provides classical reliability baselines (worker-unit
//!   vectors, pairwise agreement, Krippendorff's alpha).
//! * [`topics`] fits an LDA topic model with collapsed Gibbs sampling.
//! * [`fingerprint`] builds K×L annotator fingerprints from per-document
//!   topic distributions and labels.
//! * [`positions`] reduces, clusters and validates fingerprints.
//! * [`divergence`] compares lexical behavior between two positions.
//! * [`models`] trains word-count classifiers and fingerprints them as
//!   annotators.
//! * [`session`], [`map`] and [`pipeline`] drive the whole thing from the
//!   command line or the HTTP service.

pub mod agreement;
pub mod corpus;
pub mod divergence;
pub mod error;
pub mod fingerprint;
pub mod manifest;
pub mod map;
pub mod models;
pub mod pipeline;
pub mod positions;
pub mod session;
pub mod synthetic;
pub mod topics;
mod util;

pub use error::{Error, Result};

/// Version tag written into every persisted JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
