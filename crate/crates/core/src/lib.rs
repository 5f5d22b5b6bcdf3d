//! anchorsieve: extract a domain-specific subset of a large image-text
//! corpus by querying an approximate nearest-neighbor index with a set of
//! anchor embeddings, then re-scoring candidates exactly and filtering on
//! dual mean-minus-1.5-sigma thresholds.
//!
//! Stages: anchor image normalization, IVF-Flat / IVF-PQ indexing, k-NN
//! query, URL dedup, fetch + dimension validation, exact re-scoring,
//! threshold filtering with quadrant classification, content dedup, and
//! manifest/statistics reporting.

pub mod anchor;
pub mod config;
pub mod embed;
pub mod error;
pub mod fetch;
pub mod fixture;
pub mod index;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
