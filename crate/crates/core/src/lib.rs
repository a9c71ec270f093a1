//! Golden repair-pair pipeline for LLM code repair.
//!
//! The crate is organised along the pipeline:
//!
//! * [`model`]: problems, attempts, candidate pairs, dataset I/O and stratified splitting.
//! * [`gateway`]: text generation behind HTTP, replay and scripted backends with budget accounting.
//! * [`evaluator`]: scores guest programs against unit tests through an external runner process.
//! * [`prompt`]: guess and repair prompt construction and code extraction.
//! * [`pairgen`]: initial-guess curation and candidate pair generation.
//! * [`extraction`]: the fix-quality matrix and clipped greedy selection of golden pairs.
//! * [`inference`]: inference-time strategies and corpus metrics.
//! * [`analysis`]: AST-subtree diversity, lineage depth and per-bucket breakdowns.

pub mod analysis;
pub mod evaluator;
pub mod extraction;
pub mod gateway;
pub mod inference;
pub mod io;
pub mod model;
pub mod pairgen;
pub mod prompt;

mod error;
mod step;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
