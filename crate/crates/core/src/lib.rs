//! Phone-aligned trait embeddings for explainable speaker verification.
//!
//! A frame-level encoder produces one embedding per frame. Frames are grouped
//! by a phone alignment and averaged into one *phonetic trait* per phone, absent
//! phones are filtered out, and the remaining traits are pooled (mean and
//! standard deviation) and projected into an utterance-level speaker embedding.
//!
//! Verification decisions use the cosine between speaker embeddings (the
//! *final score*). Per-phone trait cosines form a similarity vector whose mean
//! over shared phones (the *evidence score*) explains that decision.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: synthetic speaker corpus, alignments, trial lists
//! - [`formats`]: plain-text readers and writers for every file type
//! - [`encoder`]: context-window frame encoder with analytic gradients
//! - [`trait_layer`]: trait extraction, filtering, statistics pooling, projection
//! - [`losses`]: trait verification, trait-center and AAM-softmax losses
//! - [`model`]: full model state, per-batch forward/backward, checkpoints
//! - [`training`]: pair-batch sampling, SGD training loop, gradient checker
//! - [`scoring`]: final scores, trait similarity vectors, evidence scores
//! - [`analysis`]: EER, minDCF, explainability correlation, F-ratio, explanations
//! - [`config`]: `key=value` run configuration shared by the command-line tool

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod formats;
pub mod losses;
pub mod model;
pub mod scoring;
pub mod trait_layer;
pub mod training;
mod util;

pub use error::{Error, Result};
pub use util::write_atomic;
