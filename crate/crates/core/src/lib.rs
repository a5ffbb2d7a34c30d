//! textlens: diagnosis and mitigation of semantic hallucination in
//! multimodal transformer decoding over scene text.
//!
//! The crate is organized as a pipeline over recorded decoding traces:
//!
//! - [`trace`] — trace data model, on-disk archive format, box→token
//!   geometry, and validation invariants shared by everything downstream.
//! - [`toy`] — a small deterministic decoder-only transformer that emits
//!   real traces, used for tests and as the reference provider.
//! - [`adapters`] — the provider abstraction over real models, plus the
//!   C plugin loader for out-of-process backends.
//! - [`analysis`] — per-layer diagnosis: logit-lens tendency, text-region
//!   attention grounding, and their rank correlation.
//! - [`zoomtext`] — image-token salience (glimpse), attention-shift
//!   refocusing, and the artifacts they export.
//! - [`glc`] — grounded-layer correction: layer selection, hidden-state
//!   fusion strategies, and corrected decoding.
//! - [`evalbench`] — benchmark manifest, spotting/understanding scoring,
//!   and the evaluation harness.

pub mod adapters;
pub mod analysis;
pub mod error;
pub mod evalbench;
pub mod glc;
pub mod stats;
pub mod tokenizer;
pub mod toy;
pub mod trace;
pub mod zoomtext;

pub use error::{Error, Result};
pub use trace::{
    read_trace, write_trace, AttentionTensor, HiddenStateTensor, MultimodalTrace, OutputHead,
    QuadBox, SelectionOrigin, TokenLayout, TokenSelection,
};
