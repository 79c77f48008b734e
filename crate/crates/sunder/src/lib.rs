//! Selective unlearning for token-level language models.
//!
//! `sunder` makes a small trainable language model forget targeted spans of
//! its training data and measures how much sensitive content remains
//! extractable afterwards. The pieces:
//!
//! - [`seq`] — token sequences, sensitive spans, and corpora.
//! - [`select`] — online sensitive-span selection from per-token
//!   log-probabilities, plus annotation comparison statistics.
//! - [`metrics`] — extraction-likelihood and memorization-accuracy metrics,
//!   in both whole-sequence and sensitive-span-restricted forms.
//! - [`toylm`] — a deterministic byte-level MLP language model with explicit
//!   gradients, selective/full unlearning, threshold-based stopping, and a
//!   knowledge-injection attack harness.
//! - [`annotate`] — two-stage LLM-based span annotation (forward extraction,
//!   backward sensitivity rating) over a record/replay chat client.
//! - [`synth`] — synthetic corpora with planted sensitive strings and exact
//!   ground-truth spans.
//! - [`cli`] — the `sunder` command-line surface and its JSONL/CSV file
//!   formats.

pub mod annotate;
pub mod cli;
mod error;
pub mod metrics;
pub mod replay;
pub mod select;
pub mod seq;
pub mod synth;
pub mod toylm;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
