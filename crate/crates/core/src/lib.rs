//! Layer-entropy diagnostics and attention-fusion intervention for a toy
//! multimodal decoder, plus the statistics, hallucination scoring and
//! preference-gradient checks used to study it.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, timing and the
//! command-line tool live in the `dleaf-lab` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod diagnostics;
pub mod dpo;
pub mod engine;
pub mod eval;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod stats;
pub mod trace;

pub use attention::{AttentionSnapshot, ImageSpan};
pub use error::{Error, Result};
