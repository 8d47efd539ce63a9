//! Pure pipeline logic for mining Lean lemma corpora, filtering synthetic
//! conjectures, computing verifiable rewards and GRPO quantities, and scoring
//! prover evaluations.
//!
//! Everything here is `no_std` + `alloc`: file access, subprocesses and HTTP
//! live in the `physforge` crate, which plugs into the [`verify::Backend`] and
//! [`source::CompletionSource`] traits defined here.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod conjecture;
pub mod corpus;
pub mod curriculum;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod hash;
pub mod lexer;
pub mod prompt;
pub mod raft;
pub mod record;
pub mod scan;
pub mod source;
pub mod tokens;
pub mod verify;

pub use error::{Error, Result};
pub use record::{Category, Split, TheoremRecord};
