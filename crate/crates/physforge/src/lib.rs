//! File formats, the Lean subprocess backend, HTTP prover clients and the
//! command-line driver around [`physforge_core`].

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod cli;
pub mod config;
pub mod http;
pub mod jsonl;
pub mod lean;
pub mod manifest;
pub mod pool;
pub mod tree;

pub use physforge_core as core;
