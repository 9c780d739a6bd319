//! Library surface behind the `tpmix` binary: dataset ingestion, the
//! streaming one-step-ahead evaluation protocol, configuration plumbing,
//! and built-in self-checks. The binary in `main.rs` is a thin argument
//! layer over these modules.

pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod harness;
pub mod validate;
