//! Library surface of the experiment driver: configuration parsing and
//! validation, plus study execution. The `homfem` binary is a thin wrapper
//! around these.

pub mod config;
pub mod study;
