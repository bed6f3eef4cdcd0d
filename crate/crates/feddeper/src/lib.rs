//! Deterministic federated-learning simulation engine.
//!
//! Implements depersonalized alternating local SGD (FedDeper) alongside
//! FedAvg, FedProx, and SCAFFOLD baselines, with lineage-keyed randomness
//! for bitwise-reproducible runs, convergence diagnostics that measure the
//! theory's deviation quantities at runtime, and an experiment harness with
//! JSONL metrics, hyper-parameter sweeps, and a CLI.

pub mod algorithms;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod models;
pub mod numerics;

pub use error::{Error, Result};
