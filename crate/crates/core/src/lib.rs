//! Deterministic discrete-event simulator and protocol library for
//! similarity-weighted gossip learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`paramvec`]: flat parameter algebra (deltas, cosine similarity, interpolation)
//! - [`models`]: small trainable models (linear regression, softmax, one-hidden-layer MLP)
//! - [`datagen`]: synthetic heterogeneous client datasets
//! - [`network`]: Watts-Strogatz topologies and lossy delivery
//! - [`protocol`]: the Chisme, gossip, DFL, CosSimDFL and FedAvg state machines
//! - [`engine`]: the round-based experiment driver and metrics
//! - [`cli`]: config loading, sweeps, CSV output

pub mod cli;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod models;
pub mod network;
pub mod paramvec;
pub mod protocol;
pub mod streams;

pub use error::{Error, Result};
pub use paramvec::ParamVector;
