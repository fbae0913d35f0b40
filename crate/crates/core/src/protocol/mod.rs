//! Learning-protocol state machines.
//!
//! Each client's state is owned by exactly one event at a time; handlers take
//! `&mut self` and either fully apply or leave the state untouched on error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::paramvec::ParamVector;

mod chisme;
mod dfl;
mod gossip;

pub use chisme::{ChismeState, ReceiveTrace};
pub use dfl::{
    cossim_dfl_aggregate, cossim_weights, dfl_aggregate, fedavg_server_aggregate, DflMode, DflState, FedAvgServer,
    SizedUpdate,
};
pub use gossip::GossipState;

pub type ClientId = usize;

/// The gossip payload: a copy of the sender's parameters and experience.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMessage {
    pub sender: ClientId,
    pub params: ParamVector,
    pub experience: f64,
}

impl UpdateMessage {
    pub fn new(sender: ClientId, params: ParamVector, experience: f64) -> Result<Self> {
        if !(experience >= 0.0 && experience.is_finite()) {
            return Err(invalid(format!(
                "message experience {experience} must be finite and non-negative"
            )));
        }
        Ok(Self {
            sender,
            params,
            experience,
        })
    }
}

/// How local training increments experience.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperienceRule {
    /// `mu += epochs * |D|`: every epoch counts as a pass over the data.
    #[default]
    EpochScaled,
    /// `mu += |D|` per training round regardless of epochs.
    SamplesOnly,
}

impl ExperienceRule {
    pub fn increment(self, samples: usize, epochs: usize) -> f64 {
        match self {
            Self::EpochScaled => (samples * epochs) as f64,
            Self::SamplesOnly => samples as f64,
        }
    }
}

/// Last-seen experience per client, including the owner's own entry.
pub type ExperienceMap = BTreeMap<ClientId, f64>;

/// `alpha = incoming / sum(map)`, where the incoming value has already been
/// recorded in `map`. Returns 0 when the map sums to zero.
pub fn experience_influence(map: &ExperienceMap, incoming: f64) -> Result<f64> {
    if incoming < 0.0 || map.values().any(|&v| v < 0.0) {
        return Err(invalid("experience must be non-negative"));
    }
    let total: f64 = map.values().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok((incoming / total).min(1.0))
}

/// Similarity heuristic `omega = s / (1 + s)` for a scaled similarity `s` in
/// `[0, 1]`, normalised against self-similarity of 1. Ranges over `[0, 1/2]`.
pub fn similarity_weight(scaled_similarity: f64) -> f64 {
    scaled_similarity / (1.0 + scaled_similarity)
}

/// Combined influence
/// `eta = alpha omega / ((1 - alpha)(1 - omega) + alpha omega)`.
///
/// `eta` equals `alpha` when the update is perfectly aligned (`s = 1`,
/// `omega = 1/2`) and vanishes when it is opposed (`s = 0`).
pub fn combined_influence(alpha: f64, scaled_similarity: f64) -> f64 {
    let omega = similarity_weight(scaled_similarity);
    let num = alpha * omega;
    let den = (1.0 - alpha) * (1.0 - omega) + num;
    if den == 0.0 {
        return 0.0;
    }
    (num / den).clamp(0.0, 1.0)
}
