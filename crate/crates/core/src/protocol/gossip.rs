use crate::error::{Error, Result};
use crate::models::{Dataset, Hyperparams, ModelSpec};
use crate::paramvec::ParamVector;

use super::{ClientId, ExperienceRule, UpdateMessage};

/// Vanilla experience-weighted gossip learning.
#[derive(Debug, Clone)]
pub struct GossipState {
    id: ClientId,
    params: ParamVector,
    experience: f64,
    rule: ExperienceRule,
}

impl GossipState {
    pub fn new(id: ClientId, init: &ParamVector, rule: ExperienceRule) -> Self {
        Self {
            id,
            params: init.clone(),
            experience: 0.0,
            rule,
        }
    }

    pub fn from_parts(id: ClientId, params: ParamVector, experience: f64, rule: ExperienceRule) -> Result<Self> {
        if !(experience >= 0.0 && experience.is_finite()) {
            return Err(crate::error::invalid("experience must be finite and non-negative"));
        }
        Ok(Self {
            id,
            params,
            experience,
            rule,
        })
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn experience(&self) -> f64 {
        self.experience
    }

    pub fn resident_vectors(&self) -> usize {
        1
    }

    pub fn on_train(&mut self, model: &ModelSpec, data: &Dataset, hyper: &Hyperparams, seed: u64) -> Result<()> {
        self.params = model.train(&self.params, data, hyper, seed)?;
        self.experience += self.rule.increment(data.len(), hyper.epochs);
        Ok(())
    }

    pub fn build_message(&self) -> UpdateMessage {
        UpdateMessage {
            sender: self.id,
            params: self.params.clone(),
            experience: self.experience,
        }
    }

    /// `alpha = mu_k / (mu_i + mu_k)`, merge, then keep the larger experience.
    /// Returns `alpha`.
    pub fn on_receive(&mut self, msg: &UpdateMessage) -> Result<f64> {
        if msg.params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                found: msg.params.len(),
            });
        }
        let total = self.experience + msg.experience;
        let alpha = if total > 0.0 { msg.experience / total } else { 0.0 };
        self.params.interpolate_toward(&msg.params, alpha)?;
        self.experience = self.experience.max(msg.experience);
        Ok(alpha)
    }
}
