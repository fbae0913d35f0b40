use crate::error::{invalid, Error, Result};
use crate::models::{Dataset, Hyperparams, ModelSpec};
use crate::paramvec::{scaled_similarity_from_baseline, ParamVector};

use super::{
    combined_influence, experience_influence, similarity_weight, ClientId, ExperienceMap, ExperienceRule, UpdateMessage,
};

/// One Chisme client.
///
/// Between events the state holds exactly two parameter vectors: the active
/// model and the pre-training checkpoint deltas are measured from. A receive
/// borrows the incoming vector and allocates nothing, so an event never has
/// more than three vectors live for this client.
#[derive(Debug, Clone)]
pub struct ChismeState {
    id: ClientId,
    params: ParamVector,
    checkpoint: ParamVector,
    experience: f64,
    map: ExperienceMap,
    rule: ExperienceRule,
}

/// Intermediate quantities of one merge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiveTrace {
    pub alpha: f64,
    pub scaled_similarity: f64,
    pub omega: f64,
    pub eta: f64,
}

impl ChismeState {
    /// Starts from the shared initial parameters with zero experience.
    pub fn new(id: ClientId, init: &ParamVector, rule: ExperienceRule) -> Self {
        Self {
            id,
            params: init.clone(),
            checkpoint: init.clone(),
            experience: 0.0,
            map: ExperienceMap::from([(id, 0.0)]),
            rule,
        }
    }

    /// Restores a state. The map's own entry is overwritten with `experience`.
    pub fn from_parts(
        id: ClientId,
        params: ParamVector,
        checkpoint: ParamVector,
        experience: f64,
        mut map: ExperienceMap,
        rule: ExperienceRule,
    ) -> Result<Self> {
        if checkpoint.len() != params.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                found: checkpoint.len(),
            });
        }
        if !(experience >= 0.0 && experience.is_finite()) || map.values().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("experience must be finite and non-negative"));
        }
        map.insert(id, experience);
        Ok(Self {
            id,
            params,
            checkpoint,
            experience,
            map,
            rule,
        })
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn checkpoint(&self) -> &ParamVector {
        &self.checkpoint
    }

    pub fn experience(&self) -> f64 {
        self.experience
    }

    pub fn experience_map(&self) -> &ExperienceMap {
        &self.map
    }

    /// Parameter vectors held between events.
    pub fn resident_vectors(&self) -> usize {
        2
    }

    /// Checkpoints the current model, trains it on `data` and credits the
    /// experience gained.
    pub fn on_train(&mut self, model: &ModelSpec, data: &Dataset, hyper: &Hyperparams, seed: u64) -> Result<()> {
        let trained = model.train(&self.params, data, hyper, seed)?;
        let gain = self.rule.increment(data.len(), hyper.epochs);
        self.apply_training(trained, gain)
    }

    /// Same as [`on_train`](Self::on_train) for a model trained elsewhere.
    pub fn apply_training(&mut self, trained: ParamVector, experience_gain: f64) -> Result<()> {
        if trained.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                found: trained.len(),
            });
        }
        if !(experience_gain >= 0.0 && experience_gain.is_finite()) {
            return Err(invalid("experience gain must be finite and non-negative"));
        }
        self.checkpoint.copy_from(&self.params)?;
        self.params = trained;
        self.experience += experience_gain;
        self.map.insert(self.id, self.experience);
        Ok(())
    }

    pub fn build_message(&self) -> UpdateMessage {
        UpdateMessage {
            sender: self.id,
            params: self.params.clone(),
            experience: self.experience,
        }
    }

    /// Merges a received model, weighting it by experience and by the
    /// similarity of its progress from our checkpoint to our own progress.
    /// The checkpoint itself is left alone.
    pub fn on_receive(&mut self, msg: &UpdateMessage) -> Result<ReceiveTrace> {
        if msg.params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                found: msg.params.len(),
            });
        }
        if msg.sender == self.id {
            return Err(invalid(format!("client {} received its own message", self.id)));
        }
        if !(msg.experience >= 0.0 && msg.experience.is_finite()) {
            return Err(invalid("message experience must be finite and non-negative"));
        }

        // The sender's entry goes in first so it is part of the denominator.
        self.map.insert(msg.sender, msg.experience);
        let alpha = experience_influence(&self.map, msg.experience)?;
        let scaled = scaled_similarity_from_baseline(&self.params, &msg.params, &self.checkpoint)?;
        let eta = combined_influence(alpha, scaled);

        self.params.interpolate_toward(&msg.params, eta)?;
        self.experience = (1.0 - eta) * self.experience + eta * msg.experience;
        self.map.insert(self.id, self.experience);

        Ok(ReceiveTrace {
            alpha,
            scaled_similarity: scaled,
            omega: similarity_weight(scaled),
            eta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Targets;
    use crate::paramvec::instrument;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn tiny_data() -> Dataset {
        Dataset::new(
            1,
            vec![1.0, 2.0, 3.0],
            Targets::Values {
                dim: 1,
                values: vec![2.0, 4.0, 6.0],
            },
        )
        .unwrap()
    }

    #[test]
    fn train_checkpoints_and_credits_experience() {
        let model = ModelSpec::linear_regression(1, 1);
        let init = model.init_params(1);
        let hyper = Hyperparams {
            learning_rate: 0.01,
            batch_size: 2,
            epochs: 4,
        };
        let mut s = ChismeState::new(3, &init, ExperienceRule::EpochScaled);
        s.on_train(&model, &tiny_data(), &hyper, 5).unwrap();
        assert_eq!(s.checkpoint(), &init);
        assert_ne!(s.params(), &init);
        assert_eq!(s.experience(), 12.0);
        assert_eq!(s.experience_map()[&3], 12.0);

        let before = s.params().clone();
        s.on_train(&model, &tiny_data(), &hyper, 6).unwrap();
        assert_eq!(s.checkpoint(), &before);
        assert_eq!(s.experience(), 24.0);

        let mut literal = ChismeState::new(0, &init, ExperienceRule::SamplesOnly);
        literal.on_train(&model, &tiny_data(), &hyper, 5).unwrap();
        assert_eq!(literal.experience(), 3.0);
    }

    #[test]
    fn identical_inputs_identical_states() {
        let model = ModelSpec::linear_regression(1, 1);
        let init = model.init_params(1);
        let hyper = Hyperparams::default();
        let mut a = ChismeState::new(0, &init, ExperienceRule::EpochScaled);
        let mut b = ChismeState::new(0, &init, ExperienceRule::EpochScaled);
        a.on_train(&model, &tiny_data(), &hyper, 9).unwrap();
        b.on_train(&model, &tiny_data(), &hyper, 9).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.checkpoint(), b.checkpoint());
        assert_eq!(a.experience(), b.experience());
    }

    #[test]
    fn message_is_a_snapshot() {
        let model = ModelSpec::linear_regression(1, 1);
        let mut s = ChismeState::new(0, &model.init_params(0), ExperienceRule::EpochScaled);
        s.on_train(&model, &tiny_data(), &Hyperparams::default(), 0).unwrap();
        let msg = s.build_message();
        assert_eq!(msg.params, *s.params());
        assert_eq!(msg.experience, s.experience());
        let frozen = msg.clone();
        s.on_train(&model, &tiny_data(), &Hyperparams::default(), 1).unwrap();
        assert_eq!(msg, frozen);
        assert_ne!(msg.params, *s.params());
    }

    #[test]
    fn identical_update_is_a_fixed_point() {
        let init = pv(&[0.0, 0.0]);
        let mut s = ChismeState::new(0, &init, ExperienceRule::EpochScaled);
        s.apply_training(pv(&[1.0, 2.0]), 10.0).unwrap();
        let msg = UpdateMessage::new(1, pv(&[1.0, 2.0]), 10.0).unwrap();
        let trace = s.on_receive(&msg).unwrap();
        assert!((trace.scaled_similarity - 1.0).abs() < 1e-12);
        assert!((trace.eta - trace.alpha).abs() < 1e-12);
        assert_eq!(s.params(), &pv(&[1.0, 2.0]));
        assert_eq!(s.experience(), 10.0);
    }

    #[test]
    fn opposed_update_is_ignored() {
        let init = pv(&[1.0, 1.0]);
        let mut s = ChismeState::new(0, &init, ExperienceRule::EpochScaled);
        s.apply_training(pv(&[2.0, 1.0]), 10.0).unwrap();
        // Sender moved exactly opposite from our checkpoint.
        let msg = UpdateMessage::new(4, pv(&[0.0, 1.0]), 30.0).unwrap();
        let trace = s.on_receive(&msg).unwrap();
        assert_eq!(trace.scaled_similarity, 0.0);
        assert_eq!(trace.eta, 0.0);
        assert_eq!(s.params(), &pv(&[2.0, 1.0]));
        assert_eq!(s.experience(), 10.0);
        assert_eq!(s.experience_map()[&4], 30.0);
        assert_eq!(s.checkpoint(), &init);
    }

    #[test]
    fn receive_errors_leave_state_untouched() {
        let mut s = ChismeState::new(0, &pv(&[0.0, 0.0]), ExperienceRule::EpochScaled);
        let bad = UpdateMessage::new(1, pv(&[1.0]), 1.0).unwrap();
        assert!(matches!(s.on_receive(&bad), Err(Error::LengthMismatch { .. })));
        let own = UpdateMessage::new(0, pv(&[1.0, 1.0]), 1.0).unwrap();
        assert!(s.on_receive(&own).is_err());
        assert_eq!(s.experience_map().len(), 1);
    }

    #[test]
    fn unknown_senders_grow_the_map() {
        let mut s = ChismeState::new(0, &pv(&[0.0]), ExperienceRule::EpochScaled);
        for k in 1..5 {
            s.on_receive(&UpdateMessage::new(k * 10, pv(&[1.0]), 1.0).unwrap())
                .unwrap();
        }
        assert_eq!(s.experience_map().len(), 5);
    }

    #[test]
    fn receive_allocates_no_vectors() {
        let model = ModelSpec::linear_regression(1, 1);
        let mut s = ChismeState::new(0, &model.init_params(0), ExperienceRule::EpochScaled);
        s.on_train(&model, &tiny_data(), &Hyperparams::default(), 0).unwrap();
        let msg = UpdateMessage::new(1, model.init_params(7), 40.0).unwrap();
        let window = instrument::Window::open();
        s.on_receive(&msg).unwrap();
        assert_eq!(window.extra_peak(), 0);

        // Training needs one working copy on top of model and checkpoint.
        let window = instrument::Window::open();
        s.on_train(&model, &tiny_data(), &Hyperparams::default(), 1).unwrap();
        assert_eq!(window.extra_peak(), 1);
    }
}
