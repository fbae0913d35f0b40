use crate::error::{Error, Result};
use crate::models::{Dataset, Hyperparams, ModelSpec};
use crate::paramvec::{scaled_similarity_from_baseline, weighted_mean, ParamVector};

use super::ClientId;

/// A synchronous-round update: trained parameters and the sender's data size.
#[derive(Debug, Clone, PartialEq)]
pub struct SizedUpdate {
    pub sender: ClientId,
    pub params: ParamVector,
    pub data_size: usize,
}

fn check_lengths(own: &ParamVector, received: &[SizedUpdate]) -> Result<()> {
    for r in received {
        if r.params.len() != own.len() {
            return Err(Error::LengthMismatch {
                expected: own.len(),
                found: r.params.len(),
            });
        }
    }
    Ok(())
}

/// Data-size-weighted mean over the received updates and our own.
pub fn dfl_aggregate(own: &SizedUpdate, received: &[SizedUpdate]) -> Result<ParamVector> {
    check_lengths(&own.params, received)?;
    weighted_mean(
        std::iter::once(own)
            .chain(received)
            .map(|u| (&u.params, u.data_size as f64)),
    )
}

/// Similarity weight of each received update, measured on deltas from `checkpoint`.
pub fn cossim_weights(checkpoint: &ParamVector, own: &SizedUpdate, received: &[SizedUpdate]) -> Result<Vec<f64>> {
    received
        .iter()
        .map(|r| scaled_similarity_from_baseline(&own.params, &r.params, checkpoint))
        .collect()
}

/// Weighted mean with weights `|D_k| * omega_k`, where `omega_k` is the scaled
/// similarity of update `k`'s delta from `checkpoint` to our own delta and
/// our own weight is 1. Falls back to our own update when every weight is zero.
pub fn cossim_dfl_aggregate(
    checkpoint: &ParamVector,
    own: &SizedUpdate,
    received: &[SizedUpdate],
) -> Result<ParamVector> {
    check_lengths(&own.params, received)?;
    if checkpoint.len() != own.params.len() {
        return Err(Error::LengthMismatch {
            expected: own.params.len(),
            found: checkpoint.len(),
        });
    }
    let omegas = cossim_weights(checkpoint, own, received)?;
    let weights: Vec<f64> = std::iter::once(own.data_size as f64)
        .chain(received.iter().zip(&omegas).map(|(r, w)| r.data_size as f64 * w))
        .collect();
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(own.params.clone());
    }
    weighted_mean(
        std::iter::once(&own.params)
            .chain(received.iter().map(|r| &r.params))
            .zip(weights),
    )
}

/// Server-side weighted mean. `None` when nothing arrived, in which case the
/// server keeps its previous global model.
pub fn fedavg_server_aggregate(received: &[SizedUpdate]) -> Result<Option<ParamVector>> {
    let Some(first) = received.first() else {
        return Ok(None);
    };
    check_lengths(&first.params, received)?;
    weighted_mean(received.iter().map(|u| (&u.params, u.data_size as f64))).map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DflMode {
    Plain,
    CosSim,
}

/// A synchronous DFL or CosSimDFL client. Received updates are buffered as
/// owned copies until the round's aggregation.
#[derive(Debug, Clone)]
pub struct DflState {
    id: ClientId,
    params: ParamVector,
    checkpoint: Option<ParamVector>,
    data_size: usize,
    buffer: Vec<SizedUpdate>,
}

impl DflState {
    pub fn new(id: ClientId, init: &ParamVector, data_size: usize, mode: DflMode) -> Self {
        Self {
            id,
            params: init.clone(),
            checkpoint: (mode == DflMode::CosSim).then(|| init.clone()),
            data_size,
            buffer: Vec::new(),
        }
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn mode(&self) -> DflMode {
        if self.checkpoint.is_some() {
            DflMode::CosSim
        } else {
            DflMode::Plain
        }
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Model, optional checkpoint, and every buffered update.
    pub fn resident_vectors(&self) -> usize {
        1 + usize::from(self.checkpoint.is_some()) + self.buffer.len()
    }

    /// Trains from the round-start parameters, which become the checkpoint
    /// in CosSim mode.
    pub fn train(&mut self, model: &ModelSpec, data: &Dataset, hyper: &Hyperparams, seed: u64) -> Result<()> {
        let trained = model.train(&self.params, data, hyper, seed)?;
        if let Some(ckpt) = self.checkpoint.as_mut() {
            ckpt.copy_from(&self.params)?;
        }
        self.params = trained;
        Ok(())
    }

    pub fn build_update(&self) -> SizedUpdate {
        SizedUpdate {
            sender: self.id,
            params: self.params.clone(),
            data_size: self.data_size,
        }
    }

    pub fn receive(&mut self, update: SizedUpdate) -> Result<()> {
        check_lengths(&self.params, std::slice::from_ref(&update))?;
        self.buffer.push(update);
        Ok(())
    }

    /// Aggregates the buffer into the model and clears it. Returns how many
    /// buffered updates carried non-zero weight.
    pub fn aggregate(&mut self) -> Result<usize> {
        let own = SizedUpdate {
            sender: self.id,
            params: std::mem::replace(&mut self.params, ParamVector::zeros(0)),
            data_size: self.data_size,
        };
        let result = match &self.checkpoint {
            None => {
                dfl_aggregate(&own, &self.buffer).map(|p| (p, self.buffer.iter().filter(|u| u.data_size > 0).count()))
            }
            Some(ckpt) => cossim_weights(ckpt, &own, &self.buffer).and_then(|omegas| {
                let used = self
                    .buffer
                    .iter()
                    .zip(&omegas)
                    .filter(|(u, w)| u.data_size as f64 * **w > 0.0)
                    .count();
                cossim_dfl_aggregate(ckpt, &own, &self.buffer).map(|p| (p, used))
            }),
        };
        match result {
            Ok((params, used)) => {
                self.params = params;
                self.buffer.clear();
                Ok(used)
            }
            Err(e) => {
                self.params = own.params;
                Err(e)
            }
        }
    }
}

/// Central FedAvg server.
#[derive(Debug, Clone)]
pub struct FedAvgServer {
    global: ParamVector,
    buffer: Vec<SizedUpdate>,
}

impl FedAvgServer {
    pub fn new(init: &ParamVector) -> Self {
        Self {
            global: init.clone(),
            buffer: Vec::new(),
        }
    }

    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    pub fn receive(&mut self, update: SizedUpdate) -> Result<()> {
        check_lengths(&self.global, std::slice::from_ref(&update))?;
        self.buffer.push(update);
        Ok(())
    }

    /// Replaces the global model with the mean of this round's uploads, if
    /// any arrived. Returns the number aggregated.
    pub fn aggregate(&mut self) -> Result<usize> {
        let n = self.buffer.len();
        if let Some(global) = fedavg_server_aggregate(&self.buffer)? {
            self.global = global;
        }
        self.buffer.clear();
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(sender: ClientId, v: &[f64], size: usize) -> SizedUpdate {
        SizedUpdate {
            sender,
            params: ParamVector::new(v.to_vec()).unwrap(),
            data_size: size,
        }
    }

    fn close(a: &ParamVector, b: &[f64]) -> bool {
        a.as_slice().iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn dfl_examples() {
        let own = upd(0, &[0.0, 2.0], 5);
        assert!(close(
            &dfl_aggregate(&own, &[upd(1, &[2.0, 0.0], 5)]).unwrap(),
            &[1.0, 1.0]
        ));
        let own = upd(0, &[0.0, 4.0], 1);
        assert!(close(
            &dfl_aggregate(&own, &[upd(1, &[4.0, 0.0], 3)]).unwrap(),
            &[3.0, 1.0]
        ));
        assert_eq!(dfl_aggregate(&own, &[]).unwrap(), own.params);
        assert!(dfl_aggregate(&upd(0, &[1.0], 0), &[upd(1, &[2.0], 0)]).is_err());
    }

    #[test]
    fn cossim_self_only_and_zero_weight() {
        let ckpt = ParamVector::zeros(2);
        let own = upd(0, &[1.0, 0.0], 4);
        assert_eq!(cossim_dfl_aggregate(&ckpt, &own, &[]).unwrap(), own.params);
        // Exactly opposite delta: omega = 0, contributes nothing.
        let opposed = upd(1, &[-1.0, 0.0], 100);
        assert!(close(
            &cossim_dfl_aggregate(&ckpt, &own, &[opposed]).unwrap(),
            &[1.0, 0.0]
        ));
        // All weights zero: fall back to own update.
        let empty_own = upd(0, &[1.0, 0.0], 0);
        assert_eq!(
            cossim_dfl_aggregate(&ckpt, &empty_own, &[upd(1, &[-1.0, 0.0], 3)]).unwrap(),
            empty_own.params
        );
    }

    #[test]
    fn cossim_equals_dfl_when_aligned() {
        let ckpt = ParamVector::zeros(2);
        let own = upd(0, &[1.0, 1.0], 2);
        let others = [upd(1, &[2.0, 2.0], 3), upd(2, &[0.5, 0.5], 7)];
        let a = cossim_dfl_aggregate(&ckpt, &own, &others).unwrap();
        let b = dfl_aggregate(&own, &others).unwrap();
        assert!(close(&a, b.as_slice()));
    }

    #[test]
    fn fedavg_examples() {
        assert_eq!(fedavg_server_aggregate(&[]).unwrap(), None);
        let single = upd(0, &[3.0, -1.0], 9);
        assert_eq!(
            fedavg_server_aggregate(std::slice::from_ref(&single)).unwrap(),
            Some(single.params.clone())
        );
        let three = [upd(0, &[10.0], 10), upd(1, &[20.0], 30), upd(2, &[30.0], 60)];
        let g = fedavg_server_aggregate(&three).unwrap().unwrap();
        assert!((g.as_slice()[0] - (0.1 * 10.0 + 0.3 * 20.0 + 0.6 * 30.0)).abs() < 1e-12);
    }

    #[test]
    fn server_keeps_model_without_uploads() {
        let init = ParamVector::new(vec![1.0, 2.0]).unwrap();
        let mut server = FedAvgServer::new(&init);
        assert_eq!(server.aggregate().unwrap(), 0);
        assert_eq!(server.global(), &init);
        server.receive(upd(3, &[3.0, 4.0], 1)).unwrap();
        assert_eq!(server.aggregate().unwrap(), 1);
        assert_eq!(server.global().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn state_buffers_and_clears() {
        let init = ParamVector::zeros(2);
        let mut s = DflState::new(0, &init, 4, DflMode::CosSim);
        assert_eq!(s.resident_vectors(), 2);
        s.receive(upd(1, &[1.0, 1.0], 4)).unwrap();
        s.receive(upd(2, &[1.0, 3.0], 4)).unwrap();
        assert_eq!(s.buffered(), 2);
        assert_eq!(s.resident_vectors(), 4);
        assert!(s.receive(upd(3, &[1.0], 4)).is_err());
        s.aggregate().unwrap();
        assert_eq!(s.buffered(), 0);
        assert_eq!(s.resident_vectors(), 2);
    }
}
