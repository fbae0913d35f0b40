//! Synthetic heterogeneous client datasets.
//!
//! Two scenario families:
//!
//! - **label swap**: a shared Gaussian-blob classification problem where each
//!   group of clients relabels the blobs through its own set of swapped
//!   label pairs, so groups disagree about the conditional label
//!   distribution at the same feature locations;
//! - **regression**: each group has its own linear ground truth
//!   `w_g = w_base + shift_g` with `||shift_g|| = group_shift`.
//!
//! Clients are assigned to groups round-robin (`client % n_groups`).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, invalid_config, Result};
use crate::models::{Dataset, Targets};
use crate::streams::{stream, sub_seed, Purpose};

/// Radius of the circle the blob centres sit on.
pub const BLOB_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    LabelSwap,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub n_clients: usize,
    pub n_groups: usize,
    /// Mean number of samples per client (train + eval).
    pub samples_mean: usize,
    /// Client sizes are uniform in `samples_mean * [1 - spread, 1 + spread]`.
    pub samples_spread: f64,
    pub input_dim: usize,
    /// Label-swap only.
    pub n_classes: usize,
    /// Per-group label pairs to swap. `None` means group `g` swaps `(2g, 2g + 1)`.
    pub swap_pairs: Option<Vec<Vec<(usize, usize)>>>,
    /// Regression only.
    pub output_dim: usize,
    /// Regression only: norm of each group's ground-truth perturbation.
    pub group_shift: f64,
    /// Regression only: standard deviation of additive target noise.
    pub noise_std: f64,
    /// Fraction of each client's samples held out for evaluation.
    pub eval_fraction: f64,
    /// Set by the engine from the experiment seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::LabelSwap,
            n_clients: 20,
            n_groups: 2,
            samples_mean: 40,
            samples_spread: 0.5,
            input_dim: 8,
            n_classes: 4,
            swap_pairs: None,
            output_dim: 1,
            group_shift: 1.0,
            noise_std: 0.1,
            eval_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub group_id: usize,
    pub train: Dataset,
    pub eval: Dataset,
}

impl ScenarioConfig {
    pub fn group_of(&self, client: usize) -> usize {
        client % self.n_groups
    }

    pub fn groups(&self) -> Vec<usize> {
        (0..self.n_clients).map(|c| self.group_of(c)).collect()
    }

    /// Label pairs swapped by each group.
    pub fn resolved_swap_pairs(&self) -> Vec<Vec<(usize, usize)>> {
        match &self.swap_pairs {
            Some(p) => p.clone(),
            None => (0..self.n_groups).map(|g| vec![(2 * g, 2 * g + 1)]).collect(),
        }
    }

    /// `map[c]` is the label group `group` assigns to blob `c`.
    pub fn label_map(&self, group: usize) -> Vec<usize> {
        let mut map: Vec<usize> = (0..self.n_classes).collect();
        if let Some(pairs) = self.resolved_swap_pairs().get(group) {
            for &(a, b) in pairs {
                map.swap(a, b);
            }
        }
        map
    }

    fn size_bounds(&self) -> (usize, usize) {
        let m = self.samples_mean as f64;
        let lo = (m * (1.0 - self.samples_spread)).ceil() as usize;
        let hi = (m * (1.0 + self.samples_spread)).floor() as usize;
        (lo, hi.max(lo))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.n_groups == 0 {
            return Err(invalid_config("n_clients and n_groups must be positive"));
        }
        if self.n_groups > self.n_clients {
            return Err(invalid_config(format!(
                "n_groups {} exceeds n_clients {}",
                self.n_groups, self.n_clients
            )));
        }
        if !(0.0..1.0).contains(&self.samples_spread) {
            return Err(invalid_config("samples_spread must be in [0, 1)"));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(invalid_config("eval_fraction must be in (0, 1)"));
        }
        if self.input_dim == 0 {
            return Err(invalid_config("input_dim must be positive"));
        }
        let (lo, _) = self.size_bounds();
        let min_train = ((1.0 - self.eval_fraction) * lo as f64).ceil() as usize;
        if lo < 2 || min_train >= lo {
            return Err(invalid_config(format!(
                "smallest client ({lo} samples) cannot be split into non-empty train and eval sets"
            )));
        }
        match self.kind {
            ScenarioKind::LabelSwap => {
                if self.n_classes < 2 {
                    return Err(invalid_config("n_classes must be at least 2"));
                }
                if self.input_dim < 2 {
                    return Err(invalid_config("label-swap blobs need input_dim >= 2"));
                }
                let pairs = self.resolved_swap_pairs();
                if pairs.len() > self.n_groups {
                    return Err(invalid_config(format!(
                        "swap_pairs lists {} groups but n_groups is {}",
                        pairs.len(),
                        self.n_groups
                    )));
                }
                for (g, list) in pairs.iter().enumerate() {
                    for &(a, b) in list {
                        if a >= self.n_classes || b >= self.n_classes || a == b {
                            return Err(invalid_config(format!(
                                "group {g} swap pair ({a}, {b}) is not a pair of distinct classes below {}",
                                self.n_classes
                            )));
                        }
                    }
                }
            }
            ScenarioKind::Regression => {
                if self.output_dim == 0 {
                    return Err(invalid_config("output_dim must be positive"));
                }
                if !(self.group_shift >= 0.0 && self.noise_std >= 0.0) {
                    return Err(invalid_config("group_shift and noise_std must be non-negative"));
                }
            }
        }
        Ok(())
    }

    fn client_size(&self, client: usize) -> usize {
        let (lo, hi) = self.size_bounds();
        stream(self.seed, Purpose::Data, 0, client as u64).random_range(lo..=hi)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Centre of blob `class` among `n_classes`, in the first two input dimensions.
pub fn blob_center(class: usize, n_classes: usize) -> [f64; 2] {
    let angle = std::f64::consts::TAU * class as f64 / n_classes as f64;
    [BLOB_RADIUS * angle.cos(), BLOB_RADIUS * angle.sin()]
}

pub fn generate_label_swap_scenario(config: &ScenarioConfig) -> Result<Vec<ClientDataset>> {
    if config.kind != ScenarioKind::LabelSwap {
        return Err(invalid_config("generate_label_swap_scenario needs kind = label-swap"));
    }
    config.validate()?;
    let maps: Vec<Vec<usize>> = (0..config.n_groups).map(|g| config.label_map(g)).collect();
    (0..config.n_clients)
        .map(|client| {
            let group = config.group_of(client);
            let n = config.client_size(client);
            let mut rng = stream(config.seed, Purpose::Data, 1, client as u64);
            let mut inputs = Vec::with_capacity(n * config.input_dim);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let blob = rng.random_range(0..config.n_classes);
                let center = blob_center(blob, config.n_classes);
                for d in 0..config.input_dim {
                    let offset = center.get(d).copied().unwrap_or(0.0);
                    inputs.push(offset + normal(&mut rng));
                }
                labels.push(maps[group][blob]);
            }
            let data = Dataset::new(config.input_dim, inputs, Targets::Classes(labels))?;
            finish_client(config, client, group, data)
        })
        .collect()
}

/// Ground-truth weight matrix (`output_dim x input_dim`, row-major) per group.
pub fn regression_ground_truth(config: &ScenarioConfig) -> Vec<Vec<f64>> {
    let len = config.output_dim * config.input_dim;
    let mut rng = stream(config.seed, Purpose::GroupShift, 0, 0);
    let base: Vec<f64> = (0..len).map(|_| normal(&mut rng)).collect();
    (0..config.n_groups)
        .map(|g| {
            let mut rng = stream(config.seed, Purpose::GroupShift, 1, g as u64);
            let mut dir: Vec<f64> = (0..len).map(|_| normal(&mut rng)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = if norm > 0.0 { config.group_shift / norm } else { 0.0 };
            for d in dir.iter_mut() {
                *d *= scale;
            }
            base.iter().zip(&dir).map(|(b, s)| b + s).collect()
        })
        .collect()
}

pub fn generate_regression_scenario(config: &ScenarioConfig) -> Result<Vec<ClientDataset>> {
    if config.kind != ScenarioKind::Regression {
        return Err(invalid_config("generate_regression_scenario needs kind = regression"));
    }
    config.validate()?;
    let truths = regression_ground_truth(config);
    let (i_dim, o_dim) = (config.input_dim, config.output_dim);
    (0..config.n_clients)
        .map(|client| {
            let group = config.group_of(client);
            let w = &truths[group];
            let n = config.client_size(client);
            let mut rng = stream(config.seed, Purpose::Data, 2, client as u64);
            let mut inputs = Vec::with_capacity(n * i_dim);
            let mut values = Vec::with_capacity(n * o_dim);
            for _ in 0..n {
                let start = inputs.len();
                for _ in 0..i_dim {
                    inputs.push(normal(&mut rng));
                }
                let x = &inputs[start..];
                for u in 0..o_dim {
                    let clean: f64 = w[u * i_dim..(u + 1) * i_dim].iter().zip(x).map(|(a, b)| a * b).sum();
                    values.push(clean + config.noise_std * normal(&mut rng));
                }
            }
            let data = Dataset::new(i_dim, inputs, Targets::Values { dim: o_dim, values })?;
            finish_client(config, client, group, data)
        })
        .collect()
}

/// Dispatches on `config.kind`.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Vec<ClientDataset>> {
    match config.kind {
        ScenarioKind::LabelSwap => generate_label_swap_scenario(config),
        ScenarioKind::Regression => generate_regression_scenario(config),
    }
}

fn finish_client(config: &ScenarioConfig, client: usize, group: usize, data: Dataset) -> Result<ClientDataset> {
    let seed = sub_seed(config.seed, Purpose::Split, client as u64, 0);
    let (train, eval) = split_train_eval(&data, config.eval_fraction, seed)?;
    Ok(ClientDataset {
        client_id: client,
        group_id: group,
        train,
        eval,
    })
}

/// Shuffled disjoint split into `ceil((1 - f) n)` training samples and the
/// remainder for evaluation.
pub fn split_train_eval(data: &Dataset, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if n < 2 {
        return Err(invalid("split needs at least 2 samples"));
    }
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(invalid(format!("eval_fraction {eval_fraction} outside (0, 1)")));
    }
    let n_train = ((1.0 - eval_fraction) * n as f64).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(invalid(format!(
            "split of {n} samples at fraction {eval_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Split, 0, 0));
    let (train_idx, eval_idx) = order.split_at(n_train);
    Ok((data.subset(train_idx), data.subset(eval_idx)))
}
