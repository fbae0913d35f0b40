//! Deterministic round-based experiment driver.
//!
//! Each round every client trains once and broadcasts once to its topology
//! neighbours (FedAvg clients talk to the server instead). Gossip and Chisme
//! merge each delivered message as it arrives; DFL, CosSimDFL and FedAvg
//! buffer until the end of the round. Every client is evaluated on its own
//! held-out data after the round.
//!
//! All randomness comes from named sub-streams of the master seed, so a run
//! is a pure function of its [`ExperimentConfig`] and paradigms sharing a
//! seed see identical datasets, topology, initial model and training shuffles.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{generate_scenario, ClientDataset, ScenarioConfig, ScenarioKind};
use crate::error::{at_key, invalid, Result};
use crate::models::{Dataset, Hyperparams, ModelKind, ModelSpec, Targets};
use crate::network::{ReliabilityModel, Topology, DEFAULT_REWIRE_PROB};
use crate::paramvec::{delta, instrument, scaled_similarity, ParamVector};
use crate::protocol::{
    ChismeState, DflMode, DflState, ExperienceRule, FedAvgServer, GossipState, SizedUpdate, UpdateMessage,
};
use crate::streams::{stream, sub_seed, Purpose};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    #[default]
    Chisme,
    Gossip,
    Dfl,
    CosSimDfl,
    FedAvg,
    Local,
}

impl Paradigm {
    pub const ALL: [Paradigm; 6] = [
        Paradigm::Chisme,
        Paradigm::Gossip,
        Paradigm::Dfl,
        Paradigm::CosSimDfl,
        Paradigm::FedAvg,
        Paradigm::Local,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Chisme => "chisme",
            Paradigm::Gossip => "gossip",
            Paradigm::Dfl => "dfl",
            Paradigm::CosSimDfl => "cossimdfl",
            Paradigm::FedAvg => "fedavg",
            Paradigm::Local => "local",
        }
    }

    /// Peer-to-peer paradigms that send over the topology.
    pub fn is_decentralized(self) -> bool {
        matches!(
            self,
            Paradigm::Chisme | Paradigm::Gossip | Paradigm::Dfl | Paradigm::CosSimDfl
        )
    }
}

impl std::fmt::Display for Paradigm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Paradigm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Paradigm::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            invalid(format!(
                "unknown paradigm `{s}` (expected one of chisme, gossip, dfl, cossimdfl, fedavg, local)"
            ))
        })
    }
}

/// Order of training and delivery within a round for gossip and Chisme.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Clients act in a freshly shuffled order each round; each trains and
    /// then broadcasts, and receivers merge immediately.
    #[default]
    Interleaved,
    /// Everyone trains first, then clients broadcast in shuffled order.
    TrainThenDeliver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Only used by the MLP.
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::SoftmaxClassifier,
            hidden_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// 0 is a ring, 1 the complete graph.
    pub connectivity: f64,
    /// Per-message delivery probability.
    pub reliability: f64,
    pub rewire_prob: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            connectivity: 1.0,
            reliability: 1.0,
            rewire_prob: DEFAULT_REWIRE_PROB,
        }
    }
}

/// Everything that determines a run. The topology has one node per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub paradigm: Paradigm,
    pub rounds: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub experience_rule: ExperienceRule,
    pub scenario: ScenarioConfig,
    pub model: ModelConfig,
    pub hyper: Hyperparams,
    pub network: NetworkConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paradigm: Paradigm::Chisme,
            rounds: 30,
            seed: 1,
            schedule: Schedule::Interleaved,
            experience_rule: ExperienceRule::EpochScaled,
            scenario: ScenarioConfig::default(),
            model: ModelConfig::default(),
            hyper: Hyperparams::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Scenario with the experiment seed applied.
    pub fn seeded_scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            seed: self.seed,
            ..self.scenario.clone()
        }
    }

    /// Model dimensions follow from the scenario.
    pub fn model_spec(&self) -> ModelSpec {
        let s = &self.scenario;
        let output_dim = match s.kind {
            ScenarioKind::LabelSwap => s.n_classes,
            ScenarioKind::Regression => s.output_dim,
        };
        ModelSpec {
            kind: self.model.kind,
            input_dim: s.input_dim,
            output_dim,
            hidden_dim: self.model.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(at_key("rounds", invalid("must be at least 1")));
        }
        self.scenario.validate().map_err(|e| at_key("scenario", e))?;
        self.hyper.validate().map_err(|e| at_key("hyper", e))?;
        if self.hyper.learning_rate == 0.0 {
            return Err(at_key("hyper.learning_rate", invalid("must be positive")));
        }
        let kind_ok = match self.scenario.kind {
            ScenarioKind::LabelSwap => self.model.kind != ModelKind::LinearRegression,
            ScenarioKind::Regression => self.model.kind != ModelKind::SoftmaxClassifier,
        };
        if !kind_ok {
            return Err(at_key(
                "model.kind",
                invalid(format!(
                    "{:?} cannot fit a {:?} scenario",
                    self.model.kind, self.scenario.kind
                )),
            ));
        }
        self.model_spec().validate().map_err(|e| at_key("model", e))?;
        let net = &self.network;
        for (key, v) in [
            ("network.connectivity", net.connectivity),
            ("network.reliability", net.reliability),
            ("network.rewire_prob", net.rewire_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(at_key(key, invalid(format!("{v} outside [0, 1]"))));
            }
        }
        if self.scenario.n_clients < 3 {
            return Err(at_key(
                "scenario.n_clients",
                invalid("topology needs at least 3 clients"),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Attempted transmissions over a whole run.
pub fn message_budget(config: &ExperimentConfig) -> Result<u64> {
    config.validate()?;
    let t = config.rounds as u64;
    let n = config.scenario.n_clients as u64;
    Ok(match config.paradigm {
        Paradigm::Local => 0,
        Paradigm::FedAvg => 2 * n * t,
        _ => t * build_topology(config)?.total_degree() as u64,
    })
}

fn build_topology(config: &ExperimentConfig) -> Result<Topology> {
    Topology::watts_strogatz(
        config.scenario.n_clients,
        config.network.connectivity,
        config.network.rewire_prob,
        sub_seed(config.seed, Purpose::Topology, 0, 0),
    )
    .map_err(|e| at_key("network", e))
}

/// Metrics after one round. Message counts are cumulative.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    pub client_losses: Vec<f64>,
    pub mean_loss: f64,
    /// Population standard deviation across clients.
    pub std_loss: f64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    /// Incorporations that moved a model: merges with non-zero weight,
    /// buffered updates with non-zero aggregation weight, or FedAvg downlinks.
    pub merges_applied: u64,
    /// Mean pairwise scaled similarity of this round's training deltas
    /// within groups, when every group has at least two clients and there
    /// are at least two groups.
    pub intra_sim: Option<f64>,
    pub inter_sim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub paradigm: Paradigm,
    pub config_digest: String,
    pub dataset_digest: String,
    pub rounds: Vec<RoundMetrics>,
}

pub const CSV_HEADER: &str = "round,mean_loss,std_loss,messages_sent,merges_applied,intra_sim,inter_sim";

/// 17 significant digits in scientific notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

impl MetricsTable {
    pub fn final_round(&self) -> &RoundMetrics {
        self.rounds.last().expect("at least one round")
    }

    /// First round whose mean loss is below `threshold`.
    pub fn rounds_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.rounds.iter().find(|r| r.mean_loss < threshold).map(|r| r.round)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rounds.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rounds {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.round,
                format_float(r.mean_loss),
                format_float(r.std_loss),
                r.messages_sent,
                r.merges_applied,
                format_opt(r.intra_sim),
                format_opt(r.inter_sim),
            );
        }
        s
    }
}

/// Peak parameter-vector counts observed while running.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryReport {
    /// Most full vectors one client held during any single event, counting
    /// its resident state, a message it was handed and any temporaries.
    pub max_client_vectors: usize,
    /// Most updates buffered by one client before aggregation.
    pub max_buffered_updates: usize,
}

/// Mean pairwise scaled similarity of `deltas` within and across groups.
pub fn affinity_audit(deltas: &[ParamVector], groups: &[usize]) -> Result<(f64, f64)> {
    if deltas.len() != groups.len() {
        return Err(invalid(format!(
            "{} deltas but {} group labels",
            deltas.len(),
            groups.len()
        )));
    }
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    let mut sizes = vec![0usize; n_groups];
    for &g in groups {
        sizes[g] += 1;
    }
    let populated: Vec<usize> = sizes.iter().copied().filter(|&s| s > 0).collect();
    if populated.len() < 2 || populated.iter().any(|&s| s < 2) {
        return Err(invalid(
            "affinity audit needs at least two groups of at least two clients",
        ));
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..deltas.len() {
        for j in i + 1..deltas.len() {
            let s = scaled_similarity(&deltas[i], &deltas[j])?;
            if groups[i] == groups[j] {
                intra += s;
                n_intra += 1;
            } else {
                inter += s;
                n_inter += 1;
            }
        }
    }
    Ok((intra / n_intra as f64, inter / n_inter as f64))
}

/// Hex SHA-256 over every client's train and eval samples.
pub fn dataset_digest(clients: &[ClientDataset]) -> String {
    fn feed(h: &mut Sha256, d: &Dataset) {
        h.update((d.len() as u64).to_le_bytes());
        for x in d.inputs() {
            h.update(x.to_bits().to_le_bytes());
        }
        match d.targets() {
            Targets::Classes(c) => {
                for &k in c {
                    h.update((k as u64).to_le_bytes());
                }
            }
            Targets::Values { values, .. } => {
                for v in values {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
    }
    let mut h = Sha256::new();
    for c in clients {
        h.update((c.client_id as u64).to_le_bytes());
        h.update((c.group_id as u64).to_le_bytes());
        feed(&mut h, &c.train);
        feed(&mut h, &c.eval);
    }
    hex::encode(h.finalize())
}

/// A validated experiment with its data, topology and initial model built.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    model: ModelSpec,
    clients: Vec<ClientDataset>,
    topology: Topology,
    init: ParamVector,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let clients = generate_scenario(&config.seeded_scenario())?;
        Self::with_datasets(config, clients)
    }

    /// Uses the given client datasets instead of generating them. Client
    /// `i` must be at index `i`.
    pub fn with_datasets(config: ExperimentConfig, clients: Vec<ClientDataset>) -> Result<Self> {
        config.validate()?;
        if clients.len() != config.scenario.n_clients {
            return Err(at_key(
                "scenario.n_clients",
                invalid(format!(
                    "{} datasets supplied for {} clients",
                    clients.len(),
                    config.scenario.n_clients
                )),
            ));
        }
        if clients.iter().enumerate().any(|(i, c)| c.client_id != i) {
            return Err(invalid("client datasets must be ordered by client id"));
        }
        let model = config.model_spec();
        let topology = build_topology(&config)?;
        let init = model.init_params(sub_seed(config.seed, Purpose::Init, 0, 0));
        Ok(Self {
            config,
            model,
            clients,
            topology,
            init,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn clients(&self) -> &[ClientDataset] {
        &self.clients
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn initial_params(&self) -> &ParamVector {
        &self.init
    }

    pub fn run(&self) -> Result<(MetricsTable, MemoryReport)> {
        Runner::new(self)?.run()
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsTable> {
    Ok(run_experiment_with_probe(config)?.0)
}

/// Also reports the memory high-water marks.
pub fn run_experiment_with_probe(config: &ExperimentConfig) -> Result<(MetricsTable, MemoryReport)> {
    Experiment::new(config.clone())?.run()
}

enum Clients {
    Chisme(Vec<ChismeState>),
    Gossip(Vec<GossipState>),
    Dfl(Vec<DflState>),
    FedAvg {
        models: Vec<ParamVector>,
        server: FedAvgServer,
    },
    Local(Vec<GossipState>),
}

#[derive(Default)]
struct Tally {
    sent: u64,
    delivered: u64,
    merges: u64,
    memory: MemoryReport,
}

impl Tally {
    /// Runs one client event and records how many vectors the client held.
    fn probe<T>(&mut self, held: usize, event: impl FnOnce() -> Result<T>) -> Result<T> {
        let window = instrument::Window::open();
        let out = event()?;
        self.memory.max_client_vectors = self.memory.max_client_vectors.max(held + window.extra_peak());
        Ok(out)
    }
}

struct Runner<'a> {
    exp: &'a Experiment,
    reliability: ReliabilityModel,
    clients: Clients,
    tally: Tally,
    groups: Vec<usize>,
    audit: bool,
}

impl<'a> Runner<'a> {
    fn new(exp: &'a Experiment) -> Result<Self> {
        let cfg = &exp.config;
        let init = &exp.init;
        let n = exp.clients.len();
        let rule = cfg.experience_rule;
        let clients = match cfg.paradigm {
            Paradigm::Chisme => Clients::Chisme((0..n).map(|i| ChismeState::new(i, init, rule)).collect()),
            Paradigm::Gossip => Clients::Gossip((0..n).map(|i| GossipState::new(i, init, rule)).collect()),
            Paradigm::Local => Clients::Local((0..n).map(|i| GossipState::new(i, init, rule)).collect()),
            Paradigm::Dfl | Paradigm::CosSimDfl => {
                let mode = if cfg.paradigm == Paradigm::Dfl {
                    DflMode::Plain
                } else {
                    DflMode::CosSim
                };
                Clients::Dfl(
                    exp.clients
                        .iter()
                        .map(|c| DflState::new(c.client_id, init, c.train.len(), mode))
                        .collect(),
                )
            }
            Paradigm::FedAvg => Clients::FedAvg {
                models: vec![init.clone(); n],
                server: FedAvgServer::new(init),
            },
        };
        let groups: Vec<usize> = exp.clients.iter().map(|c| c.group_id).collect();
        let audit = {
            let mut sizes = vec![0usize; groups.iter().max().map_or(0, |g| g + 1)];
            for &g in &groups {
                sizes[g] += 1;
            }
            sizes.len() >= 2 && sizes.iter().all(|&s| s >= 2)
        };
        Ok(Self {
            exp,
            reliability: ReliabilityModel::new(cfg.network.reliability)?,
            clients,
            tally: Tally::default(),
            groups,
            audit,
        })
    }

    fn train_seed(&self, client: usize, round: usize) -> u64 {
        sub_seed(self.exp.config.seed, Purpose::Training, client as u64, round as u64)
    }

    fn permutation(&self, round: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.exp.clients.len()).collect();
        order.shuffle(&mut stream(self.exp.config.seed, Purpose::Schedule, round as u64, 0));
        order
    }

    fn params_of(&self, i: usize) -> &ParamVector {
        match &self.clients {
            Clients::Chisme(c) => c[i].params(),
            Clients::Gossip(c) | Clients::Local(c) => c[i].params(),
            Clients::Dfl(c) => c[i].params(),
            Clients::FedAvg { models, .. } => &models[i],
        }
    }

    /// Trains client `i` and returns its training delta if auditing.
    fn train(&mut self, i: usize, round: usize) -> Result<Option<ParamVector>> {
        let before = self.audit.then(|| self.params_of(i).clone());
        let seed = self.train_seed(i, round);
        let exp = self.exp;
        let (model, data, hyper) = (&exp.model, &exp.clients[i].train, &exp.config.hyper);
        let tally = &mut self.tally;
        match &mut self.clients {
            Clients::Chisme(c) => {
                let s = &mut c[i];
                tally.probe(s.resident_vectors(), || s.on_train(model, data, hyper, seed))?
            }
            Clients::Gossip(c) | Clients::Local(c) => {
                let s = &mut c[i];
                tally.probe(s.resident_vectors(), || s.on_train(model, data, hyper, seed))?
            }
            Clients::Dfl(c) => {
                let s = &mut c[i];
                tally.probe(s.resident_vectors(), || s.train(model, data, hyper, seed))?
            }
            Clients::FedAvg { models, .. } => {
                let m = &mut models[i];
                let trained = tally.probe(1, || model.train(m, data, hyper, seed))?;
                *m = trained;
            }
        }
        before.map(|b| delta(self.params_of(i), &b)).transpose()
    }

    /// Broadcasts client `i`'s current model to its neighbours; receivers
    /// merge immediately. Only for gossip and Chisme.
    fn broadcast_immediate(&mut self, i: usize, round: usize) -> Result<()> {
        let exp = self.exp;
        let mut rng = stream(exp.config.seed, Purpose::Delivery, i as u64, round as u64);
        let neighbors = exp.topology.neighbors(i)?;
        let tally = &mut self.tally;
        let msg: UpdateMessage = match &self.clients {
            Clients::Chisme(c) => tally.probe(c[i].resident_vectors(), || Ok(c[i].build_message()))?,
            Clients::Gossip(c) => tally.probe(c[i].resident_vectors(), || Ok(c[i].build_message()))?,
            _ => unreachable!("immediate delivery is only used by gossip paradigms"),
        };
        for &j in neighbors {
            tally.sent += 1;
            if !self.reliability.delivers(&mut rng) {
                continue;
            }
            tally.delivered += 1;
            let weight = match &mut self.clients {
                Clients::Chisme(c) => {
                    let s = &mut c[j];
                    tally.probe(s.resident_vectors() + 1, || s.on_receive(&msg))?.eta
                }
                Clients::Gossip(c) => {
                    let s = &mut c[j];
                    tally.probe(s.resident_vectors() + 1, || s.on_receive(&msg))?
                }
                _ => unreachable!(),
            };
            if weight > 0.0 {
                tally.merges += 1;
            }
        }
        Ok(())
    }

    fn round_gossip(&mut self, round: usize, deltas: &mut [Option<ParamVector>]) -> Result<()> {
        let order = self.permutation(round);
        match self.exp.config.schedule {
            Schedule::Interleaved => {
                for &i in &order {
                    deltas[i] = self.train(i, round)?;
                    self.broadcast_immediate(i, round)?;
                }
            }
            Schedule::TrainThenDeliver => {
                for (i, d) in deltas.iter_mut().enumerate() {
                    *d = self.train(i, round)?;
                }
                for &i in &order {
                    self.broadcast_immediate(i, round)?;
                }
            }
        }
        Ok(())
    }

    fn round_dfl(&mut self, round: usize, deltas: &mut [Option<ParamVector>]) -> Result<()> {
        for (i, d) in deltas.iter_mut().enumerate() {
            *d = self.train(i, round)?;
        }
        let exp = self.exp;
        let order = self.permutation(round);
        let Clients::Dfl(states) = &mut self.clients else {
            unreachable!()
        };
        for &i in &order {
            let update = states[i].build_update();
            let mut rng = stream(exp.config.seed, Purpose::Delivery, i as u64, round as u64);
            for &j in exp.topology.neighbors(i)? {
                self.tally.sent += 1;
                if self.reliability.delivers(&mut rng) {
                    self.tally.delivered += 1;
                    states[j].receive(update.clone())?;
                }
            }
        }
        for s in states.iter_mut() {
            self.tally.memory.max_buffered_updates = self.tally.memory.max_buffered_updates.max(s.buffered());
            let used = self.tally.probe(s.resident_vectors(), || s.aggregate())?;
            self.tally.merges += used as u64;
        }
        Ok(())
    }

    fn round_fedavg(&mut self, round: usize, deltas: &mut [Option<ParamVector>]) -> Result<()> {
        for (i, d) in deltas.iter_mut().enumerate() {
            *d = self.train(i, round)?;
        }
        let exp = self.exp;
        let seed = exp.config.seed;
        let Clients::FedAvg { models, server } = &mut self.clients else {
            unreachable!()
        };
        for (i, m) in models.iter().enumerate() {
            self.tally.sent += 1;
            if self
                .reliability
                .delivers(&mut stream(seed, Purpose::Uplink, i as u64, round as u64))
            {
                self.tally.delivered += 1;
                server.receive(SizedUpdate {
                    sender: i,
                    params: m.clone(),
                    data_size: exp.clients[i].train.len(),
                })?;
            }
        }
        self.tally.memory.max_buffered_updates = self.tally.memory.max_buffered_updates.max(exp.clients.len());
        server.aggregate()?;
        for (i, m) in models.iter_mut().enumerate() {
            self.tally.sent += 1;
            if self
                .reliability
                .delivers(&mut stream(seed, Purpose::Downlink, i as u64, round as u64))
            {
                self.tally.delivered += 1;
                self.tally.merges += 1;
                m.copy_from(server.global())?;
            }
        }
        Ok(())
    }

    fn round_local(&mut self, round: usize, deltas: &mut [Option<ParamVector>]) -> Result<()> {
        for (i, d) in deltas.iter_mut().enumerate() {
            *d = self.train(i, round)?;
        }
        Ok(())
    }

    fn run(mut self) -> Result<(MetricsTable, MemoryReport)> {
        let cfg = &self.exp.config;
        let n = self.exp.clients.len();
        let mut rounds = Vec::with_capacity(cfg.rounds);
        for round in 1..=cfg.rounds {
            let mut deltas: Vec<Option<ParamVector>> = vec![None; n];
            match cfg.paradigm {
                Paradigm::Chisme | Paradigm::Gossip => self.round_gossip(round, &mut deltas)?,
                Paradigm::Dfl | Paradigm::CosSimDfl => self.round_dfl(round, &mut deltas)?,
                Paradigm::FedAvg => self.round_fedavg(round, &mut deltas)?,
                Paradigm::Local => self.round_local(round, &mut deltas)?,
            }
            let client_losses = (0..n)
                .map(|i| self.exp.model.evaluate(self.params_of(i), &self.exp.clients[i].eval))
                .collect::<Result<Vec<f64>>>()?;
            let mean_loss = client_losses.iter().sum::<f64>() / n as f64;
            let var = client_losses.iter().map(|l| (l - mean_loss).powi(2)).sum::<f64>() / n as f64;
            let (intra_sim, inter_sim) = if self.audit {
                let deltas: Vec<ParamVector> = deltas.into_iter().map(|d| d.expect("audited round")).collect();
                let (a, b) = affinity_audit(&deltas, &self.groups)?;
                (Some(a), Some(b))
            } else {
                (None, None)
            };
            rounds.push(RoundMetrics {
                round,
                client_losses,
                mean_loss,
                std_loss: var.sqrt(),
                messages_sent: self.tally.sent,
                messages_delivered: self.tally.delivered,
                merges_applied: self.tally.merges,
                intra_sim,
                inter_sim,
            });
        }
        let table = MetricsTable {
            paradigm: cfg.paradigm,
            config_digest: cfg.digest(),
            dataset_digest: dataset_digest(&self.exp.clients),
            rounds,
        };
        Ok((table, self.tally.memory))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(paradigm: Paradigm) -> ExperimentConfig {
        ExperimentConfig {
            paradigm,
            rounds: 4,
            scenario: ScenarioConfig {
                n_clients: 6,
                samples_mean: 20,
                ..ScenarioConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn paradigm_names_round_trip() {
        for p in Paradigm::ALL {
            assert_eq!(p.name().parse::<Paradigm>().unwrap(), p);
        }
        assert!("sgd".parse::<Paradigm>().is_err());
    }

    #[test]
    fn budget_examples() {
        let mut ring = small(Paradigm::Gossip);
        ring.rounds = 10;
        ring.network.connectivity = 0.0;
        ring.network.rewire_prob = 0.0;
        assert_eq!(message_budget(&ring).unwrap(), 120);
        ring.paradigm = Paradigm::FedAvg;
        assert_eq!(message_budget(&ring).unwrap(), 120);
        ring.paradigm = Paradigm::Local;
        assert_eq!(message_budget(&ring).unwrap(), 0);
    }

    #[test]
    fn recorded_messages_match_budget() {
        for p in Paradigm::ALL {
            let mut cfg = small(p);
            cfg.network.connectivity = 0.5;
            cfg.network.reliability = 0.5;
            let table = run_experiment(&cfg).unwrap();
            let last = table.final_round();
            assert_eq!(last.messages_sent, message_budget(&cfg).unwrap(), "{p}");
            assert!(last.messages_delivered <= last.messages_sent);
            assert!(table
                .rounds
                .windows(2)
                .all(|w| w[0].messages_sent <= w[1].messages_sent));
            assert_eq!(table.rounds.len(), cfg.rounds);
        }
    }

    #[test]
    fn lossless_delivers_everything() {
        let table = run_experiment(&small(Paradigm::Chisme)).unwrap();
        let last = table.final_round();
        assert_eq!(last.messages_delivered, last.messages_sent);
    }

    #[test]
    fn zero_reliability_collapses_to_local() {
        let mut local = small(Paradigm::Local);
        local.network.reliability = 0.0;
        let base = run_experiment(&local).unwrap();
        for p in [
            Paradigm::Chisme,
            Paradigm::Gossip,
            Paradigm::Dfl,
            Paradigm::CosSimDfl,
            Paradigm::FedAvg,
        ] {
            let cfg = ExperimentConfig {
                paradigm: p,
                ..local.clone()
            };
            let t = run_experiment(&cfg).unwrap();
            for (a, b) in t.rounds.iter().zip(&base.rounds) {
                assert_eq!(a.client_losses, b.client_losses, "{p}");
                assert_eq!(a.merges_applied, 0);
            }
        }
    }

    #[test]
    fn local_matches_isolated_sgd() {
        let cfg = small(Paradigm::Local);
        let exp = Experiment::new(cfg.clone()).unwrap();
        let (table, _) = exp.run().unwrap();
        for (i, c) in exp.clients().iter().enumerate() {
            let mut p = exp.initial_params().clone();
            for round in 1..=cfg.rounds {
                p = exp
                    .model()
                    .train(
                        &p,
                        &c.train,
                        &cfg.hyper,
                        sub_seed(cfg.seed, Purpose::Training, i as u64, round as u64),
                    )
                    .unwrap();
                assert_eq!(
                    table.rounds[round - 1].client_losses[i],
                    exp.model().evaluate(&p, &c.eval).unwrap()
                );
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        for p in Paradigm::ALL {
            let cfg = small(p);
            assert_eq!(
                run_experiment(&cfg).unwrap().to_csv(),
                run_experiment(&cfg).unwrap().to_csv()
            );
        }
    }

    #[test]
    fn seed_changes_output() {
        let a = small(Paradigm::Chisme);
        let b = ExperimentConfig { seed: 7, ..a.clone() };
        assert_ne!(
            run_experiment(&a).unwrap().to_csv(),
            run_experiment(&b).unwrap().to_csv()
        );
    }

    #[test]
    fn shared_seed_shares_data() {
        let digests: Vec<String> = Paradigm::ALL
            .iter()
            .map(|&p| run_experiment(&small(p)).unwrap().dataset_digest)
            .collect();
        assert!(digests.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn csv_shape() {
        let t = run_experiment(&small(Paradigm::Gossip)).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 7));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn similarity_columns_absent_for_single_group() {
        let mut cfg = small(Paradigm::Chisme);
        cfg.scenario.n_groups = 1;
        let t = run_experiment(&cfg).unwrap();
        assert!(t.rounds.iter().all(|r| r.intra_sim.is_none() && r.inter_sim.is_none()));
        assert!(t.to_csv().lines().nth(1).unwrap().ends_with(",,"));
    }

    #[test]
    fn audit_examples() {
        let v = |x: &[f64]| ParamVector::new(x.to_vec()).unwrap();
        let same = vec![v(&[1.0, 2.0]); 4];
        let (intra, inter) = affinity_audit(&same, &[0, 0, 1, 1]).unwrap();
        assert!((intra - 1.0).abs() < 1e-12 && (inter - 1.0).abs() < 1e-12);
        let opposed = [v(&[1.0, 0.0]), v(&[1.0, 0.0]), v(&[-1.0, 0.0]), v(&[-1.0, 0.0])];
        let (intra, inter) = affinity_audit(&opposed, &[0, 0, 1, 1]).unwrap();
        assert_eq!((intra, inter), (1.0, 0.0));
        assert!(affinity_audit(&same, &[0, 0, 0, 0]).is_err());
        assert!(affinity_audit(&same[..3], &[0, 0, 1]).is_err());
    }

    #[test]
    fn validation_names_the_key() {
        let cfg = ExperimentConfig {
            rounds: 0,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(crate::Error::Field { key, .. }) if key == "rounds"));
        let mut cfg = ExperimentConfig::default();
        cfg.network.reliability = 1.5;
        assert!(matches!(cfg.validate(), Err(crate::Error::Field { key, .. }) if key == "network.reliability"));
        let mut cfg = ExperimentConfig::default();
        cfg.model.kind = ModelKind::LinearRegression;
        assert!(matches!(cfg.validate(), Err(crate::Error::Field { key, .. }) if key == "model.kind"));
    }

    #[test]
    fn chisme_memory_stays_within_three_vectors() {
        let (_, mem) = run_experiment_with_probe(&small(Paradigm::Chisme)).unwrap();
        assert!(mem.max_client_vectors <= 3, "{mem:?}");
        let (_, mem) = run_experiment_with_probe(&small(Paradigm::Dfl)).unwrap();
        assert_eq!(mem.max_buffered_updates, 5);
    }
}
