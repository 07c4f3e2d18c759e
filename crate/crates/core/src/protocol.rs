//! The round-synchronous protocol: local training, signed prototype
//! exchange over an in-process fully connected bus, canonical aggregation
//! plus mining, and strict-majority block validation.
//!
//! Step 1 is pure per-client work and safe to run concurrently; steps 2-4
//! are orchestrated by a single coordinator that plays the network. All
//! cross-client data moves as immutable messages.

use crate::data::{DataError, LabeledSet};
use crate::identity::{keygen, KeyPair, SignedPrototypeMessage, PUBLIC_KEY_LEN};
use crate::ledger::{hash_payload, mine, pow_target, Block, Chain, LedgerError};
use crate::nn::{self, ModelParams, NnError};
use crate::prototype::{
    aggregate_global, local_prototypes, AggregationRule, Owner, PrototypeSet, ProtoError,
};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("client {client} has an empty training shard")]
    EmptyShard { client: u32 },
    #[error("client {client} holds no verified prototype sets")]
    NothingReceived { client: u32 },
    #[error("round {round} failed: mining exhausted after {trials} trials")]
    MiningExhausted { round: u64, trials: u64 },
    #[error("no clients")]
    NoClients,
}

/// How the mining winner is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WinnerMode {
    /// Winner drawn from a seeded uniform over clients; the expected trial
    /// count `2^difficulty` is charged analytically. Deterministic, and the
    /// default: learning outcomes depend only on the time charged to
    /// mining, not on a hash race.
    #[default]
    Sim,
    /// All clients race real nonce searches; fewest trials wins, ties go to
    /// the lower client id.
    Real,
}

/// Per-round hyperparameters shared by every client.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub local_iterations: u32,
    pub eta: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub difficulty_bits: u32,
    pub mode: WinnerMode,
    pub aggregation: AggregationRule,
    /// Mining bound per client per round (REAL mode fails the round on
    /// exhaustion).
    pub max_mine_trials: u64,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.local_iterations < 1 {
            return Err(ProtocolError::InvalidConfig { field: "local_iterations", reason: "must be at least 1".into() });
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(ProtocolError::InvalidConfig { field: "eta", reason: format!("must be positive, got {}", self.eta) });
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ProtocolError::InvalidConfig {
                field: "lambda",
                reason: format!("must be nonnegative, got {}", self.lambda),
            });
        }
        if self.batch_size < 1 {
            return Err(ProtocolError::InvalidConfig { field: "batch_size", reason: "must be at least 1".into() });
        }
        if self.difficulty_bits > crate::ledger::MAX_DIFFICULTY_BITS {
            return Err(ProtocolError::InvalidConfig { field: "difficulty_bits", reason: "must be at most 255".into() });
        }
        if self.mode == WinnerMode::Sim && self.difficulty_bits >= 63 {
            return Err(ProtocolError::InvalidConfig {
                field: "difficulty_bits",
                reason: "analytic trial charge overflows above 62 bits in SIM mode".into(),
            });
        }
        if self.max_mine_trials == 0 {
            return Err(ProtocolError::InvalidConfig { field: "max_mine_trials", reason: "must be at least 1".into() });
        }
        Ok(())
    }
}

/// Shuffle-once-per-epoch batch cycling: uniform draws without replacement
/// until the shard is exhausted, then a fresh shuffle.
#[derive(Debug, Clone)]
struct BatchSampler {
    rng: StdRng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(seed: u64, len: usize) -> Self {
        Self { rng: StdRng::seed_from_u64(seed), order: (0..len).collect(), cursor: len }
    }

    fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// One node: its dataset shard, parameters, signing identity, the global
/// prototypes it currently trusts, and the verified sets received this
/// round.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: u32,
    pub keys: KeyPair,
    pub params: ModelParams,
    pub train: LabeledSet,
    pub test: LabeledSet,
    /// Global prototypes from the last accepted block; empty before any
    /// block is accepted. Its round tracks the accepted block's round.
    pub stored_global: PrototypeSet,
    /// Signature-verified prototype sets delivered this round.
    pub received: Vec<PrototypeSet>,
    sampler: BatchSampler,
}

impl ClientState {
    pub fn new(
        id: u32,
        key_seed: u64,
        sampler_seed: u64,
        params: ModelParams,
        train: LabeledSet,
        test: LabeledSet,
    ) -> Self {
        let sampler = BatchSampler::new(sampler_seed, train.len());
        Self {
            id,
            keys: keygen(key_seed),
            params,
            train,
            test,
            stored_global: PrototypeSet::new(Owner::Global, 0),
            received: Vec::new(),
            sampler,
        }
    }
}

/// Static, pre-distributed directory of every client's public key.
#[derive(Debug, Clone, Default)]
pub struct PublicKeyDirectory {
    keys: BTreeMap<u32, [u8; PUBLIC_KEY_LEN]>,
}

impl PublicKeyDirectory {
    pub fn from_clients(clients: &[ClientState]) -> Self {
        Self { keys: clients.iter().map(|c| (c.id, c.keys.public())).collect() }
    }

    pub fn get(&self, client: u32) -> Option<&[u8; PUBLIC_KEY_LEN]> {
        self.keys.get(&client)
    }
}

/// What one client's training pass produced, including the per-iteration
/// loss and gradient traces used for monitoring and for the empirical
/// bound proxies.
#[derive(Debug, Clone)]
pub struct TrainingRecord {
    /// Prototypes of the full shard under the final parameters; what the
    /// client broadcasts.
    pub prototypes: PrototypeSet,
    pub classification_loss: Vec<f64>,
    pub alignment_loss: Vec<f64>,
    pub grad_norm_sq: Vec<f64>,
}

/// Step 1: `E` SGD iterations against the stored global prototypes, then a
/// prototype-generation pass over the full shard with the final
/// parameters. Parameters persist on the client into the next round.
pub fn local_training(
    client: &mut ClientState,
    cfg: &RoundConfig,
    global: &PrototypeSet,
    round: u64,
) -> Result<TrainingRecord, ProtocolError> {
    if client.train.is_empty() {
        return Err(ProtocolError::EmptyShard { client: client.id });
    }
    let mut classification_loss = Vec::with_capacity(cfg.local_iterations as usize);
    let mut alignment_loss = Vec::with_capacity(cfg.local_iterations as usize);
    let mut grad_norm_sq = Vec::with_capacity(cfg.local_iterations as usize);
    for _ in 0..cfg.local_iterations {
        let indices = client.sampler.next_batch(cfg.batch_size);
        let batch_set = client.train.subset(&indices)?;
        let batch_protos = local_prototypes(&client.params, &batch_set)?;
        let (grads, loss_s, loss_r) = nn::backward(
            &client.params,
            batch_set.features(),
            batch_set.labels(),
            &batch_protos,
            global,
            cfg.lambda,
        )?;
        client.params = nn::sgd_step(&client.params, &grads, cfg.eta)?;
        classification_loss.push(loss_s);
        alignment_loss.push(loss_r);
        grad_norm_sq.push(grads.norm_sq());
    }
    let mut prototypes = local_prototypes(&client.params, &client.train)?;
    prototypes.set_owner(Owner::Client(client.id));
    prototypes.set_round(round);
    Ok(TrainingRecord { prototypes, classification_loss, alignment_loss, grad_norm_sq })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    BadSignature,
    WrongRound,
    UnknownSender,
    DuplicateSender,
    MalformedPayload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropRecord {
    pub receiver: u32,
    pub claimed_sender: u32,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default)]
pub struct ExchangeReport {
    pub stored_per_client: Vec<usize>,
    pub drops: Vec<DropRecord>,
}

/// Builds each client's signed broadcast for the round.
pub fn broadcast_messages(
    clients: &[ClientState],
    locals: &[PrototypeSet],
    round: u64,
) -> Vec<SignedPrototypeMessage> {
    clients
        .iter()
        .zip(locals)
        .map(|(client, set)| SignedPrototypeMessage::sign_new(round, client.id, set.canonical_bytes(), &client.keys))
        .collect()
}

/// Delivers a message list to every client; each receiver independently
/// checks round, sender, and signature, storing only what verifies.
/// Failures are dropped and reported, never fatal.
pub fn deliver_and_verify(
    clients: &mut [ClientState],
    messages: &[SignedPrototypeMessage],
    directory: &PublicKeyDirectory,
    round: u64,
) -> ExchangeReport {
    let mut report = ExchangeReport::default();
    for client in clients.iter_mut() {
        client.received.clear();
        let mut seen: Vec<u32> = Vec::new();
        for msg in messages {
            let reason = if msg.round != round {
                Some(DropReason::WrongRound)
            } else if seen.contains(&msg.client_id) {
                Some(DropReason::DuplicateSender)
            } else {
                match directory.get(msg.client_id) {
                    None => Some(DropReason::UnknownSender),
                    Some(public) if !msg.verify(public) => Some(DropReason::BadSignature),
                    Some(_) => None,
                }
            };
            if let Some(reason) = reason {
                report.drops.push(DropRecord { receiver: client.id, claimed_sender: msg.client_id, reason });
                continue;
            }
            match PrototypeSet::from_canonical_bytes(&msg.payload, Owner::Client(msg.client_id), msg.round) {
                Ok(set) => {
                    seen.push(msg.client_id);
                    client.received.push(set);
                }
                Err(_) => {
                    report.drops.push(DropRecord {
                        receiver: client.id,
                        claimed_sender: msg.client_id,
                        reason: DropReason::MalformedPayload,
                    });
                }
            }
        }
        report.stored_per_client.push(client.received.len());
    }
    report
}

/// Step 2 over the in-process bus: every client broadcasts its signed set
/// (self-delivery included) and verifies everything it receives.
pub fn exchange_and_verify(
    clients: &mut [ClientState],
    locals: &[PrototypeSet],
    directory: &PublicKeyDirectory,
    round: u64,
) -> ExchangeReport {
    let messages = broadcast_messages(clients, locals, round);
    deliver_and_verify(clients, &messages, directory, round)
}

/// Step 3 result: the sealed block plus each client's independently
/// aggregated global set (what step 4 validates against).
#[derive(Debug, Clone)]
pub struct MiningOutcome {
    pub winner: u32,
    pub block: Block,
    pub trials_charged: u64,
    pub per_client_globals: Vec<PrototypeSet>,
}

/// Step 3: every client aggregates its verified sets in canonical order;
/// the winner (per mode) seals a block committing to its own aggregation.
/// `corrupt_payload` makes the winner commit to a biased payload instead,
/// which honest validation must then reject.
pub fn aggregate_and_mine(
    clients: &[ClientState],
    cfg: &RoundConfig,
    chain: &Chain,
    winner_rng: &mut StdRng,
    corrupt_payload: bool,
) -> Result<MiningOutcome, ProtocolError> {
    if clients.is_empty() {
        return Err(ProtocolError::NoClients);
    }
    let mut per_client_globals = Vec::with_capacity(clients.len());
    for client in clients {
        if client.received.is_empty() {
            return Err(ProtocolError::NothingReceived { client: client.id });
        }
        per_client_globals.push(aggregate_global(&client.received, clients.len(), cfg.aggregation)?);
    }

    let template = |miner: u32, payload_hash: [u8; 32]| Block {
        round: chain.next_round(),
        prev_hash: chain.tip(),
        payload_hash,
        miner,
        nonce: 0,
        difficulty_bits: cfg.difficulty_bits,
    };

    let (winner_index, trials_charged) = match cfg.mode {
        WinnerMode::Sim => {
            let winner_index = winner_rng.random_range(0..clients.len());
            (winner_index, 1u64 << cfg.difficulty_bits)
        }
        WinnerMode::Real => {
            let mut best: Option<(u64, usize, u64)> = None; // (trials, index, nonce)
            for (i, global) in per_client_globals.iter().enumerate() {
                let candidate = template(clients[i].id, hash_payload(&global.canonical_bytes()));
                let (nonce, trials) = mine(&candidate, 0, cfg.max_mine_trials).map_err(|e| match e {
                    LedgerError::Exhausted { trials } => {
                        ProtocolError::MiningExhausted { round: chain.next_round(), trials }
                    }
                    other => ProtocolError::Ledger(other),
                })?;
                if best.as_ref().is_none_or(|(t, _, _)| trials < *t) {
                    best = Some((trials, i, nonce));
                }
            }
            let (trials, index, _) = best.expect("at least one client");
            (index, trials)
        }
    };

    let winner = clients[winner_index].id;
    let payload = if corrupt_payload {
        biased_payload(&per_client_globals[winner_index])
    } else {
        per_client_globals[winner_index].canonical_bytes()
    };
    let mut block = template(winner, hash_payload(&payload));
    let (nonce, _) = mine(&block, 0, cfg.max_mine_trials).map_err(|e| match e {
        LedgerError::Exhausted { trials } => ProtocolError::MiningExhausted { round: chain.next_round(), trials },
        other => ProtocolError::Ledger(other),
    })?;
    block.nonce = nonce;
    Ok(MiningOutcome { winner, block, trials_charged, per_client_globals })
}

/// A payload that no honest aggregation produces: the first prototype
/// value shifted by one.
fn biased_payload(global: &PrototypeSet) -> Vec<u8> {
    let mut biased = PrototypeSet::new(global.owner(), global.round());
    let mut first = true;
    for (class, vector) in global.entries() {
        let mut v = vector.to_vec();
        if first {
            if let Some(x) = v.first_mut() {
                *x += 1.0;
            }
            first = false;
        }
        biased.insert(class, v).expect("finite values stay finite");
    }
    if biased.is_empty() {
        return vec![0xFF];
    }
    biased.canonical_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationOutcome {
    pub accepted: bool,
    pub approvals: usize,
}

/// Step 4: every client re-checks the proof of work, the linkage, and that
/// the block commits to exactly its own aggregated bytes. Strictly more
/// than half must approve; on acceptance every client installs its own
/// (bit-identical) global set and the block is appended.
pub fn validate_and_update(
    clients: &mut [ClientState],
    chain: &mut Chain,
    block: &Block,
    per_client_globals: &[PrototypeSet],
) -> Result<ValidationOutcome, ProtocolError> {
    if clients.is_empty() {
        return Err(ProtocolError::NoClients);
    }
    let target = pow_target(block.difficulty_bits)?;
    let hash = block.hash();
    let mut approvals = 0usize;
    for global in per_client_globals {
        let pow_ok = target.admits(&hash);
        let linked = block.prev_hash == chain.tip() && block.round == chain.next_round();
        let payload_ok = block.payload_hash == hash_payload(&global.canonical_bytes());
        if pow_ok && linked && payload_ok {
            approvals += 1;
        }
    }
    let accepted = 2 * approvals > clients.len();
    if accepted {
        chain.append(block.clone())?;
        for (client, mut global) in clients.iter_mut().zip(per_client_globals.iter().cloned()) {
            global.set_round(block.round);
            client.stored_global = global;
        }
    }
    Ok(ValidationOutcome { accepted, approvals })
}

/// One client's test-set numbers plus what it transmitted this round.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClientEvaluation {
    pub client: u32,
    pub accuracy: f64,
    pub loss: f64,
    pub params_transmitted: u64,
}

/// Accuracy and mean loss of the composed model on one labeled set.
pub fn test_model(params: &ModelParams, set: &LabeledSet) -> Result<(f64, f64), ProtocolError> {
    let (_, logits) = nn::forward(params, set.features())?;
    let loss = nn::cross_entropy(&logits, set.labels())?;
    let mut correct = 0usize;
    for (b, &label) in set.labels().iter().enumerate() {
        let row = logits.row(b);
        let mut arg = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[arg] {
                arg = i;
            }
        }
        if arg == label as usize {
            correct += 1;
        }
    }
    Ok((correct as f64 / set.len() as f64, loss))
}

/// Per-client test accuracy/loss and their unweighted means.
/// `transmitted[i]` is the prototype scalar count client `i` broadcast.
pub fn evaluate(
    clients: &[ClientState],
    transmitted: &[u64],
) -> Result<(f64, f64, Vec<ClientEvaluation>), ProtocolError> {
    if clients.is_empty() {
        return Err(ProtocolError::NoClients);
    }
    let mut per_client = Vec::with_capacity(clients.len());
    let mut acc_sum = 0.0;
    let mut loss_sum = 0.0;
    for (i, client) in clients.iter().enumerate() {
        let (accuracy, loss) = test_model(&client.params, &client.test)?;
        acc_sum += accuracy;
        loss_sum += loss;
        per_client.push(ClientEvaluation {
            client: client.id,
            accuracy,
            loss,
            params_transmitted: transmitted.get(i).copied().unwrap_or(0),
        });
    }
    let k = clients.len() as f64;
    Ok((acc_sum / k, loss_sum / k, per_client))
}

/// One row of the experiment's metric series.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundMetrics {
    /// Protocol round, starting at 1.
    pub round: u64,
    pub taa: f64,
    pub tal: f64,
    /// Mean prototype scalars transmitted per client this round.
    pub params_transmitted: f64,
    pub winner: u32,
    pub mine_trials: u64,
    pub accepted: bool,
    pub dropped_messages: u64,
    pub per_client: Vec<ClientEvaluation>,
    /// Mean over clients of the accumulated squared gradient norms this
    /// round; a heuristic stand-in for the bound constant Q.
    pub q_proxy_mean: f64,
}

/// Network-level experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub rounds: u64,
    pub seed: u64,
    pub round: RoundConfig,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    /// Protocol rounds (1-based) in which the mining winner commits to a
    /// corrupted payload; used to exercise the validation path.
    pub corrupt_rounds: Vec<u64>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub metrics: Vec<RoundMetrics>,
    pub chain: Chain,
    pub clients: Vec<ClientState>,
    /// Largest observed per-iteration gradient norm; a heuristic stand-in
    /// for the bound constant G.
    pub empirical_g_max: f64,
}

/// Splitmix64 over (seed, domain, index): decorrelated per-purpose seeds.
fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    let mut z = master ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the client fleet from partitioned shards. Every client starts
/// from the same randomly initialized model (the shared-architecture,
/// shared-starting-point setting prototype alignment relies on: prototypes
/// of one class then diverge only through data differences).
pub fn setup_clients(
    partitions: Vec<(LabeledSet, LabeledSet)>,
    cfg: &SimulationConfig,
) -> Result<Vec<ClientState>, ProtocolError> {
    if partitions.is_empty() {
        return Err(ProtocolError::NoClients);
    }
    let first = &partitions[0].0;
    let mut init_rng = StdRng::seed_from_u64(derive_seed(cfg.seed, 1, 0));
    let shared_params = ModelParams::init(
        first.input_dim(),
        &cfg.hidden_dims,
        cfg.feature_dim,
        first.class_universe(),
        &mut init_rng,
    );
    let mut clients = Vec::with_capacity(partitions.len());
    for (k, (train, test)) in partitions.into_iter().enumerate() {
        let id = k as u32;
        clients.push(ClientState::new(
            id,
            derive_seed(cfg.seed, 0, k as u64),
            derive_seed(cfg.seed, 2, k as u64),
            shared_params.clone(),
            train,
            test,
        ));
    }
    Ok(clients)
}

/// Runs the four steps for `cfg.rounds` rounds over the given shards.
/// Deterministic in SIM mode for a fixed config. Rejected rounds leave the
/// chain and stored prototypes untouched and the run continues; mining
/// exhaustion aborts with the failing round index.
pub fn run_experiment(
    partitions: Vec<(LabeledSet, LabeledSet)>,
    cfg: &SimulationConfig,
) -> Result<ExperimentOutput, ProtocolError> {
    cfg.round.validate()?;
    let mut clients = setup_clients(partitions, cfg)?;
    let directory = PublicKeyDirectory::from_clients(&clients);
    let mut chain = Chain::new();
    let mut winner_rng = StdRng::seed_from_u64(derive_seed(cfg.seed, 3, 0));
    let mut metrics = Vec::with_capacity(cfg.rounds as usize);
    let mut empirical_g_max = 0.0f64;

    for round in 1..=cfg.rounds {
        // Step 1: local training against the stored global prototypes.
        let mut locals = Vec::with_capacity(clients.len());
        let mut q_sum = 0.0;
        for client in clients.iter_mut() {
            let global = client.stored_global.clone();
            let record = local_training(client, &cfg.round, &global, round)?;
            q_sum += record.grad_norm_sq.iter().sum::<f64>();
            for &g2 in &record.grad_norm_sq {
                empirical_g_max = empirical_g_max.max(g2.sqrt());
            }
            locals.push(record.prototypes);
        }
        let transmitted: Vec<u64> = locals.iter().map(|set| set.value_count()).collect();

        // Step 2: signed exchange.
        let report = exchange_and_verify(&mut clients, &locals, &directory, round);

        // Step 3: aggregation and mining.
        let corrupt = cfg.corrupt_rounds.contains(&round);
        let outcome = aggregate_and_mine(&clients, &cfg.round, &chain, &mut winner_rng, corrupt)?;

        // Step 4: strict-majority validation.
        let validation =
            validate_and_update(&mut clients, &mut chain, &outcome.block, &outcome.per_client_globals)?;

        let (taa, tal, per_client) = evaluate(&clients, &transmitted)?;
        let mean_transmitted = transmitted.iter().sum::<u64>() as f64 / clients.len() as f64;
        metrics.push(RoundMetrics {
            round,
            taa,
            tal,
            params_transmitted: mean_transmitted,
            winner: outcome.winner,
            mine_trials: outcome.trials_charged,
            accepted: validation.accepted,
            dropped_messages: report.drops.len() as u64,
            per_client,
            q_proxy_mean: q_sum / clients.len() as f64,
        });
    }

    Ok(ExperimentOutput { metrics, chain, clients, empirical_g_max })
}
