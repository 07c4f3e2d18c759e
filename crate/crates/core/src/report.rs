//! Deterministic renderings of experiment artifacts: the metrics CSV, the
//! chain as JSON lines, the partition heatmap CSV, bound sweeps, and the
//! run summary. Byte-stable for fixed inputs so reruns diff clean.

use crate::budget::{self, BudgetError, ConvergenceConstants};
use crate::ledger::{Block, Chain, HASH_LEN};
use crate::protocol::RoundMetrics;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {field} is not {len} hex bytes")]
    BadHash { line: usize, field: &'static str, len: usize },
    #[error("line {line}: stored block hash does not match its header")]
    StoredHashMismatch { line: usize },
}

pub const METRICS_HEADER: &str = "round,taa,tal,params_transmitted,winner,mine_trials";

/// Fixed-schema CSV of the per-round metric series.
pub fn metrics_csv(rows: &[RoundMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.round, row.taa, row.tal, row.params_transmitted, row.winner, row.mine_trials
        ));
    }
    out
}

/// Full per-round metric records, including per-client breakdowns, as a
/// JSON array.
pub fn metrics_json(rows: &[RoundMetrics]) -> String {
    let mut out = serde_json::to_string_pretty(rows).expect("plain structs serialize");
    out.push('\n');
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockLine {
    round: u64,
    prev_hash: String,
    payload_hash: String,
    miner: u32,
    nonce: u64,
    difficulty_bits: u32,
    hash: String,
}

/// One JSON object per block, hashes hex-encoded, each line carrying the
/// block's own header hash for inspection.
pub fn chain_jsonl(chain: &Chain) -> String {
    let mut out = String::new();
    for block in chain.blocks() {
        let line = BlockLine {
            round: block.round,
            prev_hash: hex::encode(block.prev_hash),
            payload_hash: hex::encode(block.payload_hash),
            miner: block.miner,
            nonce: block.nonce,
            difficulty_bits: block.difficulty_bits,
            hash: hex::encode(block.hash()),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

fn decode_hash(s: &str, line: usize, field: &'static str) -> Result<[u8; HASH_LEN], ReportError> {
    let bytes = hex::decode(s).map_err(|_| ReportError::BadHash { line, field, len: HASH_LEN })?;
    bytes.try_into().map_err(|_| ReportError::BadHash { line, field, len: HASH_LEN })
}

/// Parses a chain back from its JSON-lines form, checking each stored hash
/// against the recomputed header hash. The tip becomes the last block's
/// hash; structural violations are left to chain validation.
pub fn parse_chain_jsonl(text: &str) -> Result<Chain, ReportError> {
    let mut blocks = Vec::new();
    let mut tip = [0u8; HASH_LEN];
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let parsed: BlockLine =
            serde_json::from_str(raw).map_err(|source| ReportError::Json { line: line_no, source })?;
        let block = Block {
            round: parsed.round,
            prev_hash: decode_hash(&parsed.prev_hash, line_no, "prev_hash")?,
            payload_hash: decode_hash(&parsed.payload_hash, line_no, "payload_hash")?,
            miner: parsed.miner,
            nonce: parsed.nonce,
            difficulty_bits: parsed.difficulty_bits,
        };
        let stored = decode_hash(&parsed.hash, line_no, "hash")?;
        if stored != block.hash() {
            return Err(ReportError::StoredHashMismatch { line: line_no });
        }
        tip = stored;
        blocks.push(block);
    }
    Ok(Chain::from_parts(blocks, tip))
}

/// Client-per-row CSV of the partition heatmap, header row listing class ids.
pub fn heatmap_csv(matrix: &[Vec<u64>]) -> String {
    let classes = matrix.first().map_or(0, |row| row.len());
    let mut out = String::from("client");
    for class in 0..classes {
        out.push_str(&format!(",{class}"));
    }
    out.push('\n');
    for (client, row) in matrix.iter().enumerate() {
        out.push_str(&client.to_string());
        for count in row {
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    out
}

/// Per-round-count sweep of the budget split and, when constants are
/// supplied, the variation bound: one row per candidate round count.
pub fn bounds_csv(
    t_sum: f64,
    alpha: f64,
    beta: f64,
    max_rounds: u64,
    constants: Option<(&ConvergenceConstants, f64, f64)>,
) -> String {
    let mut out = String::from("rounds,local_iterations,nominal_training_budget,realized_training_time,variation_bound\n");
    for rounds in 1..=max_rounds {
        let nominal = budget::nominal_training_budget(t_sum, beta, rounds);
        let (iterations, realized) = match budget::local_iterations(t_sum, rounds, alpha, beta) {
            Ok(e) => (e.to_string(), budget::realized_training_time(e, alpha, rounds).to_string()),
            Err(_) => (String::new(), String::new()),
        };
        let bound = match constants {
            Some((cc, eta, lambda)) => match budget::variation_bound(cc, lambda, eta, alpha, beta, rounds, t_sum) {
                Ok(j) => j.to_string(),
                Err(BudgetError::NoTrainingTime { .. }) => String::new(),
                Err(_) => String::new(),
            },
            None => String::new(),
        };
        out.push_str(&format!("{rounds},{iterations},{nominal},{realized},{bound}\n"));
    }
    out
}

/// Final numbers of a run, serialized as stable-order JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub rounds_total: u64,
    pub rounds_accepted: u64,
    pub final_taa: f64,
    pub final_tal: f64,
    pub params_transmitted_mean: f64,
    pub chain_blocks: u64,
    /// Heuristic bound proxies measured from the run: the mean per-round
    /// accumulated squared gradient norm and the largest observed gradient
    /// norm. Estimates, not certified constants.
    pub empirical_q_mean: f64,
    pub empirical_g_max: f64,
}

pub fn summary_json(summary: &Summary) -> String {
    let mut out = serde_json::to_string_pretty(summary).expect("plain struct serializes");
    out.push('\n');
    out
}
