//! Blocks, proof-of-work mining, and chain validation.
//!
//! A block seals one round's global prototypes by committing to the hash
//! of their canonical bytes. Difficulty is a leading-zero-bit count; the
//! target is `2^(256 - difficulty_bits)` over the SHA-256 header digest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const HASH_LEN: usize = 32;
pub const HEADER_LEN: usize = 88;
pub const GENESIS_PREV_HASH: [u8; HASH_LEN] = [0u8; HASH_LEN];
pub const MAX_DIFFICULTY_BITS: u32 = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("difficulty {bits} out of range (0..=255)")]
    DifficultyOutOfRange { bits: u32 },
    #[error("mining exhausted after {trials} trials")]
    Exhausted { trials: u64 },
    #[error("header must be {HEADER_LEN} bytes, got {len}")]
    HeaderLength { len: usize },
    #[error("append violates chain invariants: {0:?}")]
    Append(Violation),
}

/// What [`validate_chain`] can report, together with the offending index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    PrevHashMismatch,
    RoundNotSequential,
    PowUnsatisfied,
    DifficultyOutOfRange,
    TipMismatch,
}

/// Fixed-layout block header. Serialized field order is declaration order:
/// round (u64 LE), prev_hash, payload_hash, miner (u32 LE), nonce (u64 LE),
/// difficulty_bits (u32 LE) — 88 bytes total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub round: u64,
    pub prev_hash: [u8; HASH_LEN],
    pub payload_hash: [u8; HASH_LEN],
    pub miner: u32,
    pub nonce: u64,
    pub difficulty_bits: u32,
}

impl Block {
    pub fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..8].copy_from_slice(&self.round.to_le_bytes());
        out[8..40].copy_from_slice(&self.prev_hash);
        out[40..72].copy_from_slice(&self.payload_hash);
        out[72..76].copy_from_slice(&self.miner.to_le_bytes());
        out[76..84].copy_from_slice(&self.nonce.to_le_bytes());
        out[84..88].copy_from_slice(&self.difficulty_bits.to_le_bytes());
        out
    }

    pub fn from_header_bytes(bytes: &[u8]) -> Result<Self, LedgerError> {
        if bytes.len() != HEADER_LEN {
            return Err(LedgerError::HeaderLength { len: bytes.len() });
        }
        Ok(Self {
            round: u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes")),
            prev_hash: bytes[8..40].try_into().expect("32 bytes"),
            payload_hash: bytes[40..72].try_into().expect("32 bytes"),
            miner: u32::from_le_bytes(bytes[72..76].try_into().expect("4 bytes")),
            nonce: u64::from_le_bytes(bytes[76..84].try_into().expect("8 bytes")),
            difficulty_bits: u32::from_le_bytes(bytes[84..88].try_into().expect("4 bytes")),
        })
    }

    pub fn hash(&self) -> [u8; HASH_LEN] {
        hash_block(self)
    }
}

/// SHA-256 over the fixed-layout header bytes.
pub fn hash_block(block: &Block) -> [u8; HASH_LEN] {
    Sha256::digest(block.header_bytes()).into()
}

/// SHA-256 of an arbitrary payload (used for the prototype commitment).
pub fn hash_payload(payload: &[u8]) -> [u8; HASH_LEN] {
    Sha256::digest(payload).into()
}

/// The proof-of-work target `2^(256 - bits)`: a big-endian 256-bit hash
/// passes iff its leading `bits` bits are all zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowTarget {
    bits: u32,
}

pub fn pow_target(difficulty_bits: u32) -> Result<PowTarget, LedgerError> {
    if difficulty_bits > MAX_DIFFICULTY_BITS {
        return Err(LedgerError::DifficultyOutOfRange { bits: difficulty_bits });
    }
    Ok(PowTarget { bits: difficulty_bits })
}

impl PowTarget {
    /// True when `hash < 2^(256 - bits)` as a big-endian integer.
    pub fn admits(&self, hash: &[u8; HASH_LEN]) -> bool {
        leading_zero_bits(hash) >= self.bits
    }

    pub fn difficulty_bits(&self) -> u32 {
        self.bits
    }
}

fn leading_zero_bits(hash: &[u8; HASH_LEN]) -> u32 {
    let mut bits = 0;
    for &byte in hash {
        if byte == 0 {
            bits += 8;
        } else {
            bits += byte.leading_zeros();
            break;
        }
    }
    bits
}

/// Searches nonces from `start_nonce` until the header hash meets the
/// block's difficulty. Returns the winning nonce and the number of hash
/// trials spent (for compute accounting).
pub fn mine(template: &Block, start_nonce: u64, max_trials: u64) -> Result<(u64, u64), LedgerError> {
    let target = pow_target(template.difficulty_bits)?;
    let mut candidate = template.clone();
    let mut trials = 0u64;
    let mut nonce = start_nonce;
    while trials < max_trials {
        candidate.nonce = nonce;
        trials += 1;
        if target.admits(&candidate.hash()) {
            return Ok((nonce, trials));
        }
        nonce = nonce.wrapping_add(1);
    }
    Err(LedgerError::Exhausted { trials })
}

/// Ordered blocks plus the hash of the newest one. A fresh chain has no
/// blocks and a zero tip; the first appended block carries round 0 and the
/// zero prev-hash, and rounds then increase by exactly 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Chain {
    blocks: Vec<Block>,
    tip: [u8; HASH_LEN],
}

impl Chain {
    pub fn new() -> Self {
        Self { blocks: Vec::new(), tip: GENESIS_PREV_HASH }
    }

    pub fn from_parts(blocks: Vec<Block>, tip: [u8; HASH_LEN]) -> Self {
        Self { blocks, tip }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Hash of the newest block (zero for an empty chain): the prev-hash
    /// the next block must carry.
    pub fn tip(&self) -> [u8; HASH_LEN] {
        self.tip
    }

    /// Round the next block must carry.
    pub fn next_round(&self) -> u64 {
        self.blocks.len() as u64
    }

    /// Appends after re-checking the block against the chain invariants.
    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        if block.difficulty_bits > MAX_DIFFICULTY_BITS {
            return Err(LedgerError::Append(Violation::DifficultyOutOfRange));
        }
        if block.round != self.next_round() {
            return Err(LedgerError::Append(Violation::RoundNotSequential));
        }
        if block.prev_hash != self.tip {
            return Err(LedgerError::Append(Violation::PrevHashMismatch));
        }
        let target = pow_target(block.difficulty_bits)?;
        let hash = block.hash();
        if !target.admits(&hash) {
            return Err(LedgerError::Append(Violation::PowUnsatisfied));
        }
        self.tip = hash;
        self.blocks.push(block);
        Ok(())
    }
}

/// Walks the chain and reports the first violation as `(block index,
/// violation)`; the tip check reports at the last index.
pub fn validate_chain(chain: &Chain) -> Result<(), (usize, Violation)> {
    let mut expected_prev = GENESIS_PREV_HASH;
    for (i, block) in chain.blocks().iter().enumerate() {
        if block.difficulty_bits > MAX_DIFFICULTY_BITS {
            return Err((i, Violation::DifficultyOutOfRange));
        }
        if block.round != i as u64 {
            return Err((i, Violation::RoundNotSequential));
        }
        if block.prev_hash != expected_prev {
            return Err((i, Violation::PrevHashMismatch));
        }
        let target = pow_target(block.difficulty_bits).map_err(|_| (i, Violation::DifficultyOutOfRange))?;
        let hash = block.hash();
        if !target.admits(&hash) {
            return Err((i, Violation::PowUnsatisfied));
        }
        expected_prev = hash;
    }
    if chain.tip() != expected_prev {
        return Err((chain.len().saturating_sub(1), Violation::TipMismatch));
    }
    Ok(())
}
