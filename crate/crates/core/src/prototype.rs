//! Per-class feature prototypes: computing them from a dataset, averaging
//! them across clients in a canonical order, and the alignment loss that
//! pulls local prototypes toward the global ones.
//!
//! The canonical byte serialization defined here is what gets signed and
//! hashed, so every arithmetic path that feeds it must be bit-exact across
//! clients: aggregation always sums in ascending client-id order.

use crate::data::LabeledSet;
use crate::nn::{self, ModelParams, NnError};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("prototype dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty input: {context}")]
    EmptyInput { context: &'static str },
    #[error("non-finite prototype value for class {class}")]
    NonFinite { class: u32 },
    #[error("duplicate contribution from client {client}")]
    DuplicateOwner { client: u32 },
    #[error("aggregation input owned by {owner:?} is not a client set")]
    NotAClientSet { owner: Owner },
    #[error("class universe is zero")]
    EmptyUniverse,
    #[error("malformed canonical bytes: {reason}")]
    Malformed { reason: &'static str },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Which party a prototype set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Owner {
    Client(u32),
    Global,
}

/// Map from class id to a fixed-dimension feature vector, tagged with its
/// owner and the round it was produced in. All vectors share one dimension
/// and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    owner: Owner,
    round: u64,
    entries: BTreeMap<u32, Vec<f64>>,
}

impl PrototypeSet {
    pub fn new(owner: Owner, round: u64) -> Self {
        Self { owner, round, entries: BTreeMap::new() }
    }

    pub fn owner(&self) -> Owner {
        self.owner
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn set_round(&mut self, round: u64) {
        self.round = round;
    }

    pub fn set_owner(&mut self, owner: Owner) {
        self.owner = owner;
    }

    pub fn insert(&mut self, class: u32, vector: Vec<f64>) -> Result<(), ProtoError> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(ProtoError::NonFinite { class });
        }
        if let Some(dim) = self.dim() {
            if vector.len() != dim {
                return Err(ProtoError::DimensionMismatch { left: dim, right: vector.len() });
            }
        }
        self.entries.insert(class, vector);
        Ok(())
    }

    pub fn get(&self, class: u32) -> Option<&[f64]> {
        self.entries.get(&class).map(|v| v.as_slice())
    }

    /// Shared vector dimension, `None` while the set is empty.
    pub fn dim(&self) -> Option<usize> {
        self.entries.values().next().map(|v| v.len())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Class ids in ascending order.
    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    /// `(class, vector)` pairs in ascending class order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, &[f64])> + '_ {
        self.entries.iter().map(|(c, v)| (*c, v.as_slice()))
    }

    /// Scalar count of the wire payload: one `f64` per dimension per class.
    pub fn value_count(&self) -> u64 {
        self.entries.values().map(|v| v.len() as u64).sum()
    }

    /// Canonical wire form: class count (u32 LE), then per class in
    /// ascending id order: class id (u32 LE), dimension (u32 LE), and the
    /// vector as IEEE-754 binary64 LE. Signing and block hashing both run
    /// over exactly these bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let dim = self.dim().unwrap_or(0);
        let mut out = Vec::with_capacity(4 + self.entries.len() * (8 + dim * 8));
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (class, vector) in &self.entries {
            out.extend_from_slice(&class.to_le_bytes());
            out.extend_from_slice(&(vector.len() as u32).to_le_bytes());
            for v in vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`PrototypeSet::canonical_bytes`].
    pub fn from_canonical_bytes(bytes: &[u8], owner: Owner, round: u64) -> Result<Self, ProtoError> {
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8], ProtoError> {
            let end = cursor.checked_add(n).ok_or(ProtoError::Malformed { reason: "length overflow" })?;
            if end > bytes.len() {
                return Err(ProtoError::Malformed { reason: "truncated" });
            }
            let slice = &bytes[*cursor..end];
            *cursor = end;
            Ok(slice)
        };
        let count = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().expect("4 bytes"));
        let mut set = Self::new(owner, round);
        let mut last_class: Option<u32> = None;
        for _ in 0..count {
            let class = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().expect("4 bytes"));
            if last_class.is_some_and(|prev| class <= prev) {
                return Err(ProtoError::Malformed { reason: "classes not strictly ascending" });
            }
            last_class = Some(class);
            let dim = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().expect("4 bytes")) as usize;
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                vector.push(f64::from_le_bytes(take(&mut cursor, 8)?.try_into().expect("8 bytes")));
            }
            set.insert(class, vector)?;
        }
        if cursor != bytes.len() {
            return Err(ProtoError::Malformed { reason: "trailing bytes" });
        }
        Ok(set)
    }
}

/// Per-class mean of the feature extractor's outputs over a labeled set.
/// Only classes with at least one sample appear.
pub fn local_prototypes(params: &ModelParams, dataset: &LabeledSet) -> Result<PrototypeSet, ProtoError> {
    if dataset.is_empty() {
        return Err(ProtoError::EmptyInput { context: "dataset" });
    }
    let (features, _) = nn::forward(params, dataset.features())?;
    per_class_means(&features, dataset.labels())
}

/// Mean feature vector per class present in `labels`; accumulation follows
/// row order so equal inputs give bit-equal outputs.
pub fn per_class_means(features: &Tensor, labels: &[u32]) -> Result<PrototypeSet, ProtoError> {
    let (rows, dim) = features.dim2().map_err(NnError::from)?;
    if rows == 0 || labels.len() != rows {
        return Err(ProtoError::EmptyInput { context: "features" });
    }
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for (b, &label) in labels.iter().enumerate() {
        let entry = sums.entry(label).or_insert_with(|| (vec![0.0; dim], 0));
        for (acc, v) in entry.0.iter_mut().zip(features.row(b)) {
            *acc += v;
        }
        entry.1 += 1;
    }
    let mut set = PrototypeSet::new(Owner::Client(0), 0);
    for (class, (sum, count)) in sums {
        let mean = sum.into_iter().map(|v| v / count as f64).collect();
        set.insert(class, mean)?;
    }
    Ok(set)
}

/// How to divide per-class sums during global aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationRule {
    /// Divide by the number of clients that actually contributed the class.
    /// Keeps rare-class prototypes at representative magnitude.
    #[default]
    ContributorCount,
    /// Divide by the total client count `K`, shrinking prototypes of
    /// classes that some clients lack.
    TotalClients,
}

/// Averages the clients' local prototype sets into one global set.
///
/// Inputs are re-sorted into ascending client-id order before summation, so
/// the output (and its canonical bytes) is identical no matter the arrival
/// order. If every contribution of a class is bit-identical the common
/// vector is returned unchanged, which keeps aggregation of identical sets
/// exact.
pub fn aggregate_global(
    locals: &[PrototypeSet],
    total_clients: usize,
    rule: AggregationRule,
) -> Result<PrototypeSet, ProtoError> {
    if locals.is_empty() {
        return Err(ProtoError::EmptyInput { context: "aggregation inputs" });
    }
    let mut sorted: Vec<&PrototypeSet> = locals.iter().collect();
    for set in &sorted {
        if !matches!(set.owner(), Owner::Client(_)) {
            return Err(ProtoError::NotAClientSet { owner: set.owner() });
        }
    }
    sorted.sort_by_key(|s| s.owner());
    for pair in sorted.windows(2) {
        if pair[0].owner() == pair[1].owner() {
            let Owner::Client(client) = pair[0].owner() else { unreachable!() };
            return Err(ProtoError::DuplicateOwner { client });
        }
    }
    let dim = match sorted.iter().find_map(|s| s.dim()) {
        Some(dim) => dim,
        None => {
            // All contributions empty: an empty global set.
            let round = sorted.iter().map(|s| s.round()).max().unwrap_or(0);
            return Ok(PrototypeSet::new(Owner::Global, round));
        }
    };
    for set in &sorted {
        if let Some(d) = set.dim() {
            if d != dim {
                return Err(ProtoError::DimensionMismatch { left: dim, right: d });
            }
        }
    }

    let mut classes: Vec<u32> = Vec::new();
    for set in &sorted {
        for class in set.classes() {
            if !classes.contains(&class) {
                classes.push(class);
            }
        }
    }
    classes.sort_unstable();

    let round = sorted.iter().map(|s| s.round()).max().unwrap_or(0);
    let mut global = PrototypeSet::new(Owner::Global, round);
    for class in classes {
        let contributions: Vec<&[f64]> =
            sorted.iter().filter_map(|s| s.get(class)).collect();
        let first = contributions[0];
        let mean = if contributions.iter().all(|c| *c == first) && rule == AggregationRule::ContributorCount {
            first.to_vec()
        } else {
            let divisor = match rule {
                AggregationRule::ContributorCount => contributions.len() as f64,
                AggregationRule::TotalClients => total_clients as f64,
            };
            let mut sum = vec![0.0; dim];
            for c in &contributions {
                for (acc, v) in sum.iter_mut().zip(*c) {
                    *acc += v;
                }
            }
            sum.into_iter().map(|v| v / divisor).collect()
        };
        global.insert(class, mean)?;
    }
    Ok(global)
}

/// Mean `L2` distance between matching prototypes, normalized by the class
/// universe size. Classes missing from either side contribute zero.
pub fn auxiliary_loss(
    local: &PrototypeSet,
    global: &PrototypeSet,
    class_universe: usize,
) -> Result<f64, ProtoError> {
    if class_universe == 0 {
        return Err(ProtoError::EmptyUniverse);
    }
    check_dims(local, global)?;
    let mut total = 0.0;
    for (class, p) in local.entries() {
        if let Some(g) = global.get(class) {
            let diff: Vec<f64> = p.iter().zip(g).map(|(a, b)| a - b).collect();
            total += nn::l2_norm(&diff);
        }
    }
    Ok(total / class_universe as f64)
}

/// Gradient of [`auxiliary_loss`] with respect to each local prototype:
/// the unit direction away from the global prototype scaled by
/// `1/|universe|`, and zero exactly at zero distance.
pub fn auxiliary_loss_grad(
    local: &PrototypeSet,
    global: &PrototypeSet,
    class_universe: usize,
) -> Result<BTreeMap<u32, Vec<f64>>, ProtoError> {
    if class_universe == 0 {
        return Err(ProtoError::EmptyUniverse);
    }
    check_dims(local, global)?;
    let mut grads = BTreeMap::new();
    let dim = local.dim().unwrap_or(0);
    for (class, p) in local.entries() {
        let grad = match global.get(class) {
            Some(g) => {
                let diff: Vec<f64> = p.iter().zip(g).map(|(a, b)| a - b).collect();
                let norm = nn::l2_norm(&diff);
                if norm == 0.0 {
                    vec![0.0; dim]
                } else {
                    let scale = 1.0 / (class_universe as f64 * norm);
                    diff.into_iter().map(|d| d * scale).collect()
                }
            }
            None => vec![0.0; dim],
        };
        grads.insert(class, grad);
    }
    Ok(grads)
}

fn check_dims(local: &PrototypeSet, global: &PrototypeSet) -> Result<(), ProtoError> {
    if let (Some(l), Some(g)) = (local.dim(), global.dim()) {
        if l != g {
            return Err(ProtoError::DimensionMismatch { left: l, right: g });
        }
    }
    Ok(())
}
