//! Decentralized federated prototype learning at desk scale.
//!
//! `protofed` simulates a network of clients that train local classifiers,
//! exchange signed per-class feature prototypes instead of model parameters,
//! aggregate them into global prototypes sealed on a proof-of-work ledger,
//! and plan their compute budgets with closed-form training/mining time
//! models and convergence bounds.

pub mod budget;
pub mod data;
pub mod identity;
pub mod ledger;
pub mod nn;
pub mod prototype;
pub mod protocol;
pub mod report;
pub mod tensor;

pub use nn::{Gradients, ModelParams, NnError};
pub use prototype::{Owner, PrototypeSet};
pub use tensor::Tensor;
