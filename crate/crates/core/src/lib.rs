//! Blockchain-coordinated, differentially private federated learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`metrics`] hold the shared numeric types.
//! * [`ctnorm`] resamples and windows CT volumes into a fixed embedding.
//! * [`capsnet`] is a small capsule-network learner used by every hospital.
//! * [`feddp`] clips, perturbs and aggregates model updates.
//! * [`chain`] signs submissions, votes on them by MAE and keeps the ledger.
//! * [`simnet`] wires everything into a deterministic multi-hospital simulator.

pub mod capsnet;
pub mod chain;
pub mod ctnorm;
pub mod error;
pub mod feddp;
pub mod metrics;
pub mod rng;
pub mod simnet;
pub mod tensor;

pub use error::{Error, Result};
pub use metrics::{ConfusionCounts, MetricsReport};
pub use tensor::WeightTensor;
