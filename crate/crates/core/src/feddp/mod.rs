//! Differentially private federated aggregation.
//!
//! A round samples `m_t` hospitals ([`subsample`]), clips each submitted
//! update to L2 norm `S` ([`clip_update`]), sums them, adds Gaussian noise
//! with per-coordinate std `σ·S` and divides by `m_t`
//! ([`dp_federated_round`]). Local models can additionally be perturbed
//! with Laplace noise ([`laplace_perturb`]) before they leave a hospital.

mod aggregate;
mod dpcheck;
mod laplace;
mod stats;

use serde::{Deserialize, Serialize};

use crate::chain::NodeId;
use crate::error::{Error, Result};
use crate::tensor::WeightTensor;

pub use aggregate::{clip_update, dp_federated_round, gaussian_noise, subsample};
pub use dpcheck::{dp_ratio_check, Bins, DpCheckReport};
pub use laplace::{laplace_perturb, laplace_sample, max_sensitivity, sensitivity_bound};
pub use stats::{update_stats, UpdateStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    /// L2 clipping bound `S`; `inf` disables clipping.
    pub clip_bound: f64,
    /// Gaussian noise multiplier `σ`.
    pub noise_sigma: f64,
    /// Hospitals sampled per round, `m_t`; `None` takes all of them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,
    /// Laplace privacy budget `ε` for local perturbation.
    pub epsilon: f64,
    /// L1 sensitivity `s` of the local perturbation; 0 turns it off.
    pub laplace_sensitivity: f64,
    /// Weight of a candidate's own MAE in the consensus score.
    pub gamma: f64,
    pub rng_seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            clip_bound: 1.0,
            noise_sigma: 0.1,
            subsample: None,
            epsilon: 1.0,
            laplace_sensitivity: 0.001,
            gamma: 0.5,
            rng_seed: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound > 0.0) {
            return Err(Error::invalid(format!("clip bound must be positive, got {}", self.clip_bound)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be non-negative, got {}", self.noise_sigma)));
        }
        if self.subsample == Some(0) {
            return Err(Error::invalid("subsample size must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.laplace_sensitivity.is_finite() && self.laplace_sensitivity >= 0.0) {
            return Err(Error::invalid("laplace sensitivity must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// One hospital's update `Δw = w_local − w_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub hospital: NodeId,
    pub delta: WeightTensor,
}
