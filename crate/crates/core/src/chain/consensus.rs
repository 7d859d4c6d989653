//! MAE voting over candidate local models.

use serde::{Deserialize, Serialize};

use super::community::CommunityTable;
use super::id::NodeId;
use super::ledger::Ledger;
use super::tx::{TxKind, Vote};
use crate::capsnet::{evaluate, CapsNet, Dataset};
use crate::error::{Error, Result};

/// How the exclusion threshold on scores is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceRule {
    /// Exclude scores above `k ×` the median score.
    MedianMultiple(f64),
    /// Exclude scores above a fixed value.
    Fixed(f64),
}

impl Default for AcceptanceRule {
    fn default() -> Self {
        AcceptanceRule::MedianMultiple(1.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    /// One vote per candidate, ordered by node id.
    pub votes: Vec<Vote>,
    pub threshold: f64,
    /// Lowest score, ties to the smaller id.
    pub leader: NodeId,
}

impl ConsensusOutcome {
    pub fn accepted(&self) -> impl Iterator<Item = &Vote> {
        self.votes.iter().filter(|v| v.accepted)
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted().count()
    }

    pub fn vote(&self, node: &NodeId) -> Option<&Vote> {
        self.votes.iter().find(|v| v.hospital == *node)
    }
}

// Order-independent sum (see update_stats).
fn ordered_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v.iter().sum()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Scores `γ·MAE_j + mean(MAE)` and applies the acceptance rule.
pub fn consensus_vote(maes: &[(NodeId, f64)], gamma: f64, rule: AcceptanceRule) -> Result<ConsensusOutcome> {
    if maes.is_empty() {
        return Err(Error::invalid("consensus needs at least one candidate"));
    }
    if let Some((n, m)) = maes.iter().find(|(_, m)| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::invalid(format!("candidate {n} has invalid MAE {m}")));
    }
    if !gamma.is_finite() {
        return Err(Error::invalid("gamma must be finite"));
    }
    let mut sorted: Vec<(NodeId, f64)> = maes.to_vec();
    sorted.sort_by_key(|c| c.0);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("duplicate candidate"));
    }
    let values: Vec<f64> = sorted.iter().map(|c| c.1).collect();
    let mean = ordered_sum(&values) / values.len() as f64;
    let scores: Vec<f64> = values.iter().map(|m| gamma * m + mean).collect();
    let threshold = match rule {
        AcceptanceRule::MedianMultiple(k) => median(&scores) * k,
        AcceptanceRule::Fixed(t) => t,
    };
    let votes: Vec<Vote> = sorted
        .iter()
        .zip(&scores)
        .map(|(&(hospital, mae), &score)| Vote { hospital, mae, score, accepted: score <= threshold })
        .collect();
    // Ids are sorted, so the first minimum is the smallest id.
    let leader = votes
        .iter()
        .fold(None::<&Vote>, |best, v| match best {
            Some(b) if b.score <= v.score => Some(b),
            _ => Some(v),
        })
        .expect("non-empty")
        .hospital;
    Ok(ConsensusOutcome { votes, threshold, leader })
}

/// Evaluates each candidate's MAE on the shared validation set, then votes.
pub fn consensus_round(
    candidates: &[(NodeId, &CapsNet)],
    validation: &Dataset,
    gamma: f64,
    rule: AcceptanceRule,
) -> Result<ConsensusOutcome> {
    if candidates.is_empty() {
        return Err(Error::invalid("consensus needs at least one candidate"));
    }
    let maes = candidates
        .iter()
        .map(|(id, model)| Ok((*id, evaluate(model, validation)?.mae)))
        .collect::<Result<Vec<_>>>()?;
    consensus_vote(&maes, gamma, rule)
}

/// Provenance of an accepted global model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub category: String,
    pub model_hash: String,
    pub height: u64,
    pub tx_id: String,
    pub round: u64,
}

/// Latest consensus-accepted global model for `category`. Only references
/// are returned; model weights and training data stay with their owners.
pub fn retrieve_model(
    ledger: &Ledger,
    communities: &CommunityTable,
    category: &str,
    requester: &NodeId,
) -> Result<ModelRef> {
    if !communities.has_category(category) {
        return Err(Error::NotFound(format!("unknown category {category:?}")));
    }
    if !communities.is_known(requester) {
        return Err(Error::UnknownNode(requester.to_hex()));
    }
    for block in ledger.blocks().iter().rev() {
        if let Some(tx) = block.tx_list.iter().rev().find(|t| t.kind == TxKind::Consensus && t.category == category) {
            return Ok(ModelRef {
                category: category.to_string(),
                model_hash: tx.model_hash.clone(),
                height: block.height,
                tx_id: tx.tx_id.clone(),
                round: tx.round,
            });
        }
    }
    Err(Error::NotFound(format!("category {category:?} has members but no accepted model yet")))
}
