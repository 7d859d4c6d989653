use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::network::{Endpoint, MessageLog, Payload};
use crate::capsnet::{evaluate, train_local, CapsNet, Dataset};
use crate::chain::{
    consensus_round, sign_transaction, CommunityTable, KeyRegistry, Keypair, Ledger, NodeId, PayloadMeta, Transaction,
    TxDraft, TxKind,
};
use crate::error::{Error, Result};
use crate::feddp::{dp_federated_round, laplace_perturb, subsample, update_stats, ModelUpdate};
use crate::rng;

/// One simulated hospital and its private partition.
#[derive(Debug, Clone)]
pub struct HospitalSim {
    pub keypair: Keypair,
    pub partition: Dataset,
    /// Last global model received.
    pub model: CapsNet,
}

impl HospitalSim {
    pub fn id(&self) -> NodeId {
        self.keypair.id()
    }
}

/// Hospital `k`'s key under `seed`.
pub fn hospital_keypair(seed: u64, k: usize) -> Keypair {
    Keypair::derive(seed, &format!("hospital/{k}"))
}

/// Seed of `node`'s local training in `round`.
pub fn local_train_seed(seed: u64, node: &NodeId, round: u64) -> u64 {
    rng::stream(seed, &format!("hospital/{}/train/{round}", node.to_hex())).next_u64()
}

pub fn make_hospitals(seed: u64, partitions: &[Dataset], initial: &CapsNet) -> Result<Vec<HospitalSim>> {
    if let Some(k) = partitions.iter().position(Dataset::is_empty) {
        return Err(Error::invalid(format!("hospital {k} has an empty partition")));
    }
    Ok(partitions
        .iter()
        .enumerate()
        .map(|(k, p)| HospitalSim { keypair: hospital_keypair(seed, k), partition: p.clone(), model: initial.clone() })
        .collect())
}

/// Coordinator-side state carried between rounds.
#[derive(Debug)]
pub struct Federation {
    pub global: CapsNet,
    /// Rounds completed so far.
    pub round: u64,
    pub ledger: Ledger,
    pub communities: CommunityTable,
    pub registry: KeyRegistry,
    pub log: MessageLog,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Federation {
    /// Registers every hospital's key and enrols it in `category`.
    pub fn new(
        global: CapsNet,
        hospitals: &[HospitalSim],
        category: &str,
        validation: Dataset,
        test: Dataset,
        ledger: Ledger,
    ) -> Result<Self> {
        if validation.is_empty() || test.is_empty() {
            return Err(Error::invalid("validation and test sets must be non-empty"));
        }
        let mut communities = CommunityTable::new();
        let mut registry = KeyRegistry::new();
        for h in hospitals {
            registry.register(h.keypair.public_key());
            communities.join(category, h.id());
        }
        Ok(Federation { global, round: 0, ledger, communities, registry, log: MessageLog::new(), validation, test })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub providers: usize,
    /// Global model accuracy on the test set.
    pub accuracy: f64,
    pub loss: f64,
    pub mae: f64,
    pub vc: f64,
    pub us: f64,
    pub sampled: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub leader: NodeId,
    pub model_hash: String,
    pub block_height: u64,
    /// Compute time of the round; the only non-deterministic field.
    pub wall_time_ms: f64,
}

fn weights(model: &CapsNet) -> Payload {
    Payload::Weights { model_hash: model.model_hash(), len: model.params().len() }
}

/// Runs one federated round: local training, Laplace perturbation, signed
/// submission, MAE consensus, DP aggregation of the accepted updates,
/// block append and broadcast. The report is computed on the test set.
pub fn run_round(state: &mut Federation, hospitals: &mut [HospitalSim], cfg: &ExperimentConfig) -> Result<RoundReport> {
    if hospitals.is_empty() {
        return Err(Error::invalid("a round needs at least one hospital"));
    }
    let start = Instant::now();
    let seed = cfg.experiment.seed;
    let round = state.round + 1;
    let timestamp = cfg.chain.genesis_timestamp + round;
    let category = cfg.chain.category.as_str();
    let train = cfg.trainer.train_params();
    let n_params = state.global.params().len();

    let mut server_rng = rng::stream(seed, &format!("coordinator/round/{round}"));
    let everyone: Vec<usize> = (0..hospitals.len()).collect();
    let sampled = subsample(&everyone, cfg.fed.subsample.unwrap_or(hospitals.len()), &mut server_rng)?;

    let mut candidates: Vec<(NodeId, CapsNet)> = Vec::with_capacity(sampled.len());
    let mut txs: Vec<Transaction> = Vec::with_capacity(sampled.len() + 1);
    for &k in &sampled {
        let h = &hospitals[k];
        let id = h.id();
        let (trained, local) = train_local(&state.global, &h.partition, &train, local_train_seed(seed, &id, round))?;
        let mut noise = rng::stream(seed, &format!("hospital/{}/laplace/{round}", id.to_hex()));
        let perturbed =
            trained.with_params(laplace_perturb(trained.params(), cfg.fed.laplace_sensitivity, cfg.fed.epsilon, &mut noise)?)?;
        let tx = sign_transaction(
            TxDraft {
                kind: TxKind::ModelSubmission,
                hospital: id,
                category: category.to_string(),
                round,
                model_hash: perturbed.model_hash(),
                mae_claim: local.mae.unwrap_or(0.0),
                payload_meta: PayloadMeta { data_type: "capsnet-weights/f64".into(), size: n_params as u64 * 8 },
                tc: timestamp,
                votes: Vec::new(),
            },
            &h.keypair,
        )?;
        state.log.send(round, Endpoint::Hospital(id), Endpoint::Coordinator, weights(&perturbed));
        state.log.send(round, Endpoint::Hospital(id), Endpoint::Coordinator, Payload::Transaction { tx_id: tx.tx_id.clone() });
        if !state.registry.verify(&tx)? {
            return Err(Error::Rejected { hospital: id.to_hex(), reason: "submission signature does not verify".into() });
        }
        if tx.model_hash != perturbed.model_hash() {
            return Err(Error::Rejected { hospital: id.to_hex(), reason: "submitted weights do not match the signed hash".into() });
        }
        candidates.push((id, perturbed));
        txs.push(tx);
    }

    let refs: Vec<(NodeId, &CapsNet)> = candidates.iter().map(|(id, m)| (*id, m)).collect();
    let outcome = consensus_round(&refs, &state.validation, cfg.fed.gamma, cfg.chain.acceptance)?;
    let updates: Vec<ModelUpdate> = candidates
        .iter()
        .filter(|(id, _)| outcome.vote(id).is_some_and(|v| v.accepted))
        .map(|(id, m)| Ok(ModelUpdate { hospital: *id, delta: m.params().sub(state.global.params())? }))
        .collect::<Result<_>>()?;

    let (vc, us) = if updates.is_empty() {
        log::warn!("round {round}: every candidate was rejected, keeping the global model");
        (0.0, 0.0)
    } else {
        let stats = update_stats(updates.iter().map(|u| &u.delta))?;
        let mut noise = rng::stream(seed, &format!("coordinator/noise/{round}"));
        let next = dp_federated_round(state.global.params(), &updates, &cfg.fed, &mut noise)?;
        state.global = state.global.with_params(next)?;
        (stats.vc, stats.us)
    };

    let leader = hospitals
        .iter()
        .find(|h| h.id() == outcome.leader)
        .expect("leader is a sampled hospital");
    let global_hash = state.global.model_hash();
    txs.push(sign_transaction(
        TxDraft {
            kind: TxKind::Consensus,
            hospital: outcome.leader,
            category: category.to_string(),
            round,
            model_hash: global_hash.clone(),
            mae_claim: outcome.vote(&outcome.leader).map_or(0.0, |v| v.mae),
            payload_meta: PayloadMeta { data_type: "capsnet-weights/f64".into(), size: n_params as u64 * 8 },
            tc: timestamp,
            votes: outcome.votes.clone(),
        },
        &leader.keypair,
    )?);
    let tx_ids: Vec<String> = txs.iter().map(|t| t.tx_id.clone()).collect();
    let block = state.ledger.append_block(txs, outcome.leader, timestamp)?;
    let (height, block_hash) = (block.height, block.hash.clone());
    for tx_id in tx_ids {
        state.log.send(round, Endpoint::Coordinator, Endpoint::Ledger, Payload::Transaction { tx_id });
    }

    for h in hospitals.iter_mut() {
        let to = Endpoint::Hospital(h.id());
        state.log.send(round, Endpoint::Ledger, to, Payload::Block { height, hash: block_hash.clone() });
        state.log.send(round, Endpoint::Coordinator, to, weights(&state.global));
        h.model = state.global.clone();
    }

    let eval = evaluate(&state.global, &state.test)?;
    state.round = round;
    let accepted = updates.len();
    Ok(RoundReport {
        round,
        providers: hospitals.len(),
        accuracy: eval.accuracy,
        loss: eval.loss,
        mae: eval.mae,
        vc,
        us,
        sampled: sampled.len(),
        accepted,
        rejected: sampled.len() - accepted,
        leader: outcome.leader,
        model_hash: global_hash,
        block_height: height,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
