//! Signed transactions and their canonical encoding.
//!
//! The canonical bytes of a transaction are its compact JSON encoding,
//! fields in declaration order, with `tx_id` and `signature` set to empty
//! strings. `tx_id` is the SHA-256 of those bytes and `signature` an
//! Ed25519 signature over them.

use std::collections::BTreeMap;

use ed25519_dalek::{Signature, Signer, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::id::{Keypair, NodeId};
use crate::error::{Error, Result};

pub const SIGNATURE_SCHEME: &str = "ed25519";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    /// A hospital submitting its local model.
    ModelSubmission,
    /// The leader recording a consensus outcome and the resulting global model.
    Consensus,
}

/// What the referenced payload is; the payload itself stays off chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadMeta {
    pub data_type: String,
    pub size: u64,
}

/// One candidate's line in a consensus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub hospital: NodeId,
    pub mae: f64,
    pub score: f64,
    pub accepted: bool,
}

/// Transaction contents before signing.
#[derive(Debug, Clone, PartialEq)]
pub struct TxDraft {
    pub kind: TxKind,
    pub hospital: NodeId,
    pub category: String,
    pub round: u64,
    pub model_hash: String,
    pub mae_claim: f64,
    pub payload_meta: PayloadMeta,
    pub tc: u64,
    pub votes: Vec<Vote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    pub scheme: String,
    pub kind: TxKind,
    pub hospital: NodeId,
    pub public_key: String,
    pub category: String,
    pub round: u64,
    pub model_hash: String,
    pub mae_claim: f64,
    pub payload_meta: PayloadMeta,
    /// Running transaction count of the submitting node.
    pub tc: u64,
    pub votes: Vec<Vote>,
    pub signature: String,
}

impl Transaction {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut blank = self.clone();
        blank.tx_id.clear();
        blank.signature.clear();
        serde_json::to_vec(&blank).expect("transactions serialize")
    }

    fn expected_id(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }

    /// The embedded public key, if well formed and bound to `hospital`.
    pub fn embedded_key(&self) -> Option<VerifyingKey> {
        let bytes: [u8; 32] = hex::decode(&self.public_key).ok()?.try_into().ok()?;
        let key = VerifyingKey::from_bytes(&bytes).ok()?;
        (NodeId::from_public_key(&key) == self.hospital).then_some(key)
    }
}

fn finite_votes(votes: &[Vote]) -> bool {
    votes.iter().all(|v| v.mae.is_finite() && v.score.is_finite())
}

pub fn sign_transaction(draft: TxDraft, key: &Keypair) -> Result<Transaction> {
    if draft.hospital != key.id() {
        return Err(Error::UnknownNode(format!(
            "draft names {} but the key belongs to {}",
            draft.hospital,
            key.id()
        )));
    }
    if !draft.mae_claim.is_finite() || !finite_votes(&draft.votes) {
        return Err(Error::invalid("transaction numbers must be finite"));
    }
    let mut tx = Transaction {
        tx_id: String::new(),
        scheme: SIGNATURE_SCHEME.to_string(),
        kind: draft.kind,
        hospital: draft.hospital,
        public_key: hex::encode(key.public_key().as_bytes()),
        category: draft.category,
        round: draft.round,
        model_hash: draft.model_hash,
        mae_claim: draft.mae_claim,
        payload_meta: draft.payload_meta,
        tc: draft.tc,
        votes: draft.votes,
        signature: String::new(),
    };
    tx.signature = hex::encode(key.signing_key().sign(&tx.canonical_bytes()).to_bytes());
    tx.tx_id = tx.expected_id();
    Ok(tx)
}

/// True when `tx` is signed by `key`, names the matching node and carries
/// the right id.
pub fn verify_transaction(tx: &Transaction, key: &VerifyingKey) -> bool {
    if tx.scheme != SIGNATURE_SCHEME || tx.public_key != hex::encode(key.as_bytes()) {
        return false;
    }
    if NodeId::from_public_key(key) != tx.hospital {
        return false;
    }
    let Ok(sig_bytes) = hex::decode(&tx.signature) else { return false };
    let Ok(sig_bytes): std::result::Result<[u8; 64], _> = sig_bytes.try_into() else { return false };
    tx.tx_id == tx.expected_id()
        && key.verify(&tx.canonical_bytes(), &Signature::from_bytes(&sig_bytes)).is_ok()
}

/// Verifies against the key embedded in the transaction itself.
pub fn verify_embedded(tx: &Transaction) -> bool {
    tx.embedded_key().is_some_and(|k| verify_transaction(tx, &k))
}

/// Registered public keys of the participating nodes.
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    keys: BTreeMap<NodeId, VerifyingKey>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, key: VerifyingKey) -> NodeId {
        let id = NodeId::from_public_key(&key);
        self.keys.insert(id, key);
        id
    }

    pub fn get(&self, node: &NodeId) -> Option<&VerifyingKey> {
        self.keys.get(node)
    }

    /// `Err(UnknownNode)` for unregistered signers, otherwise the verdict.
    pub fn verify(&self, tx: &Transaction) -> Result<bool> {
        let key = self.keys.get(&tx.hospital).ok_or_else(|| Error::UnknownNode(tx.hospital.to_hex()))?;
        Ok(verify_transaction(tx, key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(key: &Keypair) -> TxDraft {
        TxDraft {
            kind: TxKind::ModelSubmission,
            hospital: key.id(),
            category: "covid-ct".into(),
            round: 1,
            model_hash: "ab".repeat(32),
            mae_claim: 0.125,
            payload_meta: PayloadMeta { data_type: "capsnet-weights".into(), size: 800 },
            tc: 1,
            votes: vec![],
        }
    }

    #[test]
    fn sign_verify_round_trip() {
        let k = Keypair::derive(1, "a");
        let tx = sign_transaction(draft(&k), &k).unwrap();
        assert!(verify_transaction(&tx, &k.public_key()));
        assert!(verify_embedded(&tx));
        assert_eq!(tx.tx_id, hex::encode(Sha256::digest(tx.canonical_bytes())));
    }

    #[test]
    fn signing_is_deterministic() {
        let k = Keypair::derive(1, "a");
        assert_eq!(sign_transaction(draft(&k), &k).unwrap(), sign_transaction(draft(&k), &k).unwrap());
    }

    #[test]
    fn mutated_model_hash_fails() {
        let k = Keypair::derive(1, "a");
        let mut tx = sign_transaction(draft(&k), &k).unwrap();
        tx.model_hash.replace_range(0..1, "c");
        assert!(!verify_transaction(&tx, &k.public_key()));
    }

    #[test]
    fn every_canonical_byte_is_bound() {
        let k = Keypair::derive(1, "a");
        let tx = sign_transaction(draft(&k), &k).unwrap();
        let bytes = tx.canonical_bytes();
        for pos in 0..bytes.len() {
            let mut b = bytes.clone();
            b[pos] ^= 0x01;
            // Mutations that still parse must fail verification.
            if let Ok(mut m) = serde_json::from_slice::<Transaction>(&b) {
                m.tx_id = tx.tx_id.clone();
                m.signature = tx.signature.clone();
                assert!(!verify_transaction(&m, &k.public_key()), "byte {pos} unbound");
            }
        }
    }

    #[test]
    fn wrong_key_fails() {
        let k = Keypair::derive(1, "a");
        let other = Keypair::derive(1, "b");
        let tx = sign_transaction(draft(&k), &k).unwrap();
        assert!(!verify_transaction(&tx, &other.public_key()));
        // A forged signature from another key over the same claim.
        let mut forged = tx.clone();
        forged.signature = hex::encode(other.signing_key().sign(&tx.canonical_bytes()).to_bytes());
        assert!(!verify_transaction(&forged, &k.public_key()));
        assert!(!verify_embedded(&forged));
    }

    #[test]
    fn unknown_signer() {
        let k = Keypair::derive(1, "a");
        let other = Keypair::derive(1, "b");
        assert!(matches!(sign_transaction(draft(&k), &other), Err(Error::UnknownNode(_))));
        let tx = sign_transaction(draft(&k), &k).unwrap();
        let mut reg = KeyRegistry::new();
        assert!(matches!(reg.verify(&tx), Err(Error::UnknownNode(_))));
        reg.register(k.public_key());
        assert!(reg.verify(&tx).unwrap());
    }
}
