//! The blockchain layer: node identities, communities, signed
//! transactions, the hash-chained ledger and MAE consensus.
//!
//! Only model hashes, MAE figures and payload metadata go on chain. Raw
//! patient data never does.

mod community;
mod consensus;
mod id;
mod ledger;
mod tx;

pub use community::{category_distance, AttributeMatrix, CommunityTable};
pub use consensus::{consensus_round, consensus_vote, retrieve_model, AcceptanceRule, ConsensusOutcome, ModelRef};
pub use id::{xor_distance, Distance, Keypair, NodeId, ID_BYTES};
pub use ledger::{merkle_root, verify_file, Block, Ledger};
pub use tx::{
    sign_transaction, verify_embedded, verify_transaction, KeyRegistry, PayloadMeta, Transaction, TxDraft, TxKind,
    Vote, SIGNATURE_SCHEME,
};
