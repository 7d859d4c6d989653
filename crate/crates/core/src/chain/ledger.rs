//! Hash-chained blocks persisted as append-only JSON lines.
//!
//! One block per line, compact JSON in declaration order, hashes as
//! lowercase hex. A ledger file is valid only if every line is exactly the
//! canonical encoding of the block it decodes to, so any byte-level edit
//! is detected even when it still parses.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::id::NodeId;
use super::tx::{verify_embedded, Transaction};
use crate::error::{Error, Result};

const ZERO_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: String,
    pub merkle_root: String,
    pub timestamp: u64,
    pub proposer: NodeId,
    pub tx_list: Vec<Transaction>,
    pub hash: String,
}

#[derive(Serialize)]
struct Header<'a> {
    height: u64,
    prev_hash: &'a str,
    merkle_root: &'a str,
    timestamp: u64,
    proposer: &'a NodeId,
}

impl Block {
    pub fn compute_hash(&self) -> String {
        let header = Header {
            height: self.height,
            prev_hash: &self.prev_hash,
            merkle_root: &self.merkle_root,
            timestamp: self.timestamp,
            proposer: &self.proposer,
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&header).expect("header serializes")))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("blocks serialize")
    }

    fn seal(mut self) -> Self {
        self.merkle_root = merkle_root(&self.tx_list);
        self.hash = self.compute_hash();
        self
    }
}

/// Binary Merkle tree over the transaction ids; an odd node is paired with
/// itself. The empty list hashes to SHA-256 of nothing.
pub fn merkle_root(txs: &[Transaction]) -> String {
    if txs.is_empty() {
        return hex::encode(Sha256::digest([]));
    }
    let mut level: Vec<[u8; 32]> = txs.iter().map(|t| Sha256::digest(t.tx_id.as_bytes()).into()).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                let mut h = Sha256::new();
                h.update(pair[0]);
                h.update(right);
                h.finalize().into()
            })
            .collect();
    }
    hex::encode(level[0])
}

fn genesis(timestamp: u64) -> Block {
    Block {
        height: 0,
        prev_hash: ZERO_HASH.to_string(),
        merkle_root: String::new(),
        timestamp,
        proposer: NodeId::ZERO,
        tx_list: Vec::new(),
        hash: String::new(),
    }
    .seal()
}

/// The block chain, optionally backed by a file. Appends need `&mut self`,
/// which gives the single-writer contract; readers share `&self` and only
/// ever see committed blocks.
#[derive(Debug)]
pub struct Ledger {
    blocks: Vec<Block>,
    path: Option<PathBuf>,
}

impl Ledger {
    pub fn in_memory(genesis_timestamp: u64) -> Self {
        Ledger { blocks: vec![genesis(genesis_timestamp)], path: None }
    }

    /// Creates a new ledger file holding only the genesis block. Fails if
    /// the file already exists.
    pub fn create(path: impl AsRef<Path>, genesis_timestamp: u64) -> Result<Self> {
        let path = path.as_ref();
        let mut f = OpenOptions::new().write(true).create_new(true).open(path).map_err(|e| Error::io(path, e))?;
        let g = genesis(genesis_timestamp);
        writeln!(f, "{}", g.to_line()).map_err(|e| Error::io(path, e))?;
        f.sync_data().map_err(|e| Error::io(path, e))?;
        Ok(Ledger { blocks: vec![g], path: Some(path.to_path_buf()) })
    }

    /// Loads and fully verifies a persisted ledger.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let blocks = parse_lines(&bytes)?;
        check_chain(&blocks)?;
        Ok(Ledger { blocks, path: Some(path.to_path_buf()) })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("ledger always holds genesis")
    }

    /// Height of the newest block (genesis is 0).
    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(usize::try_from(height).ok()?)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Seals `txs` into a block on top of the tip and persists it.
    pub fn append_block(&mut self, txs: Vec<Transaction>, proposer: NodeId, timestamp: u64) -> Result<&Block> {
        for tx in &txs {
            if !verify_embedded(tx) {
                return Err(Error::Rejected {
                    hospital: tx.hospital.to_hex(),
                    reason: format!("transaction {} failed signature verification", tx.tx_id),
                });
            }
        }
        let parent = self.tip();
        if parent.compute_hash() != parent.hash {
            return Err(Error::CorruptLedger(format!("tip at height {} has a stale hash", parent.height)));
        }
        let block = Block {
            height: parent.height + 1,
            prev_hash: parent.hash.clone(),
            merkle_root: String::new(),
            timestamp,
            proposer,
            tx_list: txs,
            hash: String::new(),
        }
        .seal();
        if let Some(path) = &self.path {
            let mut f: File = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
            writeln!(f, "{}", block.to_line()).map_err(|e| Error::io(path, e))?;
            f.sync_data().map_err(|e| Error::io(path, e))?;
        }
        self.blocks.push(block);
        Ok(self.tip())
    }

    /// Recomputes every link, Merkle root and signature from genesis.
    pub fn verify_chain(&self) -> bool {
        check_chain(&self.blocks).is_ok()
    }

    pub fn check(&self) -> Result<()> {
        check_chain(&self.blocks)
    }
}

/// Verifies a persisted ledger byte-for-byte. I/O failures are errors; any
/// corruption is `Ok(false)`.
pub fn verify_file(path: impl AsRef<Path>) -> Result<bool> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_lines(&bytes).and_then(|b| check_chain(&b)).is_ok())
}

fn parse_lines(bytes: &[u8]) -> Result<Vec<Block>> {
    let corrupt = |msg: String| Error::CorruptLedger(msg);
    let text = std::str::from_utf8(bytes).map_err(|e| corrupt(format!("not UTF-8: {e}")))?;
    let body = text.strip_suffix('\n').ok_or_else(|| corrupt("missing trailing newline".into()))?;
    body.split('\n')
        .enumerate()
        .map(|(n, line)| {
            let block: Block =
                serde_json::from_str(line).map_err(|e| corrupt(format!("line {}: {e}", n + 1)))?;
            if block.to_line() != line {
                return Err(corrupt(format!("line {} is not in canonical form", n + 1)));
            }
            Ok(block)
        })
        .collect()
}

fn check_chain(blocks: &[Block]) -> Result<()> {
    let corrupt = |h: usize, msg: &str| Err(Error::CorruptLedger(format!("block {h}: {msg}")));
    let Some(first) = blocks.first() else {
        return Err(Error::CorruptLedger("no genesis block".into()));
    };
    if first.height != 0 || first.prev_hash != ZERO_HASH || !first.tx_list.is_empty() {
        return corrupt(0, "malformed genesis");
    }
    for (k, b) in blocks.iter().enumerate() {
        if b.height != k as u64 {
            return corrupt(k, "height is not contiguous");
        }
        if k > 0 && b.prev_hash != blocks[k - 1].hash {
            return corrupt(k, "prev_hash does not match parent");
        }
        if b.merkle_root != merkle_root(&b.tx_list) {
            return corrupt(k, "merkle root mismatch");
        }
        if b.hash != b.compute_hash() {
            return corrupt(k, "block hash mismatch");
        }
        if let Some(tx) = b.tx_list.iter().find(|t| !verify_embedded(t)) {
            return Err(Error::CorruptLedger(format!("block {k}: transaction {} does not verify", tx.tx_id)));
        }
    }
    Ok(())
}
