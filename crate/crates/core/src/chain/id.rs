use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub const ID_BYTES: usize = 20;

/// A 160-bit node identifier: the first 20 bytes of SHA-256 over the
/// node's public key. Rendered as 40 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId([u8; ID_BYTES]);

impl NodeId {
    pub const ZERO: NodeId = NodeId([0; ID_BYTES]);

    pub fn from_bytes(bytes: [u8; ID_BYTES]) -> Self {
        NodeId(bytes)
    }

    pub fn from_public_key(key: &VerifyingKey) -> Self {
        let digest = Sha256::digest(key.as_bytes());
        let mut id = [0u8; ID_BYTES];
        id.copy_from_slice(&digest[..ID_BYTES]);
        NodeId(id)
    }

    pub fn as_bytes(&self) -> &[u8; ID_BYTES] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", &self.to_hex()[..8])
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // Uppercase hex would decode to the same id but is not canonical.
        if s.len() != 2 * ID_BYTES || s.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(Error::Format { what: "node id", detail: format!("{s:?} is not 40 lowercase hex chars") });
        }
        let mut id = [0u8; ID_BYTES];
        hex::decode_to_slice(s, &mut id).map_err(|e| Error::Format { what: "node id", detail: e.to_string() })?;
        Ok(NodeId(id))
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// XOR distance between two ids, ordered as a big-endian unsigned integer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Distance([u8; ID_BYTES]);

impl Distance {
    pub fn as_bytes(&self) -> &[u8; ID_BYTES] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    pub fn leading_zeros(&self) -> u32 {
        let mut n = 0;
        for &b in &self.0 {
            if b == 0 {
                n += 8;
            } else {
                return n + b.leading_zeros();
            }
        }
        n
    }

    /// Kademlia bucket index: position of the highest set bit, `None` for zero.
    pub fn bucket_index(&self) -> Option<u32> {
        let lz = self.leading_zeros();
        (lz < 8 * ID_BYTES as u32).then(|| 8 * ID_BYTES as u32 - 1 - lz)
    }

    /// Nearest `f64` to the distance value.
    pub fn to_f64(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, &b| acc * 256.0 + b as f64)
    }

    /// Bitwise XOR of two distances.
    pub fn xor(&self, other: &Distance) -> Distance {
        let mut out = [0u8; ID_BYTES];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(&other.0)) {
            *o = a ^ b;
        }
        Distance(out)
    }
}

pub fn xor_distance(a: &NodeId, b: &NodeId) -> Distance {
    let mut out = [0u8; ID_BYTES];
    for (o, (x, y)) in out.iter_mut().zip(a.0.iter().zip(&b.0)) {
        *o = x ^ y;
    }
    Distance(out)
}

/// A node's signing key together with its derived id.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
    id: NodeId,
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair").field("id", &self.id).finish_non_exhaustive()
    }
}

impl Keypair {
    pub fn from_secret(secret: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&secret);
        let id = NodeId::from_public_key(&signing.verifying_key());
        Keypair { signing, id }
    }

    /// Deterministic key for `label` under the experiment seed.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut secret = [0u8; 32];
        rng::stream(seed, &format!("keypair/{label}")).fill_bytes(&mut secret);
        Keypair::from_secret(secret)
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub(crate) fn signing_key(&self) -> &SigningKey {
        &self.signing
    }
}
