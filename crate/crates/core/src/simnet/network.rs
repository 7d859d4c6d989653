use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chain::NodeId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Coordinator,
    Hospital(NodeId),
    Ledger,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Coordinator => f.write_str("coordinator"),
            Endpoint::Hospital(id) => write!(f, "hospital {id:?}"),
            Endpoint::Ledger => f.write_str("ledger"),
        }
    }
}

/// What crossed the wire. Weights are logged by hash and length only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Weights { model_hash: String, len: usize },
    Transaction { tx_id: String },
    Block { height: u64, hash: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub round: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub payload: Payload,
}

/// In-process stand-in for the network: every send is recorded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageLog {
    messages: Vec<Message>,
}

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, round: u64, from: Endpoint, to: Endpoint, payload: Payload) {
        log::trace!("round {round}: {from} -> {to}: {payload:?}");
        self.messages.push(Message { round, from, to, payload });
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Checks that weight payloads have exactly `n_params` entries, i.e.
    /// nothing but model parameters left a hospital, and that no message
    /// goes from one hospital to itself.
    pub fn audit(&self, n_params: usize) -> Result<()> {
        for (k, m) in self.messages.iter().enumerate() {
            if m.from == m.to {
                return Err(Error::invalid(format!("message {k} loops back to {}", m.from)));
            }
            if let Payload::Weights { len, .. } = m.payload {
                if len != n_params {
                    return Err(Error::invalid(format!(
                        "message {k} from {} carries {len} values, a model has {n_params}",
                        m.from
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_flags_odd_weight_payloads() {
        let h = Endpoint::Hospital(NodeId::from_bytes([3; 20]));
        let mut log = MessageLog::new();
        log.send(1, h, Endpoint::Coordinator, Payload::Weights { model_hash: "x".into(), len: 10 });
        log.send(1, h, Endpoint::Ledger, Payload::Transaction { tx_id: "t".into() });
        assert!(log.audit(10).is_ok());
        assert!(log.audit(11).is_err());
        log.send(1, h, h, Payload::Block { height: 1, hash: "b".into() });
        assert!(log.audit(10).is_err());
    }
}
