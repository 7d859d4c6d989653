//! Category communities and their per-node routing tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::id::{xor_distance, NodeId};
use crate::error::{Error, Result};

/// Hospitals grouped by data category. Each community keeps, for every
/// member, its peers in XOR-distance order split into buckets of at most
/// `⌊log2 n⌋ + 1` entries (`n` = community size). Buckets follow Kademlia
/// prefix buckets and only split further when one overflows, so every peer
/// sits in exactly one bucket.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommunityTable {
    categories: BTreeMap<String, BTreeSet<NodeId>>,
    tables: BTreeMap<(String, NodeId), Vec<Vec<NodeId>>>,
}

impl CommunityTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn join(&mut self, category: &str, node: NodeId) {
        if self.categories.entry(category.to_string()).or_default().insert(node) {
            self.rebuild(category);
        }
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.categories.contains_key(category)
    }

    pub fn is_known(&self, node: &NodeId) -> bool {
        self.categories.values().any(|m| m.contains(node))
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn members(&self, category: &str) -> Result<&BTreeSet<NodeId>> {
        self.categories.get(category).ok_or_else(|| Error::NotFound(format!("category {category:?}")))
    }

    /// Bucket capacity for a community of `n` members.
    pub fn bucket_capacity(n: usize) -> usize {
        (n.max(1) as f64).log2().floor() as usize + 1
    }

    /// `node`'s buckets within `category`, nearest first.
    pub fn buckets(&self, category: &str, node: &NodeId) -> Result<&[Vec<NodeId>]> {
        self.members(category)?;
        self.tables
            .get(&(category.to_string(), *node))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownNode(format!("{node} is not in category {category:?}")))
    }

    fn rebuild(&mut self, category: &str) {
        let members = &self.categories[category];
        let cap = Self::bucket_capacity(members.len());
        for &node in members {
            let mut peers: Vec<NodeId> = members.iter().copied().filter(|p| *p != node).collect();
            peers.sort_by_key(|p| xor_distance(&node, p));
            let mut buckets: Vec<Vec<NodeId>> = Vec::new();
            let mut current_prefix = None;
            for p in peers {
                let prefix = xor_distance(&node, &p).bucket_index();
                let start_new = match buckets.last() {
                    None => true,
                    Some(last) => current_prefix != Some(prefix) || last.len() >= cap,
                };
                if start_new {
                    buckets.push(Vec::new());
                    current_prefix = Some(prefix);
                }
                buckets.last_mut().expect("just pushed").push(p);
            }
            self.tables.insert((category.to_string(), node), buckets);
        }
    }
}

/// Non-negative attribute weights `x_pq` per node; an attribute is held
/// when its weight is positive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeMatrix {
    rows: BTreeMap<NodeId, Vec<f64>>,
}

impl AttributeMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, node: NodeId, weights: Vec<f64>) -> Result<()> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("attribute weights must be finite and non-negative"));
        }
        self.rows.insert(node, weights);
        Ok(())
    }

    /// Binary category-membership rows, one column per category.
    pub fn from_communities(table: &CommunityTable) -> Self {
        let cats: Vec<&BTreeSet<NodeId>> = table.categories.values().collect();
        let mut rows = BTreeMap::new();
        for members in &cats {
            for &n in *members {
                rows.entry(n).or_insert_with(|| {
                    cats.iter().map(|m| if m.contains(&n) { 1.0 } else { 0.0 }).collect::<Vec<f64>>()
                });
            }
        }
        AttributeMatrix { rows }
    }

    pub fn row(&self, node: &NodeId) -> Option<&[f64]> {
        self.rows.get(node).map(Vec::as_slice)
    }
}

/// Share of attribute weight the two nodes do not have in common, scaled
/// by `log2(1 + xor_distance)`.
pub fn category_distance(a: &NodeId, b: &NodeId, attrs: &AttributeMatrix) -> Result<f64> {
    let ra = attrs.row(a).ok_or_else(|| Error::UnknownNode(a.to_hex()))?;
    let rb = attrs.row(b).ok_or_else(|| Error::UnknownNode(b.to_hex()))?;
    if ra.len() != rb.len() {
        return Err(Error::invalid("attribute rows have different lengths"));
    }
    let (mut sym, mut union) = (0.0, 0.0);
    for (&xa, &xb) in ra.iter().zip(rb) {
        let (ha, hb) = (xa > 0.0, xb > 0.0);
        if ha || hb {
            union += xa + xb;
            if ha != hb {
                sym += xa + xb;
            }
        }
    }
    if union == 0.0 {
        return Err(Error::invalid("both attribute sets are empty"));
    }
    Ok(sym / union * log_xor(a, b))
}

/// `log2(1 + d(a, b))`; zero for identical ids.
fn log_xor(a: &NodeId, b: &NodeId) -> f64 {
    xor_distance(a, b).to_f64().ln_1p() / std::f64::consts::LN_2
}
