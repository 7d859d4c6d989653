use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Labelled samples held by one party.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks every sample against an input length and class count.
    pub fn validate(&self, input_len: usize, n_classes: usize) -> Result<()> {
        for (k, s) in self.samples.iter().enumerate() {
            if s.features.len() != input_len {
                return Err(Error::invalid(format!(
                    "sample {k} has {} features, expected {input_len}",
                    s.features.len()
                )));
            }
            if s.label >= n_classes {
                return Err(Error::invalid(format!("sample {k} label {} out of range", s.label)));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("sample {k} has non-finite features")));
            }
        }
        Ok(())
    }

    /// Concatenation of several datasets, in order.
    pub fn union<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Dataset {
        Dataset { samples: parts.into_iter().flat_map(|d| d.samples.iter().cloned()).collect() }
    }
}

impl FromIterator<Sample> for Dataset {
    fn from_iter<I: IntoIterator<Item = Sample>>(iter: I) -> Self {
        Dataset { samples: iter.into_iter().collect() }
    }
}
