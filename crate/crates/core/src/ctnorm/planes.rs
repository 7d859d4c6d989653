use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-voxel probabilities in `[0, 1]`, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl ProbMap {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::invalid(format!("prob map {dims:?} needs {n} values, got {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
        }
        Ok(ProbMap { dims, values })
    }
}

/// How the axial, sagittal and coronal predictions are fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Mean,
    Max,
    Min,
}

impl Aggregator {
    pub fn combine(self, a: f64, b: f64, c: f64) -> f64 {
        match self {
            // Relative to `a` so that three equal inputs return `a` exactly.
            Aggregator::Mean => (a + ((b - a) + (c - a)) / 3.0).clamp(0.0, 1.0),
            Aggregator::Max => a.max(b).max(c),
            Aggregator::Min => a.min(b).min(c),
        }
    }
}

pub fn aggregate_plane_probs(
    p_xy: &ProbMap,
    p_yz: &ProbMap,
    p_xz: &ProbMap,
    g: Aggregator,
) -> Result<ProbMap> {
    if p_xy.dims != p_yz.dims || p_xy.dims != p_xz.dims {
        return Err(Error::invalid(format!(
            "plane maps disagree on dims: {:?} {:?} {:?}",
            p_xy.dims, p_yz.dims, p_xz.dims
        )));
    }
    // Revalidate: fields are public.
    for map in [p_xy, p_yz, p_xz] {
        if map.values.len() != map.dims.iter().product::<usize>() {
            return Err(Error::invalid("prob map length does not match dims"));
        }
        if let Some(v) = map.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
        }
    }
    let values = p_xy
        .values
        .iter()
        .zip(&p_yz.values)
        .zip(&p_xz.values)
        .map(|((&a, &b), &c)| g.combine(a, b, c))
        .collect();
    Ok(ProbMap { dims: p_xy.dims, values })
}
