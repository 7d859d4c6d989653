//! Flat parameter tensors with shape metadata.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `f64` tensor stored flat, row-major.
///
/// Invariants: `shape.iter().product() == data.len()`, every dimension is
/// positive and every entry is finite. Constructors and arithmetic reject
/// anything that would break them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct WeightTensor {
    data: Vec<f64>,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for WeightTensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        WeightTensor::new(raw.data, raw.shape)
    }
}

impl From<WeightTensor> for RawTensor {
    fn from(t: WeightTensor) -> Self {
        RawTensor { shape: t.shape, data: t.data }
    }
}

impl WeightTensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::invalid("shape must have at least one dimension"));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("entry {i} is not finite")));
        }
        Ok(WeightTensor { data, shape })
    }

    /// A rank-1 tensor. An empty vector gives shape `[0]`, which most
    /// operations reject.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        WeightTensor::new(data, vec![n])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        WeightTensor::new(vec![0.0; n], shape)
    }

    pub fn zeros_like(other: &WeightTensor) -> Self {
        WeightTensor { data: vec![0.0; other.data.len()], shape: other.shape.clone() }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(rows, cols)` view used by the update statistics: rank-2 tensors keep
    /// their shape, everything else is treated as a single row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [b, a] => (*b, *a),
            _ => (1, self.data.len()),
        }
    }

    pub fn same_shape(&self, other: &WeightTensor) -> bool {
        self.shape == other.shape
    }

    fn check_shape(&self, other: &WeightTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )))
        }
    }

    /// Replaces the data keeping the shape; fails on length change or
    /// non-finite entries.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        WeightTensor::new(data, self.shape.clone())
    }

    pub fn add(&self, other: &WeightTensor) -> Result<Self> {
        self.check_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        self.with_data(data)
    }

    pub fn sub(&self, other: &WeightTensor) -> Result<Self> {
        self.check_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        self.with_data(data)
    }

    pub fn scale(&self, k: f64) -> Result<Self> {
        self.with_data(self.data.iter().map(|v| v * k).collect())
    }

    pub fn l1_distance(&self, other: &WeightTensor) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum())
    }

    /// Euclidean norm.
    pub fn l2_norm(&self) -> Result<f64> {
        l2_norm(self)
    }

    /// Little-endian f64 encoding of the data, used for checkpoint blobs.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// `sqrt(Σ xᵢ²)`. Rejects empty tensors.
pub fn l2_norm(w: &WeightTensor) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::invalid("l2_norm of an empty tensor"));
    }
    // Scale by the largest magnitude so huge-but-finite entries do not overflow.
    let max = w.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = w.data.iter().map(|v| (v / max) * (v / max)).sum();
    Ok(max * sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> WeightTensor {
        WeightTensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm(&t(&[3.0, 4.0])).unwrap(), 5.0);
        assert_eq!(l2_norm(&t(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(l2_norm(&t(&[1.0, 1.0, 1.0, 1.0])).unwrap(), 2.0);
    }

    #[test]
    fn empty_norm_is_rejected() {
        let empty = WeightTensor::from_vec(vec![]).unwrap();
        assert!(matches!(l2_norm(&empty), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constructor_checks_invariants() {
        assert!(WeightTensor::new(vec![1.0; 6], vec![2, 3]).is_ok());
        assert!(WeightTensor::new(vec![1.0; 5], vec![2, 3]).is_err());
        assert!(WeightTensor::new(vec![1.0, f64::NAN], vec![2]).is_err());
        assert!(WeightTensor::new(vec![], vec![]).is_err());
        assert!(t(&[f64::MAX]).scale(2.0).is_err());
    }

    #[test]
    fn serde_revalidates() {
        let bad = r#"{"shape":[3],"data":[1.0,2.0]}"#;
        assert!(serde_json::from_str::<WeightTensor>(bad).is_err());
        let good = t(&[1.5, -2.0]);
        let back: WeightTensor = serde_json::from_str(&serde_json::to_string(&good).unwrap()).unwrap();
        assert_eq!(back, good);
    }

    #[test]
    fn huge_entries_do_not_overflow() {
        let n = l2_norm(&t(&[1e200, 1e200])).unwrap();
        assert!((n / 1e200 - 2f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn norm_is_absolutely_homogeneous(
            v in prop::collection::vec(-1e3f64..1e3, 1..32),
            k in -1e3f64..1e3,
        ) {
            let w = t(&v);
            let lhs = l2_norm(&w.scale(k).unwrap()).unwrap();
            let rhs = k.abs() * l2_norm(&w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }
}
