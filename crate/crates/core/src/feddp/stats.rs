use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::WeightTensor;

/// Spread of the hospitals' updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Per-parameter mean update `μ_{x,y}`.
    pub mean: WeightTensor,
    /// Per-parameter population variance across hospitals.
    pub var_matrix: WeightTensor,
    /// Mean of `var_matrix`.
    pub vc: f64,
    /// Mean of `μ²`.
    pub us: f64,
}

// Sums in value order, so the result is independent of hospital order.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub fn update_stats<'a>(deltas: impl IntoIterator<Item = &'a WeightTensor>) -> Result<UpdateStats> {
    let deltas: Vec<&WeightTensor> = deltas.into_iter().collect();
    let first = *deltas.first().ok_or_else(|| Error::invalid("update_stats needs at least one update"))?;
    if first.is_empty() {
        return Err(Error::invalid("updates are empty"));
    }
    if let Some(d) = deltas.iter().find(|d| !d.same_shape(first)) {
        return Err(Error::invalid(format!("update shape {:?} differs from {:?}", d.shape(), first.shape())));
    }
    let h = deltas.len() as f64;
    let n = first.len();
    let mut column = vec![0.0; deltas.len()];
    let mut mean = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for k in 0..n {
        for (slot, d) in column.iter_mut().zip(&deltas) {
            *slot = d.data()[k];
        }
        let mu = ordered_sum(&mut column) / h;
        for slot in column.iter_mut() {
            *slot = (*slot - mu) * (*slot - mu);
        }
        var.push(ordered_sum(&mut column) / h);
        mean.push(mu);
    }
    let (b, a) = first.matrix_dims();
    let cells = (b * a) as f64;
    let vc = var.iter().sum::<f64>() / cells;
    let us = mean.iter().map(|m| m * m).sum::<f64>() / cells;
    Ok(UpdateStats { mean: first.with_data(mean)?, var_matrix: first.with_data(var)?, vc, us })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> WeightTensor {
        WeightTensor::new(v.to_vec(), vec![1, v.len()]).unwrap()
    }

    #[test]
    fn hand_case() {
        let s = update_stats([&t(&[1.0, 3.0]), &t(&[3.0, 5.0])]).unwrap();
        assert_eq!(s.mean.data(), &[2.0, 4.0]);
        assert_eq!(s.var_matrix.data(), &[1.0, 1.0]);
        assert_eq!(s.vc, 1.0);
        assert_eq!(s.us, 10.0);
    }

    #[test]
    fn identical_updates_have_no_spread() {
        let u = t(&[0.5, -1.0, 2.0]);
        let s = update_stats([&u, &u, &u]).unwrap();
        assert!(s.var_matrix.data().iter().all(|&v| v == 0.0));
        assert_eq!(s.vc, 0.0);
        assert!((s.us - (0.25 + 1.0 + 4.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_hospital() {
        let s = update_stats([&t(&[2.0, -2.0])]).unwrap();
        assert_eq!(s.vc, 0.0);
        assert_eq!(s.us, 4.0);
    }

    #[test]
    fn errors() {
        assert!(update_stats(std::iter::empty::<&WeightTensor>()).is_err());
        assert!(update_stats([&t(&[1.0]), &t(&[1.0, 2.0])]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(rows in prop::collection::vec(prop::collection::vec(-5f64..5.0, 3), 2..7), rot in 0usize..7) {
            let ts: Vec<WeightTensor> = rows.iter().map(|r| t(r)).collect();
            let mut perm: Vec<&WeightTensor> = ts.iter().collect();
            let k = rot % perm.len();
            perm.rotate_left(k);
            perm.reverse();
            let a = update_stats(&ts).unwrap();
            let b = update_stats(perm).unwrap();
            prop_assert_eq!(a.vc, b.vc);
            prop_assert_eq!(a.us, b.us);
            prop_assert!(a.vc >= 0.0 && a.us >= 0.0);
        }
    }
}
