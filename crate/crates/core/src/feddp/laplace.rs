use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::WeightTensor;

/// One draw from `Laplace(0, scale)` by inverse CDF.
pub fn laplace_sample(scale: f64, rng: &mut impl Rng) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -scale * u.signum() * tail.ln();
        }
    }
}

/// `m + Laplace(s/ε)` elementwise.
pub fn laplace_perturb(m: &WeightTensor, sensitivity: f64, epsilon: f64, rng: &mut impl Rng) -> Result<WeightTensor> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(sensitivity.is_finite() && sensitivity >= 0.0) {
        return Err(Error::invalid(format!("sensitivity must be non-negative, got {sensitivity}")));
    }
    if sensitivity == 0.0 {
        return Ok(m.clone());
    }
    let scale = sensitivity / epsilon;
    m.with_data(m.data().iter().map(|v| v + laplace_sample(scale, rng)).collect())
}

/// `‖f(H) − f(H′)‖₁` for one neighbouring pair.
pub fn sensitivity_bound(f_h: &WeightTensor, f_h_prime: &WeightTensor) -> Result<f64> {
    f_h.l1_distance(f_h_prime)
}

/// Largest L1 distance over the supplied neighbouring pairs.
pub fn max_sensitivity<'a>(pairs: impl IntoIterator<Item = (&'a WeightTensor, &'a WeightTensor)>) -> Result<f64> {
    let mut best: Option<f64> = None;
    for (a, b) in pairs {
        let d = sensitivity_bound(a, b)?;
        best = Some(best.map_or(d, |m| m.max(d)));
    }
    best.ok_or_else(|| Error::invalid("no neighbouring pairs supplied"))
}
