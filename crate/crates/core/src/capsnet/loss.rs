use serde::{Deserialize, Serialize};

use super::routing::norm;
use crate::error::{Error, Result};

/// Margin-loss constants: `m⁺`, `m⁻` and the down-weighting `λ` of absent classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginParams {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
}

impl Default for MarginParams {
    fn default() -> Self {
        MarginParams { m_plus: 0.9, m_minus: 0.1, lambda: 0.5 }
    }
}

impl MarginParams {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.m_minus
            && self.m_minus < self.m_plus
            && self.m_plus < 1.0
            && self.lambda.is_finite()
            && self.lambda >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("margin parameters out of range: {self:?}")))
        }
    }
}

pub fn margin_loss(v: &[Vec<f64>], label: usize, params: &MarginParams) -> Result<f64> {
    Ok(margin_loss_grad(v, label, params)?.0)
}

/// Loss and its gradient with respect to every output pose.
pub fn margin_loss_grad(v: &[Vec<f64>], label: usize, params: &MarginParams) -> Result<(f64, Vec<Vec<f64>>)> {
    params.validate()?;
    if label >= v.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", v.len())));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(v.len());
    for (j, vj) in v.iter().enumerate() {
        let len = norm(vj);
        // dL/d‖v_j‖
        let dlen = if j == label {
            let gap = (params.m_plus - len).max(0.0);
            loss += gap * gap;
            -2.0 * gap
        } else {
            let gap = (len - params.m_minus).max(0.0);
            loss += params.lambda * gap * gap;
            2.0 * params.lambda * gap
        };
        let g = if len > 0.0 { vj.iter().map(|x| dlen * x / len).collect() } else { vec![0.0; vj.len()] };
        grads.push(g);
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(len: f64) -> Vec<f64> {
        vec![len * 0.6, len * 0.8]
    }

    #[test]
    fn inactive_hinges_give_zero() {
        let v = vec![pose(0.95), pose(0.05), pose(0.1)];
        assert_eq!(margin_loss(&v, 0, &MarginParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn silent_label_capsule() {
        let v = vec![pose(0.0), pose(0.0)];
        let l = margin_loss(&v, 1, &MarginParams::default()).unwrap();
        assert!((l - 0.81).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_two_class() {
        let v = vec![pose(0.5), pose(0.5)];
        let l = margin_loss(&v, 0, &MarginParams::default()).unwrap();
        assert!((l - 0.24).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let v = vec![pose(0.5)];
        assert!(matches!(margin_loss(&v, 1, &MarginParams::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn bad_margins_rejected() {
        let p = MarginParams { m_plus: 0.1, m_minus: 0.9, lambda: 0.5 };
        assert!(margin_loss(&[pose(0.5)], 0, &p).is_err());
    }
}
