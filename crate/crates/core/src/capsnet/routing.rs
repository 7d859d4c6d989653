//! Capsule primitives: affine prediction, squash, coupling softmax and
//! routing by agreement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The `W_ij` matrices, one `d_out × d_in` block per (input, output) pair,
/// stored row-major in `(i, j)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformWeights {
    pub n_in: usize,
    pub n_out: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub data: Vec<f64>,
}

impl TransformWeights {
    pub fn new(n_in: usize, n_out: usize, d_in: usize, d_out: usize, data: Vec<f64>) -> Result<Self> {
        if n_in == 0 || n_out == 0 || d_in == 0 || d_out == 0 {
            return Err(Error::invalid("capsule dimensions must be positive"));
        }
        if data.len() != n_in * n_out * d_in * d_out {
            return Err(Error::invalid(format!(
                "transform weights need {} entries, got {}",
                n_in * n_out * d_in * d_out,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("transform weights must be finite"));
        }
        Ok(TransformWeights { n_in, n_out, d_in, d_out, data })
    }

    /// `n_out` identity-like blocks (ones on the leading diagonal).
    pub fn identity(n_in: usize, n_out: usize, d: usize) -> Self {
        let mut data = vec![0.0; n_in * n_out * d * d];
        for blk in data.chunks_exact_mut(d * d) {
            for r in 0..d {
                blk[r * d + r] = 1.0;
            }
        }
        TransformWeights { n_in, n_out, d_in: d, d_out: d, data }
    }

    pub fn block(&self, i: usize, j: usize) -> &[f64] {
        let sz = self.d_in * self.d_out;
        let off = (i * self.n_out + j) * sz;
        &self.data[off..off + sz]
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let sz = self.d_in * self.d_out;
        let off = (i * self.n_out + j) * sz;
        &mut self.data[off..off + sz]
    }
}

/// Prediction vectors `û_{j|i}`, flat in `(i, j)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub n_in: usize,
    pub n_out: usize,
    pub d_out: usize,
    pub data: Vec<f64>,
}

impl Predictions {
    pub fn new(n_in: usize, n_out: usize, d_out: usize, data: Vec<f64>) -> Result<Self> {
        if n_in == 0 || n_out == 0 || d_out == 0 || data.len() != n_in * n_out * d_out {
            return Err(Error::invalid(format!(
                "predictions {n_in}x{n_out}x{d_out} do not match {} values",
                data.len()
            )));
        }
        Ok(Predictions { n_in, n_out, d_out, data })
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * self.n_out + j) * self.d_out;
        &self.data[off..off + self.d_out]
    }
}

/// Routing logits `b` and couplings `c`, both `n_in × n_out` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingState {
    pub n_in: usize,
    pub n_out: usize,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl CouplingState {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        let uniform = 1.0 / n_out as f64;
        CouplingState { n_in, n_out, b: vec![0.0; n_in * n_out], c: vec![uniform; n_in * n_out] }
    }

    pub fn c_row(&self, i: usize) -> &[f64] {
        &self.c[i * self.n_out..(i + 1) * self.n_out]
    }

    pub fn b_row(&self, i: usize) -> &[f64] {
        &self.b[i * self.n_out..(i + 1) * self.n_out]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingOutput {
    /// Output capsule poses `v_j`.
    pub poses: Vec<Vec<f64>>,
    /// Pre-squash totals `s_j` of the final iteration.
    pub totals: Vec<Vec<f64>>,
    /// Couplings used for the returned poses.
    pub coupling: CouplingState,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y = M x` for a row-major `rows × x.len()` matrix, accumulated into `y`.
pub(crate) fn matvec_acc(m: &[f64], x: &[f64], scale: f64, y: &mut [f64]) {
    let cols = x.len();
    for (r, out) in y.iter_mut().enumerate() {
        *out += scale * dot(&m[r * cols..(r + 1) * cols], x);
    }
}

/// `û[i][j] = W[i][j] · u[i]`.
pub fn affine_predict(u: &[Vec<f64>], w: &TransformWeights) -> Result<Predictions> {
    if u.len() != w.n_in {
        return Err(Error::invalid(format!("expected {} input capsules, got {}", w.n_in, u.len())));
    }
    if let Some(bad) = u.iter().find(|p| p.len() != w.d_in) {
        return Err(Error::invalid(format!("pose of length {} where {} expected", bad.len(), w.d_in)));
    }
    let mut data = vec![0.0; w.n_in * w.n_out * w.d_out];
    for (i, ui) in u.iter().enumerate() {
        for j in 0..w.n_out {
            let off = (i * w.n_out + j) * w.d_out;
            matvec_acc(w.block(i, j), ui, 1.0, &mut data[off..off + w.d_out]);
        }
    }
    Ok(Predictions { n_in: w.n_in, n_out: w.n_out, d_out: w.d_out, data })
}

/// `(‖a‖² / (1 + ‖a‖²)) · a / ‖a‖`, with the zero vector mapped to itself.
pub fn squash(a: &[f64]) -> Vec<f64> {
    let n2 = dot(a, a);
    if n2 == 0.0 {
        return vec![0.0; a.len()];
    }
    let n = n2.sqrt();
    // ‖a‖/(1+‖a‖²) rewritten to stay finite for huge norms.
    let scale = if n > 1e150 { 1.0 / n } else { n / (1.0 + n2) };
    a.iter().map(|x| x * scale).collect()
}

/// Vector-Jacobian product of [`squash`] at `a` against upstream `grad`.
pub fn squash_vjp(a: &[f64], grad: &[f64]) -> Vec<f64> {
    let n2 = dot(a, a);
    if n2 == 0.0 {
        // Jacobian vanishes at the origin.
        return vec![0.0; a.len()];
    }
    let n = n2.sqrt();
    let g = n / (1.0 + n2);
    // d/dn [n/(1+n²)] / n
    let dg_over_n = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n);
    let proj = dot(a, grad);
    a.iter().zip(grad).map(|(ai, gi)| g * gi + dg_over_n * proj * ai).collect()
}

/// Softmax over one input capsule's logits, with max subtraction.
pub fn coupling_softmax(b_row: &[f64]) -> Vec<f64> {
    if b_row.is_empty() {
        return Vec::new();
    }
    let max = b_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = b_row.iter().map(|b| (b - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Routing by agreement for `k` iterations starting from zero logits.
pub fn dynamic_routing(u_hat: &Predictions, k: usize) -> Result<RoutingOutput> {
    dynamic_routing_observed(u_hat, k, |_, _| {})
}

/// As [`dynamic_routing`], calling `observe(iteration, state)` after the
/// couplings of each iteration are computed.
pub fn dynamic_routing_observed(
    u_hat: &Predictions,
    k: usize,
    mut observe: impl FnMut(usize, &CouplingState),
) -> Result<RoutingOutput> {
    if k == 0 {
        return Err(Error::invalid("routing needs at least one iteration"));
    }
    let Predictions { n_in, n_out, d_out, .. } = *u_hat;
    if n_in == 0 || n_out == 0 || u_hat.data.len() != n_in * n_out * d_out {
        return Err(Error::invalid("prediction tensor does not match its dims"));
    }
    let mut state = CouplingState::zeros(n_in, n_out);
    let mut totals = vec![vec![0.0; d_out]; n_out];
    let mut poses = vec![vec![0.0; d_out]; n_out];
    for iter in 0..k {
        for i in 0..n_in {
            let row = coupling_softmax(state.b_row(i));
            state.c[i * n_out..(i + 1) * n_out].copy_from_slice(&row);
        }
        observe(iter, &state);
        for (j, s) in totals.iter_mut().enumerate() {
            s.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n_in {
                let c = state.c[i * n_out + j];
                for (acc, p) in s.iter_mut().zip(u_hat.get(i, j)) {
                    *acc += c * p;
                }
            }
            poses[j] = squash(s);
        }
        for i in 0..n_in {
            for (j, v) in poses.iter().enumerate() {
                state.b[i * n_out + j] += dot(u_hat.get(i, j), v);
            }
        }
    }
    Ok(RoutingOutput { poses, totals, coupling: state })
}
