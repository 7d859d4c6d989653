use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::{margin_loss, margin_loss_grad, MarginParams};
use super::routing::{dot, dynamic_routing, norm, squash, squash_vjp, CouplingState, Predictions, RoutingOutput};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::WeightTensor;

/// How raw inputs become primary-capsule activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureLayer {
    /// Fully connected map from a flat feature vector.
    Dense { input_dim: usize },
    /// One valid convolution over a single-channel `height × width` image.
    /// Output is laid out `(row, col, channel)` and cut into capsules, so
    /// `channels` must be a multiple of the primary capsule dimension.
    Conv { height: usize, width: usize, channels: usize, kernel: usize, stride: usize },
}

impl FeatureLayer {
    pub fn input_len(&self) -> usize {
        match *self {
            FeatureLayer::Dense { input_dim } => input_dim,
            FeatureLayer::Conv { height, width, .. } => height * width,
        }
    }

    fn conv_out(&self) -> Option<(usize, usize)> {
        match *self {
            FeatureLayer::Conv { height, width, kernel, stride, .. }
                if kernel >= 1 && stride >= 1 && kernel <= height && kernel <= width =>
            {
                Some(((height - kernel) / stride + 1, (width - kernel) / stride + 1))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapsNetConfig {
    pub feature: FeatureLayer,
    pub n_primary: usize,
    pub primary_dim: usize,
    pub n_classes: usize,
    pub class_dim: usize,
    pub routing_iters: usize,
    pub margin: MarginParams,
}

impl CapsNetConfig {
    /// Dense front end with the default routing and margin settings.
    pub fn dense(input_dim: usize, n_primary: usize, primary_dim: usize, n_classes: usize, class_dim: usize) -> Self {
        CapsNetConfig {
            feature: FeatureLayer::Dense { input_dim },
            n_primary,
            primary_dim,
            n_classes,
            class_dim,
            routing_iters: 3,
            margin: MarginParams::default(),
        }
    }

    /// Convolutional front end; the primary capsule count follows from the
    /// output grid.
    pub fn conv(
        height: usize,
        width: usize,
        channels: usize,
        kernel: usize,
        stride: usize,
        primary_dim: usize,
        n_classes: usize,
        class_dim: usize,
    ) -> Result<Self> {
        let feature = FeatureLayer::Conv { height, width, channels, kernel, stride };
        let (oh, ow) = feature
            .conv_out()
            .ok_or_else(|| Error::invalid(format!("kernel {kernel} does not fit a {height}x{width} image")))?;
        if primary_dim == 0 || channels % primary_dim != 0 {
            return Err(Error::invalid("conv channels must be a multiple of the primary capsule dim"));
        }
        let cfg = CapsNetConfig {
            feature,
            n_primary: oh * ow * channels / primary_dim,
            primary_dim,
            n_classes,
            class_dim,
            routing_iters: 3,
            margin: MarginParams::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_primary == 0 || self.primary_dim == 0 || self.n_classes == 0 || self.class_dim == 0 {
            return Err(Error::invalid("capsule counts and dims must be positive"));
        }
        if self.routing_iters == 0 {
            return Err(Error::invalid("routing needs at least one iteration"));
        }
        self.margin.validate()?;
        match self.feature {
            FeatureLayer::Dense { input_dim } if input_dim == 0 => Err(Error::invalid("input_dim must be positive")),
            FeatureLayer::Dense { .. } => Ok(()),
            FeatureLayer::Conv { channels, .. } => {
                let (oh, ow) = self.feature.conv_out().ok_or_else(|| Error::invalid("conv kernel does not fit"))?;
                if channels % self.primary_dim != 0 || oh * ow * channels != self.feature_len() {
                    return Err(Error::invalid("conv output does not reshape into the primary capsules"));
                }
                Ok(())
            }
        }
    }

    /// Length of the primary-capsule pre-activation vector.
    pub fn feature_len(&self) -> usize {
        self.n_primary * self.primary_dim
    }

    fn feature_weight_len(&self) -> usize {
        match self.feature {
            FeatureLayer::Dense { input_dim } => self.feature_len() * input_dim,
            FeatureLayer::Conv { channels, kernel, .. } => channels * kernel * kernel,
        }
    }

    fn feature_bias_len(&self) -> usize {
        match self.feature {
            FeatureLayer::Dense { .. } => self.feature_len(),
            FeatureLayer::Conv { channels, .. } => channels,
        }
    }

    fn transform_len(&self) -> usize {
        self.n_primary * self.n_classes * self.class_dim * self.primary_dim
    }

    pub fn n_params(&self) -> usize {
        self.feature_weight_len() + self.feature_bias_len() + self.transform_len()
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub primary_pre: Vec<f64>,
    pub primary: Vec<Vec<f64>>,
    pub predictions: Predictions,
    pub routing: RoutingOutput,
}

impl Forward {
    /// Output capsule lengths, read as class probabilities.
    pub fn lengths(&self) -> Vec<f64> {
        self.routing.poses.iter().map(|v| norm(v)).collect()
    }

    /// Class with the longest output capsule; ties go to the lower index.
    pub fn predicted(&self) -> usize {
        let lengths = self.lengths();
        let mut best = 0;
        for (j, &l) in lengths.iter().enumerate() {
            if l > lengths[best] {
                best = j;
            }
        }
        best
    }
}

/// Feature layer plus one routed capsule layer. Immutable: training
/// produces a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsNet {
    config: CapsNetConfig,
    params: WeightTensor,
    seed: u64,
}

impl CapsNet {
    /// Random initialization drawn from `seed`.
    pub fn init(config: CapsNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "capsnet/init");
        let fan_in = match config.feature {
            FeatureLayer::Dense { input_dim } => input_dim,
            FeatureLayer::Conv { kernel, .. } => kernel * kernel,
        };
        let feat = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
        let trans = Normal::new(0.0, 1.0 / ((config.primary_dim * config.n_primary) as f64).sqrt())
            .expect("positive std");
        let mut data = Vec::with_capacity(config.n_params());
        data.extend((0..config.feature_weight_len()).map(|_| feat.sample(&mut rng)));
        data.extend(std::iter::repeat_n(0.0, config.feature_bias_len()));
        data.extend((0..config.transform_len()).map(|_| trans.sample(&mut rng) * 2.0));
        let params = WeightTensor::from_vec(data)?;
        Ok(CapsNet { config, params, seed })
    }

    pub fn from_params(config: CapsNetConfig, params: WeightTensor, seed: u64) -> Result<Self> {
        config.validate()?;
        if params.len() != config.n_params() {
            return Err(Error::invalid(format!(
                "model needs {} parameters, got {}",
                config.n_params(),
                params.len()
            )));
        }
        let params = WeightTensor::from_vec(params.into_data())?;
        Ok(CapsNet { config, params, seed })
    }

    pub fn config(&self) -> &CapsNetConfig {
        &self.config
    }

    pub fn params(&self) -> &WeightTensor {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_params(&self, params: WeightTensor) -> Result<Self> {
        CapsNet::from_params(self.config, params, self.seed)
    }

    fn split(&self) -> (&[f64], &[f64], &[f64]) {
        let d = self.params.data();
        let a = self.config.feature_weight_len();
        let b = a + self.config.feature_bias_len();
        (&d[..a], &d[a..b], &d[b..])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.feature.input_len() {
            return Err(Error::invalid(format!(
                "input of length {} where {} expected",
                x.len(),
                self.config.feature.input_len()
            )));
        }
        Ok(())
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        let (w, bias, _) = self.split();
        let f = self.config.feature_len();
        match self.config.feature {
            FeatureLayer::Dense { input_dim } => {
                (0..f).map(|r| bias[r] + dot(&w[r * input_dim..(r + 1) * input_dim], x)).collect()
            }
            FeatureLayer::Conv { width, channels, kernel, stride, .. } => {
                let (oh, ow) = self.config.feature.conv_out().expect("validated");
                let mut out = vec![0.0; f];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..channels {
                            let k = &w[ch * kernel * kernel..(ch + 1) * kernel * kernel];
                            let mut acc = bias[ch];
                            for ky in 0..kernel {
                                let row = (oy * stride + ky) * width + ox * stride;
                                acc += dot(&k[ky * kernel..(ky + 1) * kernel], &x[row..row + kernel]);
                            }
                            out[(oy * ow + ox) * channels + ch] = acc;
                        }
                    }
                }
                out
            }
        }
    }

    fn predictions(&self, primary: &[Vec<f64>]) -> Predictions {
        let (_, _, w) = self.split();
        let c = &self.config;
        let (di, dout) = (c.primary_dim, c.class_dim);
        let mut data = vec![0.0; c.n_primary * c.n_classes * dout];
        for (i, ui) in primary.iter().enumerate() {
            for j in 0..c.n_classes {
                let blk = &w[(i * c.n_classes + j) * dout * di..][..dout * di];
                let out = &mut data[(i * c.n_classes + j) * dout..][..dout];
                for (r, o) in out.iter_mut().enumerate() {
                    *o = dot(&blk[r * di..(r + 1) * di], ui);
                }
            }
        }
        Predictions { n_in: c.n_primary, n_out: c.n_classes, d_out: dout, data }
    }

    fn primary(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let pre = self.features(x);
        let caps = pre.chunks_exact(self.config.primary_dim).map(squash).collect();
        (pre, caps)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let (primary_pre, primary) = self.primary(x);
        let predictions = self.predictions(&primary);
        let routing = dynamic_routing(&predictions, self.config.routing_iters)?;
        Ok(Forward { primary_pre, primary, predictions, routing })
    }

    /// Forward pass with the couplings supplied instead of routed.
    pub fn forward_with_couplings(&self, x: &[f64], couplings: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let c = &self.config;
        if couplings.len() != c.n_primary * c.n_classes {
            return Err(Error::invalid("coupling matrix does not match the capsule layer"));
        }
        let (primary_pre, primary) = self.primary(x);
        let predictions = self.predictions(&primary);
        let mut totals = vec![vec![0.0; c.class_dim]; c.n_classes];
        for (j, s) in totals.iter_mut().enumerate() {
            for i in 0..c.n_primary {
                let cij = couplings[i * c.n_classes + j];
                for (acc, p) in s.iter_mut().zip(predictions.get(i, j)) {
                    *acc += cij * p;
                }
            }
        }
        let poses = totals.iter().map(|s| squash(s)).collect();
        let coupling = CouplingState {
            n_in: c.n_primary,
            n_out: c.n_classes,
            b: vec![0.0; couplings.len()],
            c: couplings.to_vec(),
        };
        Ok(Forward { primary_pre, primary, predictions, routing: RoutingOutput { poses, totals, coupling } })
    }

    /// Margin loss with couplings held fixed (used for gradient checks).
    pub fn loss_with_couplings(&self, x: &[f64], label: usize, couplings: &[f64]) -> Result<f64> {
        let fwd = self.forward_with_couplings(x, couplings)?;
        margin_loss(&fwd.routing.poses, label, &self.config.margin)
    }

    /// Loss and gradient for one sample. The couplings of the final routing
    /// iteration are treated as constants.
    pub fn loss_and_grad(&self, x: &[f64], label: usize) -> Result<(f64, Vec<f64>, Forward)> {
        let fwd = self.forward(x)?;
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.backward(x, label, &fwd, &mut grad)?;
        Ok((loss, grad, fwd))
    }

    /// Accumulates the gradient of the margin loss into `grad`, returns the loss.
    pub(crate) fn backward(&self, x: &[f64], label: usize, fwd: &Forward, grad: &mut [f64]) -> Result<f64> {
        let c = &self.config;
        let (loss, dv) = margin_loss_grad(&fwd.routing.poses, label, &c.margin)?;
        let ds: Vec<Vec<f64>> = fwd.routing.totals.iter().zip(&dv).map(|(s, g)| squash_vjp(s, g)).collect();

        let (_, _, w) = self.split();
        let (di, dout) = (c.primary_dim, c.class_dim);
        let wl = c.feature_weight_len();
        let bl = c.feature_bias_len();
        let (g_feat, g_rest) = grad.split_at_mut(wl);
        let (g_bias, g_w) = g_rest.split_at_mut(bl);

        let mut dpre = vec![0.0; c.feature_len()];
        for (i, ui) in fwd.primary.iter().enumerate() {
            let mut du = vec![0.0; di];
            for j in 0..c.n_classes {
                let cij = fwd.routing.coupling.c[i * c.n_classes + j];
                if cij == 0.0 {
                    continue;
                }
                let off = (i * c.n_classes + j) * dout * di;
                let blk = &w[off..off + dout * di];
                let gblk = &mut g_w[off..off + dout * di];
                for r in 0..dout {
                    let g = cij * ds[j][r];
                    for col in 0..di {
                        gblk[r * di + col] += g * ui[col];
                        du[col] += g * blk[r * di + col];
                    }
                }
            }
            let pre = &fwd.primary_pre[i * di..(i + 1) * di];
            dpre[i * di..(i + 1) * di].copy_from_slice(&squash_vjp(pre, &du));
        }

        match c.feature {
            FeatureLayer::Dense { input_dim } => {
                for (r, &g) in dpre.iter().enumerate() {
                    g_bias[r] += g;
                    for (gw, xv) in g_feat[r * input_dim..(r + 1) * input_dim].iter_mut().zip(x) {
                        *gw += g * xv;
                    }
                }
            }
            FeatureLayer::Conv { width, channels, kernel, stride, .. } => {
                let (oh, ow) = c.feature.conv_out().expect("validated");
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..channels {
                            let g = dpre[(oy * ow + ox) * channels + ch];
                            g_bias[ch] += g;
                            let gk = &mut g_feat[ch * kernel * kernel..(ch + 1) * kernel * kernel];
                            for ky in 0..kernel {
                                let row = (oy * stride + ky) * width + ox * stride;
                                for kx in 0..kernel {
                                    gk[ky * kernel + kx] += g * x[row + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(loss)
    }
}

/// A random small configuration and input, for gradient checks.
#[doc(hidden)]
pub fn random_instance(rng: &mut impl Rng) -> (CapsNet, Vec<f64>, usize) {
    let cfg = CapsNetConfig::dense(
        rng.random_range(2..5),
        rng.random_range(1..4),
        rng.random_range(2..4),
        rng.random_range(2..4),
        rng.random_range(2..4),
    );
    let model = CapsNet::init(cfg, rng.random()).expect("valid config");
    let x: Vec<f64> = (0..cfg.feature.input_len()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let label = rng.random_range(0..cfg.n_classes);
    (model, x, label)
}
