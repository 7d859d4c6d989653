use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::CapsNet;
use crate::error::{Error, Result};
use crate::metrics::{classification_metrics, mae, ConfusionCounts, MetricsReport};
use crate::rng;
use crate::tensor::WeightTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { epochs: 30, learning_rate: 0.5, batch_size: 10 }
    }
}

/// Model quality on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Fraction of samples whose longest capsule is the label.
    pub accuracy: f64,
    /// Mean margin loss.
    pub loss: f64,
    /// Mean absolute error between one-hot labels and capsule lengths.
    pub mae: f64,
    /// Class 1 against the rest.
    pub confusion: ConfusionCounts,
}

impl Evaluation {
    pub fn report(&self) -> Result<MetricsReport> {
        let mut r = classification_metrics(&self.confusion)?;
        r.accuracy = Some(self.accuracy);
        r.mae = Some(self.mae);
        Ok(r)
    }
}

pub fn evaluate(model: &CapsNet, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let cfg = model.config();
    data.validate(cfg.feature.input_len(), cfg.n_classes)?;
    let mut correct = 0usize;
    let mut loss = 0.0;
    let mut targets = Vec::with_capacity(data.len() * cfg.n_classes);
    let mut lengths = Vec::with_capacity(data.len() * cfg.n_classes);
    let mut confusion = ConfusionCounts::default();
    for s in &data.samples {
        let fwd = model.forward(&s.features)?;
        let predicted = fwd.predicted();
        correct += usize::from(predicted == s.label);
        confusion.record(s.label == 1, predicted == 1);
        loss += super::loss::margin_loss(&fwd.routing.poses, s.label, &cfg.margin)?;
        targets.extend((0..cfg.n_classes).map(|j| if j == s.label { 1.0 } else { 0.0 }));
        lengths.extend(fwd.lengths());
    }
    let n = data.len() as f64;
    Ok(Evaluation { accuracy: correct as f64 / n, loss: loss / n, mae: mae(&targets, &lengths)?, confusion })
}

/// Mini-batch gradient descent on the margin loss. Batch order is drawn
/// from `seed`, so equal inputs give bitwise-equal weights.
pub fn train_local(model: &CapsNet, data: &Dataset, params: &TrainParams, seed: u64) -> Result<(CapsNet, MetricsReport)> {
    if data.is_empty() {
        return Err(Error::invalid("training partition is empty"));
    }
    if params.batch_size == 0 || !(params.learning_rate.is_finite() && params.learning_rate > 0.0) {
        return Err(Error::invalid(format!("bad training parameters {params:?}")));
    }
    let cfg = model.config();
    data.validate(cfg.feature.input_len(), cfg.n_classes)?;

    let mut rng = rng::stream(seed, "capsnet/train");
    let mut weights = model.params().data().to_vec();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut current = model.clone();
    let mut grad = vec![0.0; weights.len()];
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &k in batch {
                let s = &data.samples[k];
                let fwd = current.forward(&s.features)?;
                current.backward(&s.features, s.label, &fwd, &mut grad)?;
            }
            let step = params.learning_rate / batch.len() as f64;
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
            current = current.with_params(WeightTensor::from_vec(weights.clone())?)?;
        }
    }
    let report = evaluate(&current, data)?.report()?;
    Ok((current, report))
}
