use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{loss, LocalizerError, LocalizerModel, TokenSequence};
use crate::angle::sin_cos_deg;
use crate::rng::seeded2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Global gradient-norm ceiling per step; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 20, batch_size: 16, seed: 0, init_scale: 0.1, clip_norm: 1.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LocalizerError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LocalizerError::InvalidConfig("learningRate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(LocalizerError::InvalidConfig("batchSize must be positive"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(LocalizerError::InvalidConfig("initScale must be non-negative"));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(LocalizerError::InvalidConfig("clipNorm must be non-negative"));
        }
        Ok(())
    }
}

/// Loss of one sample under the model.
pub fn sample_loss(model: &LocalizerModel, input: &TokenSequence, psi_deg: f64) -> f64 {
    loss(model.raw_output(input), psi_deg)
}

/// Adds the gradient of the sample loss into `grad` and returns the loss.
pub(crate) fn accumulate(model: &LocalizerModel, input: &TokenSequence, psi_deg: f64, grad: &mut [f64]) -> f64 {
    let cache = model.forward(input);
    let (s, c) = sin_cos_deg(psi_deg);
    let out = cache.out;
    let d_out = [2.0 * (out[0] - s), 2.0 * (out[1] - c)];
    model.backward(input, &cache, d_out, grad);
    loss(out, psi_deg)
}

/// Analytic gradient of the sample loss.
pub fn gradient(model: &LocalizerModel, input: &TokenSequence, psi_deg: f64) -> Vec<f64> {
    let mut g = vec![0.0; model.params.len()];
    accumulate(model, input, psi_deg, &mut g);
    g
}

/// Minibatch SGD on the squared-error loss.
///
/// Returns the trained model and the mean training loss of every epoch.
pub fn train(
    model: LocalizerModel,
    dataset: &[(TokenSequence, f64)],
    cfg: &TrainConfig,
) -> Result<(LocalizerModel, Vec<f64>), LocalizerError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(LocalizerError::EmptyDataset);
    }
    let mut model = model;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = seeded2(cfg.seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (input, psi) = &dataset[i];
                epoch_loss += accumulate(&model, input, *psi, &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            let norm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>()) * scale;
            if !norm.is_finite() {
                return Err(LocalizerError::DivergedTraining { epoch });
            }
            let step = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                cfg.learning_rate * scale * cfg.clip_norm / norm
            } else {
                cfg.learning_rate * scale
            };
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(LocalizerError::DivergedTraining { epoch });
        }
        curve.push(mean);
    }
    Ok((model, curve))
}

/// Largest relative disagreement between the analytic gradient and a
/// fourth-order central finite difference with step `eps`, over every
/// parameter.
///
/// The loss difference `L(θ+h) − L(θ−h)` is evaluated as
/// `Σ (o⁺ − o⁻)(o⁺ + o⁻ − 2t)`, which equals it exactly but avoids cancelling
/// two nearly equal losses.
pub fn grad_check(model: &LocalizerModel, input: &TokenSequence, psi_deg: f64, eps: f64) -> f64 {
    let analytic = gradient(model, input, psi_deg);
    let (s, c) = sin_cos_deg(psi_deg);
    let split = model.feed_forward_start();
    let y = model.attend(input);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &ga) in analytic.iter().enumerate() {
        let original = probe.params[i];
        let mut delta = |h: f64| {
            let mut eval = |x: f64| {
                probe.params[i] = x;
                if i >= split { probe.output_from(&y) } else { probe.raw_output(input) }
            };
            let p = eval(original + h);
            let m = eval(original - h);
            probe.params[i] = original;
            (p[0] - m[0]) * (p[0] + m[0] - 2.0 * s) + (p[1] - m[1]) * (p[1] + m[1] - 2.0 * c)
        };
        let gn = (8.0 * delta(eps) - delta(2.0 * eps)) / (12.0 * eps);
        let err = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}
