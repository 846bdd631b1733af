//! Loss and optimizer for the segmentation model.
//!
//! The objective is the sum over heads of the per-head mean binary
//! cross-entropy, where each mean runs over valid pixels only; batches
//! average that scene loss. Optimization is plain SGD with momentum and a
//! global L2 gradient clip, one scene per step, in a seeded shuffle order —
//! the same seed and data reproduce the run bit for bit.

use num_traits::Float;

use super::model::{MultiTaskNet, NetGrads};
use super::tensor::Tensor3;
use crate::plane::MaskPlane;
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Probabilities are clamped to `[EPS, 1−EPS]` inside the logs so a
/// saturated sigmoid cannot produce an infinite loss.
pub const BCE_EPS: f64 = 1e-7;

/// One training scene: normalized input, one label plane per head, and
/// the shared validity plane.
#[derive(Debug, Clone)]
pub struct TrainSample<F> {
    pub input: Tensor3<F>,
    pub labels: Vec<MaskPlane>,
    pub valid: MaskPlane,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Gradients are rescaled when their global L2 norm exceeds this.
    pub clip_norm: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-2,
            momentum: 0.9,
            clip_norm: 5.0,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Mean scene loss per epoch, in order.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

fn check_sample<F: Float>(net: &MultiTaskNet<F>, sample: &TrainSample<F>) -> Result<()> {
    if sample.labels.len() != net.heads.len() {
        return Err(Error::BadInput(format!(
            "sample has {} label planes, model has {} heads",
            sample.labels.len(),
            net.heads.len()
        )));
    }
    let (h, w) = (sample.input.h(), sample.input.w());
    let shape_ok = |m: &MaskPlane| m.width() == w && m.height() == h;
    if !shape_ok(&sample.valid) || !sample.labels.iter().all(shape_ok) {
        return Err(Error::DimensionMismatch(
            "label and validity planes must match the input grid".into(),
        ));
    }
    Ok(())
}

/// Scene loss and its parameter gradients in one pass.
///
/// The logit gradient is `(σ(z) − t) / n_valid` — the clamp only guards the
/// log evaluation, it does not flatten the gradient.
pub fn loss_and_grads<F: Float>(
    net: &MultiTaskNet<F>,
    sample: &TrainSample<F>,
) -> Result<(f64, NetGrads<F>)> {
    check_sample(net, sample)?;
    let n_valid = sample.valid.count_ones();
    if n_valid == 0 {
        return Err(Error::Degenerate("no valid pixels to train on".into()));
    }
    let inv_n = F::from(1.0 / n_valid as f64).unwrap();
    let (h, w) = (sample.input.h(), sample.input.w());

    let fwd = net.forward(&sample.input);
    let mut total = 0.0f64;
    let mut dlogits = Vec::with_capacity(fwd.logits.len());
    for (z, label) in fwd.logits.iter().zip(&sample.labels) {
        let mut dz = Tensor3::zeros(h, w, 1);
        let mut head_loss = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                if !sample.valid.get(x, y) {
                    continue;
                }
                let p = super::layers::sigmoid(z.get(y, x, 0)).to_f64().unwrap();
                let t = if label.get(x, y) { 1.0 } else { 0.0 };
                let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                head_loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
                dz.set(y, x, 0, (F::from(p - t).unwrap()) * inv_n);
            }
        }
        total += head_loss / n_valid as f64;
        dlogits.push(dz);
    }
    Ok((total, net.backward(&sample.input, &fwd, &dlogits)))
}

/// Scene loss only (used by gradient checks and validation tracking).
pub fn loss_only<F: Float>(net: &MultiTaskNet<F>, sample: &TrainSample<F>) -> Result<f64> {
    check_sample(net, sample)?;
    let n_valid = sample.valid.count_ones();
    if n_valid == 0 {
        return Err(Error::Degenerate("no valid pixels to train on".into()));
    }
    let fwd = net.forward(&sample.input);
    let mut total = 0.0f64;
    for (z, label) in fwd.logits.iter().zip(&sample.labels) {
        let mut head_loss = 0.0f64;
        for y in 0..sample.input.h() {
            for x in 0..sample.input.w() {
                if !sample.valid.get(x, y) {
                    continue;
                }
                let p = super::layers::sigmoid(z.get(y, x, 0)).to_f64().unwrap();
                let t = if label.get(x, y) { 1.0 } else { 0.0 };
                let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                head_loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
            }
        }
        total += head_loss / n_valid as f64;
    }
    Ok(total)
}

fn global_grad_norm<F: Float>(grads: &NetGrads<F>) -> f64 {
    let mut acc = 0.0f64;
    for s in grads.param_slices() {
        for &g in s {
            let g = g.to_f64().unwrap();
            acc += g * g;
        }
    }
    acc.sqrt()
}

/// Train in place. Returns the per-epoch loss curve; fails with a
/// divergence error the moment a scene loss goes non-finite.
pub fn train<F: Float>(
    net: &mut MultiTaskNet<F>,
    samples: &[TrainSample<F>],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(net, samples, cfg, |_, _, _| true)
}

/// [`train`] with an epoch hook: `on_epoch(epoch, mean_loss, net)` runs
/// after each epoch's updates and may return `false` to stop early.
/// Stopping this way is not an error — the report just ends at that epoch.
pub fn train_with<F: Float>(
    net: &mut MultiTaskNet<F>,
    samples: &[TrainSample<F>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &MultiTaskNet<F>) -> bool,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::BadInput("no training samples".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::BadInput("epoch count must be positive".into()));
    }
    for s in samples {
        check_sample(net, s)?;
    }
    let shuffle_rng = CounterRng::new(cfg.seed).stream("shuffle");
    let mut velocity = vec![F::zero(); net.param_count()];
    let lr = F::from(cfg.learning_rate).unwrap();
    let momentum = F::from(cfg.momentum).unwrap();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        if cfg.shuffle {
            shuffle_rng.stream_u64(epoch as u64).shuffle(&mut order);
        }
        let mut epoch_loss = 0.0f64;
        for &idx in &order {
            let (loss, grads) = loss_and_grads(net, &samples[idx])?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss became non-finite at epoch {epoch}, scene {idx}"
                )));
            }
            epoch_loss += loss;
            let norm = global_grad_norm(&grads);
            let scale = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
            let scale = F::from(scale).unwrap();
            let mut offset = 0;
            let gslices = grads.param_slices();
            for (wslice, gslice) in net.param_slices_mut().into_iter().zip(gslices) {
                let v = &mut velocity[offset..offset + wslice.len()];
                for ((w, &g), vi) in wslice.iter_mut().zip(gslice).zip(v) {
                    *vi = momentum * *vi - lr * scale * g;
                    *w = *w + *vi;
                }
                offset += wslice.len();
            }
        }
        let mean = epoch_loss / samples.len() as f64;
        epoch_losses.push(mean);
        if !on_epoch(epoch, mean, net) {
            break;
        }
    }
    Ok(TrainReport { epoch_losses })
}
