//! Mini-batch L1 training of a restoration net and test-set evaluation.

use rayon::prelude::*;

use super::data::{Patch, PatchSet};
use super::metrics::{l1_distance, psnr, ssim};
use super::optim::{cosine_lr, AdamState};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::owan::MicroOwanNet;
use crate::rng::Rng;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Peak learning rate; annealed to `lr_min` over all steps.
    pub lr: f64,
    pub lr_min: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 16,
            seed: 0,
            lr: AdamState::ALPHA,
            lr_min: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean L1 over the training set before the first update.
    pub initial_loss: f64,
    /// Mean L1 over the training set seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

fn mean_in_order(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn check_loss(loss: f64, context: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Divergence(format!("loss became {loss} {context}")))
    }
}

/// Mean per-patch L1 of `net` on the training pairs.
pub fn mean_l1(net: &MicroOwanNet, set: &PatchSet) -> Result<f64> {
    let losses = set
        .patches
        .par_iter()
        .map(|p| l1_distance(&net.predict(&p.distorted)?, &p.clean))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_in_order(&losses))
}

/// Per-pixel L1 of one pair and the gradient of `scale * sum |pred - clean|`.
fn sample_gradient(net: &MicroOwanNet, patch: &Patch, scale: f64) -> Result<(f64, Vec<DenseTensor>)> {
    let (pred, cache) = net.forward(&patch.distorted, None)?;
    let mut upstream = FeatureMap::zeros(pred.height(), pred.width(), pred.channels());
    let mut abs_sum = 0.0;
    for ((u, &a), &b) in upstream.data_mut().iter_mut().zip(pred.data()).zip(patch.clean.data()) {
        let d = a - b;
        abs_sum += d.abs();
        *u = if d > 0.0 {
            scale
        } else if d < 0.0 {
            -scale
        } else {
            0.0
        };
    }
    let mut grads = net.zero_grads();
    net.backward(&cache, &upstream, &mut grads)?;
    Ok((abs_sum / pred.data().len() as f64, grads))
}

/// Trains with batch-averaged L1, Adam and a cosine learning-rate schedule.
///
/// Patch order is reshuffled every epoch from `seed`. Per-sample gradients are computed
/// in parallel and summed in batch order, so the weights do not depend on the thread count.
pub fn train(net: &mut MicroOwanNet, set: &PatchSet, cfg: &TrainConfig) -> Result<TrainReport> {
    if set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if !(cfg.lr >= 0.0 && cfg.lr_min >= 0.0 && cfg.lr.is_finite() && cfg.lr_min.is_finite()) {
        return Err(Error::invalid("learning rates must be finite and non-negative"));
    }
    let initial_loss = check_loss(mean_l1(net, set)?, "before training")?;
    let n = set.len();
    let steps_per_epoch = n.div_ceil(cfg.batch);
    let total = (cfg.epochs * steps_per_epoch) as u64;
    let mut adam = AdamState::new(&net.params());
    let mut grads = net.zero_grads();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(cfg.seed);
    let mut step = 0u64;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut sample_losses = vec![0.0; n];
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch) {
            let elements: usize = chunk.iter().map(|&i| set.patches[i].clean.data().len()).sum();
            let scale = 1.0 / elements as f64;
            let per_sample = chunk
                .par_iter()
                .map(|&i| sample_gradient(net, &set.patches[i], scale))
                .collect::<Vec<_>>();
            grads.iter_mut().for_each(|g| g.data_mut().fill(0.0));
            for (&i, result) in chunk.iter().zip(per_sample) {
                let (loss, g) = result?;
                sample_losses[i] = check_loss(loss, &format!("in epoch {epoch}"))?;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += b;
                    }
                }
            }
            let lr = cosine_lr(step, total, cfg.lr, cfg.lr_min)?;
            adam.step_with_lr(&mut net.params_mut(), &grads, lr)?;
            step += 1;
            if net.params().iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence(format!(
                    "non-finite weights after step {step} (epoch {epoch})"
                )));
            }
        }
        epoch_losses.push(check_loss(mean_in_order(&sample_losses), &format!("in epoch {epoch}"))?);
    }
    if step > 0 {
        let probe = &set.patches[order[0]];
        let out = net.predict(&probe.distorted)?;
        check_loss(l1_distance(&out, &probe.clean)?, "after the last step")?;
    }
    Ok(TrainReport {
        initial_loss,
        epoch_losses,
        steps: step,
    })
}

/// Test-set means of per-patch metrics, restored and distorted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub psnr: f64,
    pub ssim: f64,
    pub distorted_psnr: f64,
    pub distorted_ssim: f64,
    pub l1: f64,
}

impl Evaluation {
    pub fn psnr_gain(&self) -> f64 {
        self.psnr - self.distorted_psnr
    }
}

/// Evaluates `net` (optionally with operation `zeroed` closed in every block).
pub fn evaluate(net: &MicroOwanNet, set: &PatchSet, zeroed: Option<usize>) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let rows = set
        .patches
        .par_iter()
        .map(|p| {
            let (out, _) = net.forward(&p.distorted, zeroed)?;
            Ok([
                psnr(&out, &p.clean, 1.0)?,
                ssim(&out, &p.clean)?,
                psnr(&p.distorted, &p.clean, 1.0)?,
                ssim(&p.distorted, &p.clean)?,
                l1_distance(&out, &p.clean)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
    Ok(Evaluation {
        psnr: col(0),
        ssim: col(1),
        distorted_psnr: col(2),
        distorted_ssim: col(3),
        l1: col(4),
    })
}
