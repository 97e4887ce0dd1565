//! Adam optimization of a radiance model against posed images.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, psnr_from_mse};
use crate::render::{backward_rays, camera_targets, CameraSet, GradientBuffer, RadianceModel, RayTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_rays: usize,
    /// Learning rate for voxel grid layers.
    pub lr_voxel: f64,
    /// Learning rate for dense layers.
    pub lr_dense: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_rays: 4096,
            lr_voxel: 5e-2,
            lr_dense: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

/// Adam moments and counters. Carried across calls so that repeated
/// fine-tuning epochs continue one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    /// Epochs run so far; selects the shuffle of the next epoch.
    pub epochs_run: u64,
}

impl OptimizerState {
    pub fn new(model: &RadianceModel) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .store
            .layers()
            .iter()
            .map(|l| vec![0.0; l.values().len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            epochs_run: 0,
        }
    }

    fn adam_step(&mut self, model: &mut RadianceModel, grads: &GradientBuffer, opts: &TrainOptions) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - opts.beta1.powi(t);
        let bc2 = 1.0 - opts.beta2.powi(t);
        for (li, layer) in model.store.layers_mut().iter_mut().enumerate() {
            let lr = if layer.is_voxel() {
                opts.lr_voxel
            } else {
                opts.lr_dense
            };
            let (m, v, g) = (&mut self.m[li], &mut self.v[li], &grads.layers[li]);
            for (i, w) in layer.values_mut().iter_mut().enumerate() {
                m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * g[i];
                v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + opts.eps);
            }
            layer.apply_mask();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    pub train_psnr_db: f64,
}

/// Trains `model` for `epochs` passes over all pixels of `cameras`.
///
/// With `full_eval` the recorded PSNR comes from rendering every training
/// view after the epoch; otherwise it is derived from the epoch's mean
/// minibatch loss. Masked-out sites are re-zeroed after every step.
pub fn fit(
    model: &mut RadianceModel,
    cameras: &CameraSet,
    epochs: usize,
    opts: &TrainOptions,
    state: &mut OptimizerState,
    full_eval: bool,
) -> Result<Vec<EpochRecord>> {
    if epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    if opts.batch_rays == 0 {
        return Err(Error::Config("batch_rays must be >= 1".into()));
    }
    let targets = camera_targets(cameras);
    if targets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut history = Vec::with_capacity(epochs);
    let mut batch: Vec<RayTarget> = Vec::with_capacity(opts.batch_rays);
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(state.epochs_run);
        let mut order: Vec<usize> = (0..targets.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for idx in order.chunks(opts.batch_rays) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| targets[i]));
            let (loss, grads) = backward_rays(model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("epoch {epoch}"),
                });
            }
            loss_sum += loss * batch.len() as f64;
            state.adam_step(model, &grads, opts);
        }
        state.epochs_run += 1;
        model.store.check_finite()?;

        let loss = loss_sum / targets.len() as f64;
        let train_psnr_db = if full_eval {
            evaluate(model, cameras)?.psnr_db
        } else {
            psnr_from_mse(loss)
        };
        history.push(EpochRecord {
            epoch: history.len() + 1,
            loss,
            train_psnr_db,
        });
    }
    let rising = history.windows(2).filter(|w| w[1].loss > w[0].loss).count();
    if history.len() > 1 && rising * 10 > history.len() - 1 {
        log::warn!(
            "training loss rose in {rising} of {} epochs",
            history.len() - 1
        );
    }
    Ok(history)
}

/// One epoch of [`fit`] without the full-render evaluation.
pub fn fine_tune_one_epoch(
    model: &mut RadianceModel,
    cameras: &CameraSet,
    opts: &TrainOptions,
    state: &mut OptimizerState,
) -> Result<EpochRecord> {
    Ok(fit(model, cameras, 1, opts, state, false)?.remove(0))
}

/// Writes `epoch,loss,train_psnr_db` rows.
pub fn write_history_csv(history: &[EpochRecord], mut out: impl std::io::Write) -> Result<()> {
    writeln!(out, "epoch,loss,train_psnr_db")?;
    for r in history {
        writeln!(out, "{},{:.9e},{:.6}", r.epoch, r.loss, r.train_psnr_db)?;
    }
    Ok(())
}
