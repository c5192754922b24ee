//! Training loop: batched forward/backward with per-step rebalanced loss
//! weights, the one-cycle schedule stretched over the configured run length,
//! and hard abort on any non-finite number.

use thiserror::Error;

use crate::metrics::LabelVolume;
use crate::network::{
    labels_to_one_hot, one_cycle_lr, softmax_channels, weighted_cce, CompletionNet, NetworkError,
    SgdMomentum, Tensor5,
};
use crate::occupancy::{balance_weights, OccupancyGrid, WeightTensor};
use crate::rng::derive_seed;
use crate::tsdf::TsdfVolume;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training samples")]
    NoSamples,
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("sample {index}: {what}")]
    BadSample { index: usize, what: String },
    #[error("non-finite value detected at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// One preprocessed training example. The volumes live at the network input
/// resolution; occupancy and labels live at the output resolution (1/4).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub surface: TsdfVolume,
    pub edge: TsdfVolume,
    pub occupancy: OccupancyGrid,
    pub labels: LabelVolume,
}

impl TrainSample {
    fn validate(&self, index: usize) -> Result<(), TrainError> {
        let bad = |what: String| TrainError::BadSample { index, what };
        let dims = self.surface.spec().dims;
        if self.edge.spec().dims != dims {
            return Err(bad(format!(
                "edge dims {:?} do not match surface dims {:?}",
                self.edge.spec().dims,
                dims
            )));
        }
        let coarse = self.labels.spec().dims;
        if self.occupancy.spec().dims != coarse {
            return Err(bad(format!(
                "occupancy dims {:?} do not match label dims {:?}",
                self.occupancy.spec().dims,
                coarse
            )));
        }
        if dims.iter().zip(coarse.iter()).any(|(f, c)| *f != c * 4) {
            return Err(bad(format!(
                "label dims {coarse:?} are not 1/4 of input dims {dims:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// One-cycle over the whole run when true, constant `base_lr` otherwise.
    pub use_schedule: bool,
    pub base_lr: f64,
    /// Ablation: feed zeros in place of the edge channel.
    pub zero_edges: bool,
    /// Global L2 gradient-norm ceiling. Without batch normalization the
    /// schedule's 0.1 peak overshoots in 32-bit; clipping restores stability
    /// while leaving small-gradient steps untouched.
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            seed,
            use_schedule: true,
            base_lr: 0.01,
            zero_edges: false,
            clip_norm: Some(1.0),
        }
    }
}

/// One logged optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub net: CompletionNet<f32>,
    pub logs: Vec<StepLog>,
}

/// Stacks surface and edge volumes into one (n, 2, d, h, w) input tensor.
/// Volume storage is x-fastest and tensor storage is w-fastest with
/// (d, h, w) = (z, y, x), so each channel is a straight copy.
pub fn batch_input(samples: &[&TrainSample], zero_edges: bool) -> Tensor5<f32> {
    assert!(!samples.is_empty());
    let [nx, ny, nz] = samples[0].surface.spec().dims;
    let plane = nx * ny * nz;
    let mut data = Vec::with_capacity(samples.len() * 2 * plane);
    for s in samples {
        data.extend_from_slice(s.surface.values());
        if zero_edges {
            data.extend(std::iter::repeat(0.0f32).take(plane));
        } else {
            data.extend_from_slice(s.edge.values());
        }
    }
    Tensor5::from_vec([samples.len(), 2, nz, ny, nx], data)
        .expect("batch dims are consistent by construction")
}

/// Mapped schedule position for a global step: the 30-epoch one-cycle
/// template is stretched to span the configured run, so the cycle always
/// completes regardless of epoch count.
fn schedule_lr(cfg: &TrainConfig, step: usize, steps_per_epoch: usize) -> Result<f64, TrainError> {
    if !cfg.use_schedule {
        return Ok(cfg.base_lr);
    }
    let frac_epoch = step as f64 / steps_per_epoch as f64;
    Ok(one_cycle_lr(frac_epoch * 30.0 / cfg.epochs as f64)?)
}

/// Scales all gradients down uniformly when their joint L2 norm exceeds
/// `max_norm`; below the ceiling they pass through unchanged.
fn clip_gradients(grads: &mut [Vec<f32>], max_norm: f64) {
    let sq: f64 = grads.iter().flatten().map(|&g| g as f64 * g as f64).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut().flatten() {
            *g *= s;
        }
    }
}

fn step_weights(cfg: &TrainConfig, step: usize, batch: &[&TrainSample]) -> Vec<WeightTensor> {
    // Fresh draw per step and per sample, as independent derived streams.
    let step_master = derive_seed(cfg.seed, step as u64);
    batch
        .iter()
        .enumerate()
        .map(|(slot, s)| balance_weights(&s.occupancy, derive_seed(step_master, slot as u64)))
        .collect()
}

/// Runs the full loop, invoking `sink` after every optimizer step. The loss
/// is reported per unit of weight so logs are comparable across resampled
/// steps and batch sizes.
pub fn train(
    mut net: CompletionNet<f32>,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    mut sink: impl FnMut(&StepLog),
) -> Result<TrainOutcome, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::ZeroBatch);
    }
    if cfg.epochs == 0 {
        return Err(TrainError::ZeroEpochs);
    }
    for (i, s) in samples.iter().enumerate() {
        s.validate(i)?;
        let [nx, ny, nz] = s.surface.spec().dims;
        if net.config().input_dims != [nz, ny, nx] {
            return Err(TrainError::BadSample {
                index: i,
                what: format!(
                    "input dims (z, y, x) = ({nz}, {ny}, {nx}) do not match network {:?}",
                    net.config().input_dims
                ),
            });
        }
    }

    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let mut opt = SgdMomentum::<f32>::defaults(&net.param_lens());
    let mut logs = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        for chunk in samples.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().collect();
            let lr = schedule_lr(cfg, step, steps_per_epoch)?;
            let x = batch_input(&batch, cfg.zero_edges);
            let (logits, cache) = net.forward(&x)?;
            if !logits.all_finite() {
                return Err(TrainError::NonFinite { step });
            }
            let p = softmax_channels(&logits);
            let labels: Vec<LabelVolume> = batch.iter().map(|s| s.labels.clone()).collect();
            let y = labels_to_one_hot::<f32>(&labels, net.config().class_count);
            let w = step_weights(cfg, step, &batch);
            let (loss_sum, grad_logits) = weighted_cce(&p, &y, &w)?;
            let total_w: f64 = w.iter().map(|t| t.sum()).sum();
            // Mean over weighted voxels; an all-zero draw leaves the grad zero.
            let scale = if total_w > 0.0 { 1.0 / total_w } else { 1.0 };
            let loss = loss_sum as f64 * scale;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { step });
            }
            let grad = grad_logits.map(|g| g * scale as f32);
            let mut flat = net.backward(&cache, &grad)?.flatten();
            if let Some(max_norm) = cfg.clip_norm {
                clip_gradients(&mut flat, max_norm);
            }
            let grad_refs: Vec<&[f32]> = flat.iter().map(|v| v.as_slice()).collect();
            let mut params = net.param_slices_mut();
            opt.step(&mut params, &grad_refs, lr)?;
            if net.param_slices().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(TrainError::NonFinite { step });
            }
            let entry = StepLog { step, lr, loss };
            sink(&entry);
            logs.push(entry);
            step += 1;
        }
    }
    Ok(TrainOutcome { net, logs })
}
