//! End-to-end BCE training over generated frames.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::WorldStringModel;
use crate::datagen::{sample_occupancy, FrameRecord};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Graph, Tensor};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub lr: f64,
    /// Frames sampled (with replacement) per step.
    pub batch_frames: usize,
    /// Occupancy samples drawn per frame.
    pub points_per_frame: usize,
    /// Fraction of samples drawn from occupied cells.
    pub balance: f64,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps (0 = never).
    #[serde(default)]
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            lr: 1e-3,
            batch_frames: 2,
            points_per_frame: 256,
            balance: 0.5,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

/// Loss curve and summary of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// `(step, loss)` for every step.
    pub losses: Vec<(u64, f64)>,
    pub final_loss: f64,
}

impl TrainReport {
    /// CSV with a `step,loss` header line.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.losses {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
}

/// Run `cfg.steps` optimizer steps on `model`. Each step samples
/// `batch_frames` frames and `points_per_frame` balanced occupancy
/// samples per frame, accumulates mean BCE, and applies one Adam update.
/// When `out_dir` is given, a loss CSV and checkpoints are written there.
/// Deterministic: seed and inputs fix every byte of the result.
pub fn train(
    model: &mut WorldStringModel,
    adam: &mut AdamState,
    frames: &[FrameRecord],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    if frames.is_empty() {
        return Err(Error::data("training set has no frames"));
    }
    if cfg.batch_frames == 0 || cfg.points_per_frame == 0 {
        return Err(Error::config("batch_frames and points_per_frame must be positive"));
    }
    for f in frames {
        if f.keypoints.len() != model.config().keypoints {
            return Err(Error::data(format!(
                "frame {} has {} keypoints, model expects {}",
                f.index,
                f.keypoints.len(),
                model.config().keypoints
            )));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        let s = adam.step; // continues across resumed runs
        let mut g = Graph::new();
        let binding = model.bind(&mut g);

        // Sample the step's frames and points, then run them as one
        // stacked batch (block-diagonal attention).
        let mut frame_keypoints = Vec::with_capacity(cfg.batch_frames);
        let mut positions: Vec<Vec<[f64; 3]>> = Vec::with_capacity(cfg.batch_frames);
        let mut labels = Vec::with_capacity(cfg.batch_frames * cfg.points_per_frame);
        for slot in 0..cfg.batch_frames {
            let pick = (mix(cfg.seed, s, slot as u64) % frames.len() as u64) as usize;
            let frame = &frames[pick];
            let samples = sample_occupancy(
                &frame.grid,
                cfg.points_per_frame,
                cfg.balance,
                mix(cfg.seed, s.wrapping_add(0x51_7E), slot as u64),
            )?;
            frame_keypoints.push(frame.keypoints.as_slice());
            positions.push(samples.iter().map(|x| x.position).collect());
            labels.extend(samples.iter().map(|x| x.label));
        }
        let point_slices: Vec<&[[f64; 3]]> = positions.iter().map(|p| p.as_slice()).collect();
        let out = model.forward_batch(&mut g, &binding, &frame_keypoints, &point_slices)?;
        let labels = Tensor::vector(labels)?;
        let loss = g.bce_loss(out.probs, &labels)?;
        let loss_v = g.value(loss).item()?;
        if !loss_v.is_finite() {
            return Err(Error::training(format!(
                "non-finite loss at step {}: {loss_v}; {}",
                s + 1,
                param_diagnostics(model)
            )));
        }
        g.backward(loss)?;

        let grads: Vec<Tensor> = binding
            .vars()
            .iter()
            .map(|&v| g.grad(v).expect("backward populates all parameter leaves"))
            .collect();
        adam.apply(model.params_mut(), &grads)?;
        losses.push((adam.step, loss_v));

        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && adam.step % cfg.checkpoint_every == 0 {
                let meta = CheckpointMeta {
                    seed: cfg.seed,
                    steps: adam.step,
                    final_loss: loss_v,
                };
                save_checkpoint(
                    &dir.join(format!("checkpoint_{:06}.wsck", adam.step)),
                    model,
                    Some(adam),
                    &meta,
                )?;
            }
        }
    }

    let final_loss = losses.last().map(|&(_, l)| l).unwrap_or(f64::NAN);
    let report = TrainReport { losses, final_loss };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("loss_curve.csv"), report.loss_csv())?;
        let meta = CheckpointMeta {
            seed: cfg.seed,
            steps: adam.step,
            final_loss,
        };
        // Weights-only checkpoint: its file size is the storage budget
        // handed to the retrieval baselines, so optimizer moments stay
        // out of it. The resume variant carries them.
        save_checkpoint(&dir.join("checkpoint.wsck"), model, None, &meta)?;
        save_checkpoint(&dir.join("checkpoint_resume.wsck"), model, Some(adam), &meta)?;
    }
    Ok(report)
}

fn param_diagnostics(model: &WorldStringModel) -> String {
    let mut parts: Vec<String> = model
        .params()
        .iter()
        .map(|(n, t)| format!("{n}: |.|²={:.3e}", t.sq_norm()))
        .collect();
    parts.truncate(8);
    format!("parameter norms [{}]", parts.join(", "))
}
