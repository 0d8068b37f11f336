//! Declarative experiment configuration: one JSON document per run, every
//! field defaulted, unknown keys rejected. Command-line flags override
//! individual fields and the resolved config is echoed into the output
//! directory.

use serde::{Deserialize, Serialize};
use std::path::Path;

use worldstring::datagen::{ObjectSpec, SensorConfig, SequenceConfig, StateSampler};
use worldstring::geo::Aabb;
use worldstring::model::{ArchConfig, TrainConfig};

/// Architecture knobs that do not depend on the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchParams {
    pub tokens: usize,
    pub token_dim: usize,
    pub state_dim: usize,
    pub object_dim: usize,
    pub layers: usize,
    pub pe_frequencies: usize,
}

impl Default for ArchParams {
    fn default() -> Self {
        ArchParams {
            tokens: 64,
            token_dim: 64,
            state_dim: 128,
            object_dim: 128,
            layers: 2,
            pe_frequencies: 8,
        }
    }
}

impl ArchParams {
    /// Complete the architecture with dataset-derived fields.
    pub fn resolve(&self, bounds: Aabb, keypoints: usize, train_res: usize) -> ArchConfig {
        ArchConfig {
            tokens: self.tokens,
            token_dim: self.token_dim,
            state_dim: self.state_dim,
            object_dim: self.object_dim,
            layers: self.layers,
            pe_frequencies: self.pe_frequencies,
            keypoints,
            bounds,
            train_res,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    pub threshold: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { threshold: 0.5 }
    }
}

/// One experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub object: ObjectSpec,
    pub state: StateSampler,
    pub frames: usize,
    /// Frames used for training; the rest are held out.
    pub train_frames: usize,
    pub keypoints: usize,
    pub res: usize,
    pub sensor: Option<SensorConfig>,
    pub arch: ArchParams,
    pub train: TrainConfig,
    pub eval: EvalParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            object: preset_object("chain3").unwrap(),
            state: StateSampler::UniformJoints,
            frames: 240,
            train_frames: 200,
            keypoints: 15,
            res: 64,
            sensor: None,
            arch: ArchParams::default(),
            train: TrainConfig {
                steps: 3000,
                lr: 1e-3,
                batch_frames: 2,
                points_per_frame: 256,
                balance: 0.5,
                seed: 7,
                checkpoint_every: 0,
            },
            eval: EvalParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| anyhow::anyhow!(worldstring::Error::Config(format!("{path:?}: {e}"))))?;
        Ok(cfg)
    }

    pub fn sequence_config(&self) -> SequenceConfig {
        SequenceConfig {
            object: self.object.clone(),
            frames: self.frames,
            seed: self.seed,
            keypoints: self.keypoints,
            res: self.res,
            state: self.state.clone(),
            sensor: self.sensor.clone(),
        }
    }

    /// Write the resolved config into the experiment directory.
    pub fn echo(&self, out_dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(
            out_dir.join("config.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

/// Named object presets for quick runs; full control lives in the config
/// document.
pub fn preset_object(name: &str) -> Option<ObjectSpec> {
    match name {
        "chain3" => Some(ObjectSpec::Chain {
            links: 3,
            link_length: 0.4,
            radius: 0.11,
            points: 6000,
            joint_limit: 1.2,
        }),
        "chain2" => Some(ObjectSpec::Chain {
            links: 2,
            link_length: 0.4,
            radius: 0.11,
            points: 4000,
            joint_limit: 1.2,
        }),
        "tube" => Some(ObjectSpec::SkinnedTube {
            bones: 2,
            length: 1.0,
            radius: 0.09,
            points: 6000,
            joint_limit: 1.0,
            blend_width: 0.5,
        }),
        "rope" => Some(ObjectSpec::Rope {
            length: 1.0,
            radius: 0.05,
            points: 6000,
        }),
        "sheet" => Some(ObjectSpec::Sheet {
            width: 0.8,
            height: 0.8,
            thickness: 0.03,
            points: 6000,
        }),
        _ => None,
    }
}

/// The default state sampler for an object class.
pub fn default_state(object: &ObjectSpec) -> StateSampler {
    if object.is_soft() {
        StateSampler::SoftWalk {
            step: 0.015,
            max_displacement: 0.22,
        }
    } else {
        StateSampler::UniformJoints
    }
}
