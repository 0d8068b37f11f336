//! `worldstring` — operator interface for the occupancy-model pipeline:
//! generate, train, eval, baseline, ablate, visualize.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use commands::{BaselineMethod, Split};
use config::{default_state, preset_object, RunConfig};

#[derive(Parser)]
#[command(name = "worldstring", version, about = "Keypoint-conditioned occupancy modeling")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct TrainOverrides {
    /// Optimizer steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Frames per optimizer step.
    #[arg(long)]
    batch_frames: Option<usize>,
    /// Occupancy samples per frame per step.
    #[arg(long)]
    points: Option<usize>,
    /// Occupied fraction of training samples.
    #[arg(long)]
    balance: Option<f64>,
    /// Write an intermediate checkpoint every N steps.
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.steps {
            cfg.train.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.batch_frames {
            cfg.train.batch_frames = v;
        }
        if let Some(v) = self.points {
            cfg.train.points_per_frame = v;
        }
        if let Some(v) = self.balance {
            cfg.train.balance = v;
        }
        if let Some(v) = self.checkpoint_every {
            cfg.train.checkpoint_every = v;
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset directory.
    Generate {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Experiment config document (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Object preset: chain3 | chain2 | tube | rope | sheet.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        keypoints: Option<usize>,
        /// Grid resolution per axis.
        #[arg(long)]
        res: Option<usize>,
        /// Also simulate a multi-camera depth capture per frame.
        #[arg(long)]
        sensor: bool,
        /// Camera count for the sensor rig.
        #[arg(long)]
        cameras: Option<usize>,
        /// Depth noise sigma in meters.
        #[arg(long)]
        sigma: Option<f64>,
        /// Also write per-frame PLY point clouds.
        #[arg(long)]
        ply: bool,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Frames used for training (the rest are held out).
        #[arg(long)]
        train_frames: Option<usize>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        train: TrainOverrides,
    },
    /// Evaluate a checkpoint against a dataset's ground truth.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "held")]
        split: Split,
        #[arg(long, default_value_t = 200)]
        train_frames: usize,
        /// Evaluate at a different grid resolution (ground truth is
        /// re-voxelized from the tracked clouds).
        #[arg(long)]
        res: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Export one colored error-map PLY per frame.
        #[arg(long)]
        error_map: bool,
    },
    /// Run a storage-budgeted retrieval baseline.
    Baseline {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint whose byte size caps the baseline's storage.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long, default_value_t = 200)]
        train_frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep attention layers, hidden dim, resolution, and keypoints.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Attention-layer values, e.g. 1,2,3.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
        /// Hidden-dimension values, e.g. 64,128,192.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        /// Grid resolutions, e.g. 32,64,96.
        #[arg(long, value_delimiter = ',')]
        res: Vec<usize>,
        /// Keypoint counts, e.g. 3,15.
        #[arg(long, value_delimiter = ',')]
        keypoints: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run configurations on separate threads.
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        train: TrainOverrides,
    },
    /// Export prediction, error-map, and attribution point clouds.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        error_map: bool,
        #[arg(long)]
        attribution: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Generate {
            out,
            config,
            spec,
            frames,
            seed,
            keypoints,
            res,
            sensor,
            cameras,
            sigma,
            ply,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(name) = spec {
                let object = preset_object(&name).ok_or_else(|| {
                    anyhow::anyhow!(worldstring::Error::Config(format!(
                        "unknown object spec '{name}' (expected chain3|chain2|tube|rope|sheet)"
                    )))
                })?;
                cfg.state = default_state(&object);
                cfg.object = object;
            }
            if let Some(v) = frames {
                cfg.frames = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = keypoints {
                cfg.keypoints = v;
            }
            if let Some(v) = res {
                cfg.res = v;
            }
            if sensor {
                let mut sc = cfg.sensor.take().unwrap_or_default();
                if let Some(c) = cameras {
                    sc.cameras = c;
                }
                if let Some(s) = sigma {
                    sc.depth_sigma = s;
                }
                cfg.sensor = Some(sc);
            }
            commands::cmd_generate(&cfg, &out, ply)
        }
        Cmd::Train {
            dataset,
            out,
            config,
            seed,
            train_frames,
            resume,
            train,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(v) = seed {
                cfg.seed = v;
                cfg.train.seed = v;
            }
            if let Some(v) = train_frames {
                cfg.train_frames = v;
            }
            train.apply(&mut cfg);
            commands::cmd_train(&cfg, &dataset, &out, resume.as_deref())
        }
        Cmd::Eval {
            checkpoint,
            dataset,
            out,
            split,
            train_frames,
            res,
            threshold,
            error_map,
        } => commands::cmd_eval(
            &checkpoint,
            &dataset,
            &out,
            split,
            train_frames,
            res,
            threshold,
            error_map,
        ),
        Cmd::Baseline {
            dataset,
            checkpoint,
            out,
            method,
            train_frames,
            seed,
        } => commands::cmd_baseline(&dataset, &checkpoint, method, &out, train_frames, seed),
        Cmd::Ablate {
            out,
            config,
            layers,
            dims,
            res,
            keypoints,
            seed,
            parallel,
            train,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(v) = seed {
                cfg.seed = v;
                cfg.train.seed = v;
            }
            train.apply(&mut cfg);
            commands::cmd_ablate(&cfg, &out, &layers, &dims, &res, &keypoints, parallel)
        }
        Cmd::Visualize {
            checkpoint,
            dataset,
            out,
            frame,
            error_map,
            attribution,
            threshold,
        } => commands::cmd_visualize(
            &checkpoint,
            &dataset,
            &out,
            frame,
            error_map,
            attribution,
            threshold,
        ),
    }
}

/// Configuration problems exit 2; runtime failures exit 1.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(ws) = cause.downcast_ref::<worldstring::Error>() {
            return match ws {
                worldstring::Error::Config(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
