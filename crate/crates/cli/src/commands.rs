//! Subcommand implementations.

use anyhow::{anyhow, bail, Context};
use serde::Serialize;
use std::path::Path;

use worldstring::baselines::{build_nn_store, nn_predict, optim_nn_predict, write_store};
use worldstring::datagen::{
    generate_sequence, read_dataset, voxelize, write_dataset, Dataset, FrameRecord,
};
use worldstring::eval::{
    attention_attribution, dense_query, error_map, evaluate_frames, metrics_table,
    MetricsReport,
};
use worldstring::model::{
    load_checkpoint, save_checkpoint, train, CheckpointMeta, WorldStringModel,
};
use worldstring::numerics::AdamState;

use crate::config::RunConfig;

pub fn cmd_generate(cfg: &RunConfig, out: &Path, ply: bool) -> anyhow::Result<()> {
    cfg.echo(out)?;
    let ds = generate_sequence(&cfg.sequence_config())?;
    write_dataset(&ds, out, ply)?;
    log::info!(
        "wrote {} frames at R={} to {}",
        ds.frames.len(),
        ds.res(),
        out.display()
    );
    Ok(())
}

/// Train on the first `train_frames` frames of a dataset directory.
pub fn cmd_train(
    cfg: &RunConfig,
    dataset_dir: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> anyhow::Result<()> {
    cfg.echo(out)?;
    let ds = read_dataset(dataset_dir)
        .with_context(|| format!("reading dataset {}", dataset_dir.display()))?;
    let train_frames = cfg.train_frames.min(ds.frames.len());
    let (train_set, _) = ds.split_at(train_frames)?;

    let (mut model, mut adam) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let adam = match ck.optimizer {
                Some(mut a) => {
                    a.lr = cfg.train.lr;
                    a
                }
                None => AdamState::new(ck.model.params(), cfg.train.lr),
            };
            log::info!("resumed from {} at step {}", path.display(), adam.step);
            (ck.model, adam)
        }
        None => {
            let arch = cfg
                .arch
                .resolve(*ds.bounds(), ds.keypoint_count(), ds.res());
            let model = WorldStringModel::init(arch, cfg.seed)?;
            let adam = AdamState::new(model.params(), cfg.train.lr);
            (model, adam)
        }
    };

    let report = train(&mut model, &mut adam, train_set, &cfg.train, Some(out))?;
    log::info!(
        "trained {} steps, final loss {:.5}",
        report.losses.len(),
        report.final_loss
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Held,
    All,
}

fn select_frames<'a>(
    ds: &'a Dataset,
    split: Split,
    train_frames: usize,
) -> anyhow::Result<&'a [FrameRecord]> {
    let boundary = train_frames.min(ds.frames.len());
    Ok(match split {
        Split::All => &ds.frames,
        Split::Train => &ds.frames[..boundary],
        Split::Held => {
            let held = &ds.frames[boundary..];
            if held.is_empty() {
                bail!(worldstring::Error::Config(format!(
                    "no held-out frames beyond train_frames={boundary}"
                )));
            }
            held
        }
    })
}

#[derive(Serialize)]
struct EvalReportDoc {
    split: String,
    res: usize,
    threshold: f64,
    checkpoint_bytes: u64,
    aggregate: MetricsReport,
    per_frame: Vec<MetricsReport>,
}

pub fn cmd_eval(
    checkpoint: &Path,
    dataset_dir: &Path,
    out: &Path,
    split: Split,
    train_frames: usize,
    res_override: Option<usize>,
    threshold: f64,
    with_error_maps: bool,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let ck = load_checkpoint(checkpoint)?;
    let ds = read_dataset(dataset_dir)?;
    let frames = select_frames(&ds, split, train_frames)?;

    // A resolution override rebuilds ground truth from the tracked clouds.
    let frames_owned: Vec<FrameRecord>;
    let frames = match res_override {
        Some(res) if res != ds.res() => {
            frames_owned = frames
                .iter()
                .map(|f| {
                    let grid = voxelize(&f.tracked.points, *ds.bounds(), res)?.grid;
                    Ok(FrameRecord {
                        index: f.index,
                        keypoints: f.keypoints.clone(),
                        tracked: f.tracked.clone(),
                        grid,
                        sensor_grid: None,
                    })
                })
                .collect::<worldstring::Result<_>>()?;
            &frames_owned[..]
        }
        _ => frames,
    };

    let (aggregate, per_frame) = evaluate_frames(&ck.model, frames, threshold)?;
    if with_error_maps {
        for f in frames {
            let pred = dense_query(
                &ck.model,
                &f.keypoints,
                f.grid.bounds(),
                f.grid.res(),
                threshold,
            )?;
            let map = error_map(&pred, &f.grid)?;
            map.write_ply(&out.join(format!("error_map_{:05}.ply", f.index)))?;
        }
    }

    let doc = EvalReportDoc {
        split: format!("{split:?}").to_lowercase(),
        res: frames[0].grid.res(),
        threshold,
        checkpoint_bytes: ck.bytes,
        aggregate: aggregate.clone(),
        per_frame,
    };
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&doc)? + "\n",
    )?;
    let table = metrics_table(&[("WorldString".to_string(), aggregate.clone())]);
    std::fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineMethod {
    Nn,
    OptimNn,
}

#[derive(Serialize)]
struct BaselineReportDoc {
    method: String,
    budget_bytes: u64,
    store_bytes: u64,
    stored_entries: usize,
    aggregate: MetricsReport,
    per_frame: Vec<MetricsReport>,
}

pub fn cmd_baseline(
    dataset_dir: &Path,
    checkpoint: &Path,
    method: BaselineMethod,
    out: &Path,
    train_frames: usize,
    seed: u64,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let ds = read_dataset(dataset_dir)?;
    let ck = load_checkpoint(checkpoint)?;
    let (train_set, held) = ds.split_at(train_frames.min(ds.frames.len()))?;
    if held.is_empty() {
        bail!(worldstring::Error::Config(
            "no held-out frames for baseline evaluation".to_string()
        ));
    }

    let store = build_nn_store(train_set, ck.bytes, seed)?;
    assert!(store.bytes <= ck.bytes, "budget law violated");
    write_store(&store, &out.join("store"))?;

    let mut per_frame = Vec::with_capacity(held.len());
    let (mut tp, mut fp, mut fn_c, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for f in held {
        let pred = match method {
            BaselineMethod::Nn => nn_predict(&store, &f.keypoints)?.clone(),
            BaselineMethod::OptimNn => optim_nn_predict(&store, &f.keypoints)?.1,
        };
        let m = worldstring::eval::compute_metrics(&pred, &f.grid)?;
        tp += m.tp;
        fp += m.fp;
        fn_c += m.fn_count;
        tn += m.tn;
        per_frame.push(m);
    }
    let aggregate = MetricsReport::from_counts(tp, fp, fn_c, tn, ds.res());

    let label = match method {
        BaselineMethod::Nn => "NN",
        BaselineMethod::OptimNn => "Optim. NN",
    };
    let doc = BaselineReportDoc {
        method: label.to_string(),
        budget_bytes: ck.bytes,
        store_bytes: store.bytes,
        stored_entries: store.len(),
        aggregate: aggregate.clone(),
        per_frame,
    };
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&doc)? + "\n",
    )?;
    let table = metrics_table(&[(label.to_string(), aggregate)]);
    std::fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    println!(
        "storage: {} B stored / {} B budget ({} entries)",
        doc.store_bytes, doc.budget_bytes, doc.stored_entries
    );
    Ok(())
}

/// Generate, train, and evaluate one configuration end to end; the
/// ablation driver is a loop over this.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> anyhow::Result<MetricsReport> {
    cfg.echo(out)?;
    let ds = generate_sequence(&cfg.sequence_config())?;
    let train_frames = cfg.train_frames.min(ds.frames.len());
    let (train_set, held) = ds.split_at(train_frames)?;
    if held.is_empty() {
        bail!(worldstring::Error::Config(
            "experiment needs held-out frames".to_string()
        ));
    }
    let arch = cfg.arch.resolve(*ds.bounds(), ds.keypoint_count(), ds.res());
    let mut model = WorldStringModel::init(arch, cfg.seed)?;
    let mut adam = AdamState::new(model.params(), cfg.train.lr);
    let report = train(&mut model, &mut adam, train_set, &cfg.train, Some(out))?;
    save_checkpoint(
        &out.join("checkpoint.wsck"),
        &model,
        Some(&adam),
        &CheckpointMeta {
            seed: cfg.train.seed,
            steps: adam.step,
            final_loss: report.final_loss,
        },
    )?;
    let (aggregate, _) = evaluate_frames(&model, held, cfg.eval.threshold)?;
    Ok(aggregate)
}

#[derive(Serialize)]
struct AblationRow {
    label: String,
    layers: usize,
    dim: usize,
    res: usize,
    keypoints: usize,
    metrics: MetricsReport,
}

/// One-factor-at-a-time sweep over attention layers (L), hidden dimension
/// (D), grid resolution (R), and keypoint count (K).
#[allow(clippy::too_many_arguments)]
pub fn cmd_ablate(
    base: &RunConfig,
    out: &Path,
    layers: &[usize],
    dims: &[usize],
    res_values: &[usize],
    keypoints: &[usize],
    parallel: bool,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    base.echo(out)?;

    let mut configs: Vec<(String, RunConfig)> = vec![("base".to_string(), base.clone())];
    for &l in layers {
        if l != base.arch.layers {
            let mut c = base.clone();
            c.arch.layers = l;
            configs.push((format!("L{l}"), c));
        }
    }
    for &d in dims {
        if d != base.arch.state_dim {
            let mut c = base.clone();
            c.arch.state_dim = d;
            c.arch.object_dim = d;
            configs.push((format!("D{d}"), c));
        }
    }
    for &r in res_values {
        if r != base.res {
            let mut c = base.clone();
            c.res = r;
            configs.push((format!("R{r}"), c));
        }
    }
    for &k in keypoints {
        if k != base.keypoints {
            let mut c = base.clone();
            c.keypoints = k;
            configs.push((format!("K{k}"), c));
        }
    }

    let run_one = |label: &str, cfg: &RunConfig| -> anyhow::Result<AblationRow> {
        let dir = out.join(label);
        let metrics = run_experiment(cfg, &dir)?;
        Ok(AblationRow {
            label: label.to_string(),
            layers: cfg.arch.layers,
            dim: cfg.arch.state_dim,
            res: cfg.res,
            keypoints: cfg.keypoints,
            metrics,
        })
    };

    let rows: Vec<AblationRow> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = configs
                .iter()
                .map(|(label, cfg)| scope.spawn(move || run_one(label, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().map_err(|_| anyhow!("ablation thread panicked"))?)
                .collect::<anyhow::Result<Vec<_>>>()
        })?
    } else {
        configs
            .iter()
            .map(|(label, cfg)| run_one(label, cfg))
            .collect::<anyhow::Result<Vec<_>>>()?
    };

    let mut table = format!(
        "{:<8} {:>3} {:>5} {:>4} {:>4} {:>8} {:>8} {:>8} {:>8}\n",
        "config", "L", "D", "R", "K", "IoU", "F1", "P", "R"
    );
    for row in &rows {
        table.push_str(&format!(
            "{:<8} {:>3} {:>5} {:>4} {:>4} {}\n",
            row.label,
            row.layers,
            row.dim,
            row.res,
            row.keypoints,
            row.metrics.row()
        ));
    }
    std::fs::write(out.join("ablation.txt"), &table)?;
    std::fs::write(
        out.join("ablation.json"),
        serde_json::to_string_pretty(&rows)? + "\n",
    )?;
    print!("{table}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_visualize(
    checkpoint: &Path,
    dataset_dir: &Path,
    out: &Path,
    frame: usize,
    with_error_map: bool,
    with_attribution: bool,
    threshold: f64,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let ck = load_checkpoint(checkpoint)?;
    let ds = read_dataset(dataset_dir)?;
    let f = ds
        .frames
        .get(frame)
        .ok_or_else(|| anyhow!(worldstring::Error::Config(format!("frame {frame} out of range"))))?;

    let pred = dense_query(
        &ck.model,
        &f.keypoints,
        f.grid.bounds(),
        f.grid.res(),
        threshold,
    )?;
    let centers: Vec<_> = pred
        .iter_occupied()
        .map(|(x, y, z)| pred.cell_center(x, y, z))
        .collect();
    worldstring::datagen::ply::write_ply(&out.join("prediction.ply"), &centers, None)?;

    if with_error_map {
        let map = error_map(&pred, &f.grid)?;
        map.write_ply(&out.join("error_map.ply"))?;
    }
    if with_attribution {
        let attr = attention_attribution(&ck.model, &f.keypoints, &centers)?;
        worldstring::datagen::ply::write_ply(
            &out.join("attribution.ply"),
            &centers,
            Some(&attr.colors),
        )?;
    }
    log::info!("wrote visualization artifacts to {}", out.display());
    Ok(())
}
