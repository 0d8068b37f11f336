//! Dense grid querying, volumetric metrics, error maps, attention
//! attribution, and the sensor-gap study.

use nalgebra::Point3;
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;
use std::time::Instant;

use crate::datagen::{ply, Dataset, FrameRecord, OccupancyGrid};
use crate::error::{Error, Result};
use crate::geo::Aabb;
use crate::model::infer::InferCtx;
use crate::model::{train, TrainConfig, WorldStringModel};
use crate::numerics::{thread_cap, AdamState};

/// Occupancy decision threshold; ties (`p == threshold`) count occupied.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Points per inference batch during dense queries.
const QUERY_BATCH: usize = 16384;
/// Tokens blended per point in the attribution coloring.
pub const ATTRIBUTION_TOP_K: usize = 5;

// ── metrics ─────────────────────────────────────────────────────────

/// Volumetric scores in [0,100] plus the raw confusion counts.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_count: u64,
    pub tn: u64,
    pub res: usize,
    pub threshold: Option<f64>,
    pub wall_time_s: f64,
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, fn_count: u64, tn: u64, res: usize) -> Self {
        let denom = tp + fp + fn_count;
        let (iou, f1, precision, recall) = if denom == 0 {
            (100.0, 100.0, 100.0, 100.0)
        } else {
            let p = if tp + fp > 0 {
                100.0 * tp as f64 / (tp + fp) as f64
            } else {
                0.0
            };
            let r = if tp + fn_count > 0 {
                100.0 * tp as f64 / (tp + fn_count) as f64
            } else {
                0.0
            };
            let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (100.0 * tp as f64 / denom as f64, f1, p, r)
        };
        MetricsReport {
            iou,
            f1,
            precision,
            recall,
            tp,
            fp,
            fn_count,
            tn,
            res,
            threshold: None,
            wall_time_s: 0.0,
        }
    }

    /// One aligned table row: `IoU F1 P R` to two decimals.
    pub fn row(&self) -> String {
        format!(
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            self.iou, self.f1, self.precision, self.recall
        )
    }
}

/// Cell-wise confusion counts of `pred` against `gt`.
pub fn compute_metrics(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<MetricsReport> {
    if pred.res() != gt.res() || pred.bounds() != gt.bounds() {
        return Err(Error::data(format!(
            "grid mismatch: {}@{:?} vs {}@{:?}",
            pred.res(),
            pred.bounds(),
            gt.res(),
            gt.bounds()
        )));
    }
    let (mut tp, mut fp, mut fn_c, mut tn) = (0u64, 0u64, 0u64, 0u64);
    let r = pred.res();
    for ix in 0..r {
        for iy in 0..r {
            for iz in 0..r {
                match (pred.get(ix, iy, iz), gt.get(ix, iy, iz)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_c += 1,
                    (false, false) => tn += 1,
                }
            }
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_c, tn, r))
}

/// Aligned plain-text table with one row per labeled report.
pub fn metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let mut s = format!(
        "{:<24} {:>8} {:>8} {:>8} {:>8}\n",
        "", "IoU", "F1", "P", "R"
    );
    for (label, m) in rows {
        s.push_str(&format!("{label:<24} {}\n", m.row()));
    }
    s
}

// ── dense grid query ────────────────────────────────────────────────

/// Exhaustively query every cell center of an R³ grid over `bounds` and
/// threshold the probabilities (ties occupied). Batched and parallel over
/// immutable model parameters; batching cannot change any per-point value.
pub fn dense_query(
    model: &WorldStringModel,
    keypoints: &[Point3<f64>],
    bounds: &Aabb,
    res: usize,
    threshold: f64,
) -> Result<OccupancyGrid> {
    let started = Instant::now();
    let ctx = InferCtx::new(model)?;
    let z_obj = ctx.object_embedding(keypoints)?;
    let mut grid = OccupancyGrid::empty(res, *bounds)?;

    let centers: Vec<Point3<f64>> = (0..res * res * res)
        .map(|i| {
            let iz = i % res;
            let iy = (i / res) % res;
            let ix = i / (res * res);
            grid.cell_center(ix, iy, iz)
        })
        .collect();

    thread_cap();
    let chunk_probs: Vec<Vec<f64>> = centers
        .par_chunks(QUERY_BATCH)
        .map(|chunk| ctx.query(&z_obj, chunk).map(|q| q.probs))
        .collect::<Result<_>>()?;

    let mut i = 0usize;
    for probs in chunk_probs {
        for p in probs {
            if p >= threshold {
                let iz = i % res;
                let iy = (i / res) % res;
                let ix = i / (res * res);
                grid.set(ix, iy, iz, true);
            }
            i += 1;
        }
    }
    log::debug!(
        "dense query {}³ in {:.2}s",
        res,
        started.elapsed().as_secs_f64()
    );
    Ok(grid)
}

/// Dense-query a batch of frames and aggregate confusion counts against
/// their ground-truth grids into one report (plus per-frame reports).
pub fn evaluate_frames(
    model: &WorldStringModel,
    frames: &[FrameRecord],
    threshold: f64,
) -> Result<(MetricsReport, Vec<MetricsReport>)> {
    if frames.is_empty() {
        return Err(Error::data("no frames to evaluate"));
    }
    let started = Instant::now();
    let mut per_frame = Vec::with_capacity(frames.len());
    let (mut tp, mut fp, mut fn_c, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for f in frames {
        let pred = dense_query(
            model,
            &f.keypoints,
            f.grid.bounds(),
            f.grid.res(),
            threshold,
        )?;
        let mut m = compute_metrics(&pred, &f.grid)?;
        m.threshold = Some(threshold);
        tp += m.tp;
        fp += m.fp;
        fn_c += m.fn_count;
        tn += m.tn;
        per_frame.push(m);
    }
    let mut total = MetricsReport::from_counts(tp, fp, fn_c, tn, frames[0].grid.res());
    total.threshold = Some(threshold);
    total.wall_time_s = started.elapsed().as_secs_f64();
    Ok((total, per_frame))
}

// ── error maps ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellClass {
    Tp,
    Fp,
    Fn,
    Tn,
}

/// Per-cell classification of a prediction against ground truth.
#[derive(Debug, Clone)]
pub struct ErrorMap {
    pub res: usize,
    pub bounds: Aabb,
    pub classes: Vec<CellClass>,
    pub tp: u64,
    pub fp: u64,
    pub fn_count: u64,
    pub tn: u64,
}

pub const TP_COLOR: [u8; 3] = [0, 200, 0];
pub const FP_COLOR: [u8; 3] = [220, 0, 0];
pub const FN_COLOR: [u8; 3] = [0, 60, 220];

pub fn error_map(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<ErrorMap> {
    if pred.res() != gt.res() || pred.bounds() != gt.bounds() {
        return Err(Error::data("error map needs equal resolution and bounds"));
    }
    let r = pred.res();
    let mut classes = Vec::with_capacity(r * r * r);
    let (mut tp, mut fp, mut fn_c, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for ix in 0..r {
        for iy in 0..r {
            for iz in 0..r {
                let class = match (pred.get(ix, iy, iz), gt.get(ix, iy, iz)) {
                    (true, true) => {
                        tp += 1;
                        CellClass::Tp
                    }
                    (true, false) => {
                        fp += 1;
                        CellClass::Fp
                    }
                    (false, true) => {
                        fn_c += 1;
                        CellClass::Fn
                    }
                    (false, false) => {
                        tn += 1;
                        CellClass::Tn
                    }
                };
                classes.push(class);
            }
        }
    }
    Ok(ErrorMap {
        res: r,
        bounds: *pred.bounds(),
        classes,
        tp,
        fp,
        fn_count: fn_c,
        tn,
    })
}

impl ErrorMap {
    /// Colored cell centers for TP/FP/FN cells (TN omitted).
    pub fn colored_cells(&self) -> (Vec<Point3<f64>>, Vec<[u8; 3]>) {
        let grid = OccupancyGrid::empty(self.res, self.bounds).unwrap();
        let mut pts = Vec::new();
        let mut colors = Vec::new();
        let r = self.res;
        for ix in 0..r {
            for iy in 0..r {
                for iz in 0..r {
                    let class = self.classes[(ix * r + iy) * r + iz];
                    let color = match class {
                        CellClass::Tp => TP_COLOR,
                        CellClass::Fp => FP_COLOR,
                        CellClass::Fn => FN_COLOR,
                        CellClass::Tn => continue,
                    };
                    pts.push(grid.cell_center(ix, iy, iz));
                    colors.push(color);
                }
            }
        }
        (pts, colors)
    }

    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let (pts, colors) = self.colored_cells();
        ply::write_ply(path, &pts, Some(&colors))
    }
}

// ── attention attribution ───────────────────────────────────────────

/// Fixed per-token color from a golden-ratio hue walk.
pub fn token_color(i: usize) -> [f64; 3] {
    let hue = ((i as f64 + 1.0) * 0.618_033_988_749_895).fract();
    hsv_to_rgb(hue, 0.62, 0.95)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Top-k weights of one attention row, renormalized to sum to 1.
/// Ties break toward the lower token index; if fewer than
/// [`ATTRIBUTION_TOP_K`] tokens exist, all are used.
pub fn top_k_renormalized(row: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k.min(row.len()));
    let total: f64 = idx.iter().map(|&i| row[i]).sum();
    idx.into_iter()
        .map(|i| (i, if total > 0.0 { row[i] / total } else { 0.0 }))
        .collect()
}

/// Attribution for a batch of points: blended linear-RGB colors from the
/// top-5 attention weights, plus each point's dominant token.
#[derive(Debug, Clone)]
pub struct Attribution {
    pub colors: Vec<[u8; 3]>,
    pub dominant: Vec<usize>,
    pub top: Vec<Vec<(usize, f64)>>,
}

pub fn attention_attribution(
    model: &WorldStringModel,
    keypoints: &[Point3<f64>],
    points: &[Point3<f64>],
) -> Result<Attribution> {
    let out = model.query_occupancy(keypoints, points)?;
    let mut colors = Vec::with_capacity(points.len());
    let mut dominant = Vec::with_capacity(points.len());
    let mut top = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let row = out.attention_row(i);
        let picks = top_k_renormalized(row, ATTRIBUTION_TOP_K);
        let mut rgb = [0.0f64; 3];
        for &(tok, w) in &picks {
            let c = token_color(tok);
            for a in 0..3 {
                rgb[a] += w * c[a];
            }
        }
        colors.push([
            (rgb[0] * 255.0).round() as u8,
            (rgb[1] * 255.0).round() as u8,
            (rgb[2] * 255.0).round() as u8,
        ]);
        dominant.push(picks[0].0);
        top.push(picks);
    }
    Ok(Attribution {
        colors,
        dominant,
        top,
    })
}

/// Normalized histogram of dominant tokens for each group (e.g. link).
pub fn dominant_token_histograms(
    dominant: &[usize],
    groups: &[usize],
    n_groups: usize,
    tokens: usize,
) -> Vec<Vec<f64>> {
    let mut hist = vec![vec![0.0; tokens]; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&tok, &g) in dominant.iter().zip(groups) {
        hist[g][tok] += 1.0;
        counts[g] += 1;
    }
    for (h, &c) in hist.iter_mut().zip(&counts) {
        if c > 0 {
            for v in h.iter_mut() {
                *v /= c as f64;
            }
        }
    }
    hist
}

/// Histogram intersection: sum of elementwise minima (1 = identical).
pub fn histogram_overlap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

// ── gap study ───────────────────────────────────────────────────────

/// Outcome of training on ground-truth vs sensor-derived targets.
#[derive(Debug, Clone, Serialize)]
pub struct GapStudyReport {
    pub gt: MetricsReport,
    pub sensor: MetricsReport,
    /// Held-out GT-occupied cells the sensor capture missed.
    pub occluded_cells: u64,
    /// Of those, how many the sensor-trained model predicts occupied.
    pub recovered_cells: u64,
    pub completion_fraction: f64,
}

/// Train one model on ground-truth targets and one on sensor targets
/// (same architecture, seeds, and schedule), evaluate both against the
/// held-out ground truth, and measure structural completion.
pub fn gap_study(
    ds: &Dataset,
    arch: &crate::model::ArchConfig,
    tcfg: &TrainConfig,
    train_frames: usize,
    threshold: f64,
    model_seed: u64,
) -> Result<GapStudyReport> {
    for f in &ds.frames {
        if f.sensor_grid.is_none() {
            return Err(Error::data(format!(
                "frame {} has no sensor grid; generate the dataset with a sensor rig",
                f.index
            )));
        }
    }
    let (train_set, held) = ds.split_at(train_frames)?;
    if held.is_empty() {
        return Err(Error::config("gap study needs held-out frames"));
    }

    let mut gt_model = WorldStringModel::init(arch.clone(), model_seed)?;
    let mut adam = AdamState::new(gt_model.params(), tcfg.lr);
    train(&mut gt_model, &mut adam, train_set, tcfg, None)?;

    let sensor_frames: Vec<FrameRecord> = train_set
        .iter()
        .map(|f| FrameRecord {
            index: f.index,
            keypoints: f.keypoints.clone(),
            tracked: f.tracked.clone(),
            grid: f.sensor_grid.clone().unwrap(),
            sensor_grid: None,
        })
        .collect();
    let mut sensor_model = WorldStringModel::init(arch.clone(), model_seed)?;
    let mut adam_s = AdamState::new(sensor_model.params(), tcfg.lr);
    train(&mut sensor_model, &mut adam_s, &sensor_frames, tcfg, None)?;

    let (gt_report, _) = evaluate_frames(&gt_model, held, threshold)?;
    let (sensor_report, _) = evaluate_frames(&sensor_model, held, threshold)?;

    let mut occluded = 0u64;
    let mut recovered = 0u64;
    for f in held {
        let sg = f.sensor_grid.as_ref().unwrap();
        let pred = dense_query(
            &sensor_model,
            &f.keypoints,
            f.grid.bounds(),
            f.grid.res(),
            threshold,
        )?;
        let r = f.grid.res();
        for ix in 0..r {
            for iy in 0..r {
                for iz in 0..r {
                    if f.grid.get(ix, iy, iz) && !sg.get(ix, iy, iz) {
                        occluded += 1;
                        if pred.get(ix, iy, iz) {
                            recovered += 1;
                        }
                    }
                }
            }
        }
    }
    let completion_fraction = if occluded > 0 {
        recovered as f64 / occluded as f64
    } else {
        0.0
    };
    Ok(GapStudyReport {
        gt: gt_report,
        sensor: sensor_report,
        occluded_cells: occluded,
        recovered_cells: recovered,
        completion_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Aabb;

    fn grid_with(cells: &[(usize, usize, usize)]) -> OccupancyGrid {
        let mut g = OccupancyGrid::empty(8, Aabb::centered_cube(1.0).unwrap()).unwrap();
        for &(x, y, z) in cells {
            g.set(x, y, z, true);
        }
        g
    }

    #[test]
    fn identical_grids_score_hundred() {
        let g = grid_with(&[(1, 1, 1), (2, 3, 4)]);
        let m = compute_metrics(&g, &g).unwrap();
        assert_eq!(m.iou, 100.0);
        assert_eq!(m.f1, 100.0);
        assert_eq!(m.precision, 100.0);
        assert_eq!(m.recall, 100.0);
    }

    #[test]
    fn disjoint_grids_score_zero() {
        let a = grid_with(&[(0, 0, 0)]);
        let b = grid_with(&[(7, 7, 7)]);
        let m = compute_metrics(&a, &b).unwrap();
        assert_eq!(m.iou, 0.0);
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn superset_prediction_analytic_scores() {
        // gt has m=2 cells, pred = gt plus n=2 extra.
        let gt = grid_with(&[(1, 1, 1), (2, 2, 2)]);
        let pred = grid_with(&[(1, 1, 1), (2, 2, 2), (3, 3, 3), (4, 4, 4)]);
        let m = compute_metrics(&pred, &gt).unwrap();
        assert!((m.precision - 50.0).abs() < 1e-12);
        assert_eq!(m.recall, 100.0);
        assert!((m.iou - 50.0).abs() < 1e-12);
    }

    #[test]
    fn swap_exchanges_precision_and_recall() {
        let a = grid_with(&[(1, 1, 1), (2, 2, 2), (3, 3, 3)]);
        let b = grid_with(&[(1, 1, 1), (5, 5, 5)]);
        let m1 = compute_metrics(&a, &b).unwrap();
        let m2 = compute_metrics(&b, &a).unwrap();
        assert_eq!(m1.precision, m2.recall);
        assert_eq!(m1.recall, m2.precision);
        assert_eq!(m1.iou, m2.iou);
        assert!((m1.f1 - m2.f1).abs() < 1e-12);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = grid_with(&[]);
        let b = OccupancyGrid::empty(16, Aabb::centered_cube(1.0).unwrap()).unwrap();
        assert!(matches!(compute_metrics(&a, &b), Err(Error::Data(_))));
    }

    #[test]
    fn error_map_counts_reconcile_with_metrics() {
        let gt = grid_with(&[(1, 1, 1), (2, 2, 2), (3, 3, 3)]);
        let pred = grid_with(&[(1, 1, 1), (4, 4, 4)]);
        let m = compute_metrics(&pred, &gt).unwrap();
        let e = error_map(&pred, &gt).unwrap();
        assert_eq!((e.tp, e.fp, e.fn_count, e.tn), (m.tp, m.fp, m.fn_count, m.tn));
        let (pts, colors) = e.colored_cells();
        assert_eq!(pts.len() as u64, e.tp + e.fp + e.fn_count);
        assert_eq!(colors.iter().filter(|c| **c == TP_COLOR).count() as u64, e.tp);
        assert_eq!(colors.iter().filter(|c| **c == FP_COLOR).count() as u64, e.fp);
        assert_eq!(colors.iter().filter(|c| **c == FN_COLOR).count() as u64, e.fn_count);
    }

    #[test]
    fn error_map_all_green_when_equal_all_blue_when_pred_empty() {
        let gt = grid_with(&[(1, 1, 1), (2, 2, 2)]);
        let equal = error_map(&gt, &gt).unwrap();
        let (_, colors) = equal.colored_cells();
        assert!(colors.iter().all(|c| *c == TP_COLOR));
        assert_eq!(colors.len(), 2);

        let empty = grid_with(&[]);
        let blue = error_map(&empty, &gt).unwrap();
        let (_, colors) = blue.colored_cells();
        assert!(colors.iter().all(|c| *c == FN_COLOR));
        assert_eq!(colors.len(), 2);
    }

    #[test]
    fn top_k_one_hot_and_uniform() {
        let mut row = vec![0.0; 16];
        row[7] = 1.0;
        let picks = top_k_renormalized(&row, 5);
        assert_eq!(picks[0], (7, 1.0));

        // Uniform over 5 tokens of 5: equal weights.
        let row = vec![0.2; 5];
        let picks = top_k_renormalized(&row, 5);
        assert_eq!(picks.len(), 5);
        for &(_, w) in &picks {
            assert!((w - 0.2 / 1.0).abs() < 1e-12);
        }
        let total: f64 = picks.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn token_colors_stay_in_unit_cube_and_differ() {
        for i in 0..64 {
            let c = token_color(i);
            assert!(c.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert_ne!(token_color(0), token_color(1));
        assert_ne!(token_color(1), token_color(2));
    }

    #[test]
    fn histogram_overlap_bounds() {
        let a = vec![0.5, 0.5, 0.0];
        assert!((histogram_overlap(&a, &a) - 1.0).abs() < 1e-12);
        let b = vec![0.0, 0.0, 1.0];
        assert_eq!(histogram_overlap(&a, &b), 0.0);
    }
}
