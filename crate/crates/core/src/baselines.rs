//! Retrieval baselines under a storage budget: nearest-neighbor over
//! K-means-compressed keypoint states, and an IDW-refined variant.
//!
//! The budget is the trained checkpoint's byte size; stored frames are
//! counted by their on-disk occupancy (`.vox`) plus source-cloud (`.trk`)
//! sizes, and the baseline count C is the largest cluster count whose
//! stored frames fit.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::datagen::{voxelize, FrameRecord, OccupancyGrid, TrackedCloud};
use crate::error::{Error, Result};
use crate::geo;

/// K-means iteration cap (Lloyd's algorithm).
const KMEANS_ITERS: usize = 50;
/// IDW neighbors for the optimized variant's deformation field.
const OPTIM_IDW_NEIGHBORS: usize = 4;

/// One stored training frame.
#[derive(Debug, Clone)]
pub struct StoreEntry {
    pub source_frame: usize,
    pub keypoints: Vec<Point3<f64>>,
    pub grid: OccupancyGrid,
    pub cloud: TrackedCloud,
    pub vox_bytes: u64,
    pub trk_bytes: u64,
}

/// Budget-capped set of verbatim training frames.
#[derive(Debug, Clone)]
pub struct NNStore {
    pub entries: Vec<StoreEntry>,
    pub budget: u64,
    pub bytes: u64,
}

impl NNStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn flat_keypoints(kps: &[Point3<f64>]) -> Vec<f64> {
    kps.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's K-means with k-means++ seeding; returns per-point assignments
/// and the centroids. Deterministic for a fixed seed.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if k == 0 || k > points.len() {
        return Err(Error::data(format!(
            "kmeans k={k} out of range for {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with a centroid; any choice is stable.
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.last().unwrap()));
        }
    }

    let dim = points[0].len();
    let mut assign = vec![0usize; points.len()];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, cen) in centroids.iter().enumerate() {
                let d = sq_dist(p, cen);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in &mut sums[c] {
                    *s /= counts[c] as f64;
                }
                centroids[c] = sums[c].clone();
            }
            // Empty clusters keep their previous centroid.
        }
        if !changed {
            break;
        }
    }
    Ok((assign, centroids))
}

/// Cluster the training keypoint states and store, per cluster, the frame
/// nearest its centroid — with C pushed as high as the byte budget allows.
pub fn build_nn_store(frames: &[FrameRecord], budget: u64, seed: u64) -> Result<NNStore> {
    if frames.is_empty() {
        return Err(Error::data("cannot build a store from zero frames"));
    }
    let sizes: Vec<u64> = frames
        .iter()
        .map(|f| f.vox_bytes() as u64 + f.trk_string().len() as u64)
        .collect();
    let min_size = *sizes.iter().min().unwrap();
    if budget < min_size {
        return Err(Error::budget(format!(
            "budget {budget} B below the smallest frame ({min_size} B)"
        )));
    }
    let flats: Vec<Vec<f64>> = frames.iter().map(|f| flat_keypoints(&f.keypoints)).collect();

    let mut c = frames.len().min((budget / min_size) as usize).max(1);
    loop {
        let (assign, centroids) = kmeans(&flats, c, seed)?;
        // Per cluster, the member frame closest to the centroid.
        let mut chosen: Vec<usize> = Vec::new();
        for (cluster, cen) in centroids.iter().enumerate() {
            let mut best: Option<(f64, usize)> = None;
            for (i, f) in flats.iter().enumerate() {
                if assign[i] != cluster {
                    continue;
                }
                let d = sq_dist(f, cen);
                if best.map_or(true, |(bd, bi)| d < bd || (d == bd && i < bi)) {
                    best = Some((d, i));
                }
            }
            if let Some((_, i)) = best {
                chosen.push(i);
            }
        }
        chosen.sort_unstable();
        chosen.dedup();
        let total: u64 = chosen.iter().map(|&i| sizes[i]).sum();
        if total <= budget {
            let entries = chosen
                .into_iter()
                .map(|i| StoreEntry {
                    source_frame: frames[i].index,
                    keypoints: frames[i].keypoints.clone(),
                    grid: frames[i].grid.clone(),
                    cloud: frames[i].tracked.clone(),
                    vox_bytes: frames[i].vox_bytes() as u64,
                    trk_bytes: frames[i].trk_string().len() as u64,
                })
                .collect::<Vec<_>>();
            let bytes = entries.iter().map(|e| e.vox_bytes + e.trk_bytes).sum();
            return Ok(NNStore {
                entries,
                budget,
                bytes,
            });
        }
        if c == 1 {
            return Err(Error::budget(format!(
                "even a single stored frame ({total} B) exceeds the budget {budget} B"
            )));
        }
        c -= 1;
    }
}

/// Index of the stored entry with the most similar keypoint configuration
/// (L2 over flattened keypoints; ties go to the lowest entry index).
pub fn nn_nearest(store: &NNStore, query: &[Point3<f64>]) -> Result<usize> {
    if store.is_empty() {
        return Err(Error::state("empty store"));
    }
    let q = flat_keypoints(query);
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, e) in store.entries.iter().enumerate() {
        let d = sq_dist(&flat_keypoints(&e.keypoints), &q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

/// Plain retrieval: the nearest entry's grid, unchanged.
pub fn nn_predict<'a>(store: &'a NNStore, query: &[Point3<f64>]) -> Result<&'a OccupancyGrid> {
    Ok(&store.entries[nn_nearest(store, query)?].grid)
}

/// Retrieval plus refinement: displace the stored cloud by the per-
/// keypoint deltas interpolated with inverse-distance weights, then
/// re-voxelize at the stored grid's bounds and resolution.
pub fn optim_nn_predict(
    store: &NNStore,
    query: &[Point3<f64>],
) -> Result<(Vec<Point3<f64>>, OccupancyGrid)> {
    let entry = &store.entries[nn_nearest(store, query)?];
    if query.len() != entry.keypoints.len() {
        return Err(Error::data(format!(
            "query has {} keypoints, store has {}",
            query.len(),
            entry.keypoints.len()
        )));
    }
    let deltas: Vec<Vector3<f64>> = query
        .iter()
        .zip(&entry.keypoints)
        .map(|(q, s)| q - s)
        .collect();
    let weights = geo::idw_weights(
        &entry.cloud.points,
        &entry.keypoints,
        OPTIM_IDW_NEIGHBORS,
        2.0,
    )?;
    let displaced = geo::apply_weighted_displacements(&entry.cloud.points, &weights, &deltas);
    let report = voxelize(&displaced, *entry.grid.bounds(), entry.grid.res())?;
    Ok((displaced, report.grid))
}

// ── store directory ─────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreManifest {
    budget: u64,
    bytes: u64,
    entries: Vec<StoreEntryMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreEntryMeta {
    source_frame: usize,
    keypoints: Vec<[f64; 3]>,
    vox_bytes: u64,
    trk_bytes: u64,
}

fn entry_vox_name(i: usize) -> String {
    format!("entry_{i:03}.vox")
}

fn entry_trk_name(i: usize) -> String {
    format!("entry_{i:03}.trk")
}

pub fn write_store(store: &NNStore, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = StoreManifest {
        budget: store.budget,
        bytes: store.bytes,
        entries: store
            .entries
            .iter()
            .map(|e| StoreEntryMeta {
                source_frame: e.source_frame,
                keypoints: e.keypoints.iter().map(|p| [p.x, p.y, p.z]).collect(),
                vox_bytes: e.vox_bytes,
                trk_bytes: e.trk_bytes,
            })
            .collect(),
    };
    std::fs::write(
        dir.join("store_manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    for (i, e) in store.entries.iter().enumerate() {
        e.grid.save(&dir.join(entry_vox_name(i)))?;
        let mut trk = String::new();
        for (id, p) in e.cloud.ids.iter().zip(&e.cloud.points) {
            trk.push_str(&format!("{} {} {} {}\n", id, p.x, p.y, p.z));
        }
        std::fs::write(dir.join(entry_trk_name(i)), trk)?;
    }
    Ok(())
}

pub fn read_store(dir: &Path) -> Result<NNStore> {
    let manifest: StoreManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("store_manifest.json"))?)?;
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for (i, meta) in manifest.entries.iter().enumerate() {
        let grid = OccupancyGrid::load(&dir.join(entry_vox_name(i)))?;
        let cloud =
            crate::datagen::parse_trk(&std::fs::read_to_string(dir.join(entry_trk_name(i)))?)?;
        entries.push(StoreEntry {
            source_frame: meta.source_frame,
            keypoints: meta
                .keypoints
                .iter()
                .map(|k| Point3::new(k[0], k[1], k[2]))
                .collect(),
            grid,
            cloud,
            vox_bytes: meta.vox_bytes,
            trk_bytes: meta.trk_bytes,
        });
    }
    Ok(NNStore {
        entries,
        budget: manifest.budget,
        bytes: manifest.bytes,
    })
}
