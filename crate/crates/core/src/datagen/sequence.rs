//! Sequence generation and the on-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` plus per-frame files:
//! `frame_%05d.vox` (occupancy target), `frame_%05d.kp` (text keypoints,
//! one `idx x y z` per line), `frame_%05d.trk` (tracked cloud, `id x y z`
//! per line — the same format an external tracker would supply), and
//! optionally `frame_%05d.sensor.vox` and `frame_%05d.ply`.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use super::{
    fps_keypoints, make_object, next_normal, ply, voxelize, ObjectSpec, OccupancyGrid,
    SensorConfig, SensorRig, TrackedCloud,
};
use crate::deform::{
    deform_articulated, deform_lbs, deform_soft, Control, KinematicTree, ObjectClass, SoftField,
};
use crate::error::{Error, Result};
use crate::geo::Aabb;

pub const MANIFEST_VERSION: u32 = 1;
const SENSOR_SEED_SALT: u64 = 0x5EA5_0D5A_17ED_CAFE;

/// Per-frame state policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSampler {
    /// Every frame at the rest configuration.
    Rest,
    /// Joint values drawn uniformly within limits, per frame.
    UniformJoints,
    /// Smooth random walk over per-keypoint displacements.
    SoftWalk { step: f64, max_displacement: f64 },
}

/// Everything needed to generate a sequence deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub object: ObjectSpec,
    pub frames: usize,
    pub seed: u64,
    pub keypoints: usize,
    pub res: usize,
    pub state: StateSampler,
    #[serde(default)]
    pub sensor: Option<SensorConfig>,
}

/// Dataset manifest (also the provenance record).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub object: ObjectSpec,
    pub state: StateSampler,
    pub bounds: Aabb,
    pub res: usize,
    pub frames: usize,
    pub keypoint_count: usize,
    /// Body-point indices the keypoints are attached to.
    pub keypoint_indices: Vec<usize>,
    #[serde(default)]
    pub sensor: Option<SensorConfig>,
}

/// One generated frame.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub index: usize,
    pub keypoints: Vec<Point3<f64>>,
    pub tracked: TrackedCloud,
    pub grid: OccupancyGrid,
    pub sensor_grid: Option<OccupancyGrid>,
}

impl FrameRecord {
    /// Size of this frame's occupancy target on disk.
    pub fn vox_bytes(&self) -> usize {
        self.grid.to_bytes().len()
    }

    /// Tracked-cloud file content (`id x y z` rows).
    pub fn trk_string(&self) -> String {
        let mut s = String::new();
        for (id, p) in self.tracked.ids.iter().zip(&self.tracked.points) {
            let _ = writeln!(s, "{} {} {} {}", id, p.x, p.y, p.z);
        }
        s
    }

    /// Keypoint file content (`idx x y z` rows, idx = keypoint ordinal).
    pub fn kp_string(&self) -> String {
        let mut s = String::new();
        for (i, p) in self.keypoints.iter().enumerate() {
            let _ = writeln!(s, "{} {} {} {}", i, p.x, p.y, p.z);
        }
        s
    }
}

/// In-memory dataset: manifest plus frames.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub frames: Vec<FrameRecord>,
}

impl Dataset {
    pub fn bounds(&self) -> &Aabb {
        &self.manifest.bounds
    }

    pub fn res(&self) -> usize {
        self.manifest.res
    }

    pub fn keypoint_count(&self) -> usize {
        self.manifest.keypoint_count
    }

    /// Split into (train, held-out) at `train` frames.
    pub fn split_at(&self, train: usize) -> Result<(&[FrameRecord], &[FrameRecord])> {
        if train == 0 || train > self.frames.len() {
            return Err(Error::config(format!(
                "train split {train} out of range for {} frames",
                self.frames.len()
            )));
        }
        Ok(self.frames.split_at(train))
    }
}

/// Workspace bounds for an object/state pair: a cube over the full
/// reachable set plus a safety margin, fixed across the whole sequence.
/// Cubic bounds keep grid cells isotropic, so a body lattice that is
/// denser than one cell voxelizes solid.
fn workspace_bounds(
    spec: &ObjectSpec,
    state: &StateSampler,
    rest_points: &[Point3<f64>],
) -> Result<Aabb> {
    let raw = match spec {
        ObjectSpec::Chain {
            links,
            link_length,
            radius,
            ..
        } => {
            let reach = 1.05 * (*links as f64 * link_length + radius);
            Aabb::new([-reach, -reach, -reach], [reach, reach, reach])?
        }
        ObjectSpec::SkinnedTube { length, radius, .. } => {
            let reach = 1.05 * (length + radius);
            Aabb::new([-reach, -reach, -reach], [reach, reach, reach])?
        }
        ObjectSpec::Rope { .. } | ObjectSpec::Sheet { .. } => {
            let pad = match state {
                StateSampler::SoftWalk {
                    max_displacement, ..
                } => *max_displacement,
                _ => 0.0,
            };
            let mut min = [f64::INFINITY; 3];
            let mut max = [f64::NEG_INFINITY; 3];
            for p in rest_points {
                for a in 0..3 {
                    min[a] = min[a].min(p[a]);
                    max[a] = max[a].max(p[a]);
                }
            }
            for a in 0..3 {
                let m = 1.05 * pad + 0.02 * (max[a] - min[a]).max(1e-3);
                min[a] -= m;
                max[a] += m;
            }
            Aabb::new(min, max)?
        }
    };
    Ok(raw.cubified())
}

fn object_class(spec: &ObjectSpec) -> ObjectClass {
    match spec {
        ObjectSpec::Chain { .. } => ObjectClass::Articulated,
        ObjectSpec::SkinnedTube { .. } => ObjectClass::Skinned,
        ObjectSpec::Rope { .. } | ObjectSpec::Sheet { .. } => ObjectClass::Soft,
    }
}

/// Draw the control vector for every frame. Joint states are independent
/// per frame (seeded `seed ^ t`); soft controls accumulate a random walk
/// whose per-frame increments are also seeded `seed ^ t`, so regeneration
/// of any prefix is identical.
fn draw_controls(
    config: &SequenceConfig,
    tree: Option<&KinematicTree>,
    keypoint_count: usize,
) -> Result<Vec<Control>> {
    let class = object_class(&config.object);
    let mut out = Vec::with_capacity(config.frames);
    match (&config.state, class) {
        (StateSampler::Rest, ObjectClass::Articulated | ObjectClass::Skinned) => {
            let rest = tree.unwrap().rest().to_vec();
            out.resize(config.frames, Control::Joints(rest));
        }
        (StateSampler::Rest, ObjectClass::Soft) => {
            out.resize(
                config.frames,
                Control::SoftDisplacements(vec![Vector3::zeros(); keypoint_count]),
            );
        }
        (StateSampler::UniformJoints, ObjectClass::Articulated | ObjectClass::Skinned) => {
            let limits = tree.unwrap().joint_limits();
            for t in 0..config.frames {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ t as u64);
                let q: Vec<f64> = limits
                    .iter()
                    .map(|&(lo, hi)| {
                        if hi > lo {
                            rng.random_range(lo..hi)
                        } else {
                            lo
                        }
                    })
                    .collect();
                out.push(Control::Joints(q));
            }
        }
        (
            StateSampler::SoftWalk {
                step,
                max_displacement,
            },
            ObjectClass::Soft,
        ) => {
            let mut d = vec![Vector3::zeros(); keypoint_count];
            for t in 0..config.frames {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ t as u64);
                for v in &mut d {
                    let inc = Vector3::new(
                        next_normal(&mut rng),
                        next_normal(&mut rng),
                        next_normal(&mut rng),
                    ) * *step;
                    *v += inc;
                    let n = v.norm();
                    if n > *max_displacement {
                        *v *= *max_displacement / n;
                    }
                }
                out.push(Control::SoftDisplacements(d.clone()));
            }
        }
        (sampler, class) => {
            return Err(Error::config(format!(
                "state sampler {sampler:?} incompatible with {class:?} object"
            )));
        }
    }
    Ok(out)
}

/// Generate a full dataset in memory.
pub fn generate_sequence(config: &SequenceConfig) -> Result<Dataset> {
    if config.frames == 0 {
        return Err(Error::config("frames must be at least 1"));
    }
    let (body, tree) = make_object(&config.object)?;
    let kp_indices = fps_keypoints(body.points(), config.keypoints)?;
    let body = body.with_keypoints(kp_indices.clone())?;
    let bounds = workspace_bounds(&config.object, &config.state, body.points())?;
    let controls = draw_controls(config, tree.as_ref(), config.keypoints)?;

    // Soft interpolation weights depend only on the canonical body; build
    // them once and reuse across frames.
    let soft_template = if config.object.is_soft() {
        Some(SoftField::new(
            &body,
            vec![Vector3::zeros(); config.keypoints],
        )?)
    } else {
        None
    };

    let class = object_class(&config.object);
    let mut frames = Vec::with_capacity(config.frames);
    for (t, control) in controls.iter().enumerate() {
        let deformed = match (class, control) {
            (ObjectClass::Articulated, Control::Joints(q)) => {
                deform_articulated(&body, tree.as_ref().unwrap(), q)?
            }
            (ObjectClass::Skinned, Control::Joints(q)) => {
                deform_lbs(&body, tree.as_ref().unwrap(), q)?
            }
            (ObjectClass::Soft, Control::SoftDisplacements(d)) => {
                let field = soft_template.as_ref().unwrap().with_displacements(d.clone())?;
                deform_soft(&body, &field)?
            }
            _ => unreachable!("controls validated against class"),
        };
        let keypoints: Vec<Point3<f64>> =
            kp_indices.iter().map(|&i| deformed[i]).collect();
        let report = voxelize(&deformed, bounds, config.res)?;
        let sensor_grid = match &config.sensor {
            Some(cfg) => {
                let rig = SensorRig::ring(&bounds, cfg)?;
                let (_, grid) =
                    super::sensor::simulate_sensor(&rig, &report.grid, config.seed ^ t as u64 ^ SENSOR_SEED_SALT)?;
                Some(grid)
            }
            None => None,
        };
        frames.push(FrameRecord {
            index: t,
            keypoints,
            tracked: TrackedCloud::from_points(deformed),
            grid: report.grid,
            sensor_grid,
        });
    }

    Ok(Dataset {
        manifest: Manifest {
            format_version: MANIFEST_VERSION,
            seed: config.seed,
            object: config.object.clone(),
            state: config.state.clone(),
            bounds,
            res: config.res,
            frames: config.frames,
            keypoint_count: config.keypoints,
            keypoint_indices: kp_indices,
            sensor: config.sensor.clone(),
        },
        frames,
    })
}

pub fn vox_name(t: usize) -> String {
    format!("frame_{t:05}.vox")
}

pub fn sensor_vox_name(t: usize) -> String {
    format!("frame_{t:05}.sensor.vox")
}

pub fn kp_name(t: usize) -> String {
    format!("frame_{t:05}.kp")
}

pub fn trk_name(t: usize) -> String {
    format!("frame_{t:05}.trk")
}

pub fn ply_name(t: usize) -> String {
    format!("frame_{t:05}.ply")
}

/// Write a dataset directory. Output bytes are fully determined by the
/// dataset content.
pub fn write_dataset(ds: &Dataset, dir: &Path, with_ply: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = serde_json::to_string_pretty(&ds.manifest)?;
    std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
    for f in &ds.frames {
        f.grid.save(&dir.join(vox_name(f.index)))?;
        std::fs::write(dir.join(kp_name(f.index)), f.kp_string())?;
        std::fs::write(dir.join(trk_name(f.index)), f.trk_string())?;
        if let Some(sg) = &f.sensor_grid {
            sg.save(&dir.join(sensor_vox_name(f.index)))?;
        }
        if with_ply {
            ply::write_ply(&dir.join(ply_name(f.index)), &f.tracked.points, None)?;
        }
    }
    Ok(())
}

/// Read a dataset directory written by [`write_dataset`] (or an external
/// pipeline following the same contract).
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_raw = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_raw)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::format(format!(
            "manifest version {} unsupported",
            manifest.format_version
        )));
    }
    let mut frames = Vec::with_capacity(manifest.frames);
    for t in 0..manifest.frames {
        let grid = OccupancyGrid::load(&dir.join(vox_name(t)))?;
        let keypoints = parse_kp(&std::fs::read_to_string(dir.join(kp_name(t)))?)?;
        if keypoints.len() != manifest.keypoint_count {
            return Err(Error::format(format!(
                "frame {t}: {} keypoints, manifest says {}",
                keypoints.len(),
                manifest.keypoint_count
            )));
        }
        let tracked = parse_trk(&std::fs::read_to_string(dir.join(trk_name(t)))?)?;
        let sensor_path = dir.join(sensor_vox_name(t));
        let sensor_grid = if sensor_path.exists() {
            Some(OccupancyGrid::load(&sensor_path)?)
        } else {
            None
        };
        frames.push(FrameRecord {
            index: t,
            keypoints,
            tracked,
            grid,
            sensor_grid,
        });
    }
    Ok(Dataset { manifest, frames })
}

fn parse_kp(text: &str) -> Result<Vec<Point3<f64>>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(Error::format(format!(
                "kp line {}: expected 'idx x y z'",
                lineno + 1
            )));
        }
        let idx: usize = tok[0]
            .parse()
            .map_err(|_| Error::format(format!("kp line {}: bad index", lineno + 1)))?;
        if idx != out.len() {
            return Err(Error::format(format!(
                "kp line {}: index {idx} out of order",
                lineno + 1
            )));
        }
        out.push(parse_point(&tok[1..], lineno)?);
    }
    Ok(out)
}

/// Parse the tracked-cloud text format (`id x y z` per line).
pub fn parse_trk(text: &str) -> Result<TrackedCloud> {
    let mut ids = Vec::new();
    let mut pts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(Error::format(format!(
                "trk line {}: expected 'id x y z'",
                lineno + 1
            )));
        }
        ids.push(
            tok[0]
                .parse()
                .map_err(|_| Error::format(format!("trk line {}: bad id", lineno + 1)))?,
        );
        pts.push(parse_point(&tok[1..], lineno)?);
    }
    TrackedCloud::new(ids, pts)
}

fn parse_point(tok: &[&str], lineno: usize) -> Result<Point3<f64>> {
    let mut v = [0.0; 3];
    for (a, t) in tok.iter().enumerate() {
        v[a] = t
            .parse()
            .map_err(|_| Error::format(format!("line {}: bad number '{t}'", lineno + 1)))?;
    }
    Ok(Point3::new(v[0], v[1], v[2]))
}
