//! Procedural object construction, keypoint selection, voxelization,
//! occupancy sampling, sensor simulation, and dataset serialization.

mod grid;
pub mod ply;
mod sensor;
mod sequence;

pub use grid::OccupancyGrid;
pub use sensor::{simulate_sensor, Camera, SensorConfig, SensorRig};
pub use sequence::{
    generate_sequence, kp_name, parse_trk, ply_name, read_dataset, sensor_vox_name, trk_name,
    vox_name, write_dataset, Dataset, FrameRecord, Manifest, SequenceConfig, StateSampler,
};

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deform::{Binding, CanonicalBody, JointKind, KinematicTree, Link, Pose6D};
use crate::error::{Error, Result};
use crate::geo::{self, Aabb};

/// Minimum voxelization resolution.
pub const MIN_RES: usize = 8;

/// Procedural object families (synthetic analogues of the capture targets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectSpec {
    /// Capsule links connected by revolute-z joints.
    Chain {
        links: usize,
        link_length: f64,
        radius: f64,
        points: usize,
        joint_limit: f64,
    },
    /// One tube skinned over evenly spaced bones with seam blending.
    SkinnedTube {
        bones: usize,
        length: f64,
        radius: f64,
        points: usize,
        joint_limit: f64,
        blend_width: f64,
    },
    /// Parametric soft tube.
    Rope { length: f64, radius: f64, points: usize },
    /// Cloth-like thin box.
    Sheet {
        width: f64,
        height: f64,
        thickness: f64,
        points: usize,
    },
}

impl ObjectSpec {
    pub fn class_name(&self) -> &'static str {
        match self {
            ObjectSpec::Chain { .. } => "chain",
            ObjectSpec::SkinnedTube { .. } => "skinned_tube",
            ObjectSpec::Rope { .. } => "rope",
            ObjectSpec::Sheet { .. } => "sheet",
        }
    }

    pub fn is_soft(&self) -> bool {
        matches!(self, ObjectSpec::Rope { .. } | ObjectSpec::Sheet { .. })
    }
}

/// Build the canonical body (dense surface + interior sampling) and, for
/// jointed objects, the kinematic tree. Point sampling is a deterministic
/// lattice, so identical specs produce identical bodies.
pub fn make_object(spec: &ObjectSpec) -> Result<(CanonicalBody, Option<KinematicTree>)> {
    match spec {
        ObjectSpec::Chain {
            links,
            link_length,
            radius,
            points,
            joint_limit,
        } => {
            check_positive(&[
                (*links as f64, "links"),
                (*link_length, "link_length"),
                (*radius, "radius"),
                (*points as f64, "points"),
                (*joint_limit, "joint_limit"),
            ])?;
            let tree = chain_tree(*links, *link_length, *joint_limit)?;
            let volume = *links as f64 * capsule_volume(*link_length, *radius);
            let per_link = calibrate_spacing(
                lattice_spacing(volume, *points),
                points / links,
                |h| capsule_lattice(*link_length, *radius, h),
            );
            let mut pts = Vec::new();
            let mut assign = Vec::new();
            for j in 0..*links {
                let base_x = j as f64 * link_length;
                for p in &per_link {
                    pts.push(Point3::new(p.x + base_x, p.y, p.z));
                    assign.push(j);
                }
            }
            let body = CanonicalBody::new(pts, Binding::Articulated(assign), vec![])?;
            Ok((body, Some(tree)))
        }
        ObjectSpec::SkinnedTube {
            bones,
            length,
            radius,
            points,
            joint_limit,
            blend_width,
        } => {
            check_positive(&[
                (*bones as f64, "bones"),
                (*length, "length"),
                (*radius, "radius"),
                (*points as f64, "points"),
                (*joint_limit, "joint_limit"),
                (*blend_width, "blend_width"),
            ])?;
            let seg = length / *bones as f64;
            let tree = chain_tree(*bones, seg, *joint_limit)?;
            let volume = capsule_volume(*length, *radius);
            let pts = calibrate_spacing(lattice_spacing(volume, *points), *points, |h| {
                capsule_lattice(*length, *radius, h)
            });
            let w = blend_width * seg;
            let weights: Vec<_> = pts
                .iter()
                .map(|p| tube_bone_weights(p.x, *bones, seg, w))
                .collect();
            let body = CanonicalBody::new(pts, Binding::Skinned(weights), vec![])?;
            Ok((body, Some(tree)))
        }
        ObjectSpec::Rope {
            length,
            radius,
            points,
        } => {
            check_positive(&[
                (*length, "length"),
                (*radius, "radius"),
                (*points as f64, "points"),
            ])?;
            let volume = capsule_volume(*length, *radius);
            let pts = calibrate_spacing(lattice_spacing(volume, *points), *points, |h| {
                capsule_lattice(*length, *radius, h)
            });
            let body = CanonicalBody::new(pts, Binding::Soft, vec![])?;
            Ok((body, None))
        }
        ObjectSpec::Sheet {
            width,
            height,
            thickness,
            points,
        } => {
            check_positive(&[
                (*width, "width"),
                (*height, "height"),
                (*thickness, "thickness"),
                (*points as f64, "points"),
            ])?;
            let volume = width * height * thickness;
            let pts = calibrate_spacing(lattice_spacing(volume, *points), *points, |h| {
                box_lattice(*width, *height, *thickness, h)
            });
            let body = CanonicalBody::new(pts, Binding::Soft, vec![])?;
            Ok((body, None))
        }
    }
}

fn check_positive(fields: &[(f64, &str)]) -> Result<()> {
    for &(v, name) in fields {
        if !(v > 0.0) {
            return Err(Error::config(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

fn chain_tree(links: usize, link_length: f64, joint_limit: f64) -> Result<KinematicTree> {
    let mut v = Vec::with_capacity(links);
    for j in 0..links {
        v.push(Link {
            name: format!("link{j}"),
            parent: if j == 0 { None } else { Some(j - 1) },
            joint: JointKind::Revolute,
            axis: Vector3::z_axis(),
            origin: if j == 0 {
                Pose6D::identity()
            } else {
                Pose6D::from_translation(Vector3::new(link_length, 0.0, 0.0))
            },
            limits: (-joint_limit, joint_limit),
        });
    }
    KinematicTree::new(v, vec![0.0; links])
}

fn capsule_volume(length: f64, radius: f64) -> f64 {
    std::f64::consts::PI * radius * radius * length
        + 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3)
}

/// Spacing so a cubic lattice carries roughly `points` samples of
/// `volume`, refined by `calibrate_spacing` against the actual count.
fn lattice_spacing(volume: f64, points: usize) -> f64 {
    (volume / points as f64).cbrt()
}

/// Rescale the spacing until the produced count is within 3% of the
/// request (discretization makes the analytic estimate drift a few
/// percent on thin shapes).
fn calibrate_spacing(
    mut h: f64,
    target: usize,
    generate: impl Fn(f64) -> Vec<Point3<f64>>,
) -> Vec<Point3<f64>> {
    let mut pts = generate(h);
    for _ in 0..4 {
        let rel = (pts.len() as f64 - target as f64) / target as f64;
        if rel.abs() <= 0.03 {
            break;
        }
        h *= (pts.len() as f64 / target as f64).cbrt();
        pts = generate(h);
    }
    pts
}

/// Lattice samples inside a capsule with axis from (0,0,0) to (L,0,0).
fn capsule_lattice(length: f64, radius: f64, h: f64) -> Vec<Point3<f64>> {
    let mut pts = Vec::new();
    let r2 = radius * radius;
    let steps = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / h).floor() as usize;
        (0..=n).map(|i| lo + (i as f64 + 0.5) * h).filter(|&v| v < hi).collect()
    };
    for x in steps(-radius, length + radius) {
        // Distance along the axis to the segment [0, L].
        let ax = x.clamp(0.0, length);
        let dx = x - ax;
        for y in steps(-radius, radius) {
            for z in steps(-radius, radius) {
                if dx * dx + y * y + z * z <= r2 {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
    }
    pts
}

/// Lattice samples inside a box `[0,w]×[0,h]×[-t/2,t/2]`, guaranteeing at
/// least one layer through the thin axis.
fn box_lattice(w: f64, h: f64, t: f64, spacing: f64) -> Vec<Point3<f64>> {
    let mut pts = Vec::new();
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let n = (((hi - lo) / spacing).floor() as usize).max(1);
        let step = (hi - lo) / n as f64;
        (0..n).map(|i| lo + (i as f64 + 0.5) * step).collect()
    };
    for x in axis(0.0, w) {
        for y in axis(0.0, h) {
            for z in axis(-t / 2.0, t / 2.0) {
                pts.push(Point3::new(x, y, z));
            }
        }
    }
    pts
}

/// Bone weights for a tube point at axis coordinate `x`: single bone away
/// from seams, a linear two-bone blend inside a seam band of width `w`.
fn tube_bone_weights(x: f64, bones: usize, seg: f64, w: f64) -> geo::SparseWeights {
    let xc = x.clamp(0.0, bones as f64 * seg - 1e-12);
    let b = ((xc / seg) as usize).min(bones - 1);
    // Nearest interior seam.
    for s in 1..bones {
        let seam = s as f64 * seg;
        if (xc - seam).abs() < w / 2.0 {
            let u = (xc - (seam - w / 2.0)) / w; // 0 at left edge, 1 at right
            return vec![(s - 1, 1.0 - u), (s, u)];
        }
    }
    vec![(b, 1.0)]
}

/// Greedy farthest-point sampling. The seed is the point of lowest index;
/// ties on the max-min distance go to the lowest index. The returned
/// indices are in selection order.
pub fn fps_keypoints(points: &[Point3<f64>], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > points.len() {
        return Err(Error::data(format!(
            "fps k={k} out of range for {} points",
            points.len()
        )));
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut current = 0usize;
    selected.push(current);
    for _ in 1..k {
        let cp = points[current];
        let mut best = 0usize;
        let mut best_d2 = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - cp).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best_d2 {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        current = best;
        selected.push(current);
    }
    Ok(selected)
}

/// Tracked point cloud with persistent identity indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedCloud {
    pub ids: Vec<usize>,
    pub points: Vec<Point3<f64>>,
}

impl TrackedCloud {
    pub fn new(ids: Vec<usize>, points: Vec<Point3<f64>>) -> Result<Self> {
        if ids.len() != points.len() {
            return Err(Error::data(format!(
                "{} ids for {} points",
                ids.len(),
                points.len()
            )));
        }
        Ok(TrackedCloud { ids, points })
    }

    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        TrackedCloud {
            ids: (0..points.len()).collect(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Number of tracked neighbors used for vertex warping.
pub const WARP_NEIGHBORS: usize = 4;

/// Warp vertices by interpolating tracked-point displacements with
/// inverse-distance weights over the `k` nearest tracked points at base
/// time. A vertex coinciding with a tracked point copies its displacement.
pub fn warp_vertices(
    vertices: &[Point3<f64>],
    base: &TrackedCloud,
    current: &TrackedCloud,
    k: usize,
) -> Result<Vec<Point3<f64>>> {
    if base.is_empty() {
        return Err(Error::data("warp: empty tracked set"));
    }
    if base.len() != current.len() {
        return Err(Error::data(format!(
            "warp: {} base vs {} current tracked points",
            base.len(),
            current.len()
        )));
    }
    if base.ids != current.ids {
        return Err(Error::data("warp: tracked identity indices differ"));
    }
    let weights = geo::idw_weights(vertices, &base.points, k, 2.0)?;
    let displacements: Vec<Vector3<f64>> = current
        .points
        .iter()
        .zip(&base.points)
        .map(|(c, b)| c - b)
        .collect();
    Ok(geo::apply_weighted_displacements(
        vertices,
        &weights,
        &displacements,
    ))
}

/// Voxelization outcome: the grid plus how many points fell outside.
#[derive(Debug, Clone)]
pub struct VoxelizeReport {
    pub grid: OccupancyGrid,
    pub outside: usize,
}

/// A cell is occupied iff at least one point falls inside it.
pub fn voxelize(points: &[Point3<f64>], bounds: Aabb, res: usize) -> Result<VoxelizeReport> {
    if res < MIN_RES {
        return Err(Error::config(format!(
            "resolution {res} below minimum {MIN_RES}"
        )));
    }
    let mut grid = OccupancyGrid::empty(res, bounds)?;
    if points.is_empty() {
        log::warn!("voxelize: empty point set, returning empty grid");
        return Ok(VoxelizeReport { grid, outside: 0 });
    }
    let mut outside = 0usize;
    for p in points {
        match grid.cell_of(p) {
            Some((i, j, k)) => grid.set(i, j, k, true),
            None => outside += 1,
        }
    }
    if outside == points.len() {
        return Err(Error::data(format!(
            "all {} points outside bounds {:?}",
            points.len(),
            bounds
        )));
    }
    Ok(VoxelizeReport { grid, outside })
}

/// One balanced occupancy sample in the normalized [-1,1]³ frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancySample {
    /// Position in the normalized workspace frame.
    pub position: [f64; 3],
    /// 1.0 inside the object, 0.0 outside.
    pub label: f64,
}

/// Draw `n` samples: a `balance` fraction uniformly from occupied-cell
/// interiors, the rest from free cells, all mapped to the normalized
/// [-1,1]³ frame. Deterministic given the seed.
pub fn sample_occupancy(
    grid: &OccupancyGrid,
    n: usize,
    balance: f64,
    seed: u64,
) -> Result<Vec<OccupancySample>> {
    if !(0.0..=1.0).contains(&balance) {
        return Err(Error::config(format!("balance {balance} outside [0,1]")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let n_occ = (n as f64 * balance).round() as usize;
    let n_free = n - n_occ;

    let occupied: Vec<(usize, usize, usize)> = grid.iter_occupied().collect();
    let free_count = grid.cell_count() - occupied.len();
    if n_occ > 0 && occupied.is_empty() {
        return Err(Error::data("balance requires occupied cells, grid has none"));
    }
    if n_free > 0 && free_count == 0 {
        return Err(Error::data("balance requires free cells, grid has none"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n_occ {
        let cell = occupied[rng.random_range(0..occupied.len())];
        out.push(draw_in_cell(grid, cell, 1.0, &mut rng));
    }
    let res = grid.res();
    for _ in 0..n_free {
        // Rejection over the full grid; free cells dominate for the sparse
        // objects generated here, and the loop is deterministic either way.
        loop {
            let cell = (
                rng.random_range(0..res),
                rng.random_range(0..res),
                rng.random_range(0..res),
            );
            if !grid.get(cell.0, cell.1, cell.2) {
                out.push(draw_in_cell(grid, cell, 0.0, &mut rng));
                break;
            }
        }
    }
    Ok(out)
}

fn draw_in_cell(
    grid: &OccupancyGrid,
    (ix, iy, iz): (usize, usize, usize),
    label: f64,
    rng: &mut ChaCha8Rng,
) -> OccupancySample {
    // Clamp the unit offset below 1 so the point stays inside the
    // half-open cell after float rounding.
    let mut u = [0.0f64; 3];
    for v in &mut u {
        *v = rng.random::<f64>().min(1.0 - 1e-9);
    }
    let p = Point3::new(
        grid.bounds().min[0] + (ix as f64 + u[0]) * grid.cell_size(0),
        grid.bounds().min[1] + (iy as f64 + u[1]) * grid.cell_size(1),
        grid.bounds().min[2] + (iz as f64 + u[2]) * grid.cell_size(2),
    );
    OccupancySample {
        position: grid.bounds().normalize(&p),
        label,
    }
}

/// Standard normal draw (Box-Muller) from a seeded stream.
pub(crate) fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain1() -> ObjectSpec {
        ObjectSpec::Chain {
            links: 1,
            link_length: 1.0,
            radius: 0.1,
            points: 2000,
            joint_limit: 1.5,
        }
    }

    #[test]
    fn chain_single_link_all_points_on_link_zero() {
        let (body, tree) = make_object(&chain1()).unwrap();
        assert!(tree.is_some());
        match body.binding() {
            Binding::Articulated(assign) => assert!(assign.iter().all(|&j| j == 0)),
            _ => panic!("expected articulated binding"),
        }
    }

    #[test]
    fn skinned_tube_seam_points_blend_two_bones() {
        let spec = ObjectSpec::SkinnedTube {
            bones: 2,
            length: 1.0,
            radius: 0.08,
            points: 4000,
            joint_limit: 1.0,
            blend_width: 0.4,
        };
        let (body, _) = make_object(&spec).unwrap();
        let weights = match body.binding() {
            Binding::Skinned(w) => w,
            _ => panic!(),
        };
        let mut seam_rows = 0;
        for (p, row) in body.points().iter().zip(weights) {
            if (p.x - 0.5).abs() < 0.08 {
                assert_eq!(row.len(), 2, "seam point should blend two bones");
                let sum: f64 = row.iter().map(|e| e.1).sum();
                assert!((sum - 1.0).abs() < 1e-9);
                seam_rows += 1;
            }
        }
        assert!(seam_rows > 0);
    }

    #[test]
    fn lattice_point_count_near_request() {
        for req in [5000usize, 20000] {
            let spec = ObjectSpec::Rope {
                length: 1.0,
                radius: 0.04,
                points: req,
            };
            let (body, _) = make_object(&spec).unwrap();
            let got = body.points().len() as f64;
            let rel = (got - req as f64).abs() / req as f64;
            assert!(rel < 0.05, "requested {req}, got {got}");
        }
    }

    #[test]
    fn nonpositive_dimension_is_config_error() {
        let bad = ObjectSpec::Rope {
            length: 0.0,
            radius: 0.1,
            points: 100,
        };
        assert!(matches!(make_object(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn fps_trivial_cases() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.5, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
        ];
        assert_eq!(fps_keypoints(&pts, 1).unwrap(), vec![0]);
        // Seed at the left end forces the right end second.
        assert_eq!(fps_keypoints(&pts, 2).unwrap(), vec![0, 2]);
        assert!(fps_keypoints(&pts, 0).is_err());
        assert!(fps_keypoints(&pts, 4).is_err());
    }

    #[test]
    fn warp_identity_translation_and_symmetry() {
        let tracked0 = TrackedCloud::from_points(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
        ]);
        let verts = vec![Point3::new(0.5, 0.0, 0.0), Point3::new(0.2, 0.3, 0.0)];

        // Identical clouds: zero displacement.
        let same = warp_vertices(&verts, &tracked0, &tracked0, 4).unwrap();
        assert_eq!(same, verts);

        // Common translation moves every vertex by it.
        let t = Vector3::new(0.1, -0.2, 0.3);
        let moved = TrackedCloud::new(
            tracked0.ids.clone(),
            tracked0.points.iter().map(|p| p + t).collect(),
        )
        .unwrap();
        let out = warp_vertices(&verts, &tracked0, &moved, 4).unwrap();
        for (o, v) in out.iter().zip(&verts) {
            assert!((o - v - t).norm() < 1e-12);
        }

        // Equidistant vertex averages the two displacements.
        let mut asym = moved.clone();
        asym.points[1] = tracked0.points[1] + Vector3::new(0.0, 0.4, 0.0);
        let out = warp_vertices(&verts[..1], &tracked0, &asym, 4).unwrap();
        let want = Point3::new(0.5, 0.0, 0.0)
            + (t + Vector3::new(0.0, 0.4, 0.0)) * 0.5;
        assert!((out[0] - want).norm() < 1e-12);
    }

    #[test]
    fn warp_rejects_broken_tracking() {
        let a = TrackedCloud::from_points(vec![Point3::origin()]);
        let empty = TrackedCloud::from_points(vec![]);
        assert!(warp_vertices(&[], &empty, &empty, 4).is_err());
        let b = TrackedCloud::new(vec![7], vec![Point3::origin()]).unwrap();
        assert!(warp_vertices(&[], &a, &b, 4).is_err());
    }

    #[test]
    fn voxelize_single_center_point() {
        let bounds = Aabb::centered_cube(1.0).unwrap();
        let rep = voxelize(&[Point3::new(0.0, 0.0, 0.0)], bounds, 8).unwrap();
        assert_eq!(rep.grid.occupied_count(), 1);
        assert!(rep.grid.get(4, 4, 4));
        assert_eq!(rep.outside, 0);
    }

    #[test]
    fn voxelize_empty_and_outside() {
        let bounds = Aabb::centered_cube(1.0).unwrap();
        let rep = voxelize(&[], bounds, 8).unwrap();
        assert_eq!(rep.grid.occupied_count(), 0);
        assert!(matches!(
            voxelize(&[Point3::new(5.0, 0.0, 0.0)], bounds, 8),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            voxelize(&[Point3::origin()], bounds, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sample_occupancy_balance_and_revoxelization() {
        let bounds = Aabb::centered_cube(1.0).unwrap();
        let mut grid = OccupancyGrid::empty(8, bounds).unwrap();
        grid.set(2, 3, 4, true);
        grid.set(5, 5, 5, true);

        assert!(sample_occupancy(&grid, 0, 0.5, 1).unwrap().is_empty());

        let samples = sample_occupancy(&grid, 10_000, 0.5, 42).unwrap();
        let mean: f64 = samples.iter().map(|s| s.label).sum::<f64>() / samples.len() as f64;
        assert_eq!(mean, 0.5);
        for s in &samples {
            let p = grid.bounds().denormalize(&s.position);
            let (i, j, k) = grid.cell_of(&p).expect("sample inside bounds");
            assert_eq!(grid.get(i, j, k), s.label == 1.0, "sample at {:?}", s.position);
        }

        // balance=1 -> all labels 1.
        let all_occ = sample_occupancy(&grid, 64, 1.0, 7).unwrap();
        assert!(all_occ.iter().all(|s| s.label == 1.0));

        // Unsatisfiable balance: empty grid but occupied samples requested.
        let empty = OccupancyGrid::empty(8, bounds).unwrap();
        assert!(matches!(
            sample_occupancy(&empty, 10, 0.5, 1),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn sample_occupancy_deterministic() {
        let bounds = Aabb::centered_cube(1.0).unwrap();
        let mut grid = OccupancyGrid::empty(8, bounds).unwrap();
        grid.set(1, 1, 1, true);
        let a = sample_occupancy(&grid, 200, 0.5, 99).unwrap();
        let b = sample_occupancy(&grid, 200, 0.5, 99).unwrap();
        assert_eq!(a, b);
    }
}
