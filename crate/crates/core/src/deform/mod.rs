//! Analytic ground-truth deformation maps for articulated, skinned, and
//! soft objects, plus keypoint attachment and the keypoint-sufficiency
//! (δ-net) checker.

mod tree;

pub use tree::{JointKind, KinematicTree, Link};

use nalgebra::{Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, SparseWeights};

/// Rigid transform: unit quaternion plus translation (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6D {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose6D {
    pub fn identity() -> Self {
        Pose6D {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose6D { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose6D::new(UnitQuaternion::identity(), t)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let unit = nalgebra::Unit::try_new(*axis, 1e-12)
            .ok_or_else(|| Error::value("zero-length rotation axis"))?;
        Ok(Pose6D::new(UnitQuaternion::from_axis_angle(&unit, angle), Vector3::zeros()))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        Pose6D {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose6D {
        let inv = self.rotation.inverse();
        Pose6D {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }
}

/// How material points follow the control state.
#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    /// One owning link per point.
    Articulated(Vec<usize>),
    /// Sparse convex bone weights per point.
    Skinned(Vec<SparseWeights>),
    /// No per-point binding; deformation comes from a [`SoftField`].
    Soft,
}

/// Object category tag carried through states and datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Articulated,
    Skinned,
    Soft,
}

/// Canonical material point set with its binding and attached keypoints.
///
/// Keypoints are indices into `points`, so each keypoint coincides with a
/// material point by construction.
#[derive(Debug, Clone)]
pub struct CanonicalBody {
    points: Vec<Point3<f64>>,
    binding: Binding,
    keypoint_indices: Vec<usize>,
}

impl CanonicalBody {
    pub fn new(
        points: Vec<Point3<f64>>,
        binding: Binding,
        keypoint_indices: Vec<usize>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::data("empty body"));
        }
        match &binding {
            Binding::Articulated(assign) => {
                if assign.len() != points.len() {
                    return Err(Error::data(format!(
                        "{} link assignments for {} points",
                        assign.len(),
                        points.len()
                    )));
                }
            }
            Binding::Skinned(weights) => {
                if weights.len() != points.len() {
                    return Err(Error::data(format!(
                        "{} weight rows for {} points",
                        weights.len(),
                        points.len()
                    )));
                }
                for (i, row) in weights.iter().enumerate() {
                    validate_convex(row)
                        .map_err(|e| Error::data(format!("point {i}: {e}")))?;
                }
            }
            Binding::Soft => {}
        }
        for &k in &keypoint_indices {
            if k >= points.len() {
                return Err(Error::data(format!(
                    "keypoint index {k} out of range ({} points)",
                    points.len()
                )));
            }
        }
        Ok(CanonicalBody { points, binding, keypoint_indices })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn binding(&self) -> &Binding {
        &self.binding
    }

    pub fn keypoint_indices(&self) -> &[usize] {
        &self.keypoint_indices
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoint_indices.len()
    }

    /// Canonical (rest) positions of the attached keypoints.
    pub fn keypoint_positions(&self) -> Vec<Point3<f64>> {
        self.keypoint_indices.iter().map(|&i| self.points[i]).collect()
    }

    /// Replace the attached keypoints (used by dataset generation after FPS).
    pub fn with_keypoints(mut self, keypoint_indices: Vec<usize>) -> Result<Self> {
        for &k in &keypoint_indices {
            if k >= self.points.len() {
                return Err(Error::data(format!("keypoint index {k} out of range")));
            }
        }
        self.keypoint_indices = keypoint_indices;
        Ok(self)
    }
}

fn validate_convex(row: &SparseWeights) -> Result<()> {
    if row.is_empty() {
        return Err(Error::data("empty weight row"));
    }
    let mut sum = 0.0;
    for &(_, w) in row {
        if w < 0.0 {
            return Err(Error::data(format!("negative weight {w}")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::data(format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Control vector: joint values or per-keypoint soft displacements.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Joints(Vec<f64>),
    SoftDisplacements(Vec<Vector3<f64>>),
}

/// An object state: the control vector together with the derived
/// world-space keypoint positions.
#[derive(Debug, Clone)]
pub struct DeformState {
    pub class: ObjectClass,
    pub control: Control,
    pub keypoints: Vec<Point3<f64>>,
}

impl DeformState {
    pub fn articulated(body: &CanonicalBody, tree: &KinematicTree, q: &[f64]) -> Result<Self> {
        let deformed = deform_articulated(body, tree, q)?;
        Ok(DeformState {
            class: ObjectClass::Articulated,
            control: Control::Joints(q.to_vec()),
            keypoints: gather(&deformed, body.keypoint_indices()),
        })
    }

    pub fn skinned(body: &CanonicalBody, tree: &KinematicTree, q: &[f64]) -> Result<Self> {
        let deformed = deform_lbs(body, tree, q)?;
        Ok(DeformState {
            class: ObjectClass::Skinned,
            control: Control::Joints(q.to_vec()),
            keypoints: gather(&deformed, body.keypoint_indices()),
        })
    }

    pub fn soft(body: &CanonicalBody, field: &SoftField) -> Result<Self> {
        let deformed = deform_soft(body, field)?;
        Ok(DeformState {
            class: ObjectClass::Soft,
            control: Control::SoftDisplacements(field.displacements.clone()),
            keypoints: gather(&deformed, body.keypoint_indices()),
        })
    }
}

fn gather(points: &[Point3<f64>], indices: &[usize]) -> Vec<Point3<f64>> {
    indices.iter().map(|&i| points[i]).collect()
}

/// Control displacements at the keypoints plus precomputed convex
/// interpolation weights for every material point.
#[derive(Debug, Clone)]
pub struct SoftField {
    pub displacements: Vec<Vector3<f64>>,
    weights: Vec<SparseWeights>,
}

/// Neighbors used for the inverse-distance interpolation weights.
pub const SOFT_IDW_NEIGHBORS: usize = 4;
/// Inverse-distance power.
pub const SOFT_IDW_POWER: f64 = 2.0;

impl SoftField {
    /// Precompute convex interpolation weights (inverse-distance, power 2,
    /// `SOFT_IDW_NEIGHBORS` nearest keypoints) for `body`'s points.
    pub fn new(body: &CanonicalBody, displacements: Vec<Vector3<f64>>) -> Result<Self> {
        if displacements.len() != body.keypoint_count() {
            return Err(Error::data(format!(
                "{} displacements for {} keypoints",
                displacements.len(),
                body.keypoint_count()
            )));
        }
        if body.keypoint_count() == 0 {
            return Err(Error::data("soft field requires at least one keypoint"));
        }
        let anchors = body.keypoint_positions();
        let weights = geo::idw_weights(body.points(), &anchors, SOFT_IDW_NEIGHBORS, SOFT_IDW_POWER)?;
        Ok(SoftField { displacements, weights })
    }

    pub fn weights(&self) -> &[SparseWeights] {
        &self.weights
    }

    /// Same interpolation weights, new control displacements.
    pub fn with_displacements(&self, displacements: Vec<Vector3<f64>>) -> Result<SoftField> {
        if displacements.len() != self.displacements.len() {
            return Err(Error::data(format!(
                "{} displacements for a field over {} keypoints",
                displacements.len(),
                self.displacements.len()
            )));
        }
        Ok(SoftField {
            displacements,
            weights: self.weights.clone(),
        })
    }
}

/// World transforms of every link: `T_j = ∏ over the root path of
/// (origin_i ∘ motion_i(q_i))`.
pub fn forward_kinematics(tree: &KinematicTree, q: &[f64]) -> Result<Vec<Pose6D>> {
    tree.validate_joint_vector(q)?;
    let mut world: Vec<Pose6D> = Vec::with_capacity(tree.links().len());
    for (j, link) in tree.links().iter().enumerate() {
        let motion = match link.joint {
            JointKind::Fixed => Pose6D::identity(),
            JointKind::Revolute => Pose6D::new(
                UnitQuaternion::from_axis_angle(&link.axis, q[tree.q_index(j).unwrap()]),
                Vector3::zeros(),
            ),
            JointKind::Prismatic => Pose6D::from_translation(
                link.axis.into_inner() * q[tree.q_index(j).unwrap()],
            ),
        };
        let local = link.origin.compose(&motion);
        let pose = match link.parent {
            Some(p) => world[p].compose(&local),
            None => local,
        };
        world.push(pose);
    }
    Ok(world)
}

/// Per-link rigid maps from rest to the posed configuration:
/// `M_j = T_j(q) ∘ T_j(q₀)⁻¹`.
fn rest_to_pose_maps(tree: &KinematicTree, q: &[f64]) -> Result<Vec<Pose6D>> {
    let posed = forward_kinematics(tree, q)?;
    let rest = forward_kinematics(tree, tree.rest())?;
    Ok(posed
        .iter()
        .zip(&rest)
        .map(|(t, t0)| t.compose(&t0.inverse()))
        .collect())
}

/// Piecewise-rigid deformation: each point follows its owning link.
pub fn deform_articulated(
    body: &CanonicalBody,
    tree: &KinematicTree,
    q: &[f64],
) -> Result<Vec<Point3<f64>>> {
    let assign = match body.binding() {
        Binding::Articulated(a) => a,
        _ => return Err(Error::data("body has no link assignments")),
    };
    let maps = rest_to_pose_maps(tree, q)?;
    let mut out = Vec::with_capacity(body.points().len());
    for (p, &j) in body.points().iter().zip(assign) {
        let m = maps
            .get(j)
            .ok_or_else(|| Error::data(format!("link assignment {j} out of range")))?;
        out.push(m.transform_point(p));
    }
    Ok(out)
}

/// Linear blend skinning: each point is the convex blend of its rigidly
/// transformed candidates.
pub fn deform_lbs(
    body: &CanonicalBody,
    tree: &KinematicTree,
    q: &[f64],
) -> Result<Vec<Point3<f64>>> {
    let weights = match body.binding() {
        Binding::Skinned(w) => w,
        _ => return Err(Error::data("body has no skinning weights")),
    };
    let maps = rest_to_pose_maps(tree, q)?;
    let mut out = Vec::with_capacity(body.points().len());
    for (p, row) in body.points().iter().zip(weights) {
        let mut acc = Vector3::zeros();
        for &(j, w) in row {
            let m = maps
                .get(j)
                .ok_or_else(|| Error::data(format!("bone {j} out of range")))?;
            acc += m.transform_point(p).coords * w;
        }
        out.push(Point3::from(acc));
    }
    Ok(out)
}

/// Convex keypoint-interpolated soft deformation:
/// `x = y + Σ_i α_i(y) d(ξ_i)`.
pub fn deform_soft(body: &CanonicalBody, field: &SoftField) -> Result<Vec<Point3<f64>>> {
    if field.weights.len() != body.points().len() {
        return Err(Error::data(format!(
            "field built for {} points, body has {}",
            field.weights.len(),
            body.points().len()
        )));
    }
    Ok(geo::apply_weighted_displacements(
        body.points(),
        &field.weights,
        &field.displacements,
    ))
}

/// δ of the keypoint net: the max over material points of the distance to
/// the nearest keypoint.
pub fn delta_net_check(body: &CanonicalBody) -> Result<f64> {
    if body.keypoint_count() == 0 {
        return Err(Error::data("delta-net check requires at least one keypoint"));
    }
    let anchors = body.keypoint_positions();
    let mut delta: f64 = 0.0;
    for p in body.points() {
        let d = anchors
            .iter()
            .map(|a| (p - a).norm())
            .fold(f64::INFINITY, f64::min);
        delta = delta.max(d);
    }
    Ok(delta)
}

/// Nearest-keypoint displacement approximation: each point copies the
/// displacement of its nearest keypoint (lowest index wins ties).
pub fn nearest_keypoint_displacement(
    body: &CanonicalBody,
    field: &SoftField,
) -> Result<Vec<Vector3<f64>>> {
    if field.displacements.len() != body.keypoint_count() {
        return Err(Error::data("field/keypoint count mismatch"));
    }
    let anchors = body.keypoint_positions();
    Ok(body
        .points()
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, a) in anchors.iter().enumerate() {
                let d = (p - a).norm();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            field.displacements[best]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn one_link_revolute_z() -> KinematicTree {
        KinematicTree::new(
            vec![Link {
                name: "l0".into(),
                parent: None,
                joint: JointKind::Revolute,
                axis: Vector3::z_axis(),
                origin: Pose6D::identity(),
                limits: (-3.2, 3.2),
            }],
            vec![0.0],
        )
        .unwrap()
    }

    #[test]
    fn pose_compose_inverse_is_identity() {
        let a = Pose6D::new(
            UnitQuaternion::from_euler_angles(0.3, -0.8, 1.2),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let id = a.compose(&a.inverse());
        assert!(id.rotation.angle() < 1e-9);
        assert!(id.translation.norm() < 1e-9);
    }

    #[test]
    fn fk_identity_at_rest_with_identity_origins() {
        let tree = one_link_revolute_z();
        let poses = forward_kinematics(&tree, &[0.0]).unwrap();
        assert!(poses[0].rotation.angle() < 1e-12);
        assert!(poses[0].translation.norm() < 1e-12);
    }

    #[test]
    fn fk_quarter_turn_about_z() {
        let tree = one_link_revolute_z();
        let poses = forward_kinematics(&tree, &[FRAC_PI_2]).unwrap();
        let p = poses[0].transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p.coords, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn fk_out_of_limit_names_joint() {
        let tree = one_link_revolute_z();
        let err = forward_kinematics(&tree, &[4.0]).unwrap_err();
        match err {
            Error::State(msg) => assert!(msg.contains("l0"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn articulated_identity_state_is_identity() {
        let tree = one_link_revolute_z();
        let body = CanonicalBody::new(
            vec![Point3::new(0.2, 0.0, 0.0), Point3::new(0.9, 0.1, 0.0)],
            Binding::Articulated(vec![0, 0]),
            vec![0],
        )
        .unwrap();
        let out = deform_articulated(&body, &tree, &[0.0]).unwrap();
        assert_eq!(out, body.points().to_vec());
    }

    #[test]
    fn articulated_single_link_translation() {
        let tree = KinematicTree::new(
            vec![Link {
                name: "slider".into(),
                parent: None,
                joint: JointKind::Prismatic,
                axis: Vector3::x_axis(),
                origin: Pose6D::identity(),
                limits: (-1.0, 1.0),
            }],
            vec![0.0],
        )
        .unwrap();
        let body = CanonicalBody::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(0.5, 0.5, 0.5)],
            Binding::Articulated(vec![0, 0]),
            vec![0],
        )
        .unwrap();
        let out = deform_articulated(&body, &tree, &[0.25]).unwrap();
        for (a, b) in out.iter().zip(body.points()) {
            assert_relative_eq!(a - b, Vector3::new(0.25, 0.0, 0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn lbs_common_transform_ignores_weights() {
        // Two bones posed identically: output must be that rigid map
        // applied to each point, regardless of the weight split.
        let tree = KinematicTree::new(
            vec![
                Link {
                    name: "a".into(),
                    parent: None,
                    joint: JointKind::Revolute,
                    axis: Vector3::z_axis(),
                    origin: Pose6D::identity(),
                    limits: (-3.2, 3.2),
                },
                Link {
                    name: "b".into(),
                    parent: Some(0),
                    joint: JointKind::Fixed,
                    axis: Vector3::z_axis(),
                    origin: Pose6D::identity(),
                    limits: (0.0, 0.0),
                },
            ],
            vec![0.0],
        )
        .unwrap();
        let p = Point3::new(0.7, -0.2, 0.1);
        let body = CanonicalBody::new(
            vec![p],
            Binding::Skinned(vec![vec![(0, 0.3), (1, 0.7)]]),
            vec![0],
        )
        .unwrap();
        let q = [0.9];
        let out = deform_lbs(&body, &tree, &q).unwrap();
        let expect = forward_kinematics(&tree, &q).unwrap()[0].transform_point(&p);
        assert_relative_eq!(out[0].coords, expect.coords, epsilon = 1e-12);
    }

    #[test]
    fn non_convex_weights_rejected() {
        let bad = CanonicalBody::new(
            vec![Point3::origin()],
            Binding::Skinned(vec![vec![(0, 0.5), (1, 0.6)]]),
            vec![],
        );
        assert!(matches!(bad, Err(Error::Data(_))));
    }

    #[test]
    fn soft_zero_displacements_is_identity() {
        let pts: Vec<_> = (0..20).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let body = CanonicalBody::new(pts.clone(), Binding::Soft, vec![0, 10, 19]).unwrap();
        let field = SoftField::new(&body, vec![Vector3::zeros(); 3]).unwrap();
        let out = deform_soft(&body, &field).unwrap();
        assert_eq!(out, pts);
    }

    #[test]
    fn soft_common_displacement_is_rigid_translation() {
        let pts: Vec<_> = (0..20).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let body = CanonicalBody::new(pts.clone(), Binding::Soft, vec![0, 7, 19]).unwrap();
        let t = Vector3::new(0.3, -0.1, 0.2);
        let field = SoftField::new(&body, vec![t; 3]).unwrap();
        let out = deform_soft(&body, &field).unwrap();
        for (a, b) in out.iter().zip(&pts) {
            assert_relative_eq!(a - b, t, epsilon = 1e-12);
        }
    }

    #[test]
    fn soft_field_count_mismatch_rejected() {
        let pts: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let body = CanonicalBody::new(pts, Binding::Soft, vec![0, 4]).unwrap();
        assert!(matches!(
            SoftField::new(&body, vec![Vector3::zeros(); 3]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn delta_net_trivial_cases() {
        let pts: Vec<_> = (0..101).map(|i| Point3::new(i as f64 / 100.0, 0.0, 0.0)).collect();
        // All points are keypoints -> delta 0.
        let all = CanonicalBody::new(pts.clone(), Binding::Soft, (0..101).collect()).unwrap();
        assert_eq!(delta_net_check(&all).unwrap(), 0.0);
        // Endpoints only -> midpoint is farthest at 0.5.
        let ends = CanonicalBody::new(pts, Binding::Soft, vec![0, 100]).unwrap();
        assert_relative_eq!(delta_net_check(&ends).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn nearest_keypoint_constant_for_single_keypoint() {
        let pts: Vec<_> = (0..9).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let body = CanonicalBody::new(pts, Binding::Soft, vec![3]).unwrap();
        let d = Vector3::new(0.1, 0.2, 0.3);
        let field = SoftField::new(&body, vec![d]).unwrap();
        let approx_field = nearest_keypoint_displacement(&body, &field).unwrap();
        assert!(approx_field.iter().all(|v| *v == d));
        // The point at the keypoint itself copies exactly.
        assert_eq!(approx_field[3], d);
    }
}
