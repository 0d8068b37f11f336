//! Independent oracles for the analytic deformation engines: sum-of-angles
//! planar FK, per-point homogeneous-matrix recomputation, rigid-distance
//! preservation, the LBS/FK reduction, convexity of soft deformation, and
//! the nearest-keypoint (δ-net) error bound.

use nalgebra::{Matrix4, Point3, Vector3, Vector4};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

use worldstring::datagen::{fps_keypoints, make_object, ObjectSpec};
use worldstring::deform::{
    deform_articulated, deform_lbs, deform_soft, delta_net_check, forward_kinematics,
    nearest_keypoint_displacement, Binding, CanonicalBody, DeformState, JointKind,
    KinematicTree, Link, Pose6D, SoftField,
};

fn planar_chain(links: usize, length: f64) -> KinematicTree {
    let v: Vec<Link> = (0..links)
        .map(|j| Link {
            name: format!("l{j}"),
            parent: if j == 0 { None } else { Some(j - 1) },
            joint: JointKind::Revolute,
            axis: Vector3::z_axis(),
            origin: if j == 0 {
                Pose6D::identity()
            } else {
                Pose6D::from_translation(Vector3::new(length, 0.0, 0.0))
            },
            limits: (-3.2, 3.2),
        })
        .collect();
    KinematicTree::new(v, vec![0.0; links]).unwrap()
}

#[test]
fn three_link_planar_fk_matches_sum_of_angles_oracle() {
    let tree = planar_chain(3, 1.0);
    let q = [FRAC_PI_6, FRAC_PI_6, FRAC_PI_6];
    let poses = forward_kinematics(&tree, &q).unwrap();
    // End-effector origin = tip of the last unit link.
    let tip = poses[2].transform_point(&Point3::new(1.0, 0.0, 0.0));

    // Independent oracle: planar arm positions from cumulative angles.
    let mut cum = 0.0;
    let (mut x, mut y) = (0.0, 0.0);
    for qi in q {
        cum += qi;
        x += cum.cos();
        y += cum.sin();
    }
    assert!((tip.x - x).abs() < 1e-9, "{} vs {x}", tip.x);
    assert!((tip.y - y).abs() < 1e-9, "{} vs {y}", tip.y);
    assert!(tip.z.abs() < 1e-9);
    // The spec's closed-form values for this configuration.
    assert!((x - 1.36603).abs() < 1e-5);
    assert!((y - 2.36603).abs() < 1e-5);
}

#[test]
fn fk_rest_maps_compose_to_identity() {
    let tree = planar_chain(4, 0.7);
    let rest = forward_kinematics(&tree, tree.rest()).unwrap();
    for t in &rest {
        let id = t.compose(&t.inverse());
        assert!(id.rotation.angle() < 1e-9);
        assert!(id.translation.norm() < 1e-9);
        assert!((t.rotation.norm() - 1.0).abs() < 1e-9);
    }
}

/// Independent homogeneous-matrix recomputation of a 2-link articulated
/// deformation with the distal joint at 90 degrees.
#[test]
fn two_link_articulated_matches_matrix_chain_oracle() {
    let tree = planar_chain(2, 1.0);
    let body_points = vec![
        Point3::new(0.3, 0.05, 0.0),
        Point3::new(0.9, -0.02, 0.01),
        Point3::new(1.2, 0.0, 0.0),
        Point3::new(1.9, 0.04, -0.02),
    ];
    let body = CanonicalBody::new(
        body_points.clone(),
        Binding::Articulated(vec![0, 0, 1, 1]),
        vec![0, 2],
    )
    .unwrap();
    let q = [0.0, FRAC_PI_2];
    let got = deform_articulated(&body, &tree, &q).unwrap();

    // Oracle: explicit 4x4 chains. Link frames at rest sit at x = j.
    let rot_z = |a: f64| {
        Matrix4::new(
            a.cos(), -a.sin(), 0.0, 0.0,
            a.sin(), a.cos(), 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        )
    };
    let trans_x = |d: f64| Matrix4::new_translation(&Vector3::new(d, 0.0, 0.0));
    let t0_q = rot_z(q[0]);
    let t1_q = t0_q * trans_x(1.0) * rot_z(q[1]);
    let t0_rest = rot_z(0.0);
    let t1_rest = t0_rest * trans_x(1.0) * rot_z(0.0);
    let maps = [
        t0_q * t0_rest.try_inverse().unwrap(),
        t1_q * t1_rest.try_inverse().unwrap(),
    ];
    for (i, (p, assign)) in body_points.iter().zip([0usize, 0, 1, 1]).enumerate() {
        let h = maps[assign] * Vector4::new(p.x, p.y, p.z, 1.0);
        let want = Point3::new(h.x, h.y, h.z);
        assert!(
            (got[i] - want).norm() < 1e-12,
            "point {i}: {:?} vs {:?}",
            got[i],
            want
        );
    }
    // Distal points really rotated about the joint origin at (1,0,0).
    assert!((got[3] - Point3::new(1.0 - 0.04, 0.9 - 0.0, -0.02)).norm() < 1e-9);
}

#[test]
fn piecewise_rigidity_preserved_within_links_broken_between() {
    let spec = ObjectSpec::Chain {
        links: 3,
        link_length: 0.5,
        radius: 0.08,
        points: 1500,
        joint_limit: 1.5,
    };
    let (body, tree) = make_object(&spec).unwrap();
    let tree = tree.unwrap();
    let kp = fps_keypoints(body.points(), 6).unwrap();
    let body = body.with_keypoints(kp).unwrap();
    let q = [0.4, -0.9, 1.1];
    let out = deform_articulated(&body, &tree, &q).unwrap();

    let assign = match body.binding() {
        Binding::Articulated(a) => a.clone(),
        _ => unreachable!(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Intra-link distances preserved to 1e-9.
    for _ in 0..300 {
        let i = rng.random_range(0..body.points().len());
        let j = rng.random_range(0..body.points().len());
        let before = (body.points()[i] - body.points()[j]).norm();
        let after = (out[i] - out[j]).norm();
        if assign[i] == assign[j] {
            assert!((before - after).abs() < 1e-9);
        }
    }
    // Some inter-link distance must change for a non-trivial q.
    let mut changed = false;
    for _ in 0..300 {
        let i = rng.random_range(0..body.points().len());
        let j = rng.random_range(0..body.points().len());
        if assign[i] != assign[j] {
            let before = (body.points()[i] - body.points()[j]).norm();
            let after = (out[i] - out[j]).norm();
            if (before - after).abs() > 1e-6 {
                changed = true;
                break;
            }
        }
    }
    assert!(changed, "no inter-link distance changed under q = {q:?}");
}

#[test]
fn one_hot_lbs_reduces_to_articulated() {
    let tree = planar_chain(2, 1.0);
    let points = vec![
        Point3::new(0.2, 0.1, 0.0),
        Point3::new(0.8, -0.1, 0.05),
        Point3::new(1.5, 0.0, -0.03),
    ];
    let assign = vec![0usize, 0, 1];
    let articulated = CanonicalBody::new(
        points.clone(),
        Binding::Articulated(assign.clone()),
        vec![0],
    )
    .unwrap();
    let one_hot = CanonicalBody::new(
        points,
        Binding::Skinned(assign.iter().map(|&j| vec![(j, 1.0)]).collect()),
        vec![0],
    )
    .unwrap();
    let q = [0.7, -1.2];
    let a = deform_articulated(&articulated, &tree, &q).unwrap();
    let b = deform_lbs(&one_hot, &tree, &q).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).norm() < 1e-12);
    }
}

#[test]
fn lbs_seam_point_is_midpoint_of_rigid_candidates() {
    let tree = planar_chain(2, 1.0);
    let seam = Point3::new(1.0, 0.0, 0.0);
    let body = CanonicalBody::new(
        vec![seam],
        Binding::Skinned(vec![vec![(0, 0.5), (1, 0.5)]]),
        vec![0],
    )
    .unwrap();
    let q = [0.0, FRAC_PI_2];
    let out = deform_lbs(&body, &tree, &q).unwrap();

    // Explicit two-term average oracle.
    let posed = forward_kinematics(&tree, &q).unwrap();
    let rest = forward_kinematics(&tree, tree.rest()).unwrap();
    let cand0 = posed[0]
        .compose(&rest[0].inverse())
        .transform_point(&seam);
    let cand1 = posed[1]
        .compose(&rest[1].inverse())
        .transform_point(&seam);
    let mid = Point3::from((cand0.coords + cand1.coords) * 0.5);
    assert!((out[0] - mid).norm() < 1e-12);
}

fn rope_body(keypoints: usize) -> CanonicalBody {
    let (body, _) = make_object(&ObjectSpec::Rope {
        length: 1.0,
        radius: 0.02,
        points: 4000,
    })
    .unwrap();
    let kp = fps_keypoints(body.points(), keypoints).unwrap();
    body.with_keypoints(kp).unwrap()
}

/// Exhaustive O(N·K) max-min scan, kept separate from the library path.
fn brute_force_delta(body: &CanonicalBody) -> f64 {
    let anchors: Vec<Point3<f64>> = body
        .keypoint_indices()
        .iter()
        .map(|&i| body.points()[i])
        .collect();
    let mut worst = 0.0f64;
    for p in body.points() {
        let mut best = f64::INFINITY;
        for a in &anchors {
            best = best.min((p - a).norm());
        }
        worst = worst.max(best);
    }
    worst
}

#[test]
fn delta_net_matches_brute_force_on_fps_keypoints() {
    let spec = ObjectSpec::Chain {
        links: 3,
        link_length: 0.5,
        radius: 0.08,
        points: 3000,
        joint_limit: 1.5,
    };
    let (body, _) = make_object(&spec).unwrap();
    let kp = fps_keypoints(body.points(), 15).unwrap();
    let body = body.with_keypoints(kp).unwrap();
    let lib = delta_net_check(&body).unwrap();
    let brute = brute_force_delta(&body);
    assert!((lib - brute).abs() < 1e-12, "{lib} vs {brute}");
}

#[test]
fn rope_fps15_delta_is_small() {
    let body = rope_body(15);
    let delta = delta_net_check(&body).unwrap();
    assert!(delta <= 0.12, "delta = {delta}");
}

/// Empirical Lipschitz constant over sampled point pairs, inflated 1%.
fn measured_lipschitz(
    points: &[Point3<f64>],
    field: impl Fn(&Point3<f64>) -> Vector3<f64>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut l: f64 = 0.0;
    for _ in 0..20_000 {
        let i = rng.random_range(0..points.len());
        let j = rng.random_range(0..points.len());
        if i == j {
            continue;
        }
        let dy = (points[i] - points[j]).norm();
        if dy < 1e-9 {
            continue;
        }
        let dd = (field(&points[i]) - field(&points[j])).norm();
        l = l.max(dd / dy);
    }
    l * 1.01
}

#[test]
fn quarter_circle_bend_respects_delta_net_bound() {
    // Analytic field: bend the rope's x-axis onto a quarter circle of
    // radius 2L/pi (arc length preserved along the centerline).
    let body = rope_body(15);
    let radius = 2.0 / std::f64::consts::PI;
    let bend = move |p: &Point3<f64>| -> Vector3<f64> {
        // Centerline maps to the arc; the cross-section translates with it.
        let theta = p.x / radius;
        let arc = Point3::new(radius * theta.sin(), radius * (1.0 - theta.cos()), p.z);
        Point3::new(arc.x, arc.y + p.y, arc.z) - p
    };

    let delta = delta_net_check(&body).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let lip = measured_lipschitz(body.points(), &bend, &mut rng);

    let displacements: Vec<Vector3<f64>> = body
        .keypoint_indices()
        .iter()
        .map(|&i| bend(&body.points()[i]))
        .collect();
    let field = SoftField::new(&body, displacements).unwrap();

    // Nearest-keypoint approximation obeys the L*delta bound.
    let approx = nearest_keypoint_displacement(&body, &field).unwrap();
    let mut sup_nn = 0.0f64;
    for (p, a) in body.points().iter().zip(&approx) {
        sup_nn = sup_nn.max((bend(p) - a).norm());
    }
    assert!(
        sup_nn <= lip * delta,
        "nearest-keypoint sup error {sup_nn} > L*delta = {}",
        lip * delta
    );

    // The smooth interpolated field is at least as tight here.
    let deformed = deform_soft(&body, &field).unwrap();
    let mut sup_idw = 0.0f64;
    for (p, x) in body.points().iter().zip(&deformed) {
        sup_idw = sup_idw.max(((p + bend(p)) - x).norm());
    }
    assert!(
        sup_idw <= lip * delta,
        "interpolated sup error {sup_idw} > L*delta = {}",
        lip * delta
    );
}

#[test]
fn linear_field_error_bounded_by_operator_norm_times_delta() {
    let body = rope_body(12);
    // d(y) = A y with a fixed non-symmetric A.
    let a = nalgebra::Matrix3::new(0.3, -0.1, 0.05, 0.2, 0.15, -0.3, 0.0, 0.1, 0.25);
    let field_fn = move |p: &Point3<f64>| -> Vector3<f64> { a * p.coords };
    let op_norm = a.svd(false, false).singular_values[0];

    let delta = delta_net_check(&body).unwrap();
    let displacements: Vec<Vector3<f64>> = body
        .keypoint_indices()
        .iter()
        .map(|&i| field_fn(&body.points()[i]))
        .collect();
    let field = SoftField::new(&body, displacements).unwrap();
    let approx = nearest_keypoint_displacement(&body, &field).unwrap();
    let mut sup = 0.0f64;
    for (p, ap) in body.points().iter().zip(&approx) {
        sup = sup.max((field_fn(p) - ap).norm());
    }
    assert!(
        sup <= op_norm * delta + 1e-12,
        "sup {sup} > ||A||·delta = {}",
        op_norm * delta
    );
}

#[test]
fn deform_state_keypoints_match_recomputation() {
    // Articulated.
    let spec = ObjectSpec::Chain {
        links: 2,
        link_length: 0.5,
        radius: 0.08,
        points: 1000,
        joint_limit: 1.5,
    };
    let (body, tree) = make_object(&spec).unwrap();
    let tree = tree.unwrap();
    let kp = fps_keypoints(body.points(), 5).unwrap();
    let body = body.with_keypoints(kp).unwrap();
    let q = [0.5, -0.8];
    let st = DeformState::articulated(&body, &tree, &q).unwrap();
    let full = deform_articulated(&body, &tree, &q).unwrap();
    for (slot, &idx) in body.keypoint_indices().iter().enumerate() {
        assert!((st.keypoints[slot] - full[idx]).norm() < 1e-9);
    }

    // Soft.
    let rope = rope_body(6);
    let disp: Vec<Vector3<f64>> = (0..6)
        .map(|i| Vector3::new(0.01 * i as f64, -0.02, 0.005 * i as f64))
        .collect();
    let field = SoftField::new(&rope, disp).unwrap();
    let st = DeformState::soft(&rope, &field).unwrap();
    let full = deform_soft(&rope, &field).unwrap();
    for (slot, &idx) in rope.keypoint_indices().iter().enumerate() {
        assert!((st.keypoints[slot] - full[idx]).norm() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Soft deformation stays inside the per-coordinate convex hull of the
    /// keypoint-induced candidates y + d_i.
    #[test]
    fn soft_outputs_lie_in_candidate_hull(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point3<f64>> = (0..80)
            .map(|_| Point3::new(rng.random::<f64>(), rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1))
            .collect();
        let body = CanonicalBody::new(pts, Binding::Soft, vec![0, 20, 40, 60, 79]).unwrap();
        let disp: Vec<Vector3<f64>> = (0..5)
            .map(|_| Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            ))
            .collect();
        let field = SoftField::new(&body, disp.clone()).unwrap();
        let out = deform_soft(&body, &field).unwrap();
        for (y, x) in body.points().iter().zip(&out) {
            for axis in 0..3 {
                let lo = disp.iter().map(|d| y[axis] + d[axis]).fold(f64::INFINITY, f64::min);
                let hi = disp.iter().map(|d| y[axis] + d[axis]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(x[axis] >= lo - 1e-12 && x[axis] <= hi + 1e-12);
            }
        }
    }

    /// Quaternion composition stays unit-norm along random chains.
    #[test]
    fn pose_composition_keeps_unit_quaternions(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = Pose6D::identity();
        for _ in 0..60 {
            let axis = Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            if axis.norm() < 1e-6 { continue; }
            let p = Pose6D::from_axis_angle(&axis, rng.random::<f64>() * 3.0).unwrap();
            acc = acc.compose(&p);
            prop_assert!((acc.rotation.norm() - 1.0).abs() < 1e-9);
        }
    }
}
