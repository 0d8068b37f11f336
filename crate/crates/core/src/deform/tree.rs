//! Kinematic trees and their plain-text description format.
//!
//! One link per line:
//!
//! ```text
//! # name parent joint ax ay az tx ty tz qx qy qz qw lo hi
//! base   -1     fixed    0 0 1  0 0 0    0 0 0 1   0 0
//! link1   0     revolute 0 0 1  0.5 0 0  0 0 0 1  -1.2 1.2
//! ```
//!
//! `parent` is the index of the parent link (-1 for the single root),
//! `joint` is one of `fixed|revolute|prismatic`, the axis lives in the
//! parent frame, the origin pose is translation then quaternion (xyzw),
//! and limits apply to the joint value. The rest configuration is zero for
//! every movable joint, clamped into its limits.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use std::fmt::Write as _;
use std::path::Path;

use super::Pose6D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Fixed,
    Revolute,
    Prismatic,
}

impl JointKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(JointKind::Fixed),
            "revolute" => Ok(JointKind::Revolute),
            "prismatic" => Ok(JointKind::Prismatic),
            other => Err(Error::format(format!("unknown joint type '{other}'"))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            JointKind::Fixed => "fixed",
            JointKind::Revolute => "revolute",
            JointKind::Prismatic => "prismatic",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    /// Parent link index; `None` for the root.
    pub parent: Option<usize>,
    pub joint: JointKind,
    /// Joint axis in the parent frame (unit length).
    pub axis: Unit<Vector3<f64>>,
    /// Fixed transform from the parent frame to this joint's frame.
    pub origin: Pose6D,
    /// Joint value limits `[lo, hi]`.
    pub limits: (f64, f64),
}

/// Topologically ordered kinematic tree with a rest configuration over the
/// movable (non-fixed) joints.
#[derive(Debug, Clone)]
pub struct KinematicTree {
    links: Vec<Link>,
    rest: Vec<f64>,
    /// Per-link index into the joint vector (None for fixed joints).
    q_index: Vec<Option<usize>>,
}

impl KinematicTree {
    pub fn new(links: Vec<Link>, rest: Vec<f64>) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::data("tree has no links"));
        }
        let mut roots = 0;
        for (i, link) in links.iter().enumerate() {
            match link.parent {
                None => roots += 1,
                Some(p) if p >= i => {
                    return Err(Error::data(format!(
                        "link '{}' has parent {p} >= own index {i}",
                        link.name
                    )));
                }
                _ => {}
            }
            if (link.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::data(format!("link '{}' axis not unit", link.name)));
            }
            if link.limits.0 > link.limits.1 {
                return Err(Error::data(format!(
                    "link '{}' limits [{}, {}] inverted",
                    link.name, link.limits.0, link.limits.1
                )));
            }
        }
        if roots != 1 {
            return Err(Error::data(format!("expected exactly one root, found {roots}")));
        }
        let mut q_index = Vec::with_capacity(links.len());
        let mut dq = 0usize;
        for link in &links {
            if link.joint == JointKind::Fixed {
                q_index.push(None);
            } else {
                q_index.push(Some(dq));
                dq += 1;
            }
        }
        if rest.len() != dq {
            return Err(Error::data(format!(
                "rest configuration has {} values, tree has {dq} movable joints",
                rest.len()
            )));
        }
        for (j, link) in links.iter().enumerate() {
            if let Some(qi) = q_index[j] {
                let v = rest[qi];
                if v < link.limits.0 || v > link.limits.1 {
                    return Err(Error::data(format!(
                        "rest value {v} outside limits of link '{}'",
                        link.name
                    )));
                }
            }
        }
        Ok(KinematicTree { links, rest, q_index })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn rest(&self) -> &[f64] {
        &self.rest
    }

    /// Number of movable joints (the joint-vector length).
    pub fn dof(&self) -> usize {
        self.rest.len()
    }

    pub fn q_index(&self, link: usize) -> Option<usize> {
        self.q_index[link]
    }

    /// Joint limits in joint-vector order.
    pub fn joint_limits(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); self.dof()];
        for (j, link) in self.links.iter().enumerate() {
            if let Some(qi) = self.q_index[j] {
                out[qi] = link.limits;
            }
        }
        out
    }

    pub(crate) fn validate_joint_vector(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::dim(format!(
                "joint vector has {} values, tree has {} movable joints",
                q.len(),
                self.dof()
            )));
        }
        for (j, link) in self.links.iter().enumerate() {
            if let Some(qi) = self.q_index[j] {
                let v = q[qi];
                if v < link.limits.0 || v > link.limits.1 {
                    return Err(Error::state(format!(
                        "joint of link '{}' at {v} outside limits [{}, {}]",
                        link.name, link.limits.0, link.limits.1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parse the plain-text description format.
    pub fn from_description(text: &str) -> Result<Self> {
        let mut links = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 15 {
                return Err(Error::format(format!(
                    "line {}: expected 15 fields, got {}",
                    lineno + 1,
                    tok.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::format(format!("line {}: bad number '{s}'", lineno + 1)))
            };
            let parent_raw: i64 = tok[1]
                .parse()
                .map_err(|_| Error::format(format!("line {}: bad parent '{}'", lineno + 1, tok[1])))?;
            let parent = if parent_raw < 0 { None } else { Some(parent_raw as usize) };
            let axis_v = Vector3::new(parse(tok[3])?, parse(tok[4])?, parse(tok[5])?);
            let axis = Unit::try_new(axis_v, 1e-12)
                .ok_or_else(|| Error::format(format!("line {}: zero axis", lineno + 1)))?;
            let trans = Vector3::new(parse(tok[6])?, parse(tok[7])?, parse(tok[8])?);
            let quat = nalgebra::Quaternion::new(
                parse(tok[12])?, // w
                parse(tok[9])?,
                parse(tok[10])?,
                parse(tok[11])?,
            );
            if (quat.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::format(format!(
                    "line {}: quaternion norm {} too far from 1",
                    lineno + 1,
                    quat.norm()
                )));
            }
            let rotation = UnitQuaternion::from_quaternion(quat);
            links.push(Link {
                name: tok[0].to_string(),
                parent,
                joint: JointKind::parse(tok[2])?,
                axis,
                origin: Pose6D::new(rotation, trans),
                limits: (parse(tok[13])?, parse(tok[14])?),
            });
        }
        let rest: Vec<f64> = links
            .iter()
            .filter(|l| l.joint != JointKind::Fixed)
            .map(|l| 0.0f64.clamp(l.limits.0, l.limits.1))
            .collect();
        KinematicTree::new(links, rest)
    }

    pub fn to_description(&self) -> String {
        let mut s = String::from("# name parent joint ax ay az tx ty tz qx qy qz qw lo hi\n");
        for link in &self.links {
            let p = link.parent.map(|v| v as i64).unwrap_or(-1);
            let q = link.origin.rotation.quaternion();
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
                link.name,
                p,
                link.joint.name(),
                link.axis.x,
                link.axis.y,
                link.axis.z,
                link.origin.translation.x,
                link.origin.translation.y,
                link.origin.translation.z,
                q.i,
                q.j,
                q.k,
                q.w,
                link.limits.0,
                link.limits.1
            );
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_description(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_description())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN2: &str = "\
# a two-link chain
base  -1 revolute 0 0 1  0 0 0    0 0 0 1  -1.5 1.5
distal 0 revolute 0 0 1  0.5 0 0  0 0 0 1  -1.5 1.5
";

    #[test]
    fn parse_roundtrip() {
        let tree = KinematicTree::from_description(CHAIN2).unwrap();
        assert_eq!(tree.links().len(), 2);
        assert_eq!(tree.dof(), 2);
        assert_eq!(tree.links()[1].parent, Some(0));
        let again = KinematicTree::from_description(&tree.to_description()).unwrap();
        assert_eq!(again.links().len(), 2);
        assert_eq!(again.links()[1].origin.translation.x, 0.5);
    }

    #[test]
    fn two_roots_rejected() {
        let text = "\
a -1 fixed 0 0 1 0 0 0 0 0 0 1 0 0
b -1 fixed 0 0 1 0 0 0 0 0 0 1 0 0
";
        assert!(matches!(
            KinematicTree::from_description(text),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn parent_must_precede_child() {
        let links = vec![
            Link {
                name: "a".into(),
                parent: Some(1),
                joint: JointKind::Fixed,
                axis: Vector3::z_axis(),
                origin: Pose6D::identity(),
                limits: (0.0, 0.0),
            },
            Link {
                name: "b".into(),
                parent: None,
                joint: JointKind::Fixed,
                axis: Vector3::z_axis(),
                origin: Pose6D::identity(),
                limits: (0.0, 0.0),
            },
        ];
        assert!(KinematicTree::new(links, vec![]).is_err());
    }

    #[test]
    fn malformed_line_is_format_error() {
        assert!(matches!(
            KinematicTree::from_description("base -1 revolute 0 0 1"),
            Err(Error::Format(_))
        ));
    }
}
