//! Shared geometry: axis-aligned boxes, workspace normalization, and the
//! inverse-distance-weighting kernel used by soft fields, vertex warping,
//! and the optimized retrieval baseline.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite()) {
                return Err(Error::value("bounds must be finite"));
            }
            if min[a] >= max[a] {
                return Err(Error::data(format!(
                    "degenerate bounds on axis {a}: [{}, {}]",
                    min[a], max[a]
                )));
            }
        }
        Ok(Aabb { min, max })
    }

    /// Cube centered on the origin with half-extent `h`.
    pub fn centered_cube(h: f64) -> Result<Self> {
        Aabb::new([-h, -h, -h], [h, h, h])
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Map a world point into the normalized [-1,1]^3 workspace frame.
    pub fn normalize(&self, p: &Point3<f64>) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = 2.0 * (p[a] - self.min[a]) / self.extent(a) - 1.0;
        }
        out
    }

    /// Inverse of [`Aabb::normalize`].
    pub fn denormalize(&self, n: &[f64; 3]) -> Point3<f64> {
        Point3::new(
            self.min[0] + (n[0] + 1.0) * 0.5 * self.extent(0),
            self.min[1] + (n[1] + 1.0) * 0.5 * self.extent(1),
            self.min[2] + (n[2] + 1.0) * 0.5 * self.extent(2),
        )
    }

    /// Grow the box by a relative margin on every axis.
    pub fn inflated(&self, rel: f64) -> Aabb {
        let mut min = self.min;
        let mut max = self.max;
        for a in 0..3 {
            let pad = self.extent(a) * rel * 0.5;
            min[a] -= pad;
            max[a] += pad;
        }
        Aabb { min, max }
    }

    /// Expand to a cube: every axis takes the largest extent, centered on
    /// its own midpoint. Keeps grid cells isotropic.
    pub fn cubified(&self) -> Aabb {
        let half = (0..3).map(|a| self.extent(a)).fold(0.0, f64::max) / 2.0;
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            let c = (self.min[a] + self.max[a]) / 2.0;
            min[a] = c - half;
            max[a] = c + half;
        }
        Aabb { min, max }
    }
}

/// Sparse convex weights: `(source index, weight)` pairs summing to 1.
pub type SparseWeights = Vec<(usize, f64)>;

/// Distance below which a target is treated as coinciding with a source.
pub const COINCIDENCE_EPS: f64 = 1e-12;

/// Inverse-distance weights (power `p`) over the `k` nearest `sources` for
/// each target point. A target that coincides with a source copies that
/// source exactly (lowest index wins on ties). Weights are convex: each
/// row is nonnegative and sums to 1.
pub fn idw_weights(
    targets: &[Point3<f64>],
    sources: &[Point3<f64>],
    k: usize,
    power: f64,
) -> Result<Vec<SparseWeights>> {
    if sources.is_empty() {
        return Err(Error::data("idw: empty source set"));
    }
    let k = k.min(sources.len());
    let mut out = Vec::with_capacity(targets.len());
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(sources.len());
    for t in targets {
        dists.clear();
        for (i, s) in sources.iter().enumerate() {
            dists.push(((t - s).norm(), i));
        }
        // Stable ordering: distance first, index second.
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        if dists[0].0 < COINCIDENCE_EPS {
            out.push(vec![(dists[0].1, 1.0)]);
            continue;
        }
        let mut row: SparseWeights = Vec::with_capacity(k);
        let mut total = 0.0;
        for &(d, i) in dists.iter().take(k) {
            let w = d.powf(-power);
            total += w;
            row.push((i, w));
        }
        for e in &mut row {
            e.1 /= total;
        }
        out.push(row);
    }
    Ok(out)
}

/// Apply sparse convex weights to per-source displacement vectors.
pub fn apply_weighted_displacements(
    points: &[Point3<f64>],
    weights: &[SparseWeights],
    displacements: &[Vector3<f64>],
) -> Vec<Point3<f64>> {
    points
        .iter()
        .zip(weights)
        .map(|(p, row)| {
            let mut d = Vector3::zeros();
            for &(i, w) in row {
                d += displacements[i] * w;
            }
            p + d
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degenerate_bounds_rejected() {
        assert!(Aabb::new([0.0, 0.0, 0.0], [1.0, 0.0, 1.0]).is_err());
        assert!(Aabb::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn normalize_roundtrip() {
        let b = Aabb::new([-2.0, 0.0, 1.0], [2.0, 4.0, 3.0]).unwrap();
        let p = Point3::new(0.5, 1.0, 2.5);
        let q = b.denormalize(&b.normalize(&p));
        assert_relative_eq!(p.coords, q.coords, epsilon = 1e-12);
        assert_eq!(b.normalize(&Point3::new(-2.0, 0.0, 1.0)), [-1.0, -1.0, -1.0]);
        assert_eq!(b.normalize(&Point3::new(2.0, 4.0, 3.0)), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn idw_coincident_target_copies_source() {
        let sources = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let w = idw_weights(&[Point3::new(1.0, 0.0, 0.0)], &sources, 4, 2.0).unwrap();
        assert_eq!(w[0], vec![(1, 1.0)]);
    }

    #[test]
    fn idw_rows_are_convex() {
        let sources: Vec<_> = (0..6)
            .map(|i| Point3::new(i as f64, (i * i) as f64 * 0.1, 0.3))
            .collect();
        let targets = vec![Point3::new(2.3, 0.4, 0.0), Point3::new(-1.0, 5.0, 2.0)];
        for row in idw_weights(&targets, &sources, 4, 2.0).unwrap() {
            assert_eq!(row.len(), 4);
            let sum: f64 = row.iter().map(|e| e.1).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|e| e.1 >= 0.0));
        }
    }

    #[test]
    fn idw_midpoint_splits_evenly() {
        let sources = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        let w = idw_weights(&[Point3::new(1.0, 0.0, 0.0)], &sources, 2, 2.0).unwrap();
        assert_relative_eq!(w[0][0].1, 0.5, epsilon = 1e-12);
        assert_relative_eq!(w[0][1].1, 0.5, epsilon = 1e-12);
    }
}
