//! Minimal ASCII PLY point-cloud writer (positions, optional uchar RGB).

use nalgebra::Point3;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub fn ply_string(points: &[Point3<f64>], colors: Option<&[[u8; 3]]>) -> Result<String> {
    if let Some(c) = colors {
        if c.len() != points.len() {
            return Err(Error::data(format!(
                "{} colors for {} points",
                c.len(),
                points.len()
            )));
        }
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    s.push_str("end_header\n");
    match colors {
        Some(cols) => {
            for (p, c) in points.iter().zip(cols) {
                let _ = writeln!(s, "{} {} {} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]);
            }
        }
        None => {
            for p in points {
                let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
            }
        }
    }
    Ok(s)
}

pub fn write_ply(path: &Path, points: &[Point3<f64>], colors: Option<&[[u8; 3]]>) -> Result<()> {
    std::fs::write(path, ply_string(points, colors)?)?;
    Ok(())
}
