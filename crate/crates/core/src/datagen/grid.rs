//! Dense binary occupancy grids and their on-disk `.vox` format.
//!
//! Layout: magic `WSVX`, u32 version, u32 resolution R, six f64 bounds
//! (min xyz, max xyz), then a bit-packed payload of ceil(R³/8) bytes.
//! Cell (ix, iy, iz) maps to bit index `(ix·R + iy)·R + iz`, packed
//! LSB-first. All integers and floats are little-endian.

use nalgebra::Point3;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::Aabb;

const VOX_MAGIC: &[u8; 4] = b"WSVX";
const VOX_VERSION: u32 = 1;

/// Axis-aligned dense binary occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    res: usize,
    bounds: Aabb,
    words: Vec<u64>,
}

impl OccupancyGrid {
    pub fn empty(res: usize, bounds: Aabb) -> Result<Self> {
        if res == 0 {
            return Err(Error::config("grid resolution must be positive"));
        }
        let cells = res * res * res;
        Ok(OccupancyGrid {
            res,
            bounds,
            words: vec![0u64; cells.div_ceil(64)],
        })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn cell_count(&self) -> usize {
        self.res * self.res * self.res
    }

    /// Per-axis cell size (extent / R).
    pub fn cell_size(&self, axis: usize) -> f64 {
        self.bounds.extent(axis) / self.res as f64
    }

    #[inline]
    fn bit(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.res + iy) * self.res + iz
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> bool {
        let b = self.bit(ix, iy, iz);
        (self.words[b / 64] >> (b % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, v: bool) {
        let b = self.bit(ix, iy, iz);
        if v {
            self.words[b / 64] |= 1u64 << (b % 64);
        } else {
            self.words[b / 64] &= !(1u64 << (b % 64));
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Cell containing a world point under the half-open convention
    /// `[lo, hi)`; points exactly on the upper boundary clamp inward.
    /// `None` for points outside the bounds.
    pub fn cell_of(&self, p: &Point3<f64>) -> Option<(usize, usize, usize)> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            if p[a] < self.bounds.min[a] || p[a] > self.bounds.max[a] {
                return None;
            }
            let f = (p[a] - self.bounds.min[a]) / self.cell_size(a);
            c[a] = (f as usize).min(self.res - 1);
        }
        Some((c[0], c[1], c[2]))
    }

    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Point3<f64> {
        Point3::new(
            self.bounds.min[0] + (ix as f64 + 0.5) * self.cell_size(0),
            self.bounds.min[1] + (iy as f64 + 0.5) * self.cell_size(1),
            self.bounds.min[2] + (iz as f64 + 0.5) * self.cell_size(2),
        )
    }

    pub fn iter_occupied(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let r = self.res;
        (0..r).flat_map(move |ix| {
            (0..r).flat_map(move |iy| {
                (0..r).filter_map(move |iz| self.get(ix, iy, iz).then_some((ix, iy, iz)))
            })
        })
    }

    /// Morphological dilation by `k` cells in the Chebyshev metric.
    pub fn dilated(&self, k: usize) -> OccupancyGrid {
        let mut out = OccupancyGrid::empty(self.res, self.bounds).unwrap();
        let r = self.res as isize;
        let k = k as isize;
        for (ix, iy, iz) in self.iter_occupied() {
            for dx in -k..=k {
                for dy in -k..=k {
                    for dz in -k..=k {
                        let (x, y, z) = (ix as isize + dx, iy as isize + dy, iz as isize + dz);
                        if x >= 0 && x < r && y >= 0 && y < r && z >= 0 && z < r {
                            out.set(x as usize, y as usize, z as usize, true);
                        }
                    }
                }
            }
        }
        out
    }

    /// True when every occupied cell of `self` is also occupied in `other`.
    pub fn subset_of(&self, other: &OccupancyGrid) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    // ── .vox serialization ──────────────────────────────────────────

    pub fn to_bytes(&self) -> Vec<u8> {
        let cells = self.cell_count();
        let payload_len = cells.div_ceil(8);
        let mut out = Vec::with_capacity(4 + 4 + 4 + 48 + payload_len);
        out.extend_from_slice(VOX_MAGIC);
        out.extend_from_slice(&VOX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.res as u32).to_le_bytes());
        for v in self.bounds.min.iter().chain(self.bounds.max.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for byte_idx in 0..payload_len {
            let word = self.words[byte_idx / 8];
            out.push(((word >> ((byte_idx % 8) * 8)) & 0xFF) as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::format("vox: truncated header"))?;
        if &magic != VOX_MAGIC {
            return Err(Error::format(format!("vox: bad magic {magic:?}")));
        }
        let version = read_u32(&mut cur)?;
        if version != VOX_VERSION {
            return Err(Error::format(format!("vox: unsupported version {version}")));
        }
        let res = read_u32(&mut cur)? as usize;
        if res == 0 {
            return Err(Error::format("vox: zero resolution"));
        }
        let mut b = [0.0f64; 6];
        for v in &mut b {
            *v = read_f64(&mut cur)?;
        }
        let bounds = Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]])
            .map_err(|e| Error::format(format!("vox: {e}")))?;
        let cells = res * res * res;
        let payload_len = cells.div_ceil(8);
        let mut payload = vec![0u8; payload_len];
        cur.read_exact(&mut payload)
            .map_err(|_| Error::format("vox: truncated payload"))?;
        if cur.position() as usize != bytes.len() {
            return Err(Error::format("vox: trailing bytes"));
        }
        let mut words = vec![0u64; cells.div_ceil(64)];
        for (i, &byte) in payload.iter().enumerate() {
            words[i / 8] |= (byte as u64) << ((i % 8) * 8);
        }
        // Bits beyond the cell count must be zero.
        let tail = cells % 64;
        if tail != 0 && words[cells / 64] >> tail != 0 {
            return Err(Error::format("vox: nonzero padding bits"));
        }
        Ok(OccupancyGrid { res, bounds, words })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_u32(cur: &mut std::io::Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)
        .map_err(|_| Error::format("vox: truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(cur: &mut std::io::Cursor<&[u8]>) -> Result<f64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b)
        .map_err(|_| Error::format("vox: truncated"))?;
    Ok(f64::from_le_bytes(b))
}
