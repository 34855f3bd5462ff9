//! Occupancy voxel grids and the planar queries derived from them.
//!
//! A [`VoxelGrid`] stores binary occupancy per (x, y, k) cell with k a
//! height-slice index; slice k covers heights [k*slice_height,
//! (k+1)*slice_height). Fusing all slices below the robot height threshold
//! yields a [`TraversabilityMap`], from which an exact Euclidean
//! [`DistanceField`] provides clearance priors for planning.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;

/// Geometry shared by all grid types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    /// Meters per planar cell.
    pub cell_size: f64,
    /// Meters per vertical slice.
    pub slice_height: f64,
    /// Robot height threshold in meters; slices at or above it are ignored
    /// by traversability fusion.
    pub z_limit: f64,
    /// World coordinates of the lower-left corner of cell (0, 0).
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub depth: usize,
}

impl GridMeta {
    pub fn new(width: usize, height: usize, depth: usize) -> Self {
        Self {
            cell_size: 0.05,
            slice_height: 0.1,
            z_limit: 0.7,
            origin: [0.0, 0.0],
            width,
            height,
            depth,
        }
    }

    /// Number of height slices strictly below `z_limit`.
    ///
    /// Guarded against cases like 0.7/0.1 rounding down to 6 in f64.
    pub fn slices_below_limit(&self) -> usize {
        let n = (self.z_limit / self.slice_height + 1e-9).floor() as usize;
        n.min(self.depth)
    }

    /// Planar cell index of a world point, if inside the map.
    pub fn cell_of(&self, p: Vector2<f64>) -> Option<(usize, usize)> {
        let gx = ((p.x - self.origin[0]) / self.cell_size).floor();
        let gy = ((p.y - self.origin[1]) / self.cell_size).floor();
        if gx < 0.0 || gy < 0.0 || gx >= self.width as f64 || gy >= self.height as f64 {
            None
        } else {
            Some((gx as usize, gy as usize))
        }
    }

    /// World coordinates of a cell center.
    pub fn center_of(&self, x: usize, y: usize) -> Vector2<f64> {
        Vector2::new(
            self.origin[0] + (x as f64 + 0.5) * self.cell_size,
            self.origin[1] + (y as f64 + 0.5) * self.cell_size,
        )
    }

    /// World-frame extent as [min_x, min_y, max_x, max_y].
    pub fn bounds(&self) -> [f64; 4] {
        [
            self.origin[0],
            self.origin[1],
            self.origin[0] + self.width as f64 * self.cell_size,
            self.origin[1] + self.height as f64 * self.cell_size,
        ]
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        self.cell_of(p).is_some()
    }
}

/// Binary 3D occupancy, bit-packed with x fastest, then y, then k.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub meta: GridMeta,
    bits: Vec<u8>,
}

impl VoxelGrid {
    pub fn new(meta: GridMeta) -> Self {
        let n = meta.width * meta.height * meta.depth;
        Self {
            meta,
            bits: vec![0u8; n.div_ceil(8)],
        }
    }

    fn linear(&self, x: usize, y: usize, k: usize) -> usize {
        debug_assert!(x < self.meta.width && y < self.meta.height && k < self.meta.depth);
        x + self.meta.width * (y + self.meta.height * k)
    }

    pub fn get(&self, x: usize, y: usize, k: usize) -> bool {
        let i = self.linear(x, y, k);
        self.bits[i >> 3] & (1 << (i & 7)) != 0
    }

    pub fn set(&mut self, x: usize, y: usize, k: usize, occupied: bool) {
        let i = self.linear(x, y, k);
        if occupied {
            self.bits[i >> 3] |= 1 << (i & 7);
        } else {
            self.bits[i >> 3] &= !(1 << (i & 7));
        }
    }

    pub fn packed_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Writes the grid in the OCCGRID v1 format: a single ASCII header line
    /// `OCCGRID v1 W H D cell_size slice_height z_limit origin_x origin_y`
    /// followed by the packed occupancy bits (8 voxels per byte, LSB first).
    pub fn write_occgrid<W: Write>(&self, w: &mut W) -> Result<()> {
        let m = &self.meta;
        writeln!(
            w,
            "OCCGRID v1 {} {} {} {} {} {} {} {}",
            m.width, m.height, m.depth, m.cell_size, m.slice_height, m.z_limit, m.origin[0], m.origin[1]
        )?;
        w.write_all(&self.bits)?;
        Ok(())
    }

    pub fn read_occgrid<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 10 || fields[0] != "OCCGRID" || fields[1] != "v1" {
            return Err(Error::Parse(format!("bad OCCGRID header: {header:?}")));
        }
        let dim = |i: usize| -> Result<usize> {
            fields[i]
                .parse()
                .map_err(|_| Error::Parse(format!("bad integer field {:?}", fields[i])))
        };
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Parse(format!("bad float field {:?}", fields[i])))
        };
        let meta = GridMeta {
            width: dim(2)?,
            height: dim(3)?,
            depth: dim(4)?,
            cell_size: num(5)?,
            slice_height: num(6)?,
            z_limit: num(7)?,
            origin: [num(8)?, num(9)?],
        };
        let n = meta.width * meta.height * meta.depth;
        let mut bits = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut bits)?;
        Ok(Self { meta, bits })
    }

    pub fn save<P: AsRef<FsPath>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_occgrid(&mut w)
    }

    pub fn load<P: AsRef<FsPath>>(path: P) -> Result<Self> {
        Self::read_occgrid(std::fs::File::open(path)?)
    }

    /// JSON debug form with an explicit 0/1 array, x fastest, then y, then k.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let m = &self.meta;
        let n = m.width * m.height * m.depth;
        let cells: Vec<u8> = (0..n)
            .map(|i| (self.bits[i >> 3] >> (i & 7)) & 1)
            .collect();
        serde_json::json!({
            "width": m.width,
            "height": m.height,
            "depth": m.depth,
            "cell_size": m.cell_size,
            "slice_height": m.slice_height,
            "z_limit": m.z_limit,
            "origin": m.origin,
            "cells": cells,
        })
    }

    pub fn from_debug_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct DebugForm {
            width: usize,
            height: usize,
            depth: usize,
            cell_size: f64,
            slice_height: f64,
            z_limit: f64,
            origin: [f64; 2],
            cells: Vec<u8>,
        }
        let d: DebugForm = serde_json::from_value(v.clone())?;
        let meta = GridMeta {
            cell_size: d.cell_size,
            slice_height: d.slice_height,
            z_limit: d.z_limit,
            origin: d.origin,
            width: d.width,
            height: d.height,
            depth: d.depth,
        };
        let n = meta.width * meta.height * meta.depth;
        if d.cells.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: d.cells.len(),
            });
        }
        let mut g = Self::new(meta);
        for (i, &c) in d.cells.iter().enumerate() {
            if c > 1 {
                return Err(Error::Parse(format!("cell value {c} not in {{0, 1}}")));
            }
            if c == 1 {
                g.bits[i >> 3] |= 1 << (i & 7);
            }
        }
        Ok(g)
    }
}

/// 2D map of cells blocked by any occupied voxel below the height threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversabilityMap {
    pub meta: GridMeta,
    blocked: Vec<bool>,
}

impl TraversabilityMap {
    pub fn new(meta: GridMeta) -> Self {
        let n = meta.width * meta.height;
        Self {
            meta,
            blocked: vec![false; n],
        }
    }

    pub fn from_cells(meta: GridMeta, blocked: Vec<bool>) -> Result<Self> {
        let n = meta.width * meta.height;
        if blocked.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: blocked.len(),
            });
        }
        Ok(Self { meta, blocked })
    }

    pub fn blocked(&self, x: usize, y: usize) -> bool {
        self.blocked[x + self.meta.width * y]
    }

    pub fn set_blocked(&mut self, x: usize, y: usize, v: bool) {
        self.blocked[x + self.meta.width * y] = v;
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }
}

/// Per-cell Euclidean distance in meters to the nearest blocked cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub meta: GridMeta,
    values: Vec<f64>,
}

impl DistanceField {
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[x + self.meta.width * y]
    }

    /// Distance at the cell containing a world point; `None` outside the map.
    pub fn at_point(&self, p: Vector2<f64>) -> Option<f64> {
        self.meta.cell_of(p).map(|(x, y)| self.value(x, y))
    }
}

/// Fuses all height slices strictly below `z_limit` with an element-wise OR.
pub fn fuse_traversability(voxels: &VoxelGrid) -> TraversabilityMap {
    let meta = voxels.meta;
    let n_slices = meta.slices_below_limit();
    let mut out = TraversabilityMap::new(meta);
    for k in 0..n_slices {
        for y in 0..meta.height {
            for x in 0..meta.width {
                if voxels.get(x, y, k) {
                    out.set_blocked(x, y, true);
                }
            }
        }
    }
    out
}

/// Exact 2D Euclidean distance transform, scaled to meters and clamped.
///
/// Two-pass separable lower-envelope transform on integer squared
/// distances, so results match the brute-force nearest-blocked-cell
/// distance bit for bit.
pub fn distance_field(trav: &TraversabilityMap, cap: f64) -> Result<DistanceField> {
    if cap <= 0.0 {
        return Err(Error::Domain(format!("cap must be positive, got {cap}")));
    }
    let meta = trav.meta;
    let (w, h) = (meta.width, meta.height);
    let mut sq = vec![f64::INFINITY; w * h];
    for y in 0..h {
        for x in 0..w {
            if trav.blocked(x, y) {
                sq[x + w * y] = 0.0;
            }
        }
    }

    // Columns, then rows.
    let mut f = vec![0.0; h.max(w)];
    let mut d = vec![0.0; h.max(w)];
    let mut v = vec![0usize; h.max(w)];
    let mut z = vec![0.0; h.max(w) + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = sq[x + w * y];
        }
        dt_1d(&f[..h], &mut d, &mut v, &mut z);
        for y in 0..h {
            sq[x + w * y] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&sq[w * y..w * (y + 1)]);
        dt_1d(&f[..w], &mut d, &mut v, &mut z);
        sq[w * y..w * (y + 1)].copy_from_slice(&d[..w]);
    }

    let values = sq
        .iter()
        .map(|&s| {
            if s.is_finite() {
                (s.sqrt() * meta.cell_size).min(cap)
            } else {
                cap
            }
        })
        .collect();
    Ok(DistanceField { meta, values })
}

/// 1D squared-distance lower envelope (Felzenszwalb-Huttenlocher).
fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        loop {
            let p = v[k];
            let s = if f[p] == f64::INFINITY {
                f64::NEG_INFINITY
            } else {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * q - 2 * p) as f64
            };
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        d[q] = if f[p] == f64::INFINITY {
            f64::INFINITY
        } else {
            ((q as i64 - p as i64) * (q as i64 - p as i64)) as f64 + f[p]
        };
    }
}

/// Relative tolerance for deciding that a segment passes exactly through a
/// cell corner; such crossings visit both side cells so diagonal obstacle
/// pairs cannot be cut.
const CORNER_TIE_EPS: f64 = 1e-12;

/// Visits every cell touched by the segment a-b (its supercover), in order.
/// The visitor returns `false` to stop early; the function then returns
/// `false` as well.
pub fn supercover_visit(
    meta: &GridMeta,
    a: Vector2<f64>,
    b: Vector2<f64>,
    mut visit: impl FnMut(usize, usize) -> bool,
) -> Result<bool> {
    let (ax, ay) = meta
        .cell_of(a)
        .ok_or(Error::OutOfBounds { x: a.x, y: a.y })?;
    let (bx, by) = meta
        .cell_of(b)
        .ok_or(Error::OutOfBounds { x: b.x, y: b.y })?;

    if !visit(ax, ay) {
        return Ok(false);
    }
    if ax == bx && ay == by {
        return Ok(true);
    }

    // Work in grid units so step increments are uniform.
    let ga = (a - Vector2::new(meta.origin[0], meta.origin[1])) / meta.cell_size;
    let gb = (b - Vector2::new(meta.origin[0], meta.origin[1])) / meta.cell_size;
    let delta = gb - ga;
    let (mut cx, mut cy) = (ax as i64, ay as i64);
    let (ex, ey) = (bx as i64, by as i64);
    let sx: i64 = if delta.x > 0.0 { 1 } else { -1 };
    let sy: i64 = if delta.y > 0.0 { 1 } else { -1 };

    // Parameter t in [0, 1] at which the ray crosses the next x/y boundary.
    let next_boundary = |c: i64, g0: f64, d: f64, s: i64| -> f64 {
        if d == 0.0 {
            f64::INFINITY
        } else {
            let edge = if s > 0 { (c + 1) as f64 } else { c as f64 };
            (edge - g0) / d
        }
    };
    let t_delta_x = if delta.x == 0.0 { f64::INFINITY } else { 1.0 / delta.x.abs() };
    let t_delta_y = if delta.y == 0.0 { f64::INFINITY } else { 1.0 / delta.y.abs() };
    let mut t_max_x = next_boundary(cx, ga.x, delta.x, sx);
    let mut t_max_y = next_boundary(cy, ga.y, delta.y, sy);

    let max_iters = 2 * (meta.width + meta.height) + 4;
    for _ in 0..max_iters {
        if cx == ex && cy == ey {
            return Ok(true);
        }
        if (t_max_x - t_max_y).abs() <= CORNER_TIE_EPS {
            // Corner crossing: all four cells sharing the corner are touched.
            let (nx, ny) = (cx + sx, cy + sy);
            if !visit(nx as usize, cy as usize) {
                return Ok(false);
            }
            if !visit(cx as usize, ny as usize) {
                return Ok(false);
            }
            cx = nx;
            cy = ny;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
            if !visit(cx as usize, cy as usize) {
                return Ok(false);
            }
        } else if t_max_x < t_max_y {
            cx += sx;
            t_max_x += t_delta_x;
            if !visit(cx as usize, cy as usize) {
                return Ok(false);
            }
        } else {
            cy += sy;
            t_max_y += t_delta_y;
            if !visit(cx as usize, cy as usize) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// True iff no supercover cell of the segment a-b is blocked.
pub fn line_of_sight(trav: &TraversabilityMap, a: Vector2<f64>, b: Vector2<f64>) -> Result<bool> {
    supercover_visit(&trav.meta, a, b, |x, y| !trav.blocked(x, y))
}

/// Egocentric crop extents in the robot frame: x forward.
pub const CROP_X_MIN: f64 = -2.0;
pub const CROP_X_MAX: f64 = 4.0;
pub const CROP_Y_MIN: f64 = -2.0;
pub const CROP_Y_MAX: f64 = 2.0;

/// Agent-centered resample of the world grid covering x in [-2, 4] m and
/// y in [-2, 2] m in the robot frame, all slices. Each crop voxel takes the
/// value of the world voxel whose center it maps onto; voxels falling
/// outside the world grid are free (0).
pub fn crop_egocentric(voxels: &VoxelGrid, pose: &Pose) -> VoxelGrid {
    let cell = voxels.meta.cell_size;
    let nx = ((CROP_X_MAX - CROP_X_MIN) / cell).round() as usize;
    let ny = ((CROP_Y_MAX - CROP_Y_MIN) / cell).round() as usize;
    let meta = GridMeta {
        origin: [CROP_X_MIN, CROP_Y_MIN],
        width: nx,
        height: ny,
        ..voxels.meta
    };
    let mut crop = VoxelGrid::new(meta);
    let rot = pose.rotation();
    for j in 0..ny {
        for i in 0..nx {
            let local = Vector2::new(
                CROP_X_MIN + (i as f64 + 0.5) * cell,
                CROP_Y_MIN + (j as f64 + 0.5) * cell,
            );
            let world = pose.position() + rot * local;
            if let Some((wx, wy)) = voxels.meta.cell_of(world) {
                for k in 0..meta.depth {
                    if voxels.get(wx, wy, k) {
                        crop.set(i, j, k, true);
                    }
                }
            }
        }
    }
    crop
}
