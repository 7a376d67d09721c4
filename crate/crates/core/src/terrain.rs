//! Raster elevation model, line-of-sight queries and synthetic relief.
//!
//! Cells are addressed `(row, col)` with row 0 at the southern edge, so `y`
//! grows with the row index. Stored values are sampled at cell centres;
//! [`DemGrid::elevation_at`] interpolates bilinearly between them and holds
//! the edge value in the half-cell border strip.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clearance a sight line needs above terrain to count as unobstructed (km).
pub const LOS_TOLERANCE: f64 = 1e-9;

/// A point in the deployment volume, kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (other.x - self.x, other.y - self.y, other.z - self.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Row-major raster of terrain altitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemGrid {
    origin: (f64, f64),
    cell_size: f64,
    rows: usize,
    cols: usize,
    elevation: Vec<f64>,
}

impl DemGrid {
    pub fn new(
        origin: (f64, f64),
        cell_size: f64,
        rows: usize,
        cols: usize,
        elevation: Vec<f64>,
    ) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::domain(format!(
                "grid must be at least 2x2, got {rows}x{cols}"
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::domain(format!("cell size must be positive, got {cell_size}")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::domain("grid origin must be finite"));
        }
        if elevation.len() != rows * cols {
            return Err(Error::domain(format!(
                "expected {} elevation values, got {}",
                rows * cols,
                elevation.len()
            )));
        }
        if let Some(i) = elevation.iter().position(|z| !z.is_finite()) {
            return Err(Error::domain(format!("non-finite elevation at cell index {i}")));
        }
        Ok(DemGrid {
            origin,
            cell_size,
            rows,
            cols,
            elevation,
        })
    }

    /// Grid with the same altitude everywhere.
    pub fn constant(origin: (f64, f64), cell_size: f64, rows: usize, cols: usize, z: f64) -> Result<Self> {
        Self::new(origin, cell_size, rows, cols, vec![z; rows * cols])
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevation
    }

    pub fn cell(&self, row: usize, col: usize) -> f64 {
        self.elevation[row * self.cols + col]
    }

    pub fn width(&self) -> f64 {
        self.cols as f64 * self.cell_size
    }

    pub fn height(&self) -> f64 {
        self.rows as f64 * self.cell_size
    }

    pub fn max_elevation(&self) -> f64 {
        self.elevation.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_elevation(&self) -> f64 {
        self.elevation.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, y0) = self.origin;
        x >= x0 && y >= y0 && x <= x0 + self.width() && y <= y0 + self.height()
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.cell_size,
            self.origin.1 + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing `(x, y)`; points on the far edges map to the last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let c = ((x - self.origin.0) / self.cell_size).floor().max(0.0) as usize;
        let r = ((y - self.origin.1) / self.cell_size).floor().max(0.0) as usize;
        (r.min(self.rows - 1), c.min(self.cols - 1))
    }

    /// Bilinear interpolation of the surrounding cell-centre elevations.
    pub fn elevation_at(&self, x: f64, y: f64) -> Result<f64> {
        if !(x.is_finite() && y.is_finite()) || !self.contains(x, y) {
            return Err(Error::domain(format!("point ({x}, {y}) lies outside the grid")));
        }
        let u = ((x - self.origin.0) / self.cell_size - 0.5).clamp(0.0, (self.cols - 1) as f64);
        let v = ((y - self.origin.1) / self.cell_size - 0.5).clamp(0.0, (self.rows - 1) as f64);
        let c0 = (u.floor() as usize).min(self.cols - 2);
        let r0 = (v.floor() as usize).min(self.rows - 2);
        let fu = u - c0 as f64;
        let fv = v - r0 as f64;
        let z00 = self.cell(r0, c0);
        let z01 = self.cell(r0, c0 + 1);
        let z10 = self.cell(r0 + 1, c0);
        let z11 = self.cell(r0 + 1, c0 + 1);
        let south = z00 + (z01 - z00) * fu;
        let north = z10 + (z11 - z10) * fu;
        Ok(south + (north - south) * fv)
    }

    fn check_endpoint(&self, p: &Point3, name: &str) -> Result<f64> {
        if !p.is_finite() {
            return Err(Error::domain(format!("{name} has non-finite coordinates")));
        }
        let ground = self.elevation_at(p.x, p.y)?;
        if p.z < ground - LOS_TOLERANCE {
            return Err(Error::domain(format!(
                "{name} at altitude {} lies below terrain ({ground})",
                p.z
            )));
        }
        Ok(ground)
    }

    /// Terrain visibility between two points.
    ///
    /// Walks the Bresenham cells of the horizontal projection and requires the
    /// segment to clear the stored elevation of every interior cell. The two
    /// endpoint cells are skipped. Endpoints are put in a canonical order first
    /// so the answer does not depend on argument order.
    pub fn line_of_sight(&self, a: &Point3, b: &Point3) -> Result<bool> {
        self.check_endpoint(a, "first endpoint")?;
        self.check_endpoint(b, "second endpoint")?;
        let ca = self.cell_of(a.x, a.y);
        let cb = self.cell_of(b.x, b.y);
        if ca == cb {
            return Ok(true);
        }
        let (p, q, cp, cq) = if canonical_first(ca, a, cb, b) {
            (a, b, ca, cb)
        } else {
            (b, a, cb, ca)
        };
        let dx = q.x - p.x;
        let dy = q.y - p.y;
        let len2 = dx * dx + dy * dy;

        let mut visible = true;
        bresenham(cp, cq, |r, c| {
            if (r, c) == cp || (r, c) == cq {
                return true;
            }
            let (cx, cy) = self.cell_center(r, c);
            let t = if len2 > 0.0 {
                (((cx - p.x) * dx + (cy - p.y) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let ray = (1.0 - t) * p.z + t * q.z;
            if ray <= self.cell(r, c) + LOS_TOLERANCE {
                visible = false;
            }
            visible
        });
        Ok(visible)
    }

    /// Reads an ESRI ASCII grid. Cells equal to `NODATA_value` are rejected.
    pub fn read_esri_ascii(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_esri_ascii(&text, &path.display().to_string())
    }

    pub fn parse_esri_ascii(text: &str, source_name: &str) -> Result<Self> {
        let mut ncols = None;
        let mut nrows = None;
        let mut xll = None;
        let mut yll = None;
        let mut centered = false;
        let mut cellsize = None;
        let mut nodata: Option<f64> = None;

        let mut lines = text.lines().enumerate().peekable();
        while let Some(&(idx, line)) = lines.peek() {
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else {
                lines.next();
                continue;
            };
            if key.parse::<f64>().is_ok() {
                break;
            }
            let value = parts
                .next()
                .ok_or_else(|| Error::parse(source_name, idx + 1, format!("missing value for `{key}`")))?;
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(source_name, idx + 1, format!("bad number `{v}`")))
            };
            match key.to_ascii_lowercase().as_str() {
                "ncols" => ncols = Some(num(value)? as usize),
                "nrows" => nrows = Some(num(value)? as usize),
                "xllcorner" => xll = Some(num(value)?),
                "yllcorner" => yll = Some(num(value)?),
                "xllcenter" => {
                    xll = Some(num(value)?);
                    centered = true;
                }
                "yllcenter" => {
                    yll = Some(num(value)?);
                    centered = true;
                }
                "cellsize" => cellsize = Some(num(value)?),
                "nodata_value" => nodata = Some(num(value)?),
                other => {
                    return Err(Error::parse(source_name, idx + 1, format!("unknown header key `{other}`")))
                }
            }
            lines.next();
        }
        let missing = |k: &str| Error::parse(source_name, 1, format!("missing header `{k}`"));
        let ncols = ncols.ok_or_else(|| missing("ncols"))?;
        let nrows = nrows.ok_or_else(|| missing("nrows"))?;
        let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
        let mut x0 = xll.ok_or_else(|| missing("xllcorner"))?;
        let mut y0 = yll.ok_or_else(|| missing("yllcorner"))?;
        if centered {
            x0 -= 0.5 * cellsize;
            y0 -= 0.5 * cellsize;
        }

        // File rows run north to south.
        let mut file_rows: Vec<Vec<f64>> = Vec::with_capacity(nrows);
        let mut pending: Vec<f64> = Vec::with_capacity(ncols);
        for (idx, line) in lines {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(source_name, idx + 1, format!("bad number `{tok}`")))?;
                if nodata == Some(v) {
                    return Err(Error::parse(source_name, idx + 1, "NODATA cell in elevation grid"));
                }
                if !v.is_finite() {
                    return Err(Error::parse(source_name, idx + 1, "non-finite elevation"));
                }
                pending.push(v);
                if pending.len() == ncols {
                    file_rows.push(std::mem::replace(&mut pending, Vec::with_capacity(ncols)));
                }
            }
        }
        if file_rows.len() != nrows || !pending.is_empty() {
            return Err(Error::parse(
                source_name,
                text.lines().count(),
                format!("expected {nrows}x{ncols} values"),
            ));
        }
        let elevation: Vec<f64> = file_rows.into_iter().rev().flatten().collect();
        Self::new((x0, y0), cellsize, nrows, ncols, elevation)
    }

    pub fn to_esri_ascii(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ncols {}", self.cols);
        let _ = writeln!(out, "nrows {}", self.rows);
        let _ = writeln!(out, "xllcorner {}", self.origin.0);
        let _ = writeln!(out, "yllcorner {}", self.origin.1);
        let _ = writeln!(out, "cellsize {}", self.cell_size);
        let _ = writeln!(out, "NODATA_value -9999");
        for r in (0..self.rows).rev() {
            let row = &self.elevation[r * self.cols..(r + 1) * self.cols];
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write_esri_ascii(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_esri_ascii()).map_err(|e| Error::io(path, e))
    }
}

fn canonical_first(ca: (usize, usize), a: &Point3, cb: (usize, usize), b: &Point3) -> bool {
    match ca.cmp(&cb) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a
            .x
            .total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(a.z.total_cmp(&b.z))
            .is_le(),
    }
}

/// Integer Bresenham walk from `from` to `to` inclusive. The visitor returns
/// `false` to stop early.
fn bresenham(from: (usize, usize), to: (usize, usize), mut visit: impl FnMut(usize, usize) -> bool) {
    let (mut r, mut c) = (from.0 as i64, from.1 as i64);
    let (r1, c1) = (to.0 as i64, to.1 as i64);
    let dc = (c1 - c).abs();
    let dr = -(r1 - r).abs();
    let sc = if c < c1 { 1 } else { -1 };
    let sr = if r < r1 { 1 } else { -1 };
    let mut err = dc + dr;
    loop {
        if !visit(r as usize, c as usize) {
            return;
        }
        if r == r1 && c == c1 {
            return;
        }
        let e2 = 2 * err;
        if e2 >= dr {
            err += dr;
            c += sc;
        }
        if e2 <= dc {
            err += dc;
            r += sr;
        }
    }
}

/// Parameters for [`generate_terrain`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub roughness: f64,
    pub max_height: f64,
}

impl Default for TerrainParams {
    /// 50 km x 50 km at 256 x 256 cells with up to 1.5 km of relief.
    fn default() -> Self {
        TerrainParams {
            rows: 256,
            cols: 256,
            cell_size: 50.0 / 256.0,
            roughness: 0.55,
            max_height: 1.5,
        }
    }
}

/// Deterministic diamond-square relief rescaled onto `[0, max_height]`.
pub fn generate_terrain(seed: u64, params: &TerrainParams) -> Result<DemGrid> {
    let TerrainParams {
        rows,
        cols,
        cell_size,
        roughness,
        max_height,
    } = *params;
    if rows < 3 || cols < 3 {
        return Err(Error::domain("terrain needs at least 3 rows and 3 columns"));
    }
    if !(roughness > 0.0 && roughness <= 1.0) {
        return Err(Error::domain(format!("roughness must be in (0, 1], got {roughness}")));
    }
    if !(max_height.is_finite() && max_height > 0.0) {
        return Err(Error::domain(format!("max height must be positive, got {max_height}")));
    }

    let n = (rows.max(cols) - 1).next_power_of_two() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![0.0f64; n * n];
    let idx = |r: usize, c: usize| r * n + c;
    for &(r, c) in &[(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)] {
        h[idx(r, c)] = rng.random_range(-1.0..1.0);
    }

    let mut step = n - 1;
    let mut amp = 1.0;
    while step > 1 {
        let half = step / 2;
        // diamond
        for r in (half..n).step_by(step) {
            for c in (half..n).step_by(step) {
                let avg = (h[idx(r - half, c - half)]
                    + h[idx(r - half, c + half)]
                    + h[idx(r + half, c - half)]
                    + h[idx(r + half, c + half)])
                    / 4.0;
                h[idx(r, c)] = avg + amp * rng.random_range(-1.0..1.0);
            }
        }
        // square
        for r in (0..n).step_by(half) {
            let start = if (r / half) % 2 == 0 { half } else { 0 };
            for c in (start..n).step_by(step) {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                if r >= half {
                    sum += h[idx(r - half, c)];
                    cnt += 1.0;
                }
                if r + half < n {
                    sum += h[idx(r + half, c)];
                    cnt += 1.0;
                }
                if c >= half {
                    sum += h[idx(r, c - half)];
                    cnt += 1.0;
                }
                if c + half < n {
                    sum += h[idx(r, c + half)];
                    cnt += 1.0;
                }
                h[idx(r, c)] = sum / cnt + amp * rng.random_range(-1.0..1.0);
            }
        }
        amp *= roughness;
        step = half;
    }

    let mut cropped = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        cropped.extend_from_slice(&h[r * n..r * n + cols]);
    }
    let lo = cropped.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cropped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for z in &mut cropped {
        *z = ((*z - lo) / span * max_height).clamp(0.0, max_height);
    }
    DemGrid::new((0.0, 0.0), cell_size, rows, cols, cropped)
}
