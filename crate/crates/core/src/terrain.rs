//! Digital elevation model grids: parsing, synthesis, sampling, serialization.
//!
//! A [`DemGrid`] is a regular grid of elevations above mean sea level on a
//! flat-earth tangent plane, square cells, row 0 stored northernmost. The
//! same type serves as "truth terrain" for sensor emulation and as the
//! on-board DEM read by the measurement predictors.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, StreamId};

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("point ({x}, {y}) is outside the DEM extent")]
    OutOfBounds { x: f64, y: f64 },
    #[error("nodata cell at sample point ({x}, {y})")]
    NoData { x: f64, y: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: invalid value: {msg}")]
    InvalidValue { line: usize, msg: String },
    #[error("invalid grid: {0}")]
    Invalid(String),
}

/// Regular-grid terrain elevations with a south-west origin.
#[derive(Clone, Debug, PartialEq)]
pub struct DemGrid {
    x_origin: f64,
    y_origin: f64,
    cell: f64,
    n_cols: usize,
    n_rows: usize,
    /// Row-major, row 0 = northernmost.
    elev: Vec<f64>,
    nodata: f64,
}

impl DemGrid {
    pub fn new(
        x_origin: f64,
        y_origin: f64,
        cell: f64,
        n_cols: usize,
        n_rows: usize,
        elev: Vec<f64>,
        nodata: f64,
    ) -> Result<Self, TerrainError> {
        if !(cell > 0.0) || !cell.is_finite() {
            return Err(TerrainError::Invalid(format!("cell size {cell} must be > 0")));
        }
        if n_cols < 2 || n_rows < 2 {
            return Err(TerrainError::Invalid(format!(
                "grid must be at least 2x2, got {n_cols}x{n_rows}"
            )));
        }
        if elev.len() != n_cols * n_rows {
            return Err(TerrainError::Invalid(format!(
                "elevation length {} does not match {n_cols}x{n_rows}",
                elev.len()
            )));
        }
        if elev.iter().any(|z| *z != nodata && !z.is_finite()) {
            return Err(TerrainError::Invalid("non-finite elevation".into()));
        }
        Ok(Self { x_origin, y_origin, cell, n_cols, n_rows, elev, nodata })
    }

    pub fn x_origin(&self) -> f64 {
        self.x_origin
    }

    pub fn y_origin(&self) -> f64 {
        self.y_origin
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn extent_x(&self) -> f64 {
        (self.n_cols - 1) as f64 * self.cell
    }

    pub fn extent_y(&self) -> f64 {
        (self.n_rows - 1) as f64 * self.cell
    }

    pub fn x_max(&self) -> f64 {
        self.x_origin + self.extent_x()
    }

    pub fn y_max(&self) -> f64 {
        self.y_origin + self.extent_y()
    }

    /// Node elevation by column and row counted from the south edge.
    pub fn node_z(&self, col: usize, row_south: usize) -> f64 {
        debug_assert!(col < self.n_cols && row_south < self.n_rows);
        self.elev[(self.n_rows - 1 - row_south) * self.n_cols + col]
    }

    pub fn is_nodata(&self, z: f64) -> bool {
        z == self.nodata
    }

    /// World coordinates of a node (column, row from south).
    pub fn node_xy(&self, col: usize, row_south: usize) -> (f64, f64) {
        (
            self.x_origin + col as f64 * self.cell,
            self.y_origin + row_south as f64 * self.cell,
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_origin && x <= self.x_max() && y >= self.y_origin && y <= self.y_max()
    }

    /// Cell index and in-cell fractions for a point inside the extent.
    /// Points on the east/north edges map into the last cell with u/v = 1.
    pub(crate) fn locate(&self, x: f64, y: f64) -> Result<(usize, usize, f64, f64), TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        let fx = (x - self.x_origin) / self.cell;
        let fy = (y - self.y_origin) / self.cell;
        let i = (fx.floor() as usize).min(self.n_cols - 2);
        let j = (fy.floor() as usize).min(self.n_rows - 2);
        Ok((i, j, fx - i as f64, fy - j as f64))
    }

    /// Corner elevations of cell (i, j): (sw, se, nw, ne).
    pub(crate) fn cell_corners(
        &self,
        i: usize,
        j: usize,
        x: f64,
        y: f64,
    ) -> Result<(f64, f64, f64, f64), TerrainError> {
        let sw = self.node_z(i, j);
        let se = self.node_z(i + 1, j);
        let nw = self.node_z(i, j + 1);
        let ne = self.node_z(i + 1, j + 1);
        if self.is_nodata(sw) || self.is_nodata(se) || self.is_nodata(nw) || self.is_nodata(ne) {
            return Err(TerrainError::NoData { x, y });
        }
        Ok((sw, se, nw, ne))
    }

    /// Minimum and maximum elevation over non-nodata nodes.
    pub fn z_range(&self) -> Option<(f64, f64)> {
        let mut range = None;
        for &z in &self.elev {
            if self.is_nodata(z) {
                continue;
            }
            range = Some(match range {
                None => (z, z),
                Some((lo, hi)) => (z.min(lo), z.max(hi)),
            });
        }
        range
    }

    pub fn nodata_count(&self) -> usize {
        self.elev.iter().filter(|z| self.is_nodata(**z)).count()
    }
}

/// Bilinear interpolation of the four nodes around (x, y).
///
/// Exact at nodes and on planar fields; this is the continuous surface used
/// by the altimeter channel and by altitude bookkeeping.
pub fn sample_bilinear(dem: &DemGrid, x: f64, y: f64) -> Result<f64, TerrainError> {
    let (i, j, u, v) = dem.locate(x, y)?;
    let (sw, se, nw, ne) = dem.cell_corners(i, j, x, y)?;
    Ok(sw * (1.0 - u) * (1.0 - v) + se * u * (1.0 - v) + nw * (1.0 - u) * v + ne * u * v)
}

/// Terrain generator selector for [`synth_terrain`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainKind {
    pub kind: TerrainClass,
    pub seed: u64,
    pub extent_m: f64,
    pub base_elevation_m: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainClass {
    Rugged,
    Flat,
}

struct Hill {
    cx: f64,
    cy: f64,
    amp: f64,
    sigma: f64,
}

/// Deterministic synthetic terrain.
///
/// Rugged grids combine two-axis sinusoids (guaranteed relief) with seeded
/// Gaussian hills; flat grids are a gentle seeded slope plus a few metres of
/// undulation. Pure function of its arguments.
pub fn synth_terrain(kind: &TerrainKind, cell: f64, n_cols: usize, n_rows: usize) -> DemGrid {
    assert!(cell > 0.0 && n_cols >= 2 && n_rows >= 2, "invalid synth grid shape");
    let ext_x = (n_cols - 1) as f64 * cell;
    let ext_y = (n_rows - 1) as f64 * cell;
    let mut rng = stream(kind.seed, StreamId::Terrain, u64::from(kind.kind == TerrainClass::Flat));
    let base = kind.base_elevation_m;

    let mut elev = vec![0.0; n_cols * n_rows];
    match kind.kind {
        TerrainClass::Flat => {
            // Slope well under the 0.5% cap, undulation under 5 m peak-to-peak.
            let dir = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            let slope = 5.0e-4;
            let (sx, sy) = (slope * dir.cos(), slope * dir.sin());
            let lx = rng.random_range(2500.0..4000.0);
            let ly = rng.random_range(2500.0..4000.0);
            let (px, py) = (rng.random_range(0.0..6.0), rng.random_range(0.0..6.0));
            for r in 0..n_rows {
                let y = (n_rows - 1 - r) as f64 * cell;
                for c in 0..n_cols {
                    let x = c as f64 * cell;
                    let tau = std::f64::consts::TAU;
                    let z = base
                        + sx * x
                        + sy * y
                        + 2.0 * (tau * x / lx + px).sin() * (tau * y / ly + py).cos();
                    elev[r * n_cols + c] = z;
                }
            }
        }
        TerrainClass::Rugged => {
            let lx = rng.random_range(2500.0..4000.0);
            let ly = rng.random_range(2500.0..4000.0);
            let (px, py) = (rng.random_range(0.0..6.0), rng.random_range(0.0..6.0));
            let area_km2 = ext_x * ext_y / 1.0e6;
            let n_hills = ((area_km2 * 0.5) as usize).max(12);
            let hills: Vec<Hill> = (0..n_hills)
                .map(|_| {
                    let amp_mag = rng.random_range(40.0..150.0);
                    let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                    Hill {
                        cx: rng.random_range(0.0..ext_x),
                        cy: rng.random_range(0.0..ext_y),
                        amp: sign * amp_mag,
                        sigma: rng.random_range(200.0..700.0),
                    }
                })
                .collect();

            let tau = std::f64::consts::TAU;
            for r in 0..n_rows {
                let y = (n_rows - 1 - r) as f64 * cell;
                for c in 0..n_cols {
                    let x = c as f64 * cell;
                    elev[r * n_cols + c] = base
                        + 100.0 * (tau * x / lx + px).sin()
                        + 100.0 * (tau * y / ly + py).sin();
                }
            }
            // Hills contribute only within 4 sigma of their center.
            for h in &hills {
                let reach = 4.0 * h.sigma;
                let c0 = (((h.cx - reach) / cell).floor().max(0.0)) as usize;
                let c1 = (((h.cx + reach) / cell).ceil() as usize).min(n_cols - 1);
                let j0 = (((h.cy - reach) / cell).floor().max(0.0)) as usize;
                let j1 = (((h.cy + reach) / cell).ceil() as usize).min(n_rows - 1);
                let inv2s2 = 0.5 / (h.sigma * h.sigma);
                for j in j0..=j1 {
                    let y = j as f64 * cell;
                    let r = n_rows - 1 - j;
                    for c in c0..=c1 {
                        let x = c as f64 * cell;
                        let d2 = (x - h.cx).powi(2) + (y - h.cy).powi(2);
                        elev[r * n_cols + c] += h.amp * (-d2 * inv2s2).exp();
                    }
                }
            }
        }
    }

    DemGrid::new(0.0, 0.0, cell, n_cols, n_rows, elev, -9999.0)
        .expect("synthesized grid is valid")
}

const HEADER_KEYS: [&str; 6] = [
    "ncols",
    "nrows",
    "xllcorner",
    "yllcorner",
    "cellsize",
    "NODATA_value",
];

/// Parse the six-line ASCII grid header plus north-first data rows.
pub fn parse_ascii_grid(text: &str) -> Result<DemGrid, TerrainError> {
    let mut lines = text.lines().enumerate();
    let mut header = [0.0f64; 6];
    for (idx, key) in HEADER_KEYS.iter().enumerate() {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| TerrainError::Parse {
                line: idx + 1,
                msg: format!("missing header line `{key}`"),
            })?;
        let mut parts = line.split_whitespace();
        let got_key = parts.next().ok_or_else(|| TerrainError::Parse {
            line: line_no + 1,
            msg: format!("empty line, expected `{key}`"),
        })?;
        if !got_key.eq_ignore_ascii_case(key) {
            return Err(TerrainError::Parse {
                line: line_no + 1,
                msg: format!("expected header key `{key}`, got `{got_key}`"),
            });
        }
        let value = parts.next().ok_or_else(|| TerrainError::Parse {
            line: line_no + 1,
            msg: format!("missing value for `{key}`"),
        })?;
        if parts.next().is_some() {
            return Err(TerrainError::Parse {
                line: line_no + 1,
                msg: format!("trailing tokens after `{key}`"),
            });
        }
        header[idx] = value.parse::<f64>().map_err(|e| TerrainError::Parse {
            line: line_no + 1,
            msg: format!("bad value for `{key}`: {e}"),
        })?;
    }

    let n_cols = header[0];
    let n_rows = header[1];
    if n_cols.fract() != 0.0 || n_rows.fract() != 0.0 {
        return Err(TerrainError::InvalidValue {
            line: 1,
            msg: "ncols/nrows must be integers".into(),
        });
    }
    if n_cols < 2.0 || n_rows < 2.0 {
        return Err(TerrainError::InvalidValue {
            line: 1,
            msg: format!("grid must be at least 2x2, got {n_cols}x{n_rows}"),
        });
    }
    let (n_cols, n_rows) = (n_cols as usize, n_rows as usize);
    let cell = header[4];
    if !(cell > 0.0) {
        return Err(TerrainError::InvalidValue {
            line: 5,
            msg: format!("cellsize {cell} must be > 0"),
        });
    }
    let nodata = header[5];

    let mut elev = Vec::with_capacity(n_cols * n_rows);
    let mut rows_read = 0usize;
    for (line_no, line) in &mut lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows_read == n_rows {
            return Err(TerrainError::Parse {
                line: line_no + 1,
                msg: format!("extra data row, expected {n_rows} rows"),
            });
        }
        let mut count = 0usize;
        for token in line.split_whitespace() {
            let z = token.parse::<f64>().map_err(|e| TerrainError::Parse {
                line: line_no + 1,
                msg: format!("bad elevation `{token}`: {e}"),
            })?;
            if z != nodata && !z.is_finite() {
                return Err(TerrainError::InvalidValue {
                    line: line_no + 1,
                    msg: format!("non-finite elevation `{token}`"),
                });
            }
            elev.push(z);
            count += 1;
        }
        if count != n_cols {
            return Err(TerrainError::Parse {
                line: line_no + 1,
                msg: format!("row has {count} values, expected {n_cols}"),
            });
        }
        rows_read += 1;
    }
    if rows_read != n_rows {
        return Err(TerrainError::Parse {
            line: text.lines().count(),
            msg: format!("got {rows_read} data rows, expected {n_rows}"),
        });
    }

    DemGrid::new(header[2], header[3], cell, n_cols, n_rows, elev, nodata)
}

/// Serialize such that `parse_ascii_grid` reconstructs an equal grid.
/// Floats use shortest round-trip formatting.
pub fn serialize_ascii_grid(dem: &DemGrid) -> String {
    let mut out = String::with_capacity(dem.elev.len() * 8 + 128);
    out.push_str(&format!("ncols {}\n", dem.n_cols));
    out.push_str(&format!("nrows {}\n", dem.n_rows));
    out.push_str(&format!("xllcorner {}\n", dem.x_origin));
    out.push_str(&format!("yllcorner {}\n", dem.y_origin));
    out.push_str(&format!("cellsize {}\n", dem.cell));
    out.push_str(&format!("NODATA_value {}\n", dem.nodata));
    for row in dem.elev.chunks(dem.n_cols) {
        let mut first = true;
        for z in row {
            if !first {
                out.push(' ');
            }
            out.push_str(&format!("{z}"));
            first = false;
        }
        out.push('\n');
    }
    out
}
