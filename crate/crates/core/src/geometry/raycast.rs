//! First-hit raycasting against a triangulated DEM.
//!
//! Each grid cell is split into two triangles along the fixed SW-NE
//! diagonal; that piecewise-planar surface is the geometry every caster in
//! this module intersects. The traversal variant walks cells front-to-back
//! with a 2-D DDA and runs ray-triangle tests per cell, which guarantees the
//! first facing surface. The bisection variant marches along the ray in
//! half-cell steps until the height difference changes sign, then bisects
//! the bracket; the coarse march is what provides the first-surface
//! stopping criterion.

use thiserror::Error;

use super::{ray_triangle_intersect, Hit, Ray, Triangle, Vec3};
use crate::terrain::{DemGrid, TerrainError};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum RaycastMethod {
    Triangles,
    Bisection,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Error)]
pub enum RaycastError {
    #[error("no hit within range")]
    NoHit,
    #[error("ray left the DEM extent")]
    OutOfBounds,
}

/// Bisection refinement tolerance along the ray, metres.
const BISECT_TOL: f64 = 1e-3;
/// Below this horizontal direction magnitude a ray is treated as vertical.
const VERTICAL_EPS: f64 = 1e-12;

/// Height of the triangulated surface at (x, y).
///
/// This is the continuous surface the point-cloud channel lives on; the
/// altimeter channel uses [`crate::terrain::sample_bilinear`] instead. The
/// two agree exactly on planar cells.
pub fn surface_z(dem: &DemGrid, x: f64, y: f64) -> Result<f64, TerrainError> {
    let (i, j, u, v) = dem.locate(x, y)?;
    let (sw, se, nw, ne) = dem.cell_corners(i, j, x, y)?;
    Ok(if u >= v {
        sw + u * (se - sw) + v * (ne - se)
    } else {
        sw + u * (ne - nw) + v * (nw - sw)
    })
}

/// First intersection of `ray` with the DEM surface, up to `t_max`.
pub fn raycast_dem_first_hit(
    dem: &DemGrid,
    ray: &Ray,
    t_max: f64,
    method: RaycastMethod,
) -> Result<Hit, RaycastError> {
    debug_assert!(t_max > 0.0);
    let horiz = (ray.dir.x * ray.dir.x + ray.dir.y * ray.dir.y).sqrt();
    if horiz < VERTICAL_EPS {
        return vertical_hit(dem, ray, t_max);
    }
    match method {
        RaycastMethod::Triangles => traverse_triangles(dem, ray, t_max),
        RaycastMethod::Bisection => bisection_march(dem, ray, t_max),
    }
}

/// Rays with no horizontal motion reduce to a surface lookup.
fn vertical_hit(dem: &DemGrid, ray: &Ray, t_max: f64) -> Result<Hit, RaycastError> {
    let z = surface_z(dem, ray.origin.x, ray.origin.y).map_err(|_| RaycastError::OutOfBounds)?;
    if ray.dir.z == 0.0 {
        return Err(RaycastError::NoHit);
    }
    let t = (z - ray.origin.z) / ray.dir.z;
    if t >= 0.0 && t <= t_max {
        Ok(Hit { t, point: Vec3::new(ray.origin.x, ray.origin.y, z) })
    } else {
        Err(RaycastError::NoHit)
    }
}

/// Parameter window over which the ray's horizontal projection stays inside
/// the DEM extent. Returns None when the ray never enters it.
fn extent_window(dem: &DemGrid, ray: &Ray) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for (o, d, lo, hi) in [
        (ray.origin.x, ray.dir.x, dem.x_origin(), dem.x_max()),
        (ray.origin.y, ray.dir.y, dem.y_origin(), dem.y_max()),
    ] {
        if d.abs() < VERTICAL_EPS {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let (mut a, mut b) = ((lo - o) / d, (hi - o) / d);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

struct CellTriangles {
    a: Triangle,
    b: Triangle,
    z_min: f64,
    z_max: f64,
}

fn cell_triangles(dem: &DemGrid, i: usize, j: usize) -> Option<CellTriangles> {
    let (x0, y0) = dem.node_xy(i, j);
    let cell = dem.cell();
    let sw = dem.node_z(i, j);
    let se = dem.node_z(i + 1, j);
    let nw = dem.node_z(i, j + 1);
    let ne = dem.node_z(i + 1, j + 1);
    if dem.is_nodata(sw) || dem.is_nodata(se) || dem.is_nodata(nw) || dem.is_nodata(ne) {
        return None;
    }
    let psw = Vec3::new(x0, y0, sw);
    let pse = Vec3::new(x0 + cell, y0, se);
    let pnw = Vec3::new(x0, y0 + cell, nw);
    let pne = Vec3::new(x0 + cell, y0 + cell, ne);
    Some(CellTriangles {
        a: Triangle { v0: psw, v1: pse, v2: pne },
        b: Triangle { v0: psw, v1: pne, v2: pnw },
        z_min: sw.min(se).min(nw).min(ne),
        z_max: sw.max(se).max(nw).max(ne),
    })
}

fn traverse_triangles(dem: &DemGrid, ray: &Ray, t_max: f64) -> Result<Hit, RaycastError> {
    let (t_enter, t_exit_box) = extent_window(dem, ray).ok_or(RaycastError::OutOfBounds)?;
    if t_enter > t_max {
        return Err(RaycastError::NoHit);
    }
    let cell = dem.cell();
    let max_i = (dem.n_cols() - 2) as i64;
    let max_j = (dem.n_rows() - 2) as i64;

    // Start cell at the entry point, clamped onto the grid.
    let start = ray.point_at(t_enter);
    let mut i = (((start.x - dem.x_origin()) / cell).floor() as i64).clamp(0, max_i);
    let mut j = (((start.y - dem.y_origin()) / cell).floor() as i64).clamp(0, max_j);

    let step_i: i64 = if ray.dir.x > 0.0 { 1 } else { -1 };
    let step_j: i64 = if ray.dir.y > 0.0 { 1 } else { -1 };
    let t_delta_x = if ray.dir.x.abs() < VERTICAL_EPS { f64::INFINITY } else { cell / ray.dir.x.abs() };
    let t_delta_y = if ray.dir.y.abs() < VERTICAL_EPS { f64::INFINITY } else { cell / ray.dir.y.abs() };
    let mut t_next_x = if t_delta_x.is_infinite() {
        f64::INFINITY
    } else {
        let boundary = dem.x_origin() + (i + i64::from(step_i > 0)) as f64 * cell;
        (boundary - ray.origin.x) / ray.dir.x
    };
    let mut t_next_y = if t_delta_y.is_infinite() {
        f64::INFINITY
    } else {
        let boundary = dem.y_origin() + (j + i64::from(step_j > 0)) as f64 * cell;
        (boundary - ray.origin.y) / ray.dir.y
    };

    let mut t_in = t_enter;
    let max_steps = dem.n_cols() + dem.n_rows() + 4;
    for _ in 0..max_steps {
        let t_out = t_next_x.min(t_next_y);
        if let Some(tris) = cell_triangles(dem, i as usize, j as usize) {
            // Skip the triangle tests when the ray segment cannot reach the
            // cell's elevation span.
            let za = ray.origin.z + ray.dir.z * t_in;
            let zb = ray.origin.z + ray.dir.z * t_out.min(t_max);
            let (seg_lo, seg_hi) = if za <= zb { (za, zb) } else { (zb, za) };
            if seg_hi >= tris.z_min && seg_lo <= tris.z_max {
                let hit_a = ray_triangle_intersect(ray, &tris.a);
                let hit_b = ray_triangle_intersect(ray, &tris.b);
                let best = match (hit_a, hit_b) {
                    (Some(a), Some(b)) => Some(if a.t <= b.t { a } else { b }),
                    (Some(a), None) => Some(a),
                    (None, Some(b)) => Some(b),
                    (None, None) => None,
                };
                if let Some(hit) = best {
                    return if hit.t <= t_max { Ok(hit) } else { Err(RaycastError::NoHit) };
                }
            }
        }
        if t_out > t_max {
            return Err(RaycastError::NoHit);
        }
        if t_out >= t_exit_box {
            return Err(RaycastError::OutOfBounds);
        }
        if t_next_x < t_next_y {
            i += step_i;
            t_next_x += t_delta_x;
        } else {
            j += step_j;
            t_next_y += t_delta_y;
        }
        if i < 0 || i > max_i || j < 0 || j > max_j {
            return Err(RaycastError::OutOfBounds);
        }
        t_in = t_out;
    }
    Err(RaycastError::OutOfBounds)
}

fn bisection_march(dem: &DemGrid, ray: &Ray, t_max: f64) -> Result<Hit, RaycastError> {
    let (t_enter, t_exit_box) = extent_window(dem, ray).ok_or(RaycastError::OutOfBounds)?;
    if t_enter > t_max {
        return Err(RaycastError::NoHit);
    }
    let diff = |t: f64| -> Option<f64> {
        let p = ray.point_at(t);
        surface_z(dem, p.x, p.y).ok().map(|z| p.z - z)
    };
    let t_end = t_exit_box.min(t_max);
    let step = dem.cell() / 2.0;

    let mut t_a = t_enter;
    if diff(t_a).ok_or(RaycastError::OutOfBounds)? <= 0.0 {
        let point = ray.point_at(t_a);
        return Ok(Hit { t: t_a, point });
    }
    // Invariant: the surface is below the ray at t_a.
    loop {
        let t_b = (t_a + step).min(t_end);
        let f_b = match diff(t_b) {
            Some(f) => f,
            None => return Err(RaycastError::OutOfBounds),
        };
        if f_b <= 0.0 {
            // Bracketed: bisect down to the range tolerance.
            let (mut lo, mut hi) = (t_a, t_b);
            while hi - lo > BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                match diff(mid) {
                    Some(f) if f > 0.0 => lo = mid,
                    Some(_) => hi = mid,
                    None => return Err(RaycastError::OutOfBounds),
                }
            }
            let t = 0.5 * (lo + hi);
            return Ok(Hit { t, point: ray.point_at(t) });
        }
        if t_b >= t_end {
            return if t_end < t_max {
                Err(RaycastError::OutOfBounds)
            } else {
                Err(RaycastError::NoHit)
            };
        }
        t_a = t_b;
    }
}
