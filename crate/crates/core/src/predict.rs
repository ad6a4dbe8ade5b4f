//! Predicted terrain measurements for hypothetical poses and the innovation
//! errors between received and predicted measurements.
//!
//! Raycast prediction re-scans the DEM from each particle's pose. Sliding
//! prediction never casts a ray: it keeps the received cloud's sensor-frame
//! x/y pattern, reads the DEM at each point's horizontal location under the
//! hypothetical pose, and slides the point along the sensor z-axis until its
//! height matches the DEM. One surface lookup per point, independent of
//! range — that is the whole speed story.

use thiserror::Error;

use crate::geometry::{
    quat_compose, quat_from_rotvec, raycast_dem_first_hit, surface_z, Pose, Ray, RaycastMethod,
    Vec3,
};
use crate::ins::NominalState;
use crate::terrain::{sample_bilinear, DemGrid};

/// Error assigned to a particle whose prediction failed (ray escaped the
/// DEM, degenerate slide geometry, pose off the map). Such a hypothesis
/// should get vanishing weight, not abort the filter.
pub const WORST_CASE_ERR_M: f64 = 1.0e4;

/// Minimum |r₃₃| (vertical component of the sensor z-axis) for the slide
/// construction; below this the sensor z-axis is near horizontal and the
/// slide geometry is meaningless.
pub const SLIDE_R33_MIN: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("ray {index} missed the DEM")]
    RayMiss { index: usize },
    #[error("sensor z-axis near horizontal; sliding geometry degenerate")]
    DegenerateGeometry,
    #[error("predicted point left the DEM extent")]
    OutOfBounds,
    #[error("length mismatch: got {got}, want {want}")]
    LengthMismatch { got: usize, want: usize },
}

/// Ordered scan directions in the sensor frame (-z hemisphere).
#[derive(Clone, Debug)]
pub struct ScanPattern {
    pub dirs: Vec<Vec3>,
    pub rows: usize,
    pub cols: usize,
    pub fov_deg: f64,
}

impl ScanPattern {
    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

/// Ordered sensor-frame terrain points; order matches the pattern that
/// produced them and must be preserved through prediction and comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub pts: Vec<Vec3>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn z_values(&self) -> Vec<f64> {
        self.pts.iter().map(|p| p.z).collect()
    }
}

/// Regular rows×cols angular grid centered on -z, half-angle `fov_deg` in
/// both axes, row-major order. Directions are unit tangent-plane rays:
/// normalize(tan θx, tan θy, -1).
pub fn make_scan_pattern(rows: usize, cols: usize, fov_deg: f64) -> ScanPattern {
    assert!(rows >= 1 && cols >= 1, "pattern must have at least one ray");
    assert!(fov_deg > 0.0 && fov_deg < 90.0, "fov must be in (0, 90) degrees");
    let fov = fov_deg.to_radians();
    let angle = |i: usize, n: usize| -> f64 {
        if n == 1 {
            0.0
        } else {
            -fov + 2.0 * fov * i as f64 / (n - 1) as f64
        }
    };
    let mut dirs = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ty = angle(r, rows).tan();
        for c in 0..cols {
            let tx = angle(c, cols).tan();
            dirs.push(Vec3::new(tx, ty, -1.0).normalize());
        }
    }
    ScanPattern { dirs, rows, cols, fov_deg }
}

/// Pose hypothesized by a particle: nominal perturbed by its error estimate.
pub fn hypothetical_pose(nom: &NominalState, dp: Vec3, dtheta: Vec3) -> Pose {
    Pose {
        p: nom.p + dp,
        q: quat_compose(nom.q, quat_from_rotvec(dtheta)),
    }
}

/// Noiseless raycast of the DEM from a hypothetical pose; points come back
/// in that pose's own sensor frame, pattern order preserved.
pub fn predict_pc_raycast(
    dem: &DemGrid,
    pose: &Pose,
    pattern: &ScanPattern,
    method: RaycastMethod,
    t_max: f64,
) -> Result<PointCloud, PredictError> {
    let mut pts = Vec::with_capacity(pattern.len());
    for (index, dir) in pattern.dirs.iter().enumerate() {
        let ray = Ray::new(pose.p, pose.q * dir);
        let hit = raycast_dem_first_hit(dem, &ray, t_max, method)
            .map_err(|_| PredictError::RayMiss { index })?;
        pts.push(dir * hit.t);
    }
    Ok(PointCloud { pts })
}

/// Sliding-grid prediction of the sensor-frame z coordinates.
///
/// For each received point: map it to the navigation frame under the
/// hypothetical pose, read the DEM surface at that horizontal location, then
/// solve for the sensor-frame z that puts the point at that height while
/// keeping its sensor-frame x/y. Works whether the received point lies above
/// or below the DEM surface.
pub fn predict_pc_sliding(
    dem: &DemGrid,
    pose: &Pose,
    received: &PointCloud,
) -> Result<Vec<f64>, PredictError> {
    let rot = pose.q.to_rotation_matrix();
    let (r31, r32, r33) = (rot[(2, 0)], rot[(2, 1)], rot[(2, 2)]);
    if r33.abs() < SLIDE_R33_MIN {
        return Err(PredictError::DegenerateGeometry);
    }
    let mut z_hat = Vec::with_capacity(received.len());
    for pt in &received.pts {
        let w = pose.p + pose.q * pt;
        let z_t = surface_z(dem, w.x, w.y).map_err(|_| PredictError::OutOfBounds)?;
        z_hat.push((z_t - pose.p.z - r31 * pt.x - r32 * pt.y) / r33);
    }
    Ok(z_hat)
}

/// Predicted altimeter reading: the nominal altitude channel is replaced by
/// the barometric reading, shifted by the particle's error, minus the DEM
/// height at the particle's horizontal position.
pub fn predict_altimeter(
    dem: &DemGrid,
    p_bar: Vec3,
    h_baro: f64,
    dp: Vec3,
) -> Result<f64, PredictError> {
    let z_t = sample_bilinear(dem, p_bar.x + dp.x, p_bar.y + dp.y)
        .map_err(|_| PredictError::OutOfBounds)?;
    Ok(h_baro + dp.z - z_t)
}

/// Innovation error over all three sensor-frame axes:
/// sqrt((mean|Δx|)² + (mean|Δy|)² + (mean|Δz|)²).
pub fn innovation_xyz(received: &PointCloud, predicted: &PointCloud) -> Result<f64, PredictError> {
    if received.len() != predicted.len() || received.is_empty() {
        return Err(PredictError::LengthMismatch { got: predicted.len(), want: received.len() });
    }
    let m = received.len() as f64;
    let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
    for (c, p) in received.pts.iter().zip(&predicted.pts) {
        sx += (c.x - p.x).abs();
        sy += (c.y - p.y).abs();
        sz += (c.z - p.z).abs();
    }
    Ok(((sx / m).powi(2) + (sy / m).powi(2) + (sz / m).powi(2)).sqrt())
}

/// Innovation error over the sensor-frame z coordinate only: mean|c_z − ĉ_z|.
pub fn innovation_z(received: &PointCloud, predicted_z: &[f64]) -> Result<f64, PredictError> {
    if received.len() != predicted_z.len() || received.is_empty() {
        return Err(PredictError::LengthMismatch { got: predicted_z.len(), want: received.len() });
    }
    let sum: f64 = received
        .pts
        .iter()
        .zip(predicted_z)
        .map(|(c, z)| (c.z - z).abs())
        .sum();
    Ok(sum / received.len() as f64)
}

/// Signed altimeter innovation a − â; the likelihood uses its square.
pub fn innovation_altimeter(a: f64, a_hat: f64) -> f64 {
    a - a_hat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quat;
    use crate::terrain::DemGrid;
    use approx::assert_relative_eq;

    fn flat_dem(z: f64) -> DemGrid {
        DemGrid::new(-1000.0, -1000.0, 10.0, 201, 201, vec![z; 201 * 201], -9999.0).unwrap()
    }

    fn level_pose(p: Vec3) -> Pose {
        Pose { p, q: Quat::identity() }
    }

    #[test]
    fn single_ray_pattern_is_nadir() {
        let p = make_scan_pattern(1, 1, 35.0);
        assert_eq!(p.len(), 1);
        assert_relative_eq!(p.dirs[0], Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
    }

    #[test]
    fn four_by_four_pattern_symmetric() {
        let p = make_scan_pattern(4, 4, 20.0);
        assert_eq!(p.len(), 16);
        let mean: Vec3 = p.dirs.iter().sum::<Vec3>() / 16.0;
        assert_relative_eq!(mean.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(mean.y, 0.0, epsilon = 1e-12);
        for d in &p.dirs {
            assert_relative_eq!(d.norm(), 1.0, epsilon = 1e-12);
            assert!(d.z < 0.0);
        }
    }

    #[test]
    fn corner_ray_angle_closed_form() {
        let p = make_scan_pattern(4, 4, 20.0);
        let t = 20.0f64.to_radians().tan();
        let expected = (1.0 / (1.0 + 2.0 * t * t).sqrt()).acos();
        let max_angle = p
            .dirs
            .iter()
            .map(|d| (-d.z).acos())
            .fold(0.0f64, f64::max);
        assert_relative_eq!(max_angle, expected, epsilon = 1e-12);
    }

    #[test]
    fn raycast_prediction_nadir_over_flat() {
        let dem = flat_dem(0.0);
        let pose = level_pose(Vec3::new(0.0, 0.0, 120.0));
        let pattern = make_scan_pattern(1, 1, 10.0);
        let pc =
            predict_pc_raycast(&dem, &pose, &pattern, RaycastMethod::Triangles, 20_000.0).unwrap();
        assert_relative_eq!(pc.pts[0], Vec3::new(0.0, 0.0, -120.0), epsilon = 1e-9);
    }

    #[test]
    fn raycast_prediction_slant_range() {
        let dem = flat_dem(0.0);
        let h = 300.0;
        let pose = level_pose(Vec3::new(0.0, 0.0, h));
        // One ray at 25 degrees from nadir in the x-z plane.
        let alpha = 25.0f64.to_radians();
        let pattern = ScanPattern {
            dirs: vec![Vec3::new(alpha.sin(), 0.0, -alpha.cos())],
            rows: 1,
            cols: 1,
            fov_deg: 25.0,
        };
        let pc =
            predict_pc_raycast(&dem, &pose, &pattern, RaycastMethod::Triangles, 20_000.0).unwrap();
        let range = pc.pts[0].norm();
        assert_relative_eq!(range, h / alpha.cos(), epsilon = 1e-9);
    }

    #[test]
    fn sliding_flat_altitude_offset_closed_form() {
        let dem = flat_dem(0.0);
        // Received cloud sensed from 100 m; hypothesis is 15 m higher.
        let truth_pose = level_pose(Vec3::new(0.0, 0.0, 100.0));
        let pattern = make_scan_pattern(2, 2, 15.0);
        let received =
            predict_pc_raycast(&dem, &truth_pose, &pattern, RaycastMethod::Triangles, 20_000.0)
                .unwrap();
        let hyp = level_pose(Vec3::new(0.0, 0.0, 115.0));
        let z_hat = predict_pc_sliding(&dem, &hyp, &received).unwrap();
        for (z, pt) in z_hat.iter().zip(&received.pts) {
            assert_relative_eq!(*z, pt.z - 15.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn sliding_degenerate_when_sensor_axis_horizontal() {
        let dem = flat_dem(0.0);
        let pose = Pose {
            p: Vec3::new(0.0, 0.0, 100.0),
            q: quat_from_rotvec(Vec3::new(89.0f64.to_radians(), 0.0, 0.0)),
        };
        let received = PointCloud { pts: vec![Vec3::new(0.0, 0.0, -100.0)] };
        assert_eq!(
            predict_pc_sliding(&dem, &pose, &received),
            Err(PredictError::DegenerateGeometry)
        );
    }

    #[test]
    fn altimeter_prediction_examples() {
        let dem = flat_dem(0.0);
        let p_bar = Vec3::new(0.0, 0.0, 480.0);
        let a = predict_altimeter(&dem, p_bar, 500.0, Vec3::zeros()).unwrap();
        assert_relative_eq!(a, 500.0, epsilon = 1e-12);
        let a = predict_altimeter(&dem, p_bar, 500.0, Vec3::new(0.0, 0.0, -10.0)).unwrap();
        assert_relative_eq!(a, 490.0, epsilon = 1e-12);
    }

    #[test]
    fn altimeter_prediction_sees_plane_slope() {
        // z = 0.1 x plane.
        let n = 201;
        let cell = 10.0;
        let mut elev = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                elev[r * n + c] = 0.1 * (c as f64 * cell);
            }
        }
        let dem = DemGrid::new(0.0, 0.0, cell, n, n, elev, -9999.0).unwrap();
        let p_bar = Vec3::new(500.0, 500.0, 400.0);
        let a0 = predict_altimeter(&dem, p_bar, 500.0, Vec3::zeros()).unwrap();
        let a1 = predict_altimeter(&dem, p_bar, 500.0, Vec3::new(100.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(a0 - a1, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn innovation_identical_is_zero() {
        let pc = PointCloud {
            pts: vec![Vec3::new(1.0, 2.0, -3.0), Vec3::new(-1.0, 0.5, -2.0)],
        };
        assert_eq!(innovation_xyz(&pc, &pc).unwrap(), 0.0);
        assert_eq!(innovation_z(&pc, &pc.z_values()).unwrap(), 0.0);
        assert_eq!(innovation_altimeter(7.0, 7.0), 0.0);
    }

    #[test]
    fn innovation_xyz_offset_345() {
        let pc = PointCloud {
            pts: vec![Vec3::new(1.0, 2.0, -3.0), Vec3::new(-1.0, 0.5, -2.0)],
        };
        let shifted = PointCloud {
            pts: pc.pts.iter().map(|p| p + Vec3::new(3.0, 4.0, 0.0)).collect(),
        };
        assert_relative_eq!(innovation_xyz(&pc, &shifted).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn innovation_z_mean_abs() {
        let received = PointCloud {
            pts: vec![
                Vec3::new(0.0, 0.0, 1.0),
                Vec3::new(0.0, 0.0, -1.0),
                Vec3::new(0.0, 0.0, 2.0),
                Vec3::new(0.0, 0.0, 0.0),
            ],
        };
        let predicted = vec![0.0, 0.0, 0.0, 0.0];
        assert_relative_eq!(innovation_z(&received, &predicted).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn innovation_length_mismatch() {
        let pc = PointCloud { pts: vec![Vec3::zeros()] };
        let other = PointCloud { pts: vec![Vec3::zeros(), Vec3::zeros()] };
        assert!(matches!(
            innovation_xyz(&pc, &other),
            Err(PredictError::LengthMismatch { .. })
        ));
        assert!(matches!(
            innovation_z(&pc, &[1.0, 2.0]),
            Err(PredictError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn innovation_invariant_under_common_permutation() {
        let a = PointCloud {
            pts: vec![
                Vec3::new(1.0, 2.0, -3.0),
                Vec3::new(-1.0, 0.5, -2.0),
                Vec3::new(0.3, -0.7, -5.0),
            ],
        };
        let b = PointCloud {
            pts: vec![
                Vec3::new(0.9, 2.2, -3.3),
                Vec3::new(-1.2, 0.4, -2.5),
                Vec3::new(0.1, -0.9, -4.0),
            ],
        };
        let perm = [2usize, 0, 1];
        let pa = PointCloud { pts: perm.iter().map(|&i| a.pts[i]).collect() };
        let pb = PointCloud { pts: perm.iter().map(|&i| b.pts[i]).collect() };
        let base = innovation_xyz(&a, &b).unwrap();
        assert_relative_eq!(innovation_xyz(&pa, &pb).unwrap(), base, epsilon = 1e-12);
        // Permuting only one side changes the error.
        assert!((innovation_xyz(&a, &pb).unwrap() - base).abs() > 1e-6);
    }

    #[test]
    fn sliding_error_grows_with_vertical_offset() {
        let dem = flat_dem(0.0);
        let truth_pose = level_pose(Vec3::new(0.0, 0.0, 100.0));
        let pattern = make_scan_pattern(3, 3, 15.0);
        let received =
            predict_pc_raycast(&dem, &truth_pose, &pattern, RaycastMethod::Triangles, 20_000.0)
                .unwrap();
        let mut last = 0.0;
        for offset in [1.0, 2.0, 5.0, 10.0] {
            let hyp = level_pose(Vec3::new(0.0, 0.0, 100.0 + offset));
            let z_hat = predict_pc_sliding(&dem, &hyp, &received).unwrap();
            let err = innovation_z(&received, &z_hat).unwrap();
            assert_relative_eq!(err, offset, epsilon = 1e-9);
            assert!(err > last);
            last = err;
        }
    }
}
