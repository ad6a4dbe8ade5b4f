//! Rotation algebra and DEM raycasting.
//!
//! Navigation frame is local East-North-Up (z up), gravity points along -z.
//! The body frame is x-forward / y-left / z-up and coincides with the sensor
//! frame; scan rays point into the body -z hemisphere. Quaternions are
//! Hamilton convention, scalar first.

mod raycast;

pub use raycast::{raycast_dem_first_hit, surface_z, RaycastError, RaycastMethod};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Quat = nalgebra::UnitQuaternion<f64>;

/// Rotation by angle `|theta|` about axis `theta/|theta|`; identity at zero.
pub fn quat_from_rotvec(theta: Vec3) -> Quat {
    Quat::from_scaled_axis(theta)
}

/// Hamilton product a ⊗ b, renormalized.
pub fn quat_compose(a: Quat, b: Quat) -> Quat {
    Quat::new_normalize(a.into_inner() * b.into_inner())
}

/// Apply R(q) to a vector.
pub fn quat_rotate(q: &Quat, v: Vec3) -> Vec3 {
    q.transform_vector(&v)
}

/// Skew-symmetric matrix such that skew(a) * b = a × b.
pub fn skew(a: Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Position and attitude pair; also serves as the hypothetical pose a
/// particle hands to the measurement predictors.
#[derive(Copy, Clone, Debug)]
pub struct Pose {
    pub p: Vec3,
    pub q: Quat,
}

#[derive(Copy, Clone, Debug)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        let n = dir.norm();
        debug_assert!(n > 0.0, "ray direction must be nonzero");
        Self { origin, dir: dir / n }
    }

    pub fn point_at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Copy, Clone, Debug)]
pub struct Triangle {
    pub v0: Vec3,
    pub v1: Vec3,
    pub v2: Vec3,
}

/// First intersection along a ray.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Hit {
    /// Range along the ray, metres.
    pub t: f64,
    pub point: Vec3,
}

/// Determinant threshold below which a ray counts as parallel to the plane.
const DET_EPS: f64 = 1e-12;
/// Barycentric slack so shared triangle edges cannot leak rays.
const BARY_EPS: f64 = 1e-10;

/// Möller–Trumbore ray/triangle intersection; both triangle sides count.
pub fn ray_triangle_intersect(ray: &Ray, tri: &Triangle) -> Option<Hit> {
    let e1 = tri.v1 - tri.v0;
    let e2 = tri.v2 - tri.v0;
    let pvec = ray.dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < DET_EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = ray.origin - tri.v0;
    let u = s.dot(&pvec) * inv_det;
    if u < -BARY_EPS || u > 1.0 + BARY_EPS {
        return None;
    }
    let qvec = s.cross(&e1);
    let v = ray.dir.dot(&qvec) * inv_det;
    if v < -BARY_EPS || u + v > 1.0 + BARY_EPS {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t < 0.0 {
        return None;
    }
    Some(Hit { t, point: ray.point_at(t) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotvec_zero_is_identity() {
        let q = quat_from_rotvec(Vec3::zeros());
        assert_eq!(q.w, 1.0);
        assert_eq!(q.i, 0.0);
        assert_eq!(q.j, 0.0);
        assert_eq!(q.k, 0.0);
    }

    #[test]
    fn rotvec_quarter_turn_about_z() {
        let q = quat_from_rotvec(Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let v = quat_rotate(&q, Vec3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(v, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn compose_identity_element() {
        let a = quat_from_rotvec(Vec3::new(0.3, -0.2, 0.9));
        let e = Quat::identity();
        let c = quat_compose(a, e);
        assert_relative_eq!(c.into_inner().coords, a.into_inner().coords, epsilon = 1e-15);
    }

    #[test]
    fn compose_same_axis_adds_angles() {
        let z90 = quat_from_rotvec(Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let z180 = quat_from_rotvec(Vec3::new(0.0, 0.0, std::f64::consts::PI));
        let c = quat_compose(z90, z90);
        assert_relative_eq!(
            c.to_rotation_matrix().into_inner(),
            z180.to_rotation_matrix().into_inner(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rotate_preserves_norm_and_inverts() {
        let mut rng = crate::rng::stream(5, crate::rng::StreamId::Bench, 0);
        use rand::Rng;
        for _ in 0..200 {
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let q = quat_from_rotvec(axis);
            let v = Vec3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0));
            let r = quat_rotate(&q, v);
            assert_relative_eq!(r.norm(), v.norm(), epsilon = 1e-9);
            let back = quat_rotate(&q.inverse(), r);
            assert_relative_eq!(back, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn norm_preserved_over_many_compositions() {
        let mut rng = crate::rng::stream(6, crate::rng::StreamId::Bench, 0);
        use rand::Rng;
        let mut q = Quat::identity();
        for _ in 0..1_000_000 {
            let dq = quat_from_rotvec(Vec3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            ));
            q = quat_compose(q, dq);
        }
        assert!((q.into_inner().norm() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn triangle_unit_drop() {
        let ray = Ray::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -1.0));
        let tri = Triangle {
            v0: Vec3::new(-1.0, -1.0, 0.0),
            v1: Vec3::new(3.0, -1.0, 0.0),
            v2: Vec3::new(-1.0, 3.0, 0.0),
        };
        let hit = ray_triangle_intersect(&ray, &tri).unwrap();
        assert_relative_eq!(hit.t, 1.0, epsilon = 1e-12);
        assert_relative_eq!(hit.point, Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn triangle_parallel_ray_misses() {
        let ray = Ray::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0));
        let tri = Triangle {
            v0: Vec3::new(-1.0, -1.0, 0.0),
            v1: Vec3::new(3.0, -1.0, 0.0),
            v2: Vec3::new(-1.0, 3.0, 0.0),
        };
        assert!(ray_triangle_intersect(&ray, &tri).is_none());
    }
}
