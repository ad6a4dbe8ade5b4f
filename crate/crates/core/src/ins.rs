//! Strapdown INS nominal-state mechanization, the discrete error-state
//! transition model, and open-loop correction.
//!
//! The nominal state dead-reckons the IMU: position/velocity integrate the
//! rotated specific force (attitude taken at the half step, which keeps the
//! integration second-order accurate while staying causal per sample), the
//! attitude integrates the exact quaternion exponential. The error state
//! (δp, δv, δθ, δa_bias, δω_bias) is the small-signal deviation of truth
//! from the nominal; `error_transition` returns the matching first-order
//! transition matrices consumed by the marginalized particle filter. The
//! filter output is only ever *added* to the nominal (open loop), never fed
//! back into it.

use nalgebra::{SMatrix, SVector};

use crate::geometry::{quat_compose, quat_from_rotvec, quat_rotate, skew, Mat3, Quat, Vec3};
use crate::sim::ImuSample;

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Mat3x12 = SMatrix<f64, 3, 12>;

/// Dead-reckoned navigation state. `gravity` is constant per run.
#[derive(Copy, Clone, Debug)]
pub struct NominalState {
    pub p: Vec3,
    pub v: Vec3,
    pub q: Quat,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    pub gravity: Vec3,
}

/// Small-signal INS error. Attitude error is a rotation vector composed on
/// the right: q = q̄ ⊗ exp(δθ).
#[derive(Copy, Clone, Debug, Default)]
pub struct ErrorState {
    pub dp: Vec3,
    pub dv: Vec3,
    pub dtheta: Vec3,
    pub daccel_bias: Vec3,
    pub dgyro_bias: Vec3,
}

impl ErrorState {
    /// Assemble from the filter's nonlinear substate δp and 12-dim linear
    /// substate (δv, δθ, δa_bias, δω_bias).
    pub fn from_parts(dp: Vec3, lin: &Vec12) -> Self {
        Self {
            dp,
            dv: Vec3::new(lin[0], lin[1], lin[2]),
            dtheta: Vec3::new(lin[3], lin[4], lin[5]),
            daccel_bias: Vec3::new(lin[6], lin[7], lin[8]),
            dgyro_bias: Vec3::new(lin[9], lin[10], lin[11]),
        }
    }

    pub fn lin_vector(&self) -> Vec12 {
        let mut v = Vec12::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.dv);
        v.fixed_rows_mut::<3>(3).copy_from(&self.dtheta);
        v.fixed_rows_mut::<3>(6).copy_from(&self.daccel_bias);
        v.fixed_rows_mut::<3>(9).copy_from(&self.dgyro_bias);
        v
    }
}

/// One-step discrete error-state model:
///
/// s_n⁺ = s_n + A_n s_l + w_n,  w_n ~ N(0, Q_n)
/// s_l⁺ = A_l s_l + w_l,        w_l ~ N(0, Q_l)
#[derive(Clone, Debug)]
pub struct ErrorModel {
    pub a_n: Mat3x12,
    pub a_l: Mat12,
    pub q_n: Mat3,
    pub q_l: Mat12,
    pub dt: f64,
}

/// Advance the nominal state by one IMU sample.
pub fn propagate_nominal(s: &NominalState, imu: &ImuSample, dt: f64) -> NominalState {
    debug_assert!(dt > 0.0);
    let omega = imu.gyro - s.gyro_bias;
    let f_body = imu.accel - s.accel_bias;
    let q_half = quat_compose(s.q, quat_from_rotvec(omega * (0.5 * dt)));
    let f_nav = quat_rotate(&q_half, f_body) + s.gravity;
    NominalState {
        p: s.p + s.v * dt + f_nav * (0.5 * dt * dt),
        v: s.v + f_nav * dt,
        q: quat_compose(s.q, quat_from_rotvec(omega * dt)),
        accel_bias: s.accel_bias,
        gyro_bias: s.gyro_bias,
        gravity: s.gravity,
    }
}

/// Discrete transition matrices linearizing [`propagate_nominal`] about the
/// current nominal state; process covariances are passed through from the
/// filter configuration.
pub fn error_transition(
    s: &NominalState,
    imu: &ImuSample,
    dt: f64,
    q_n: Mat3,
    q_l: Mat12,
) -> ErrorModel {
    debug_assert!(dt > 0.0);
    let omega = imu.gyro - s.gyro_bias;
    let f_body = imu.accel - s.accel_bias;
    let r_bar = s.q.to_rotation_matrix().into_inner();
    let r_mid = quat_from_rotvec(omega * (0.5 * dt))
        .to_rotation_matrix()
        .into_inner();
    let r_half = r_bar * r_mid;

    // Jacobians of the rotated specific force f_nav = R̄ Rm (f_b − δa_b)
    // under q = q̄ ⊗ exp(δθ) and the gyro-bias dependence of Rm.
    let df_dtheta = -r_bar * skew(r_mid * f_body);
    let df_dba = -r_half;
    let df_dbw = r_half * skew(f_body) * (0.5 * dt);

    let mut a_l = Mat12::identity();
    a_l.fixed_view_mut::<3, 3>(0, 3).copy_from(&(df_dtheta * dt));
    a_l.fixed_view_mut::<3, 3>(0, 6).copy_from(&(df_dba * dt));
    a_l.fixed_view_mut::<3, 3>(0, 9).copy_from(&(df_dbw * dt));
    let rot_step = quat_from_rotvec(omega * dt)
        .to_rotation_matrix()
        .into_inner();
    a_l.fixed_view_mut::<3, 3>(3, 3).copy_from(&rot_step.transpose());
    a_l.fixed_view_mut::<3, 3>(3, 9)
        .copy_from(&(-Mat3::identity() * dt));

    let mut a_n = Mat3x12::zeros();
    let half_dt2 = 0.5 * dt * dt;
    a_n.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Mat3::identity() * dt));
    a_n.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(df_dtheta * half_dt2));
    a_n.fixed_view_mut::<3, 3>(0, 6).copy_from(&(df_dba * half_dt2));
    a_n.fixed_view_mut::<3, 3>(0, 9).copy_from(&(df_dbw * half_dt2));

    ErrorModel { a_n, a_l, q_n, q_l, dt }
}

/// Open-loop total-state output: filter estimate added to the nominal,
/// which itself stays untouched.
pub fn correct_open_loop(s: &NominalState, e: &ErrorState) -> (Vec3, Vec3, Quat) {
    (
        s.p + e.dp,
        s.v + e.dv,
        quat_compose(s.q, quat_from_rotvec(e.dtheta)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{gravity_vector, GRAVITY_MSS};
    use approx::assert_relative_eq;

    fn level_state() -> NominalState {
        NominalState {
            p: Vec3::zeros(),
            v: Vec3::zeros(),
            q: Quat::identity(),
            accel_bias: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
            gravity: gravity_vector(),
        }
    }

    #[test]
    fn hover_is_stationary() {
        let imu = ImuSample {
            t: 0.0,
            accel: Vec3::new(0.0, 0.0, GRAVITY_MSS),
            gyro: Vec3::zeros(),
        };
        let mut s = level_state();
        for _ in 0..50 {
            s = propagate_nominal(&s, &imu, 0.02);
        }
        assert_relative_eq!(s.p, Vec3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(s.v, Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn free_fall_integrates_gravity() {
        let imu = ImuSample { t: 0.0, accel: Vec3::zeros(), gyro: Vec3::zeros() };
        let mut s = level_state();
        for _ in 0..50 {
            s = propagate_nominal(&s, &imu, 0.02);
        }
        assert!((s.v.z + GRAVITY_MSS).abs() <= 1e-9, "v_z = {}", s.v.z);
    }

    #[test]
    fn yaw_rate_advances_heading() {
        let rate = std::f64::consts::FRAC_PI_2;
        let imu = ImuSample {
            t: 0.0,
            accel: Vec3::new(0.0, 0.0, GRAVITY_MSS),
            gyro: Vec3::new(0.0, 0.0, rate),
        };
        let mut s = level_state();
        for _ in 0..50 {
            s = propagate_nominal(&s, &imu, 0.02);
        }
        // Rotation-matrix oracle: attitude should equal Rz(90°).
        let oracle = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), rate);
        assert_relative_eq!(
            s.q.to_rotation_matrix().into_inner(),
            oracle.into_inner(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn transition_tends_to_identity_at_zero_dt() {
        let mut s = level_state();
        s.q = quat_from_rotvec(Vec3::new(0.2, -0.1, 0.7));
        let imu = ImuSample {
            t: 0.0,
            accel: Vec3::new(0.3, -0.2, 9.9),
            gyro: Vec3::new(0.03, 0.02, -0.01),
        };
        let model = error_transition(&s, &imu, 1e-12, Mat3::zeros(), Mat12::zeros());
        let diff = (model.a_l - Mat12::identity()).abs().max();
        assert!(diff < 1e-9, "max deviation {diff}");
        let a_n_tail = model.a_n.fixed_view::<3, 9>(0, 3).abs().max();
        assert!(a_n_tail < 1e-9);
    }

    #[test]
    fn velocity_attitude_block_matches_formula() {
        // Level attitude, specific force (0,0,9.81), T_s = 0.02, no rotation.
        let s = level_state();
        let imu = ImuSample { t: 0.0, accel: Vec3::new(0.0, 0.0, 9.81), gyro: Vec3::zeros() };
        let model = error_transition(&s, &imu, 0.02, Mat3::zeros(), Mat12::zeros());
        let expected = -skew(Vec3::new(0.0, 0.0, 9.81)) * 0.02;
        let block = model.a_l.fixed_view::<3, 3>(0, 3).into_owned();
        assert_relative_eq!(block, expected, epsilon = 1e-15);
        assert_relative_eq!(
            model.a_l.fixed_view::<3, 3>(3, 3).into_owned(),
            Mat3::identity(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            model.a_l.fixed_view::<3, 3>(3, 9).into_owned(),
            -Mat3::identity() * 0.02,
            epsilon = 1e-15
        );
        // A_n leads with T_s·I.
        assert_relative_eq!(
            model.a_n.fixed_view::<3, 3>(0, 0).into_owned(),
            Mat3::identity() * 0.02,
            epsilon = 1e-15
        );
    }

    #[test]
    fn attitude_block_determinant_is_one() {
        let mut s = level_state();
        s.q = quat_from_rotvec(Vec3::new(0.1, 0.5, -0.3));
        let imu = ImuSample {
            t: 0.0,
            accel: Vec3::new(0.2, 0.1, 9.7),
            gyro: Vec3::new(0.2, -0.1, 0.4),
        };
        let model = error_transition(&s, &imu, 0.02, Mat3::zeros(), Mat12::zeros());
        let rot = model.a_l.fixed_view::<3, 3>(3, 3).into_owned();
        assert_relative_eq!(rot.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn open_loop_zero_error_is_identity() {
        let mut s = level_state();
        s.p = Vec3::new(10.0, -4.0, 900.0);
        s.v = Vec3::new(100.0, 0.0, 0.0);
        s.q = quat_from_rotvec(Vec3::new(0.0, 0.1, 1.2));
        let (p, v, q) = correct_open_loop(&s, &ErrorState::default());
        assert_eq!(p, s.p);
        assert_eq!(v, s.v);
        assert_relative_eq!(
            q.into_inner().coords,
            s.q.into_inner().coords,
            epsilon = 1e-15
        );
    }

    #[test]
    fn open_loop_shifts_position_additively() {
        let mut s = level_state();
        s.p = Vec3::new(1.0, 2.0, 3.0);
        let e = ErrorState { dp: Vec3::new(3.0, 4.0, 0.0), ..Default::default() };
        let (p, _, _) = correct_open_loop(&s, &e);
        assert_eq!(p, Vec3::new(4.0, 6.0, 3.0));
    }

    #[test]
    fn open_loop_attitude_matches_matrix_oracle() {
        let mut s = level_state();
        s.q = quat_from_rotvec(Vec3::new(0.4, -0.3, 0.8));
        let dtheta = Vec3::new(0.0, 0.0, 1e-3);
        let e = ErrorState { dtheta, ..Default::default() };
        let (_, _, q) = correct_open_loop(&s, &e);
        let oracle = s.q.to_rotation_matrix().into_inner()
            * quat_from_rotvec(dtheta).to_rotation_matrix().into_inner();
        assert_relative_eq!(q.to_rotation_matrix().into_inner(), oracle, epsilon = 1e-9);
    }
}
