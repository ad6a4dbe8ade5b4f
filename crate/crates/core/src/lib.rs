//! Terrain-aided navigation (TAN) simulator and library.
//!
//! An aircraft dead-reckons with a strapdown INS whose drift is corrected by
//! matching terrain measurements (a small point cloud or a radar altimeter)
//! against an on-board digital elevation model. A marginalized particle
//! filter estimates the INS error state: particles carry the position error,
//! a conditional Kalman filter carries the 12-dimensional linear substate
//! (velocity, attitude and bias errors). Corrections are applied open-loop,
//! i.e. added to the dead-reckoned solution without feeding back into it.
//!
//! Two measurement-prediction models are provided for the point cloud:
//! raycasting the DEM from each hypothetical pose (ray-triangle or
//! bisection), and a "sliding grid" that reuses the received cloud's
//! sensor-frame pattern and slides each point along the sensor z-axis to the
//! DEM height at its horizontal location, with no raycasting at all. A nadir
//! radar altimeter plus barometric altitude serves as the baseline.
//!
//! The `tan` binary runs scenario presets end to end and benchmarks the
//! predictors; see the crate README for the CLI and file formats.

pub mod bench;
pub mod geometry;
pub mod ins;
pub mod mpf;
pub mod predict;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod terrain;

/// Standard gravity, m/s².
pub const GRAVITY_MSS: f64 = 9.80665;

/// Gravity vector in the local East-North-Up navigation frame.
pub fn gravity_vector() -> geometry::Vec3 {
    geometry::Vec3::new(0.0, 0.0, -GRAVITY_MSS)
}
