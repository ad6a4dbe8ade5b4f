//! Ground-truth trajectory generation, IMU synthesis, and emulation of the
//! real terrain sensors (point-cloud scanner, radar altimeter, barometer).
//!
//! Trajectories are level constant-speed paths built from straight legs and
//! coordinated turns (turn rate g·tan(bank)/v, zero sideslip). Bank changes
//! between legs ramp at a fixed roll rate so body rates stay finite, and all
//! kinematic quantities (v, a, attitude, body rates) come from the analytic
//! inverse kinematics of the path — IMU synthesis is exact, not differenced.
//! Position is the only integral; it is accumulated per sample with
//! Gauss-Legendre quadrature of the closed-form velocity, which is exact to
//! machine precision at any sane sample rate.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::{
    quat_compose, raycast_dem_first_hit, Pose, Quat, Ray, RaycastMethod, Vec3,
};
use crate::predict::{PointCloud, ScanPattern};
use crate::rng::{stream, StreamId};
use crate::terrain::{sample_bilinear, DemGrid, TerrainError};
use crate::GRAVITY_MSS;

/// Roll rate used to blend bank angles between legs, rad/s (15°/s).
pub const ROLL_RATE: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// Range limit for the emulated scanner and radar altimeter.
pub const SENSE_T_MAX: f64 = 20_000.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("aircraft at or below terrain at t = {t} s")]
    TerrainCollision { t: f64 },
    #[error("scan ray {index} missed the terrain")]
    RayMiss { index: usize },
    #[error("bad leg sequence: {0}")]
    BadLegs(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
}

/// Ground-truth kinematic state. `accel` is the true inertial acceleration
/// in the navigation frame, `omega` the body rates; both are the exact
/// derivatives of the sampled v and q.
#[derive(Copy, Clone, Debug)]
pub struct TruthState {
    pub t: f64,
    pub p: Vec3,
    pub v: Vec3,
    pub q: Quat,
    pub accel: Vec3,
    pub omega: Vec3,
}

impl TruthState {
    pub fn pose(&self) -> Pose {
        Pose { p: self.p, q: self.q }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vec3,
    pub gyro: Vec3,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImuGrade {
    Navigation,
    TacticalLowEnd,
}

/// Constant biases and white-noise densities for one IMU grade.
#[derive(Clone, Debug)]
pub struct ImuSpec {
    pub grade: ImuGrade,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    pub accel_noise_std: f64,
    pub gyro_noise_std: f64,
    pub rate_hz: f64,
}

impl ImuSpec {
    /// Grade presets. Navigation maps to the aviation bias class
    /// (accelerometer 3e-4..1e-3 m/s², gyro 5e-8 rad/s); the low-end
    /// tactical preset sits at the poor end of the tactical class.
    pub fn preset(grade: ImuGrade) -> Self {
        match grade {
            ImuGrade::Navigation => Self {
                grade,
                accel_bias: Vec3::new(6.0e-4, -4.5e-4, 5.0e-4),
                gyro_bias: Vec3::new(5.0e-8, -5.0e-8, 5.0e-8),
                accel_noise_std: 0.005,
                gyro_noise_std: 1.0e-5,
                rate_hz: 50.0,
            },
            ImuGrade::TacticalLowEnd => Self {
                grade,
                accel_bias: Vec3::new(0.08, -0.06, 0.07),
                gyro_bias: Vec3::new(3.0e-4, -2.0e-4, 2.5e-4),
                accel_noise_std: 0.05,
                gyro_noise_std: 5.0e-4,
                rate_hz: 50.0,
            },
        }
    }
}

/// Per-point and per-channel sensor noise parameters.
#[derive(Clone, Debug)]
pub struct SensorNoise {
    pub sigma_range: f64,
    pub sigma_alt: f64,
    pub sigma_baro: f64,
    pub baro_bias: f64,
    pub seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Leg {
    Straight { duration_s: f64 },
    Turn { bank_deg: f64, duration_s: f64 },
}

impl Leg {
    fn duration(&self) -> f64 {
        match self {
            Leg::Straight { duration_s } | Leg::Turn { duration_s, .. } => *duration_s,
        }
    }

    fn bank_rad(&self) -> f64 {
        match self {
            Leg::Straight { .. } => 0.0,
            Leg::Turn { bank_deg, .. } => bank_deg.to_radians(),
        }
    }
}

#[derive(Copy, Clone, Debug)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    /// Course angle from +x (east), CCW positive.
    pub heading_rad: f64,
}

/// One piece of the path with constant roll rate (zero for held bank).
#[derive(Copy, Clone, Debug)]
struct Phase {
    t0: f64,
    dur: f64,
    chi0: f64,
    bank0: f64,
    bank_rate: f64,
}

impl Phase {
    fn bank_at(&self, tau: f64) -> f64 {
        self.bank0 + self.bank_rate * tau
    }

    /// Course angle; closed form for both held and ramping bank.
    fn chi_at(&self, tau: f64, speed: f64) -> f64 {
        let g = GRAVITY_MSS;
        if self.bank_rate == 0.0 {
            if self.bank0 == 0.0 {
                self.chi0
            } else {
                self.chi0 - g / speed * self.bank0.tan() * tau
            }
        } else {
            // ∫tan(bank) dτ = -ln cos(bank) / bank_rate
            self.chi0
                + g / (speed * self.bank_rate)
                    * (self.bank_at(tau).cos().ln() - self.bank0.cos().ln())
        }
    }

    fn chi_rate_at(&self, tau: f64, speed: f64) -> f64 {
        -GRAVITY_MSS / speed * self.bank_at(tau).tan()
    }
}

// 8-point Gauss-Legendre nodes/weights on [-1, 1].
const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_29),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_361_98),
    (0.183_434_642_495_649_8, 0.362_683_783_378_361_98),
    (0.525_532_409_916_329, 0.313_706_645_877_887_29),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

fn integrate_velocity(phase: &Phase, speed: f64, tau_a: f64, tau_b: f64) -> (f64, f64) {
    let half = 0.5 * (tau_b - tau_a);
    let mid = 0.5 * (tau_a + tau_b);
    let (mut dx, mut dy) = (0.0, 0.0);
    for (node, weight) in GL8 {
        let chi = phase.chi_at(mid + half * node, speed);
        dx += weight * chi.cos();
        dy += weight * chi.sin();
    }
    (speed * half * dx, speed * half * dy)
}

fn build_phases(legs: &[Leg], speed: f64, start_heading: f64) -> Result<Vec<Phase>, SimError> {
    if legs.is_empty() {
        return Err(SimError::BadLegs("no legs".into()));
    }
    let mut phases: Vec<Phase> = Vec::new();
    let mut t = 0.0;
    let mut chi = start_heading;
    // Start already at the first leg's bank; ramps only between legs.
    let mut bank = legs[0].bank_rad();
    for (idx, leg) in legs.iter().enumerate() {
        let dur = leg.duration();
        if !(dur > 0.0) {
            return Err(SimError::BadLegs(format!("leg {idx} duration must be > 0")));
        }
        let target = leg.bank_rad();
        let mut remaining = dur;
        if (target - bank).abs() > 1e-12 {
            let ramp = (target - bank).abs() / ROLL_RATE;
            if ramp >= dur {
                return Err(SimError::BadLegs(format!(
                    "leg {idx} too short ({dur} s) for the {:.1} s roll transition",
                    ramp
                )));
            }
            let rate = (target - bank).signum() * ROLL_RATE;
            let phase = Phase { t0: t, dur: ramp, chi0: chi, bank0: bank, bank_rate: rate };
            chi = phase.chi_at(ramp, speed);
            t += ramp;
            remaining -= ramp;
            bank = target;
            phases.push(phase);
        }
        let phase = Phase { t0: t, dur: remaining, chi0: chi, bank0: bank, bank_rate: 0.0 };
        chi = phase.chi_at(remaining, speed);
        t += remaining;
        phases.push(phase);
    }
    Ok(phases)
}

fn phase_index_at(phases: &[Phase], t: f64) -> usize {
    // Samples land on boundaries; a boundary sample belongs to the phase it
    // starts, so the IMU value holds over the following interval.
    let mut idx = 0;
    while idx + 1 < phases.len() && t >= phases[idx].t0 + phases[idx].dur - 1e-12 {
        idx += 1;
    }
    idx
}

/// Horizontal bounding box of the path over legs from (0, 0, heading 0);
/// used by scenario layout to center a path inside a DEM.
pub fn path_bbox(legs: &[Leg], speed: f64, rate_hz: f64) -> Result<(Vec3, Vec3), SimError> {
    let phases = build_phases(legs, speed, 0.0)?;
    let total: f64 = legs.iter().map(Leg::duration).sum();
    let n = (total * rate_hz).round() as usize;
    let dt = 1.0 / rate_hz;
    let (mut x, mut y) = (0.0, 0.0);
    let (mut min, mut max) = (Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0));
    for k in 1..=n {
        let (ta, tb) = ((k - 1) as f64 * dt, k as f64 * dt);
        let (dx, dy) = integrate_interval(&phases, speed, ta, tb);
        x += dx;
        y += dy;
        min.x = min.x.min(x);
        min.y = min.y.min(y);
        max.x = max.x.max(x);
        max.y = max.y.max(y);
    }
    Ok((min, max))
}

fn integrate_interval(phases: &[Phase], speed: f64, t_a: f64, t_b: f64) -> (f64, f64) {
    let (mut dx, mut dy) = (0.0, 0.0);
    let mut idx = phase_index_at(phases, t_a);
    let mut t = t_a;
    loop {
        let ph = &phases[idx];
        let end = ph.t0 + ph.dur;
        // The final phase absorbs any sub-step overhang from sample-grid
        // rounding; its closed forms extrapolate smoothly.
        if t_b <= end || idx + 1 == phases.len() {
            let (px, py) = integrate_velocity(ph, speed, t - ph.t0, t_b - ph.t0);
            return (dx + px, dy + py);
        }
        let (px, py) = integrate_velocity(ph, speed, t - ph.t0, end - ph.t0);
        dx += px;
        dy += py;
        t = end;
        idx += 1;
    }
}

/// Generate the ground-truth trajectory over `legs`.
///
/// Level flight at constant altitude: the maximum terrain elevation under
/// the track plus `altitude_agl`. Errors if the path leaves the DEM extent
/// or (for non-positive clearance) touches terrain.
pub fn gen_trajectory(
    legs: &[Leg],
    speed: f64,
    altitude_agl: f64,
    dem: &DemGrid,
    rate_hz: f64,
    start: StartPose,
) -> Result<Vec<TruthState>, SimError> {
    assert!(speed > 0.0, "speed must be positive");
    assert!(rate_hz > 0.0, "rate must be positive");
    let phases = build_phases(legs, speed, start.heading_rad)?;
    let total: f64 = legs.iter().map(Leg::duration).sum();
    let n = (total * rate_hz).round() as usize;
    let dt = 1.0 / rate_hz;

    let mut states = Vec::with_capacity(n + 1);
    let (mut x, mut y) = (start.x, start.y);
    for k in 0..=n {
        let t = k as f64 * dt;
        if k > 0 {
            let (dx, dy) = integrate_interval(&phases, speed, t - dt, t);
            x += dx;
            y += dy;
        }
        let ph = &phases[phase_index_at(&phases, t)];
        let tau = t - ph.t0;
        let chi = ph.chi_at(tau, speed);
        let bank = ph.bank_at(tau);
        let chi_rate = ph.chi_rate_at(tau, speed);
        let q = quat_compose(
            Quat::from_axis_angle(&Vec3::z_axis(), chi),
            Quat::from_axis_angle(&Vec3::x_axis(), bank),
        );
        states.push(TruthState {
            t,
            p: Vec3::new(x, y, 0.0),
            v: Vec3::new(speed * chi.cos(), speed * chi.sin(), 0.0),
            q,
            accel: Vec3::new(-speed * chi_rate * chi.sin(), speed * chi_rate * chi.cos(), 0.0),
            omega: Vec3::new(ph.bank_rate, chi_rate * bank.sin(), chi_rate * bank.cos()),
        });
    }

    // Altitude pass: constant MSL altitude clearing the track's highest
    // terrain by altitude_agl.
    let mut max_terrain = f64::NEG_INFINITY;
    for s in &states {
        max_terrain = max_terrain.max(sample_bilinear(dem, s.p.x, s.p.y)?);
    }
    let altitude = max_terrain + altitude_agl;
    for s in &mut states {
        s.p.z = altitude;
        let ground = sample_bilinear(dem, s.p.x, s.p.y)?;
        if s.p.z <= ground {
            return Err(SimError::TerrainCollision { t: s.t });
        }
    }
    Ok(states)
}

/// Synthesize IMU readings from truth: specific force rotated to the body
/// frame plus constant bias plus white noise, deterministic per seed.
pub fn synth_imu(truth: &[TruthState], spec: &ImuSpec, seed: u64) -> Vec<ImuSample> {
    let g = crate::gravity_vector();
    truth
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng_a = stream(seed, StreamId::Accel, k as u64);
            let mut rng_g = stream(seed, StreamId::Gyro, k as u64);
            let mut na = Vec3::zeros();
            let mut ng = Vec3::zeros();
            for i in 0..3 {
                let za: f64 = rng_a.sample(StandardNormal);
                let zg: f64 = rng_g.sample(StandardNormal);
                na[i] = spec.accel_noise_std * za;
                ng[i] = spec.gyro_noise_std * zg;
            }
            ImuSample {
                t: s.t,
                accel: s.q.inverse_transform_vector(&(s.accel - g)) + spec.accel_bias + na,
                gyro: s.omega + spec.gyro_bias + ng,
            }
        })
        .collect()
}

/// Emulate the point-cloud sensor: one triangulated-surface raycast per
/// pattern direction, range perturbed by N(0, σ_range²), sensor-frame
/// points in pattern order.
pub fn sense_point_cloud(
    dem: &DemGrid,
    pose: &Pose,
    pattern: &ScanPattern,
    noise: &SensorNoise,
    step: u64,
) -> Result<PointCloud, SimError> {
    let mut rng = stream(noise.seed, StreamId::PointCloud, step);
    let mut pts = Vec::with_capacity(pattern.len());
    for (index, dir) in pattern.dirs.iter().enumerate() {
        let ray = Ray::new(pose.p, pose.q * dir);
        let hit = raycast_dem_first_hit(dem, &ray, SENSE_T_MAX, RaycastMethod::Triangles)
            .map_err(|_| SimError::RayMiss { index })?;
        let z: f64 = rng.sample(StandardNormal);
        pts.push(dir * (hit.t + noise.sigma_range * z));
    }
    Ok(PointCloud { pts })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AltimeterMode {
    /// Clearance straight down in the navigation frame, attitude-independent.
    NadirVertical,
    /// Range along the body -z axis; degrades with bank.
    BodyAxis,
}

/// Emulate the radar altimeter.
pub fn sense_radar_altimeter(
    dem: &DemGrid,
    pose: &Pose,
    mode: AltimeterMode,
    noise: &SensorNoise,
    step: u64,
) -> Result<f64, SimError> {
    let mut rng = stream(noise.seed, StreamId::RadarAlt, step);
    let z: f64 = rng.sample(StandardNormal);
    let n = noise.sigma_alt * z;
    match mode {
        AltimeterMode::NadirVertical => {
            let ground = sample_bilinear(dem, pose.p.x, pose.p.y)?;
            Ok(pose.p.z - ground + n)
        }
        AltimeterMode::BodyAxis => {
            let ray = Ray::new(pose.p, pose.q * Vec3::new(0.0, 0.0, -1.0));
            let hit = raycast_dem_first_hit(dem, &ray, SENSE_T_MAX, RaycastMethod::Triangles)
                .map_err(|_| SimError::RayMiss { index: 0 })?;
            Ok(hit.t + n)
        }
    }
}

/// Barometric altitude: true MSL altitude plus a constant bias plus noise.
pub fn sense_baro(pose: &Pose, noise: &SensorNoise, step: u64) -> f64 {
    let mut rng = stream(noise.seed, StreamId::Baro, step);
    let z: f64 = rng.sample(StandardNormal);
    pose.p.z + noise.baro_bias + noise.sigma_baro * z
}
