//! Scenario configuration (S1-S12 presets), the end-to-end simulation loop,
//! and per-run error metrics.
//!
//! A run: synthesize terrain, lay out the trajectory, synthesize IMU
//! readings, then per measurement step sense the terrain from the true pose,
//! score every particle's predicted measurement against it, update the
//! filter, and log truth / dead-reckoned / corrected positions. Everything
//! is keyed off the scenario seed, so a (config, seed) pair reproduces its
//! trace byte for byte.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{quat_compose, quat_from_rotvec, Mat3, RaycastMethod, Vec3};
use crate::ins::{
    correct_open_loop, error_transition, propagate_nominal, Mat12, NominalState, Vec12,
};
use crate::mpf::{Mpf, MpfConfig, MpfError};
use crate::predict::{
    hypothetical_pose, innovation_altimeter, innovation_xyz, innovation_z, make_scan_pattern,
    predict_altimeter, predict_pc_raycast, predict_pc_sliding, ScanPattern, WORST_CASE_ERR_M,
};
use crate::rng::{stream, StreamId};
use crate::sim::{
    gen_trajectory, sense_baro, sense_point_cloud, sense_radar_altimeter, synth_imu,
    AltimeterMode, ImuGrade, ImuSpec, Leg, SensorNoise, SimError, StartPose, TruthState,
    SENSE_T_MAX,
};
use crate::terrain::{synth_terrain, TerrainClass, TerrainKind};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario preset `{0}`")]
    UnknownPreset(String),
    #[error("scenario schema error: {0}")]
    Schema(String),
    #[error("could not read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario layout error: {0}")]
    Layout(String),
    #[error("step {step}: {source}")]
    Sim { step: usize, source: SimError },
    #[error("step {step}: {source}")]
    Filter { step: usize, source: MpfError },
    #[error("empty trace")]
    EmptyTrace,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    Raycast,
    Sliding,
    Altimeter,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitErrorLevel {
    High,
    Low,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RaycastMethodCfg {
    #[default]
    Triangles,
    Bisection,
}

impl From<RaycastMethodCfg> for RaycastMethod {
    fn from(m: RaycastMethodCfg) -> Self {
        match m {
            RaycastMethodCfg::Triangles => RaycastMethod::Triangles,
            RaycastMethodCfg::Bisection => RaycastMethod::Bisection,
        }
    }
}

fn default_particles() -> usize {
    500
}
fn default_duration() -> f64 {
    120.0
}
fn default_rate() -> f64 {
    50.0
}
fn default_speed() -> f64 {
    100.0
}
fn default_meas_every() -> u32 {
    1
}
fn default_cell() -> f64 {
    30.0
}
fn default_scan_dim() -> usize {
    4
}
fn default_scan_fov() -> f64 {
    12.0
}
fn default_sigma_range() -> f64 {
    1.0
}
fn default_sigma_alt() -> f64 {
    2.0
}
fn default_sigma_baro() -> f64 {
    2.0
}
fn default_baro_bias() -> f64 {
    5.0
}
fn default_q_dp() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

/// Full description of one run. Unknown JSON keys are rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    pub terrain: TerrainKind,
    pub imu_grade: ImuGrade,
    pub bank_deg: f64,
    pub altitude_agl_m: f64,
    pub predictor: Predictor,
    pub init_error: InitErrorLevel,
    #[serde(default = "default_particles")]
    pub particles: usize,
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub imu_rate_hz: f64,
    #[serde(default = "default_speed")]
    pub speed_mps: f64,
    /// Terrain measurement every this many IMU steps.
    #[serde(default = "default_meas_every")]
    pub meas_every: u32,
    #[serde(default = "default_cell")]
    pub cell_m: f64,
    #[serde(default = "default_scan_dim")]
    pub scan_rows: usize,
    #[serde(default = "default_scan_dim")]
    pub scan_cols: usize,
    #[serde(default = "default_scan_fov")]
    pub scan_fov_deg: f64,
    #[serde(default)]
    pub raycast_method: RaycastMethodCfg,
    #[serde(default = "default_sigma_range")]
    pub sigma_range_m: f64,
    #[serde(default = "default_sigma_alt")]
    pub sigma_alt_m: f64,
    #[serde(default = "default_sigma_baro")]
    pub sigma_baro_m: f64,
    #[serde(default = "default_baro_bias")]
    pub baro_bias_m: f64,
    /// Likelihood scale; defaults to the active channel's noise sigma.
    #[serde(default)]
    pub sigma_lik_m: Option<f64>,
    /// Particle roughening std per measurement interval.
    #[serde(default = "default_q_dp")]
    pub q_dp_std_m: f64,
    #[serde(default = "default_true")]
    pub information_step: bool,
}

impl ScenarioConfig {
    pub fn sigma_lik(&self) -> f64 {
        self.sigma_lik_m.unwrap_or(match self.predictor {
            Predictor::Altimeter => self.sigma_alt_m,
            _ => self.sigma_range_m,
        })
    }

    /// Initial error standard deviations: (δp, linear substate).
    pub fn init_stds(&self) -> (Vec3, Vec12) {
        let dp0 = match self.init_error {
            InitErrorLevel::High => Vec3::new(100.0, 100.0, 30.0),
            InitErrorLevel::Low => Vec3::new(10.0, 10.0, 5.0),
        };
        let spec = ImuSpec::preset(self.imu_grade);
        let ba = spec.accel_bias.amax().max(1e-6) * 1.5;
        let bw = spec.gyro_bias.amax().max(1e-12) * 1.5;
        let mut sl0 = Vec12::zeros();
        for i in 0..3 {
            sl0[i] = 0.5; // δv, m/s
            sl0[3 + i] = 1.0e-4; // δθ, rad (aligned INS)
            sl0[6 + i] = ba;
            sl0[9 + i] = bw;
        }
        (dp0, sl0)
    }
}

/// S1-S12 preset table. All presets share high initial error, 100 m/s,
/// 120 s, 50 Hz, 500 particles.
pub fn preset(id: &str) -> Option<ScenarioConfig> {
    let norm = id.to_ascii_uppercase();
    let (terrain, grade, bank, alt, predictor) = match norm.as_str() {
        "S1" => (TerrainClass::Rugged, ImuGrade::Navigation, 30.0, 1000.0, Predictor::Sliding),
        "S2" => {
            (TerrainClass::Rugged, ImuGrade::TacticalLowEnd, 30.0, 1000.0, Predictor::Sliding)
        }
        "S3" => (TerrainClass::Rugged, ImuGrade::Navigation, 30.0, 1000.0, Predictor::Raycast),
        "S4" => (TerrainClass::Rugged, ImuGrade::Navigation, 30.0, 1000.0, Predictor::Sliding),
        "S5" => (TerrainClass::Rugged, ImuGrade::Navigation, 60.0, 150.0, Predictor::Raycast),
        "S6" => (TerrainClass::Rugged, ImuGrade::Navigation, 60.0, 150.0, Predictor::Sliding),
        "S7" => (TerrainClass::Rugged, ImuGrade::Navigation, 0.0, 1000.0, Predictor::Raycast),
        "S8" => (TerrainClass::Rugged, ImuGrade::Navigation, 0.0, 1000.0, Predictor::Sliding),
        "S9" => (TerrainClass::Rugged, ImuGrade::Navigation, 0.0, 1000.0, Predictor::Altimeter),
        "S10" => (TerrainClass::Flat, ImuGrade::Navigation, 0.0, 1000.0, Predictor::Raycast),
        "S11" => (TerrainClass::Flat, ImuGrade::Navigation, 0.0, 1000.0, Predictor::Sliding),
        "S12" => (TerrainClass::Flat, ImuGrade::Navigation, 0.0, 1000.0, Predictor::Altimeter),
        _ => return None,
    };
    let base_elevation_m = match terrain {
        TerrainClass::Rugged => 200.0,
        TerrainClass::Flat => 50.0,
    };
    Some(ScenarioConfig {
        id: norm,
        terrain: TerrainKind { kind: terrain, seed: 4242, extent_m: 16_000.0, base_elevation_m },
        imu_grade: grade,
        bank_deg: bank,
        altitude_agl_m: alt,
        predictor,
        init_error: InitErrorLevel::High,
        particles: default_particles(),
        seed: 1,
        duration_s: default_duration(),
        imu_rate_hz: default_rate(),
        speed_mps: default_speed(),
        meas_every: default_meas_every(),
        cell_m: default_cell(),
        scan_rows: default_scan_dim(),
        scan_cols: default_scan_dim(),
        scan_fov_deg: default_scan_fov(),
        raycast_method: RaycastMethodCfg::Triangles,
        sigma_range_m: default_sigma_range(),
        sigma_alt_m: default_sigma_alt(),
        sigma_baro_m: default_sigma_baro(),
        baro_bias_m: default_baro_bias(),
        sigma_lik_m: None,
        q_dp_std_m: default_q_dp(),
        information_step: true,
    })
}

/// Resolve a preset id (`S1`..`S12`) or load a JSON scenario file.
pub fn load_scenario(spec: &str) -> Result<ScenarioConfig, ScenarioError> {
    if let Some(cfg) = preset(spec) {
        return Ok(cfg);
    }
    if spec.len() <= 4 && spec.to_ascii_uppercase().starts_with('S') {
        return Err(ScenarioError::UnknownPreset(spec.to_string()));
    }
    let text = std::fs::read_to_string(spec)?;
    parse_scenario_json(&text)
}

/// Parse a scenario config, reporting the failing field path.
pub fn parse_scenario_json(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| ScenarioError::Schema(format!("{} at {}", e.inner(), e.path())))
}

/// One record per measurement step.
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub t: f64,
    pub truth: Vec3,
    pub nominal: Vec3,
    pub estimate: Vec3,
    pub err: Vec3,
    pub ess: f64,
    /// Weighted mean |innovation error| across particles.
    pub innov: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub const CSV_HEADER: &'static str =
        "t,true_x,true_y,true_z,nom_x,nom_y,nom_z,est_x,est_y,est_z,err_x,err_y,err_z,ess,innov";

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 160 + 128);
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.t,
                r.truth.x,
                r.truth.y,
                r.truth.z,
                r.nominal.x,
                r.nominal.y,
                r.nominal.z,
                r.estimate.x,
                r.estimate.y,
                r.estimate.z,
                r.err.x,
                r.err.y,
                r.err.z,
                r.ess,
                r.innov
            ));
        }
        out
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RmseWindow {
    Full,
    LastQuarter,
}

/// Per-axis root-mean-square position error of the corrected estimate.
#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct RmseReport {
    pub full: [f64; 3],
    pub last_quarter: [f64; 3],
}

impl RmseReport {
    pub fn horizontal_last_quarter(&self) -> f64 {
        (self.last_quarter[0].powi(2) + self.last_quarter[1].powi(2)).sqrt()
    }

    pub fn horizontal_full(&self) -> f64 {
        (self.full[0].powi(2) + self.full[1].powi(2)).sqrt()
    }
}

/// RMSE over a window of the trace.
pub fn compute_rmse(trace: &RunTrace, window: RmseWindow) -> Result<[f64; 3], ScenarioError> {
    if trace.rows.is_empty() {
        return Err(ScenarioError::EmptyTrace);
    }
    let start = match window {
        RmseWindow::Full => 0,
        RmseWindow::LastQuarter => trace.rows.len() - trace.rows.len().div_ceil(4),
    };
    let rows = &trace.rows[start..];
    let mut acc = [0.0f64; 3];
    for r in rows {
        acc[0] += r.err.x * r.err.x;
        acc[1] += r.err.y * r.err.y;
        acc[2] += r.err.z * r.err.z;
    }
    let n = rows.len() as f64;
    Ok([(acc[0] / n).sqrt(), (acc[1] / n).sqrt(), (acc[2] / n).sqrt()])
}

fn rmse_report(trace: &RunTrace) -> Result<RmseReport, ScenarioError> {
    Ok(RmseReport {
        full: compute_rmse(trace, RmseWindow::Full)?,
        last_quarter: compute_rmse(trace, RmseWindow::LastQuarter)?,
    })
}

/// Leg layout for a scenario: one straight run for zero bank, otherwise
/// straight / turn / straight quarters.
pub fn scenario_legs(cfg: &ScenarioConfig) -> Vec<Leg> {
    if cfg.bank_deg == 0.0 {
        vec![Leg::Straight { duration_s: cfg.duration_s }]
    } else {
        vec![
            Leg::Straight { duration_s: 0.25 * cfg.duration_s },
            Leg::Turn { bank_deg: cfg.bank_deg, duration_s: 0.5 * cfg.duration_s },
            Leg::Straight { duration_s: 0.25 * cfg.duration_s },
        ]
    }
}

struct RunSetup {
    dem: crate::terrain::DemGrid,
    truth: Vec<TruthState>,
    imu: Vec<crate::sim::ImuSample>,
    pattern: ScanPattern,
    noise: SensorNoise,
    nominal0: NominalState,
    mpf_cfg: MpfConfig,
    q_n: Mat3,
    q_l: Mat12,
}

fn setup_run(cfg: &ScenarioConfig) -> Result<RunSetup, ScenarioError> {
    let n_nodes = (cfg.terrain.extent_m / cfg.cell_m).round() as usize + 1;
    let dem = synth_terrain(&cfg.terrain, cfg.cell_m, n_nodes, n_nodes);

    // Center the path in the DEM with a safety margin for the scan swath.
    let legs = scenario_legs(cfg);
    let (bb_min, bb_max) = crate::sim::path_bbox(&legs, cfg.speed_mps, cfg.imu_rate_hz)
        .map_err(|e| ScenarioError::Layout(e.to_string()))?;
    let width = bb_max.x - bb_min.x;
    let height = bb_max.y - bb_min.y;
    let margin_x = 0.5 * (dem.extent_x() - width);
    let margin_y = 0.5 * (dem.extent_y() - height);
    if margin_x < 1000.0 || margin_y < 1000.0 {
        return Err(ScenarioError::Layout(format!(
            "path {width:.0} m x {height:.0} m does not fit the {:.0} m DEM with margin",
            dem.extent_x()
        )));
    }
    let start = StartPose {
        x: dem.x_origin() + margin_x - bb_min.x,
        y: dem.y_origin() + margin_y - bb_min.y,
        heading_rad: 0.0,
    };
    let truth = gen_trajectory(
        &legs,
        cfg.speed_mps,
        cfg.altitude_agl_m,
        &dem,
        cfg.imu_rate_hz,
        start,
    )
    .map_err(|source| ScenarioError::Sim { step: 0, source })?;

    let mut imu_spec = ImuSpec::preset(cfg.imu_grade);
    imu_spec.rate_hz = cfg.imu_rate_hz;
    let imu = synth_imu(&truth, &imu_spec, cfg.seed);

    let pattern = make_scan_pattern(cfg.scan_rows, cfg.scan_cols, cfg.scan_fov_deg);
    let noise = SensorNoise {
        sigma_range: cfg.sigma_range_m,
        sigma_alt: cfg.sigma_alt_m,
        sigma_baro: cfg.sigma_baro_m,
        baro_bias: cfg.baro_bias_m,
        seed: cfg.seed,
    };

    // Draw the true initial INS error from the same prior the filter uses.
    let (dp0, sl0) = cfg.init_stds();
    let mut rng = stream(cfg.seed, StreamId::InitTruth, 0);
    let mut draw3 = |std: [f64; 3]| {
        let mut v = Vec3::zeros();
        for (i, s) in std.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            v[i] = s * z;
        }
        v
    };
    let dp_true = draw3([dp0.x, dp0.y, dp0.z]);
    let dv_true = draw3([sl0[0], sl0[1], sl0[2]]);
    let dtheta_true = draw3([sl0[3], sl0[4], sl0[5]]);

    let t0 = &truth[0];
    let nominal0 = NominalState {
        p: t0.p - dp_true,
        v: t0.v - dv_true,
        q: quat_compose(t0.q, quat_from_rotvec(-dtheta_true)),
        accel_bias: Vec3::zeros(),
        gyro_bias: Vec3::zeros(),
        gravity: crate::gravity_vector(),
    };

    let mpf_cfg = MpfConfig {
        n_particles: cfg.particles,
        dp0_std: dp0,
        sl0_std: sl0,
        sigma_lik: cfg.sigma_lik(),
        ess_threshold: 0.5,
        seed: cfg.seed,
        information_step: cfg.information_step,
    };

    // Roughening is specified per measurement interval; spread it across
    // the IMU steps in between.
    let dt = 1.0 / cfg.imu_rate_hz;
    let q_dp_step = cfg.q_dp_std_m / (cfg.meas_every as f64).sqrt();
    let q_n = Mat3::identity() * q_dp_step.powi(2).max(1e-12);
    let mut q_l = Mat12::zeros();
    let qa = imu_spec.accel_noise_std * dt;
    let qw = imu_spec.gyro_noise_std * dt;
    for i in 0..3 {
        q_l[(i, i)] = (qa * qa).max(1e-16);
        q_l[(3 + i, 3 + i)] = (qw * qw).max(1e-18);
        q_l[(6 + i, 6 + i)] = 1e-12;
        q_l[(9 + i, 9 + i)] = 1e-18;
    }

    Ok(RunSetup { dem, truth, imu, pattern, noise, nominal0, mpf_cfg, q_n, q_l })
}

/// Run a scenario end to end.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(RunTrace, RmseReport), ScenarioError> {
    let setup = setup_run(cfg)?;
    let RunSetup { dem, truth, imu, pattern, noise, nominal0, mpf_cfg, q_n, q_l } = setup;
    let dt = 1.0 / cfg.imu_rate_hz;
    let n_steps = truth.len() - 1;
    let method: RaycastMethod = cfg.raycast_method.into();

    let mut mpf = Mpf::init(mpf_cfg);
    let mut nominal = nominal0;
    let mut trace = RunTrace::default();

    for k in 0..=n_steps {
        if k as u32 % cfg.meas_every == 0 {
            let pose_true = truth[k].pose();
            let errs: Vec<f64> = match cfg.predictor {
                Predictor::Sliding => {
                    let cloud = sense_point_cloud(&dem, &pose_true, &pattern, &noise, k as u64)
                        .map_err(|source| ScenarioError::Sim { step: k, source })?;
                    mpf.particles
                        .par_iter()
                        .map(|p| {
                            let pose = hypothetical_pose(
                                &nominal,
                                p.pos_err,
                                Vec3::new(p.lin[3], p.lin[4], p.lin[5]),
                            );
                            predict_pc_sliding(&dem, &pose, &cloud)
                                .and_then(|z_hat| innovation_z(&cloud, &z_hat))
                                .unwrap_or(WORST_CASE_ERR_M)
                        })
                        .collect()
                }
                Predictor::Raycast => {
                    let cloud = sense_point_cloud(&dem, &pose_true, &pattern, &noise, k as u64)
                        .map_err(|source| ScenarioError::Sim { step: k, source })?;
                    mpf.particles
                        .par_iter()
                        .map(|p| {
                            let pose = hypothetical_pose(
                                &nominal,
                                p.pos_err,
                                Vec3::new(p.lin[3], p.lin[4], p.lin[5]),
                            );
                            predict_pc_raycast(&dem, &pose, &pattern, method, SENSE_T_MAX)
                                .and_then(|pred| innovation_xyz(&cloud, &pred))
                                .unwrap_or(WORST_CASE_ERR_M)
                        })
                        .collect()
                }
                Predictor::Altimeter => {
                    let a = sense_radar_altimeter(
                        &dem,
                        &pose_true,
                        AltimeterMode::NadirVertical,
                        &noise,
                        k as u64,
                    )
                    .map_err(|source| ScenarioError::Sim { step: k, source })?;
                    let h_baro = sense_baro(&pose_true, &noise, k as u64);
                    mpf.particles
                        .par_iter()
                        .map(|p| {
                            predict_altimeter(&dem, nominal.p, h_baro, p.pos_err)
                                .map(|a_hat| innovation_altimeter(a, a_hat))
                                .unwrap_or(WORST_CASE_ERR_M)
                        })
                        .collect()
                }
            };

            mpf.measurement_update(&errs)
                .map_err(|source| ScenarioError::Filter { step: k, source })?;
            mpf.resample();
            mpf.check_hygiene()
                .map_err(|source| ScenarioError::Filter { step: k, source })?;

            let est = mpf.estimate();
            let (p_est, _, _) = correct_open_loop(&nominal, &est);
            let innov: f64 = mpf
                .particles
                .iter()
                .zip(&errs)
                .map(|(p, e)| p.weight * e.abs())
                .sum();
            trace.rows.push(TraceRow {
                t: truth[k].t,
                truth: truth[k].p,
                nominal: nominal.p,
                estimate: p_est,
                err: p_est - truth[k].p,
                ess: mpf.ess(),
                innov,
            });
        }

        if k < n_steps {
            let model = error_transition(&nominal, &imu[k], dt, q_n, q_l);
            mpf.time_update(&model)
                .map_err(|source| ScenarioError::Filter { step: k, source })?;
            mpf.check_hygiene()
                .map_err(|source| ScenarioError::Filter { step: k, source })?;
            nominal = propagate_nominal(&nominal, &imu[k], dt);
        }
    }

    let report = rmse_report(&trace)?;
    Ok((trace, report))
}
