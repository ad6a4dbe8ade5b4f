//! Single-threaded throughput benchmark for the measurement predictors.
//!
//! Times a full N-particle prediction step (N poses × M pattern points) for
//! each method over identical inputs, so the raycast-vs-sliding ratio
//! reflects algorithmic cost rather than parallel speedup.

use std::time::Instant;

use rand::Rng;

use crate::geometry::{quat_from_rotvec, Pose, RaycastMethod, Vec3};
use crate::predict::{predict_pc_raycast, predict_pc_sliding, PointCloud, ScanPattern};
use crate::rng::{stream, StreamId};
use crate::terrain::DemGrid;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BenchMethod {
    RaycastTriangles,
    RaycastBisection,
    Sliding,
}

impl BenchMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BenchMethod::RaycastTriangles => "raycast_triangles",
            BenchMethod::RaycastBisection => "raycast_bisection",
            BenchMethod::Sliding => "sliding",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raycast_triangles" | "triangles" => Some(Self::RaycastTriangles),
            "raycast_bisection" | "bisection" => Some(Self::RaycastBisection),
            "sliding" => Some(Self::Sliding),
            _ => None,
        }
    }
}

/// Timing for one method at one (M, N) size.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub method: &'static str,
    pub m_points: usize,
    pub n_particles: usize,
    /// Wall time per full N-particle prediction step.
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub per_point_ns: f64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("method,m_points,n_particles,mean_us,p50_us,p99_us,per_point_ns\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.3},{:.3},{:.3},{:.3}\n",
            r.method, r.m_points, r.n_particles, r.mean_us, r.p50_us, r.p99_us, r.per_point_ns
        ));
    }
    out
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Deterministic particle poses spread around the DEM center, well above
/// the surface, with mild random attitudes.
fn bench_poses(dem: &DemGrid, n: usize, altitude_above_max: f64) -> Vec<Pose> {
    let (_, z_max) = dem.z_range().expect("bench DEM has elevations");
    let cx = dem.x_origin() + 0.5 * dem.extent_x();
    let cy = dem.y_origin() + 0.5 * dem.extent_y();
    let spread_x = 0.25 * dem.extent_x();
    let spread_y = 0.25 * dem.extent_y();
    let mut rng = stream(0xBE7C, StreamId::Bench, 0);
    (0..n)
        .map(|_| Pose {
            p: Vec3::new(
                cx + rng.random_range(-spread_x..spread_x),
                cy + rng.random_range(-spread_y..spread_y),
                z_max + altitude_above_max,
            ),
            q: quat_from_rotvec(Vec3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-3.0..3.0),
            )),
        })
        .collect()
}

/// Time `steps` full prediction sweeps of `n_particles` poses per method.
///
/// The sliding predictor gets a fixed received cloud (sensed once from the
/// first pose); its cost does not depend on `t_max` because it never
/// marches a ray.
pub fn bench_predictors(
    dem: &DemGrid,
    pattern: &ScanPattern,
    n_particles: usize,
    steps: usize,
    t_max: f64,
    methods: &[BenchMethod],
    altitude_above_max: f64,
) -> Vec<BenchRow> {
    assert!(n_particles >= 1 && steps >= 1);
    let poses = bench_poses(dem, n_particles, altitude_above_max);
    let received: PointCloud = predict_pc_raycast(
        dem,
        &poses[0],
        pattern,
        RaycastMethod::Triangles,
        t_max.max(50_000.0),
    )
    .expect("bench reference cloud");

    let mut rows = Vec::new();
    for method in methods {
        let sweep = |sink: &mut f64| {
            for pose in &poses {
                match method {
                    BenchMethod::RaycastTriangles => {
                        if let Ok(pc) = predict_pc_raycast(
                            dem,
                            pose,
                            pattern,
                            RaycastMethod::Triangles,
                            t_max,
                        ) {
                            *sink += pc.pts[0].z;
                        }
                    }
                    BenchMethod::RaycastBisection => {
                        if let Ok(pc) = predict_pc_raycast(
                            dem,
                            pose,
                            pattern,
                            RaycastMethod::Bisection,
                            t_max,
                        ) {
                            *sink += pc.pts[0].z;
                        }
                    }
                    BenchMethod::Sliding => {
                        if let Ok(z) = predict_pc_sliding(dem, pose, &received) {
                            *sink += z[0];
                        }
                    }
                }
            }
        };

        let mut sink = 0.0;
        sweep(&mut sink); // warmup
        let mut samples_us = Vec::with_capacity(steps);
        for _ in 0..steps {
            let t0 = Instant::now();
            sweep(&mut sink);
            samples_us.push(t0.elapsed().as_secs_f64() * 1e6);
        }
        std::hint::black_box(sink);

        let mut sorted = samples_us.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean_us = samples_us.iter().sum::<f64>() / samples_us.len() as f64;
        rows.push(BenchRow {
            method: method.name(),
            m_points: pattern.len(),
            n_particles,
            mean_us,
            p50_us: percentile(&sorted, 0.5),
            p99_us: percentile(&sorted, 0.99),
            per_point_ns: mean_us * 1e3 / (n_particles * pattern.len()) as f64,
        });
    }
    rows
}
