//! Marginalized particle filter over the INS error state.
//!
//! Particles sample only the nonlinear substate δp; the conditionally linear
//! 12-dim substate (δv, δθ, δa_bias, δω_bias) is carried per particle as a
//! conditional mean with one covariance shared by all particles — exact
//! here, because the transition matrices and process noises do not depend on
//! the particle state. The terrain measurement enters only through particle
//! weights (its linear coupling is zero); the linear substate learns from
//! the sampled δp transition via a Kalman information step, which can be
//! switched off for ablation.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::ins::{ErrorModel, ErrorState, Mat12, Vec12};
use crate::rng::{stream, StreamId};

#[derive(Debug, Error, PartialEq)]
pub enum MpfError {
    #[error("all particle weights are zero and cannot be renormalized")]
    AllZeroWeights,
    #[error("innovation covariance is singular; process noise Q_n must be positive definite")]
    SingularInnovation,
    #[error("expected {want} errors, got {got}")]
    LengthMismatch { got: usize, want: usize },
    #[error("filter hygiene violated: {0}")]
    Hygiene(String),
}

/// One hypothesis: position error plus conditional linear-state mean.
#[derive(Clone, Debug)]
pub struct Particle {
    pub pos_err: Vec3,
    pub lin: Vec12,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct MpfConfig {
    pub n_particles: usize,
    /// Initial δp standard deviation per axis.
    pub dp0_std: Vec3,
    /// Initial linear-substate standard deviations (diagonal prior).
    pub sl0_std: Vec12,
    /// Gaussian likelihood scale applied to the scalar innovation error.
    pub sigma_lik: f64,
    /// Resample when ESS < ess_threshold · N.
    pub ess_threshold: f64,
    pub seed: u64,
    /// Kalman information step feeding the sampled δp transition back into
    /// the linear substate.
    pub information_step: bool,
}

impl Default for MpfConfig {
    fn default() -> Self {
        Self {
            n_particles: 500,
            dp0_std: Vec3::new(100.0, 100.0, 30.0),
            sl0_std: Vec12::repeat(0.1),
            sigma_lik: 1.0,
            ess_threshold: 0.5,
            seed: 0,
            information_step: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mpf {
    pub particles: Vec<Particle>,
    /// Shared conditional covariance of the linear substate.
    pub cov: Mat12,
    cfg: MpfConfig,
    step: u64,
    uniform_resets: u64,
}

impl Mpf {
    /// Particles ~ N(0, diag(dp0_std²)) in δp, zero linear means, shared
    /// P = diag(sl0_std²), uniform weights.
    pub fn init(cfg: MpfConfig) -> Self {
        assert!(cfg.n_particles >= 1, "need at least one particle");
        let mut rng = stream(cfg.seed, StreamId::MpfInit, 0);
        let w = 1.0 / cfg.n_particles as f64;
        let particles = (0..cfg.n_particles)
            .map(|_| {
                let mut pos_err = Vec3::zeros();
                for i in 0..3 {
                    let z: f64 = rng.sample(StandardNormal);
                    pos_err[i] = cfg.dp0_std[i] * z;
                }
                Particle { pos_err, lin: Vec12::zeros(), weight: w }
            })
            .collect();
        let mut cov = Mat12::zeros();
        for i in 0..12 {
            cov[(i, i)] = cfg.sl0_std[i] * cfg.sl0_std[i];
        }
        Self { particles, cov, cfg, step: 0, uniform_resets: 0 }
    }

    pub fn config(&self) -> &MpfConfig {
        &self.cfg
    }

    pub fn n(&self) -> usize {
        self.particles.len()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Times the weight set underflowed and was reset to uniform.
    pub fn uniform_resets(&self) -> u64 {
        self.uniform_resets
    }

    pub fn ess(&self) -> f64 {
        let sum_sq: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        if sum_sq > 0.0 {
            1.0 / sum_sq
        } else {
            0.0
        }
    }

    /// Multiply weights by exp(−err²/(2σ²)) and renormalize. A common
    /// factor exp(+min err²/(2σ²)) is applied for numerical range; it
    /// cancels in the renormalization. Underflow of the whole set resets
    /// weights to uniform.
    pub fn measurement_update(&mut self, errs: &[f64]) -> Result<(), MpfError> {
        if errs.len() != self.particles.len() {
            return Err(MpfError::LengthMismatch { got: errs.len(), want: self.particles.len() });
        }
        let inv_2s2 = 0.5 / (self.cfg.sigma_lik * self.cfg.sigma_lik);
        let min_e2 = errs.iter().fold(f64::INFINITY, |m, e| m.min(e * e));
        let mut sum = 0.0;
        for (p, e) in self.particles.iter_mut().zip(errs) {
            let lik = if e.is_finite() { (-(e * e - min_e2) * inv_2s2).exp() } else { 0.0 };
            p.weight *= lik;
            sum += p.weight;
        }
        if !sum.is_finite() || sum <= 0.0 {
            log::warn!(
                "all particle likelihoods underflowed at step {}; resetting weights to uniform",
                self.step
            );
            self.uniform_resets += 1;
            let n = self.particles.len();
            if n == 0 {
                return Err(MpfError::AllZeroWeights);
            }
            let w = 1.0 / n as f64;
            for p in &mut self.particles {
                p.weight = w;
            }
            return Ok(());
        }
        for p in &mut self.particles {
            p.weight /= sum;
        }
        Ok(())
    }

    /// Systematic resampling (one uniform draw, stride 1/N) when the
    /// effective sample size drops below the threshold fraction; linear
    /// means are copied with their parent, weights reset uniform.
    pub fn resample(&mut self) {
        let n = self.particles.len();
        if self.ess() >= self.cfg.ess_threshold * n as f64 {
            return;
        }
        let mut rng = stream(self.cfg.seed, StreamId::MpfResample, self.step);
        let u0: f64 = rng.random::<f64>() / n as f64;
        let mut out = Vec::with_capacity(n);
        let w_new = 1.0 / n as f64;
        let mut cum = self.particles[0].weight;
        let mut idx = 0usize;
        for j in 0..n {
            let u = u0 + j as f64 * w_new;
            while u > cum && idx + 1 < n {
                idx += 1;
                cum += self.particles[idx].weight;
            }
            let mut p = self.particles[idx].clone();
            p.weight = w_new;
            out.push(p);
        }
        self.particles = out;
    }

    /// Marginalized time update:
    /// 1. sample δp⁺ ~ N(δp + A_n s_l, A_n P A_nᵀ + Q_n) per particle;
    /// 2. treat the sampled transition as a measurement of the linear state
    ///    (Kalman information step, shared gain and covariance);
    /// 3. Kalman-predict the linear state through A_l.
    pub fn time_update(&mut self, model: &ErrorModel) -> Result<(), MpfError> {
        let s_mat = model.a_n * self.cov * model.a_n.transpose() + model.q_n;
        let chol = nalgebra::Cholesky::new(s_mat).ok_or(MpfError::SingularInnovation)?;
        let l = chol.l();
        let s_inv = chol.inverse();
        let gain = self.cov * model.a_n.transpose() * s_inv;

        let mut rng = stream(self.cfg.seed, StreamId::MpfPropagate, self.step);
        for p in &mut self.particles {
            let mean = p.pos_err + model.a_n * p.lin;
            let mut white = Vec3::zeros();
            for i in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                white[i] = z;
            }
            let sampled = mean + l * white;
            if self.cfg.information_step {
                let z = sampled - p.pos_err;
                p.lin += gain * (z - model.a_n * p.lin);
            }
            p.pos_err = sampled;
        }

        let p_star = if self.cfg.information_step {
            self.cov - gain * model.a_n * self.cov
        } else {
            self.cov
        };
        self.cov = model.a_l * p_star * model.a_l.transpose() + model.q_l;
        self.cov = 0.5 * (self.cov + self.cov.transpose());
        self.step += 1;
        Ok(())
    }

    /// Weighted-mean point estimate of the full error state.
    pub fn estimate(&self) -> ErrorState {
        let mut dp = Vec3::zeros();
        let mut lin = Vec12::zeros();
        for p in &self.particles {
            dp += p.pos_err * p.weight;
            lin += p.lin * p.weight;
        }
        ErrorState::from_parts(dp, &lin)
    }

    /// Invariants every run asserts at every step: normalized weights,
    /// ESS within [1, N], shared covariance symmetric positive semidefinite.
    pub fn check_hygiene(&self) -> Result<(), MpfError> {
        let n = self.particles.len() as f64;
        let sum: f64 = self.particles.iter().map(|p| p.weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MpfError::Hygiene(format!("weight sum {sum}")));
        }
        if self.particles.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(&p.weight)) {
            return Err(MpfError::Hygiene("weight outside [0, 1]".into()));
        }
        let ess = self.ess();
        if !(1.0 - 1e-9..=n + 1e-9).contains(&ess) {
            return Err(MpfError::Hygiene(format!("ESS {ess} outside [1, {n}]")));
        }
        let asym = (self.cov - self.cov.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(MpfError::Hygiene(format!("covariance asymmetry {asym}")));
        }
        let min_eig = self
            .cov
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |m, e| m.min(*e));
        if min_eig < -1e-10 {
            return Err(MpfError::Hygiene(format!("covariance eigenvalue {min_eig}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use crate::ins::Mat3x12;
    use approx::assert_relative_eq;

    fn small_cfg(n: usize) -> MpfConfig {
        MpfConfig { n_particles: n, seed: 9, ..Default::default() }
    }

    /// Model with A_n = [dt I | 0], A_l = I and configurable noise.
    fn plain_model(dt: f64, q_dp: f64, q_l: f64) -> ErrorModel {
        let mut a_n = Mat3x12::zeros();
        for i in 0..3 {
            a_n[(i, i)] = dt;
        }
        ErrorModel {
            a_n,
            a_l: Mat12::identity(),
            q_n: Mat3::identity() * q_dp,
            q_l: Mat12::identity() * q_l,
            dt,
        }
    }

    #[test]
    fn init_uniform_weights() {
        let mpf = Mpf::init(small_cfg(4));
        for p in &mpf.particles {
            assert_eq!(p.weight, 0.25);
        }
        assert_relative_eq!(mpf.ess(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn init_degenerate_prior() {
        let cfg = MpfConfig { dp0_std: Vec3::zeros(), ..small_cfg(16) };
        let mpf = Mpf::init(cfg);
        for p in &mpf.particles {
            assert_eq!(p.pos_err, Vec3::zeros());
        }
    }

    #[test]
    fn init_spread_matches_prior_std() {
        let cfg = MpfConfig {
            dp0_std: Vec3::new(50.0, 20.0, 5.0),
            ..small_cfg(100_000)
        };
        let mpf = Mpf::init(cfg);
        for axis in 0..3 {
            let xs: Vec<f64> = mpf.particles.iter().map(|p| p.pos_err[axis]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (xs.len() - 1) as f64)
                .sqrt();
            let want = [50.0, 20.0, 5.0][axis];
            assert!((std - want).abs() / want < 0.02, "axis {axis}: std {std}");
        }
    }

    #[test]
    fn equal_errors_leave_weights_unchanged() {
        let mut mpf = Mpf::init(small_cfg(8));
        mpf.measurement_update(&[3.0; 8]).unwrap();
        for p in &mpf.particles {
            assert_relative_eq!(p.weight, 0.125, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_particle_gaussian_ratio() {
        let mut cfg = small_cfg(2);
        cfg.sigma_lik = 2.5;
        let mut mpf = Mpf::init(cfg);
        mpf.measurement_update(&[0.0, 2.5]).unwrap();
        let r = (-0.5f64).exp();
        assert_relative_eq!(mpf.particles[0].weight, 1.0 / (1.0 + r), epsilon = 1e-12);
        assert_relative_eq!(mpf.particles[1].weight, r / (1.0 + r), epsilon = 1e-12);
        assert!((mpf.particles[0].weight - 0.622).abs() < 1e-3);
        assert!((mpf.particles[1].weight - 0.378).abs() < 1e-3);
    }

    #[test]
    fn weights_renormalize_after_update() {
        let mut mpf = Mpf::init(small_cfg(64));
        let mut rng = crate::rng::stream(3, crate::rng::StreamId::Bench, 0);
        for step in 0..20 {
            let errs: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..4.0)).collect();
            mpf.measurement_update(&errs).unwrap();
            let sum: f64 = mpf.particles.iter().map(|p| p.weight).sum();
            assert!((sum - 1.0).abs() <= 1e-12, "step {step}: sum {sum}");
            mpf.check_hygiene().unwrap();
        }
    }

    #[test]
    fn underflow_resets_to_uniform() {
        let mut cfg = small_cfg(4);
        cfg.sigma_lik = 1.0;
        let mut mpf = Mpf::init(cfg);
        mpf.measurement_update(&[f64::INFINITY; 4]).unwrap();
        for p in &mpf.particles {
            assert_eq!(p.weight, 0.25);
        }
        assert_eq!(mpf.uniform_resets(), 1);
    }

    #[test]
    fn degenerate_weights_resample_to_single_parent() {
        let mut mpf = Mpf::init(small_cfg(4));
        let marker = Vec3::new(7.0, -7.0, 7.0);
        mpf.particles[0].pos_err = marker;
        mpf.particles[0].weight = 1.0;
        for p in &mut mpf.particles[1..] {
            p.weight = 0.0;
        }
        mpf.resample();
        for p in &mpf.particles {
            assert_eq!(p.pos_err, marker);
            assert_eq!(p.weight, 0.25);
        }
    }

    #[test]
    fn uniform_weights_do_not_resample() {
        let mut mpf = Mpf::init(small_cfg(16));
        let before: Vec<Vec3> = mpf.particles.iter().map(|p| p.pos_err).collect();
        mpf.resample();
        let after: Vec<Vec3> = mpf.particles.iter().map(|p| p.pos_err).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn systematic_resampling_is_unbiased() {
        // Expected offspring count of each particle is N·w_i. Weights are
        // skewed enough that ESS < N/2 and resampling actually triggers.
        let n = 8usize;
        let weights = [0.5, 0.3, 0.05, 0.05, 0.025, 0.025, 0.025, 0.025];
        let trials = 10_000;
        let mut counts = vec![0.0f64; n];
        for trial in 0..trials {
            let mut cfg = small_cfg(n);
            cfg.seed = trial as u64;
            let mut mpf = Mpf::init(cfg);
            for (i, p) in mpf.particles.iter_mut().enumerate() {
                p.pos_err = Vec3::new(i as f64, 0.0, 0.0);
                p.weight = weights[i];
            }
            mpf.resample();
            for p in &mpf.particles {
                counts[p.pos_err.x as usize] += 1.0;
            }
        }
        for i in 0..n {
            let mean = counts[i] / trials as f64;
            let expect = n as f64 * weights[i];
            // Systematic resampling keeps per-trial counts within one of
            // N·w, so the trial-mean is tight.
            assert!(
                (mean - expect).abs() < 0.03,
                "particle {i}: mean {mean}, expected {expect}"
            );
        }
    }

    #[test]
    fn time_update_stationary_without_noise_or_linear_state() {
        let mut cfg = small_cfg(8);
        cfg.sl0_std = Vec12::zeros();
        let mut mpf = Mpf::init(cfg);
        let before: Vec<Vec3> = mpf.particles.iter().map(|p| p.pos_err).collect();
        // Q_n must stay positive definite; use a vanishing but nonzero one.
        let model = plain_model(0.02, 1e-30, 0.0);
        mpf.time_update(&model).unwrap();
        for (p, b) in mpf.particles.iter().zip(&before) {
            assert_relative_eq!(p.pos_err, *b, epsilon = 1e-12);
            assert_eq!(p.lin, Vec12::zeros());
        }
    }

    #[test]
    fn scalar_kalman_gain_arithmetic() {
        // 1-dim analog embedded in the x components: T_s = 1, P_vv = 1,
        // Q_n = 1 → S = 2, K_velocity = 0.5.
        let mut cfg = small_cfg(1);
        cfg.sl0_std = Vec12::zeros();
        cfg.sl0_std[0] = 1.0;
        cfg.dp0_std = Vec3::zeros();
        let mut mpf = Mpf::init(cfg);
        let model = plain_model(1.0, 1.0, 0.0);
        let s_mat = model.a_n * mpf.cov * model.a_n.transpose() + model.q_n;
        assert_relative_eq!(s_mat[(0, 0)], 2.0, epsilon = 1e-12);
        let gain = mpf.cov * model.a_n.transpose() * s_mat.try_inverse().unwrap();
        assert_relative_eq!(gain[(0, 0)], 0.5, epsilon = 1e-12);
        mpf.time_update(&model).unwrap();
        // After the information step the velocity mean absorbs half of the
        // sampled transition.
        let z = mpf.particles[0].pos_err.x;
        assert_relative_eq!(mpf.particles[0].lin[0], 0.5 * z, epsilon = 1e-12);
    }

    #[test]
    fn singular_innovation_detected() {
        let mut cfg = small_cfg(4);
        cfg.sl0_std = Vec12::zeros();
        let mut mpf = Mpf::init(cfg);
        let model = plain_model(0.02, 0.0, 0.0);
        assert_eq!(mpf.time_update(&model), Err(MpfError::SingularInnovation));
    }

    #[test]
    fn estimate_single_particle() {
        let mut mpf = Mpf::init(small_cfg(1));
        mpf.particles[0].pos_err = Vec3::new(1.0, 2.0, 3.0);
        mpf.particles[0].lin[0] = -4.0;
        let e = mpf.estimate();
        assert_eq!(e.dp, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(e.dv.x, -4.0);
    }

    #[test]
    fn estimate_symmetric_pair_cancels() {
        let mut mpf = Mpf::init(small_cfg(2));
        let u = Vec3::new(3.0, -1.0, 2.0);
        mpf.particles[0].pos_err = u;
        mpf.particles[1].pos_err = -u;
        mpf.particles[0].weight = 0.5;
        mpf.particles[1].weight = 0.5;
        let e = mpf.estimate();
        assert_relative_eq!(e.dp, Vec3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn estimate_matches_direct_sum() {
        let mut mpf = Mpf::init(small_cfg(32));
        let mut rng = crate::rng::stream(8, crate::rng::StreamId::Bench, 2);
        let mut wsum = 0.0;
        for p in &mut mpf.particles {
            p.pos_err = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            for i in 0..12 {
                p.lin[i] = rng.random_range(-1.0..1.0);
            }
            p.weight = rng.random_range(0.01..1.0);
            wsum += p.weight;
        }
        for p in &mut mpf.particles {
            p.weight /= wsum;
        }
        let e = mpf.estimate();
        let mut dp = Vec3::zeros();
        let mut lin = Vec12::zeros();
        for p in &mpf.particles {
            dp += p.pos_err * p.weight;
            lin += p.lin * p.weight;
        }
        assert_relative_eq!(e.dp, dp, epsilon = 1e-12);
        assert_relative_eq!(e.lin_vector(), lin, epsilon = 1e-12);
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let mut mpf = Mpf::init(small_cfg(16));
        let model = plain_model(0.02, 0.25, 1e-6);
        for _ in 0..200 {
            mpf.time_update(&model).unwrap();
            mpf.check_hygiene().unwrap();
        }
    }

    #[test]
    fn filter_is_deterministic() {
        let run = || {
            let mut mpf = Mpf::init(small_cfg(64));
            let model = plain_model(0.02, 0.25, 1e-6);
            for step in 0..50 {
                let errs: Vec<f64> =
                    (0..64).map(|i| ((i + step) % 7) as f64 * 0.3).collect();
                mpf.measurement_update(&errs).unwrap();
                mpf.resample();
                mpf.time_update(&model).unwrap();
            }
            let e = mpf.estimate();
            (e.dp, e.dv)
        };
        let (dp1, dv1) = run();
        let (dp2, dv2) = run();
        assert_eq!(dp1, dp2);
        assert_eq!(dv1, dv2);
    }

    #[test]
    fn uninformative_errors_keep_prior_spread() {
        // All errors equal every step: weights stay uniform and the δp
        // cloud must not collapse.
        for seed in 0..10u64 {
            let cfg = MpfConfig {
                n_particles: 400,
                dp0_std: Vec3::new(50.0, 50.0, 10.0),
                seed,
                ..Default::default()
            };
            let mut mpf = Mpf::init(cfg);
            let model = plain_model(0.02, 0.25, 1e-8);
            for _ in 0..100 {
                mpf.measurement_update(&vec![1.0; 400]).unwrap();
                mpf.resample();
                mpf.time_update(&model).unwrap();
            }
            let xs: Vec<f64> = mpf.particles.iter().map(|p| p.pos_err.x).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (xs.len() - 1) as f64)
                .sqrt();
            assert!(std > 0.5 * 50.0, "seed {seed}: spread collapsed to {std}");
            assert_relative_eq!(mpf.ess(), 400.0, epsilon = 1e-9);
        }
    }
}
