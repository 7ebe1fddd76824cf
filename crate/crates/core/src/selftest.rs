//! Numerical oracles for the analytic derivatives and covariances.
//!
//! Every check draws randomized instances from a seeded generator, compares
//! the library's closed forms against central finite differences or Monte
//! Carlo sampling and reports the worst deviation found.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix2, SMatrix, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::imu::{
    correct_bias, imu_jacobian, imu_residual, predict, preintegrate, ImuBias, ImuNoiseParams,
    ImuSample, PreintegratedImu, RobotState, Vec15, PHI, POS, VEL,
};
use crate::lie::{so3_exp, Rotation, Se2Pose, Vec3};
use crate::sim::{gen_trajectory, SimTrajectory, synth_imu, PathShape, TrajectorySpec};
use crate::solver::{
    lidar_noise_variance, perturbation_jacobians, pose_point_jacobian, transform_point,
    Correspondence, EdgeCorrespondence, PerturbationModel, PlaneCorrespondence,
};

/// Step for central differences.
pub const FD_STEP: f64 = 1e-6;
/// Relative errors are measured against at least this norm.
pub const FD_FLOOR: f64 = 1e-2;
pub const JACOBIAN_TOLERANCE: f64 = 1e-4;
pub const IMU_COVARIANCE_TOLERANCE: f64 = 0.15;
pub const LIDAR_COVARIANCE_TOLERANCE: f64 = 0.20;
pub const ROUND_TRIP_POSITION_TOLERANCE: f64 = 1e-5;
pub const ROUND_TRIP_ROTATION_TOLERANCE: f64 = 1e-6;
/// Accepted range of the error ratio when the bias offset is halved.
pub const BIAS_ORDER_RATIO: (f64, f64) = (3.5, 4.5);

const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

/// Outcome of one oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    /// Worst measured deviation.
    pub worst: f64,
    pub tolerance: f64,
    /// Whether `worst` must fall below or inside the tolerance.
    pub range: Option<(f64, f64)>,
    pub seconds: f64,
}

impl CheckReport {
    fn below(name: &str, instances: usize, worst: f64, tolerance: f64) -> Self {
        CheckReport {
            name: name.to_string(),
            instances,
            worst,
            tolerance,
            range: None,
            seconds: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        match self.range {
            Some((lo, hi)) => self.worst >= lo && self.worst <= hi,
            None => self.worst.is_finite() && self.worst < self.tolerance,
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        match self.range {
            Some((lo, hi)) => write!(
                f,
                "{status} {:<28} n={:<6} value={:.4} expected [{lo}, {hi}] ({:.2}s)",
                self.name, self.instances, self.worst, self.seconds
            ),
            None => write!(
                f,
                "{status} {:<28} n={:<6} worst={:.3e} tol={:.1e} ({:.2}s)",
                self.name, self.instances, self.worst, self.tolerance, self.seconds
            ),
        }
    }
}

fn timed(f: impl FnOnce() -> CheckReport) -> CheckReport {
    let start = Instant::now();
    let mut r = f();
    r.seconds = start.elapsed().as_secs_f64();
    r
}

fn gauss3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn uniform3(rng: &mut ChaCha8Rng, half: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    so3_exp(&uniform3(rng, 1.5))
}

fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(FD_FLOOR)
}

/// Worst blockwise relative error over 3x3 blocks.
fn blockwise_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for r in (0..analytic.nrows()).step_by(3) {
        for c in (0..analytic.ncols()).step_by(3) {
            let a = analytic.view((r, c), (3, 3)).into_owned();
            let n = numeric.view((r, c), (3, 3)).into_owned();
            worst = worst.max(relative_error(&a, &n));
        }
    }
    worst
}

fn random_imu_stream(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<ImuSample> {
    let w0 = uniform3(rng, 1.0);
    let w1 = uniform3(rng, 1.0);
    let a0 = uniform3(rng, 2.0) - GRAVITY;
    let a1 = uniform3(rng, 2.0);
    (0..n)
        .map(|k| {
            let s = k as f64 / (n - 1) as f64;
            ImuSample::new(k as f64 / rate, w0 + w1 * s, a0 + a1 * (s * 3.0).sin())
        })
        .collect()
}

fn random_state(rng: &mut ChaCha8Rng) -> RobotState {
    RobotState {
        rot: random_rotation(rng),
        pos: uniform3(rng, 10.0),
        vel: uniform3(rng, 3.0),
        bias: ImuBias::new(uniform3(rng, 0.1), uniform3(rng, 0.01)),
    }
}

/// Checks the 15x30 IMU residual Jacobian.
pub fn imu_jacobian_check(instances: usize, seed: u64) -> CheckReport {
    timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = ImuNoiseParams::default();
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let n = rng.random_range(3..40);
            let samples = random_imu_stream(&mut rng, n, 200.0);
            let lin_bias = ImuBias::new(uniform3(&mut rng, 0.1), uniform3(&mut rng, 0.01));
            let pre = preintegrate(&samples, &lin_bias, &noise).expect("valid stream");
            let si = random_state(&mut rng);
            let mut sj = predict(&si, &pre, &GRAVITY);
            let mut jitter = Vec15::zeros();
            for k in 0..15 {
                jitter[k] = rng.random_range(-0.1..0.1);
            }
            sj = sj.boxplus(&jitter);
            let analytic = imu_jacobian(&si, &sj, &pre, &GRAVITY);
            let mut numeric = DMatrix::zeros(15, 30);
            for c in 0..30 {
                let mut d = Vec15::zeros();
                d[c % 15] = FD_STEP;
                let (plus, minus) = if c < 15 {
                    (
                        imu_residual(&si.boxplus(&d), &sj, &pre, &GRAVITY),
                        imu_residual(&si.boxplus(&-d), &sj, &pre, &GRAVITY),
                    )
                } else {
                    (
                        imu_residual(&si, &sj.boxplus(&d), &pre, &GRAVITY),
                        imu_residual(&si, &sj.boxplus(&-d), &pre, &GRAVITY),
                    )
                };
                numeric.set_column(c, &((plus - minus) / (2.0 * FD_STEP)));
            }
            let analytic = DMatrix::from_column_slice(15, 30, analytic.as_slice());
            worst = worst.max(blockwise_error(&analytic, &numeric));
        }
        CheckReport::below("imu jacobian", instances, worst, JACOBIAN_TOLERANCE)
    })
}

fn random_pose(rng: &mut ChaCha8Rng) -> Se2Pose {
    Se2Pose::new(
        rng.random_range(-3.1..3.1),
        rng.random_range(-20.0..20.0),
        rng.random_range(-20.0..20.0),
    )
}

fn random_sensor_point(rng: &mut ChaCha8Rng) -> Vec3 {
    let dir = gauss3(rng).normalize();
    dir * rng.random_range(1.0..30.0)
}

fn planar_fd<F: Fn(&Se2Pose) -> Vec3>(pose: &Se2Pose, f: F) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(3, 3);
    for c in 0..3 {
        let shift = |s: f64| {
            let mut p = *pose;
            match c {
                0 => p.d.x += s,
                1 => p.d.y += s,
                _ => p.set_yaw(pose.yaw() + s),
            }
            p
        };
        let col = (f(&shift(FD_STEP)) - f(&shift(-FD_STEP))) / (2.0 * FD_STEP);
        m.set_column(c, &col);
    }
    m
}

/// Checks the derivative of the planar point transform.
pub fn point_jacobian_check(instances: usize, seed: u64) -> CheckReport {
    timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let pose = random_pose(&mut rng);
            let p = random_sensor_point(&mut rng);
            let numeric = planar_fd(&pose, |x| transform_point(x, &p));
            let a = pose_point_jacobian(&pose, &p);
            let analytic = DMatrix::from_column_slice(3, 3, a.as_slice());
            worst = worst.max(relative_error(&analytic, &numeric));
        }
        CheckReport::below("point jacobian", instances, worst, JACOBIAN_TOLERANCE)
    })
}

/// A correspondence whose transformed source sits 0.05..0.5 m off the
/// feature, away from the kink of the distance function.
fn random_correspondence(rng: &mut ChaCha8Rng, pose: &Se2Pose, edge: bool) -> Correspondence {
    loop {
        let p = random_sensor_point(rng);
        let q = transform_point(pose, &p);
        let n = gauss3(rng).normalize();
        let off = rng.random_range(0.05..0.5);
        let foot = q - n * off;
        let u = n.cross(&gauss3(rng)).normalize();
        if edge {
            let a = foot + u * rng.random_range(0.05..1.0);
            let b = foot - u * rng.random_range(0.05..1.0);
            if let Some(c) = EdgeCorrespondence::new(p, a, b) {
                return Correspondence::Edge(c);
            }
        } else {
            let v = n.cross(&u);
            let a = foot + u * rng.random_range(-1.0..1.0);
            let b = a + u * rng.random_range(0.1..1.0);
            let c = a + v * rng.random_range(0.1..1.0);
            if let Some(c) = PlaneCorrespondence::new(p, a, b, c) {
                return Correspondence::Plane(c);
            }
        }
    }
}

/// Checks the residual Jacobians of point-to-line or point-to-plane
/// correspondences with respect to the planar pose.
pub fn correspondence_jacobian_check(instances: usize, seed: u64, edge: bool) -> CheckReport {
    timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let pose = random_pose(&mut rng);
            let c = random_correspondence(&mut rng, &pose, edge);
            let numeric = planar_fd(&pose, |x| Vec3::repeat(c.residual(x)));
            let numeric = numeric.rows(0, 1).into_owned();
            let analytic = DMatrix::from_row_slice(1, 3, c.jacobian(&pose).as_slice());
            worst = worst.max(relative_error(&analytic, &numeric));
        }
        let name = if edge { "edge jacobian" } else { "plane jacobian" };
        CheckReport::below(name, instances, worst, JACOBIAN_TOLERANCE)
    })
}

/// Residual after tilting the rotated point by `eta` and lifting it by `eta_z`.
fn perturbed_residual(c: &Correspondence, pose: &Se2Pose, eta: &Vec3, eta_z: f64) -> f64 {
    let rp = Rotation::from_yaw(pose.yaw()).act(c.source());
    let q = so3_exp(eta).act(&rp) + Vec3::new(pose.d.x, pose.d.y, eta_z);
    c.distance(&q)
}

/// Checks the residual sensitivities to tilt and height perturbations.
pub fn perturbation_jacobian_check(instances: usize, seed: u64) -> CheckReport {
    timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for k in 0..instances {
            let pose = random_pose(&mut rng);
            let c = random_correspondence(&mut rng, &pose, k % 2 == 0);
            let (jt, jz) = perturbation_jacobians(&c, &pose);
            let mut numeric = DMatrix::zeros(1, 4);
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = FD_STEP;
                numeric[(0, i)] = (perturbed_residual(&c, &pose, &e, 0.0)
                    - perturbed_residual(&c, &pose, &-e, 0.0))
                    / (2.0 * FD_STEP);
            }
            numeric[(0, 3)] = (perturbed_residual(&c, &pose, &Vec3::zeros(), FD_STEP)
                - perturbed_residual(&c, &pose, &Vec3::zeros(), -FD_STEP))
                / (2.0 * FD_STEP);
            let analytic = DMatrix::from_row_slice(1, 4, &[jt[0], jt[1], jt[2], jz]);
            worst = worst.max(relative_error(&analytic, &numeric));
        }
        CheckReport::below("perturbation jacobians", instances, worst, JACOBIAN_TOLERANCE)
    })
}

fn motion_deltas(pre: &PreintegratedImu) -> (Rotation, Vec3, Vec3) {
    (pre.delta_rot, pre.delta_pos, pre.delta_vel)
}

/// Compares the `[phi, p, v]` block of the propagated covariance with the
/// spread of deltas integrated from noisy copies of one stream.
///
/// Both matrices are scaled by the propagated standard deviations before
/// taking the Frobenius distance, so every axis counts equally.
pub fn imu_covariance_check(samples: usize, seed: u64) -> CheckReport {
    timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rate = 400.0;
        let dt = 1.0 / rate;
        let clean = random_imu_stream(&mut rng, 41, rate);
        let noise = ImuNoiseParams {
            gyro_noise: 2e-3,
            accel_noise: 2e-2,
            ..ImuNoiseParams::default()
        };
        let bias = ImuBias::zero();
        let nominal = preintegrate(&clean, &bias, &noise).expect("valid stream");
        let (r0, p0, v0) = motion_deltas(&nominal);
        let r0_inv = r0.inverse();
        let mut errors = Vec::with_capacity(samples);
        let mut noisy = clean.clone();
        for _ in 0..samples {
            for (s, c) in noisy.iter_mut().zip(&clean) {
                s.gyro = c.gyro + gauss3(&mut rng) * (noise.gyro_noise / dt.sqrt());
                s.accel = c.accel + gauss3(&mut rng) * (noise.accel_noise / dt.sqrt());
            }
            let pre = preintegrate(&noisy, &bias, &noise).expect("valid stream");
            let (r, p, v) = motion_deltas(&pre);
            let mut e = SMatrix::<f64, 9, 1>::zeros();
            e.fixed_rows_mut::<3>(0).copy_from(&(&r0_inv * &r).log());
            e.fixed_rows_mut::<3>(3).copy_from(&(p - p0));
            e.fixed_rows_mut::<3>(6).copy_from(&(v - v0));
            errors.push(e);
        }
        let mean = errors.iter().fold(SMatrix::<f64, 9, 1>::zeros(), |a, e| a + e) / samples as f64;
        let mut mc = SMatrix::<f64, 9, 9>::zeros();
        for e in &errors {
            let d = e - mean;
            mc += d * d.transpose();
        }
        mc /= (samples - 1) as f64;
        let mut model = SMatrix::<f64, 9, 9>::zeros();
        for (bi, si) in [PHI, POS, VEL].into_iter().enumerate() {
            for (bj, sj) in [PHI, POS, VEL].into_iter().enumerate() {
                model
                    .fixed_view_mut::<3, 3>(3 * bi, 3 * bj)
                    .copy_from(&nominal.covariance.fixed_view::<3, 3>(si, sj));
            }
        }
        let scale = SMatrix::<f64, 9, 9>::from_diagonal(&model.diagonal().map(|v| 1.0 / v.sqrt()));
        let a = scale * model * scale;
        let b = scale * mc * scale;
        let err = (a - b).norm() / a.norm();
        CheckReport::below("imu covariance", samples, err, IMU_COVARIANCE_TOLERANCE)
    })
}

/// Residual measured along the nominal gradient, so its sign follows the
/// side of the feature the perturbed point lands on.
fn signed_residual(c: &Correspondence, pose: &Se2Pose, eta: &Vec3, eta_z: f64) -> f64 {
    let rp = Rotation::from_yaw(pose.yaw()).act(c.source());
    let q = so3_exp(eta).act(&rp) + Vec3::new(pose.d.x, pose.d.y, eta_z);
    match c {
        Correspondence::Plane(pl) => pl.signed_distance(&q),
        Correspondence::Edge(e) => {
            let q0 = transform_point(pose, &e.p);
            let dir = (e.a - e.b).normalize();
            let perp = |x: &Vec3| (x - e.b) - dir * dir.dot(&(x - e.b));
            let n = perp(&q0).normalize();
            n.dot(&perp(&q))
        }
    }
}

/// Compares the modeled per-correspondence residual variance with the sample
/// variance under sampled tilt, height and range noise.
pub fn lidar_covariance_check(correspondences: usize, samples: usize, seed: u64) -> CheckReport {
    timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for k in 0..correspondences {
            let sigma = rng.random_range(1e-3..1e-2);
            let rho = rng.random_range(-0.5..0.5);
            let model = PerturbationModel {
                theta_xy_cov: [[sigma * sigma, rho * sigma * sigma], [rho * sigma * sigma, sigma * sigma]],
                sigma_z: rng.random_range(1e-3..1e-2),
                sigma_k: rng.random_range(1e-3..1e-2),
            };
            let pose = random_pose(&mut rng);
            let c = random_correspondence(&mut rng, &pose, k % 2 == 0);
            let (jt, jz) = perturbation_jacobians(&c, &pose);
            let var = lidar_noise_variance(&jt, jz, &model);

            let chol = Matrix2::from(model.theta_xy_cov).cholesky().expect("positive definite");
            let l = chol.l();
            let base = signed_residual(&c, &pose, &Vec3::zeros(), 0.0);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..samples {
                let n = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                let t = l * n;
                let eta = Vec3::new(t.x, t.y, 0.0);
                let eta_z = model.sigma_z * rng.sample::<f64, _>(StandardNormal);
                let eta_k = model.sigma_k * rng.sample::<f64, _>(StandardNormal);
                let r = signed_residual(&c, &pose, &eta, eta_z) + eta_k - base;
                sum += r;
                sum_sq += r * r;
            }
            let n = samples as f64;
            let sample_var = (sum_sq - sum * sum / n) / (n - 1.0);
            worst = worst.max((sample_var - var).abs() / var);
        }
        CheckReport::below(
            "lidar covariance",
            correspondences,
            worst,
            LIDAR_COVARIANCE_TOLERANCE,
        )
    })
}

fn curved_trajectory_windows() -> (Vec<(f64, f64)>, SimTrajectory, Vec<ImuSample>) {
    let spec = TrajectorySpec {
        path: PathShape::Ellipse {
            semi_major: 8.0,
            semi_minor: 5.0,
        },
        speed: 1.5,
        frames: 80,
        ..TrajectorySpec::default()
    };
    let traj = gen_trajectory(&spec).expect("valid trajectory");
    let imu = synth_imu(&traj, &ImuNoiseParams::noiseless(GRAVITY), &ImuBias::zero());
    let windows = (0..spec.frames - 1)
        .map(|j| (traj.frame_time(j), traj.frame_time(j + 1)))
        .collect();
    (windows, traj, imu)
}

fn window(imu: &[ImuSample], t0: f64, t1: f64) -> Vec<ImuSample> {
    imu.iter()
        .filter(|m| m.t >= t0 - 1e-9 && m.t <= t1 + 1e-9)
        .copied()
        .collect()
}

/// Noiseless IMU synthesized along a curved path, preintegrated over each
/// 0.1 s window and propagated from the true state: position and rotation
/// errors against the true end pose.
pub fn preintegration_round_trip_check() -> (CheckReport, CheckReport) {
    let start = Instant::now();
    let (windows, traj, imu) = curved_trajectory_windows();
    let noise = ImuNoiseParams::noiseless(GRAVITY);
    let mut pos_err: f64 = 0.0;
    let mut rot_err: f64 = 0.0;
    for &(t0, t1) in &windows {
        let pre = preintegrate(&window(&imu, t0, t1), &ImuBias::zero(), &noise).expect("window");
        let pred = predict(&traj.state(t0, ImuBias::zero()), &pre, &GRAVITY);
        let truth = traj.pose(t1);
        pos_err = pos_err.max((pred.pos - truth.trans).norm());
        rot_err = rot_err.max((&truth.rot.inverse() * &pred.rot).log().norm());
    }
    let secs = start.elapsed().as_secs_f64();
    let mut p = CheckReport::below(
        "round trip position",
        windows.len(),
        pos_err,
        ROUND_TRIP_POSITION_TOLERANCE,
    );
    let mut r = CheckReport::below(
        "round trip rotation",
        windows.len(),
        rot_err,
        ROUND_TRIP_ROTATION_TOLERANCE,
    );
    p.seconds = secs;
    r.seconds = secs;
    (p, r)
}

/// First-order bias correction leaves a second-order error: halving the
/// bias offset should quarter it. Reports the smallest and largest ratio
/// over the windows of the curved path.
pub fn bias_correction_order_check(seed: u64) -> CheckReport {
    timed(|| {
        let (windows, _, imu) = curved_trajectory_windows();
        let noise = ImuNoiseParams::noiseless(GRAVITY);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let error = |pre: &PreintegratedImu, samples: &[ImuSample], bias: ImuBias| -> f64 {
            let c = correct_bias(pre, &bias);
            let exact = preintegrate(samples, &bias, &noise).expect("window");
            (&c.rot.inverse() * &exact.delta_rot).log().norm()
                + (c.pos - exact.delta_pos).norm()
                + (c.vel - exact.delta_vel).norm()
        };
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for &(t0, t1) in windows.iter().step_by(4) {
            let samples = window(&imu, t0, t1);
            let pre = preintegrate(&samples, &ImuBias::zero(), &noise).expect("window");
            let db = ImuBias::new(gauss3(&mut rng) * 0.05, gauss3(&mut rng) * 0.05);
            let half = ImuBias::new(db.accel * 0.5, db.gyro * 0.5);
            let ratio = error(&pre, &samples, db) / error(&pre, &samples, half);
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        // Report whichever end lies further from 4.
        let worst = if (lo - 4.0).abs() > (hi - 4.0).abs() { lo } else { hi };
        CheckReport {
            range: Some(BIAS_ORDER_RATIO),
            ..CheckReport::below("bias correction order", windows.len().div_ceil(4), worst, 0.0)
        }
    })
}

/// Instance counts for [`run_all`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelftestConfig {
    pub jacobian_instances: usize,
    pub imu_mc_samples: usize,
    pub lidar_mc_correspondences: usize,
    pub lidar_mc_samples: usize,
    pub seed: u64,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        SelftestConfig {
            jacobian_instances: 1000,
            imu_mc_samples: 10_000,
            lidar_mc_correspondences: 50,
            lidar_mc_samples: 10_000,
            seed: 0,
        }
    }
}

pub fn run_all(cfg: &SelftestConfig) -> Vec<CheckReport> {
    let n = cfg.jacobian_instances;
    let s = cfg.seed;
    let (pos, rot) = preintegration_round_trip_check();
    vec![
        imu_jacobian_check(n, s),
        point_jacobian_check(n, s + 1),
        correspondence_jacobian_check(n, s + 2, true),
        correspondence_jacobian_check(n, s + 3, false),
        perturbation_jacobian_check(n, s + 4),
        pos,
        rot,
        bias_correction_order_check(s + 5),
        imu_covariance_check(cfg.imu_mc_samples, s + 6),
        lidar_covariance_check(cfg.lidar_mc_correspondences, cfg.lidar_mc_samples, s + 7),
    ]
}
