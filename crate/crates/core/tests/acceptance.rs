//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Lines are written straight to stdout so they appear in the test log even
//! when the harness captures output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use se2lio::eval::{associate, ate_are, evaluate};
use se2lio::io;
use se2lio::lie::{so3_exp, Rotation, Transform, Vec3};
use se2lio::pipeline::{run, run_dataset, Dataset, Mode, PipelineConfig, ScanFormat};
use se2lio::selftest::{self, CheckReport};
use se2lio::sim::{simulate, PerturbationSpec, SimConfig, SimDataset};
use se2lio::solver::PerturbationModel;

mod tol {
    use std::time::Duration;

    pub const JACOBIAN_INSTANCES: usize = 1000;
    pub const JACOBIAN_REL: f64 = 1e-4;
    pub const JACOBIAN_BUDGET: Duration = Duration::from_secs(60);

    pub const ROUND_TRIP_POS_M: f64 = 1e-5;
    pub const ROUND_TRIP_ROT_RAD: f64 = 1e-6;
    pub const PREINTEGRATION_BUDGET: Duration = Duration::from_secs(60);

    pub const IMU_MC_SAMPLES: usize = 10_000;
    pub const IMU_COV_REL: f64 = 0.15;
    pub const LIDAR_COV_REL: f64 = 0.20;
    pub const LIDAR_MC_SIGMA_MAX: f64 = 1e-2;
    pub const COVARIANCE_BUDGET: Duration = Duration::from_secs(300);

    pub const LOOP_FRAMES: usize = 100;
    pub const LOOP_ATE_M: f64 = 1e-2;
    pub const LOOP_ARE_DEG: f64 = 0.1;
    pub const LOOP_BUDGET: Duration = Duration::from_secs(120);
    pub const LOOP_MAX_POINTS: usize = 30_000;

    pub const ABLATION_SEEDS: u64 = 10;
    pub const ABLATION_THETA_VAR: f64 = 1e-3;
    pub const ABLATION_SIGMA_Z: f64 = 0.02;

    pub const KITTI_ATE_M: f64 = 2.0;
    pub const KITTI_ARE_DEG: f64 = 0.5;

    pub const METRIC_PAIRS: usize = 100;
    pub const METRIC_ABS: f64 = 1e-12;
}

/// Maximum time difference when pairing estimates with ground truth.
const MAX_DT: f64 = 0.02;

fn report(criterion: u32, pass: Option<bool>, detail: &str) {
    let status = match pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{status}] criterion {criterion}: {detail}");
    let _ = out.flush();
}

fn summarize(reports: &[CheckReport]) -> String {
    reports
        .iter()
        .map(|r| format!("{} {:.2e}", r.name, r.worst))
        .collect::<Vec<_>>()
        .join(", ")
}

fn noiseless_loop() -> SimConfig {
    let mut c = SimConfig::default();
    c.trajectory.frames = tol::LOOP_FRAMES;
    c
}

fn criterion_1() -> bool {
    let start = Instant::now();
    let n = tol::JACOBIAN_INSTANCES;
    let reports = [
        selftest::imu_jacobian_check(n, 11),
        selftest::point_jacobian_check(n, 12),
        selftest::correspondence_jacobian_check(n, 13, true),
        selftest::correspondence_jacobian_check(n, 14, false),
        selftest::perturbation_jacobian_check(n, 15),
    ];
    let elapsed = start.elapsed();
    let pass = reports
        .iter()
        .all(|r| r.instances >= n && r.worst < tol::JACOBIAN_REL)
        && elapsed < tol::JACOBIAN_BUDGET;
    report(
        1,
        Some(pass),
        &format!(
            "Jacobians vs central differences, {n} instances each, max rel error < {:.0e} ({}) in {:.1}s",
            tol::JACOBIAN_REL,
            summarize(&reports),
            elapsed.as_secs_f64()
        ),
    );
    pass
}

fn criterion_2() -> bool {
    let start = Instant::now();
    let (pos, rot) = selftest::preintegration_round_trip_check();
    let order = selftest::bias_correction_order_check(21);
    let elapsed = start.elapsed();
    let pass = pos.worst < tol::ROUND_TRIP_POS_M
        && rot.worst < tol::ROUND_TRIP_ROT_RAD
        && order.passed()
        && elapsed < tol::PREINTEGRATION_BUDGET;
    report(
        2,
        Some(pass),
        &format!(
            "preintegration round trip over {} windows: position {:.2e} m (< {:.0e}), rotation {:.2e} rad (< {:.0e}); halved bias offset error ratio {:.3} (expect 4); {:.1}s",
            pos.instances,
            pos.worst,
            tol::ROUND_TRIP_POS_M,
            rot.worst,
            tol::ROUND_TRIP_ROT_RAD,
            order.worst,
            elapsed.as_secs_f64()
        ),
    );
    pass
}

fn criterion_3() -> bool {
    let start = Instant::now();
    let imu = selftest::imu_covariance_check(tol::IMU_MC_SAMPLES, 31);
    let lidar = selftest::lidar_covariance_check(50, 10_000, 32);
    let elapsed = start.elapsed();
    let pass = imu.worst < tol::IMU_COV_REL
        && lidar.worst < tol::LIDAR_COV_REL
        && elapsed < tol::COVARIANCE_BUDGET;
    report(
        3,
        Some(pass),
        &format!(
            "imu 9x9 covariance vs {} Monte Carlo samples: Frobenius rel {:.3} (< {}); lidar residual variance, {} correspondences at sigma <= {:.0e}: worst rel {:.3} (< {}); {:.1}s",
            imu.instances,
            imu.worst,
            tol::IMU_COV_REL,
            lidar.instances,
            tol::LIDAR_MC_SIGMA_MAX,
            lidar.worst,
            tol::LIDAR_COV_REL,
            elapsed.as_secs_f64()
        ),
    );
    pass
}

fn run_loop(sim: &SimDataset, mode: Mode) -> (f64, f64, usize) {
    let cfg = PipelineConfig {
        mode,
        ..PipelineConfig::default()
    };
    let out = run_dataset(&cfg, &Dataset::from_sim(sim)).expect("run");
    let m = evaluate(&associate(&out.trajectory(), &sim.ground_truth, MAX_DT).expect("pairs"));
    (m.ate, m.are_deg, out.non_converged())
}

fn criterion_4() -> bool {
    let start = Instant::now();
    let sim = simulate(&noiseless_loop()).expect("simulate");
    let max_points = sim.scans.iter().map(|s| s.len()).max().unwrap_or(0);
    let (ate, are, nc) = run_loop(&sim, Mode::Se2lio);
    let elapsed = start.elapsed();
    let pass = ate < tol::LOOP_ATE_M
        && are < tol::LOOP_ARE_DEG
        && elapsed < tol::LOOP_BUDGET
        && max_points <= tol::LOOP_MAX_POINTS;
    report(
        4,
        Some(pass),
        &format!(
            "noiseless {}-frame box-room loop: ATE {ate:.5} m (< {}), ARE {are:.4} deg (< {}), {nc} frames not converged, {max_points} points/scan max, {:.1}s",
            tol::LOOP_FRAMES,
            tol::LOOP_ATE_M,
            tol::LOOP_ARE_DEG,
            elapsed.as_secs_f64()
        ),
    );
    pass
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n.is_multiple_of(2) {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    } else {
        v[n / 2]
    }
}

fn criterion_5() -> bool {
    let start = Instant::now();
    let modes = [Mode::Se2lo, Mode::Se2lioSharp, Mode::Se2lio];
    let mut ate = vec![Vec::new(); modes.len()];
    for seed in 0..tol::ABLATION_SEEDS {
        let mut c = noiseless_loop();
        c.trajectory.seed = seed;
        c.trajectory.perturbation =
            PerturbationSpec::isotropic(tol::ABLATION_THETA_VAR, tol::ABLATION_SIGMA_Z);
        let sim = simulate(&c).expect("simulate");
        let data = Dataset::from_sim(&sim);
        for (k, &mode) in modes.iter().enumerate() {
            let cfg = PipelineConfig {
                mode,
                perturbation: PerturbationModel::isotropic(
                    tol::ABLATION_THETA_VAR,
                    tol::ABLATION_SIGMA_Z,
                    PerturbationModel::default().sigma_k,
                ),
                ..PipelineConfig::default()
            };
            let out = run_dataset(&cfg, &data).expect("run");
            let m = evaluate(&associate(&out.trajectory(), &sim.ground_truth, MAX_DT).expect("pairs"));
            ate[k].push(m.ate);
        }
    }
    let med: Vec<f64> = ate.into_iter().map(median).collect();
    let pass = med[2] < med[0];
    report(
        5,
        Some(pass),
        &format!(
            "ablation over {} paired seeds with tilt var {:.0e} rad^2, sigma_z {} m: median ATE se2lio {:.4} m < se2lo {:.4} m (se2lio-sharp {:.4} m, not ranked); {:.1}s",
            tol::ABLATION_SEEDS,
            tol::ABLATION_THETA_VAR,
            tol::ABLATION_SIGMA_Z,
            med[2],
            med[0],
            med[1],
            start.elapsed().as_secs_f64()
        ),
    );
    pass
}

/// Runs only when `SE2LIO_KITTI_SEQ04` names a KITTI odometry sequence
/// directory holding `velodyne/`, `times.txt`, `calib.txt` and the
/// sequence's ground-truth `poses.txt` (or `SE2LIO_KITTI_POSES04`).
fn criterion_6() -> Option<bool> {
    let Some(dir) = std::env::var_os("SE2LIO_KITTI_SEQ04").map(PathBuf::from) else {
        report(6, None, "KITTI sequence 04 not provided (set SE2LIO_KITTI_SEQ04)");
        return None;
    };
    let poses = std::env::var_os("SE2LIO_KITTI_POSES04")
        .map(PathBuf::from)
        .unwrap_or_else(|| dir.join("poses.txt"));
    let mut cfg = PipelineConfig::default();
    cfg.mode = Mode::Se2lo;
    cfg.input.dataset = dir.clone();
    cfg.input.scan_dir = "velodyne".into();
    cfg.input.scan_format = ScanFormat::Kitti;
    cfg.input.sensor_model = "hdl64".into();
    cfg.input.imu = String::new();
    let result = (|| -> se2lio::Result<(f64, f64)> {
        let times = io::read_times(&dir.join("times.txt"))?;
        let tr = io::read_kitti_calibration(&dir.join("calib.txt"))?;
        let gt = io::read_kitti_poses(&poses, &times, &tr)?;
        let out = run(&cfg)?;
        let m = evaluate(&associate(&out.trajectory(), &gt, MAX_DT)?);
        Ok((m.ate, m.are_deg))
    })();
    match result {
        Ok((ate, are)) => {
            let pass = ate <= tol::KITTI_ATE_M && are <= tol::KITTI_ARE_DEG;
            report(
                6,
                Some(pass),
                &format!(
                    "KITTI 04 se2lo: ATE {ate:.3} m (<= {}), ARE {are:.3} deg (<= {})",
                    tol::KITTI_ATE_M,
                    tol::KITTI_ARE_DEG
                ),
            );
            Some(pass)
        }
        Err(e) => {
            report(6, Some(false), &format!("KITTI 04 run failed: {e}"));
            Some(false)
        }
    }
}

fn cli(args: &[&str], threads: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_se2lio"));
    cmd.args(args).env("RUST_LOG", "error");
    match threads {
        Some(n) => cmd.env("SE2LIO_THREADS", n),
        None => cmd.env_remove("SE2LIO_THREADS"),
    };
    cmd.output().expect("spawn se2lio")
}

fn criterion_7() -> bool {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();
    let p = |x: &str| root.join(x).to_string_lossy().into_owned();
    let sim = cli(&["simulate", "--output", &p("sim"), "--seed", "7"], None);
    let mut runs = Vec::new();
    for threads in ["1", "4"] {
        let out = p(&format!("run{threads}"));
        let r = cli(
            &["run", "--config", &p("sim/pipeline.toml"), "--output", &out, "--seed", "7"],
            Some(threads),
        );
        runs.push((r.status.code(), std::fs::read(Path::new(&out).join("trajectory.txt")).ok()));
    }
    let ok = sim.status.success()
        && runs.iter().all(|(code, bytes)| *code == Some(0) && bytes.is_some())
        && runs[0].1 == runs[1].1;
    report(
        7,
        Some(ok),
        &format!(
            "criterion-4 run via the CLI with SE2LIO_THREADS=1 and 4: exit codes {:?}/{:?}, trajectory files {}",
            runs[0].0,
            runs[1].0,
            if runs[0].1 == runs[1].1 { "byte-identical" } else { "differ" }
        ),
    );
    ok
}

fn homogeneous(t: &Transform) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(t.rot.matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t.trans);
    m
}

/// Per-pair errors from 4x4 matrices and the trace formula.
fn brute_force(pairs: &[(Transform, Transform)]) -> (f64, f64) {
    let mut st = 0.0;
    let mut sr = 0.0;
    for (e, g) in pairs {
        let d = homogeneous(g).try_inverse().expect("invertible") * homogeneous(e);
        let t = d.fixed_view::<3, 1>(0, 3).norm();
        let c = ((d.fixed_view::<3, 3>(0, 0).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        st += t * t;
        sr += c.acos().powi(2);
    }
    let n = pairs.len() as f64;
    ((st / n).sqrt(), (sr / n).sqrt())
}

fn criterion_8() -> bool {
    let est = Transform::new(Rotation::identity(), Vec3::new(3.0, 4.0, 0.0));
    let m = ate_are(&[(est, Transform::identity())]);
    let hand = m.ate == 5.0 && m.are_deg == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut worst: f64 = 0.0;
    for _ in 0..tol::METRIC_PAIRS {
        let n = rng.random_range(1..50);
        let pairs: Vec<(Transform, Transform)> = (0..n)
            .map(|_| {
                let mut pose = || {
                    let axis = Vec3::new(rng.random(), rng.random(), rng.random()) - Vec3::repeat(0.5);
                    let angle = rng.random_range(0.2..2.8);
                    let trans = Vec3::new(rng.random(), rng.random(), rng.random()) * 20.0;
                    Transform::new(so3_exp(&(axis.normalize() * angle)), trans)
                };
                (pose(), pose())
            })
            .collect();
        let m = ate_are(&pairs);
        let (t, r) = brute_force(&pairs);
        worst = worst.max((m.ate - t).abs()).max((m.are_deg.to_radians() - r).abs());
    }
    let pass = hand && worst < tol::METRIC_ABS;
    report(
        8,
        Some(pass),
        &format!(
            "3-4-5 case gives ATE {} m, ARE {} deg; {} random trajectory pairs vs brute force: max abs diff {worst:.2e} (< {:.0e})",
            m.ate,
            m.are_deg,
            tol::METRIC_PAIRS,
            tol::METRIC_ABS
        ),
    );
    pass
}

#[test]
fn acceptance_criteria() {
    let results = [
        Some(criterion_1()),
        Some(criterion_2()),
        Some(criterion_3()),
        Some(criterion_4()),
        Some(criterion_5()),
        criterion_6(),
        Some(criterion_7()),
        Some(criterion_8()),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == Some(false))
        .map(|(k, _)| k + 1)
        .collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
