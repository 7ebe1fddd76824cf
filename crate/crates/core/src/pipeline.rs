//! Frame-by-frame odometry over a dataset, its configuration and outputs.
//!
//! Per frame: preintegrate the IMU since the previous frame, extract
//! features, deskew them with the predicted motion, solve, deskew again with
//! the solved motion and insert the result into the map.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::deskew::{first_stage, first_stage_imu, second_stage, DeskewModel};
use crate::error::{Error, Result};
use crate::eval::{StampedPose, Trajectory};
use crate::features::{extract, FeatureParams, FeatureScan, RawScan, ScanPoint};
use crate::imu::{preintegrate, ImuNoiseParams, ImuSample, RobotState};
use crate::io::{self, SensorModel};
use crate::lie::{Se2Pose, Transform, Vec3, Vec6};
use crate::map::{export_points, FeatureMap, MapKind, MapParams};
use crate::sim::SimDataset;
use crate::solver::{
    estimate_inertial, estimate_planar, PerturbationModel, SolverParams, StatePrior,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// LiDAR only.
    Se2lo,
    /// LiDAR and IMU without the out-of-plane perturbation model.
    Se2lioSharp,
    #[default]
    Se2lio,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Se2lo => "se2lo",
            Mode::Se2lioSharp => "se2lio-sharp",
            Mode::Se2lio => "se2lio",
        }
    }

    pub fn uses_imu(&self) -> bool {
        *self != Mode::Se2lo
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se2lo" => Ok(Mode::Se2lo),
            "se2lio-sharp" => Ok(Mode::Se2lioSharp),
            "se2lio" => Ok(Mode::Se2lio),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanFormat {
    /// 22-byte records with ring and time.
    #[default]
    Native,
    /// float32 `x y z intensity` quadruples.
    Kitti,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    /// Dataset directory; relative paths resolve against the config file.
    pub dataset: PathBuf,
    pub scan_dir: String,
    pub scan_format: ScanFormat,
    /// Sensor used to recover ring and time for KITTI scans.
    pub sensor_model: String,
    pub times: String,
    /// IMU file inside the dataset; empty for none.
    pub imu: String,
    /// Ground truth inside the dataset, used by `evaluate`; empty for none.
    pub ground_truth: String,
    /// Duration of one sweep, s.
    pub sweep_period: f64,
    /// Longest tolerated gap between consecutive frames or IMU samples, s.
    pub max_gap: f64,
    /// IMU streams slower than this switch the run to LiDAR-only mode.
    pub min_imu_rate: f64,
    /// Keep the inertial mode even for slow IMU streams.
    pub force_imu: bool,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            dataset: PathBuf::from("."),
            scan_dir: crate::sim::SCAN_DIR.into(),
            scan_format: ScanFormat::Native,
            sensor_model: "vlp16".into(),
            times: crate::sim::TIMES_FILE.into(),
            imu: crate::sim::IMU_FILE.into(),
            ground_truth: crate::sim::GROUND_TRUTH_FILE.into(),
            sweep_period: 0.1,
            max_gap: 0.5,
            min_imu_rate: 50.0,
            force_imu: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub seed: u64,
    pub input: InputConfig,
    pub features: FeatureParams,
    pub map: MapParams,
    pub perturbation: PerturbationModel,
    pub imu: ImuNoiseParams,
    pub solver: SolverParams,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves the dataset path against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.input.dataset.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.input.dataset = base.join(&cfg.input.dataset);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.perturbation.validate()?;
        self.imu.validate()?;
        let inp = &self.input;
        if !(inp.sweep_period > 0.0 && inp.max_gap > 0.0 && inp.min_imu_rate >= 0.0) {
            return Err(Error::Config("sweep_period and max_gap must be positive".into()));
        }
        let f = &self.features;
        if f.half_window == 0 || f.sectors == 0 || !(f.sigma_threshold > 0.0) {
            return Err(Error::Config("invalid feature parameters".into()));
        }
        let m = &self.map;
        if !(m.edge_voxel > 0.0 && m.plane_voxel > 0.0 && m.window_radius > 0.0 && m.max_dist > 0.0) {
            return Err(Error::Config("map sizes must be positive".into()));
        }
        let s = &self.solver;
        if s.max_iterations == 0 || !(s.tolerance > 0.0) || s.plane_neighbors < 3 || s.edge_neighbors < 2 {
            return Err(Error::Config("invalid solver limits".into()));
        }
        SensorModel::by_name(&inp.sensor_model)?;
        Ok(())
    }

    /// Perturbation model the solver uses in `mode`.
    pub fn model_for(&self, mode: Mode) -> PerturbationModel {
        match mode {
            Mode::Se2lioSharp => self.perturbation.without_perturbation(),
            Mode::Se2lo | Mode::Se2lio => self.perturbation.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScanSource {
    Files {
        paths: Vec<PathBuf>,
        format: ScanFormat,
        sensor: SensorModel,
    },
    Memory(Vec<RawScan>),
}

/// Frame times, scans and the optional IMU stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub scans: ScanSource,
    pub imu: Option<Vec<ImuSample>>,
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not found"),
        ))
    }
}

impl Dataset {
    pub fn load(input: &InputConfig) -> Result<Self> {
        let root = &input.dataset;
        let times = io::read_times(&existing(root.join(&input.times))?)?;
        check_increasing(&times)?;
        let scan_dir = existing(root.join(&input.scan_dir))?;
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&scan_dir)
            .map_err(|e| Error::io(&scan_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        paths.sort();
        if paths.len() != times.len() {
            return Err(Error::Config(format!(
                "{} scans but {} timestamps",
                paths.len(),
                times.len()
            )));
        }
        let imu = if input.imu.is_empty() {
            None
        } else {
            let samples = io::read_imu(&existing(root.join(&input.imu))?)?;
            check_increasing(&samples.iter().map(|s| s.t).collect::<Vec<_>>())?;
            Some(samples)
        };
        Ok(Dataset {
            times,
            scans: ScanSource::Files {
                paths,
                format: input.scan_format,
                sensor: SensorModel::by_name(&input.sensor_model)?,
            },
            imu,
        })
    }

    pub fn from_sim(data: &SimDataset) -> Self {
        Dataset {
            times: data.times.clone(),
            scans: ScanSource::Memory(data.scans.clone()),
            imu: Some(data.imu.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn scan(&self, j: usize) -> Result<RawScan> {
        match &self.scans {
            ScanSource::Memory(s) => Ok(s[j].clone()),
            ScanSource::Files {
                paths,
                format: ScanFormat::Native,
                ..
            } => io::read_scan_native(&paths[j]),
            ScanSource::Files {
                paths,
                format: ScanFormat::Kitti,
                sensor,
            } => io::read_scan_kitti(&paths[j], sensor),
        }
    }

    /// Mean IMU rate, Hz.
    pub fn imu_rate(&self) -> Option<f64> {
        let imu = self.imu.as_ref()?;
        let span = imu.last()?.t - imu.first()?.t;
        (imu.len() >= 2 && span > 0.0).then(|| (imu.len() - 1) as f64 / span)
    }
}

fn check_increasing(t: &[f64]) -> Result<()> {
    match t.windows(2).position(|w| !(w[1] > w[0])) {
        Some(i) => Err(Error::NonMonotonicTime {
            index: i + 1,
            prev: t[i],
            next: t[i + 1],
        }),
        None => Ok(()),
    }
}

fn check_gaps(t: &[f64], limit: f64) -> Result<()> {
    match t.windows(2).find(|w| w[1] - w[0] > limit) {
        Some(w) => Err(Error::StreamGap {
            gap: w[1] - w[0],
            at: w[1],
            limit,
        }),
        None => Ok(()),
    }
}

fn lerp_sample(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
    let s = (t - a.t) / (b.t - a.t);
    ImuSample::new(t, a.gyro.lerp(&b.gyro, s), a.accel.lerp(&b.accel, s))
}

/// Samples covering exactly `[t0, t1]`, with the end samples linearly
/// interpolated when they fall between measurements.
pub fn imu_window(samples: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<ImuSample>> {
    const EPS: f64 = 1e-9;
    let missing = || Error::ImuCoverage { t0, t1 };
    let (first, last) = (samples.first().ok_or_else(missing)?, samples.last().ok_or_else(missing)?);
    if first.t > t0 + EPS || last.t < t1 - EPS {
        return Err(missing());
    }
    let lo = samples.partition_point(|s| s.t < t0 - EPS);
    let hi = samples.partition_point(|s| s.t <= t1 + EPS);
    let mut out = Vec::with_capacity(hi - lo + 2);
    if (samples[lo].t - t0).abs() > EPS {
        out.push(lerp_sample(&samples[lo - 1], &samples[lo], t0));
    }
    out.extend_from_slice(&samples[lo..hi]);
    if (samples[hi - 1].t - t1).abs() > EPS {
        out.push(lerp_sample(&samples[hi - 1], &samples[hi], t1));
    }
    Ok(out)
}

/// Per-frame outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub t: f64,
    /// Planar pose of the frame.
    pub pose: Transform,
    /// Full state; LiDAR-only runs carry zero velocity and biases.
    pub state: RobotState,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate: bool,
    pub edge_correspondences: usize,
    pub plane_correspondences: usize,
    pub edge_features: usize,
    pub plane_features: usize,
    pub wall_ms: f64,
}

#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64() * 1e3
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

fn feature_positions(points: &[ScanPoint], pose: &Transform) -> Vec<Vec3> {
    points.iter().map(|p| pose.apply(&p.pos)).collect()
}

fn deskew_features(f: &FeatureScan, stage: impl Fn(&RawScan) -> RawScan) -> FeatureScan {
    FeatureScan {
        edges: stage(&RawScan::new(f.edges.clone())).points,
        planars: stage(&RawScan::new(f.planars.clone())).points,
    }
}

/// Incremental odometry state.
pub struct Odometry {
    config: PipelineConfig,
    mode: Mode,
    model: PerturbationModel,
    map: FeatureMap,
    prior: Option<StatePrior>,
    frames: Vec<(f64, Transform)>,
}

impl Odometry {
    pub fn new(config: &PipelineConfig, mode: Mode) -> Self {
        Odometry {
            config: config.clone(),
            mode,
            model: config.model_for(mode),
            map: FeatureMap::new(config.map.clone()),
            prior: None,
            frames: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    /// Processes the sweep ending at `t`. Inertial modes need `imu` to cover
    /// the interval since the previous frame.
    pub fn process(&mut self, t: f64, scan: &RawScan, imu: Option<&[ImuSample]>) -> Result<FrameResult> {
        let elapsed = stopwatch();
        let features = extract(scan, &self.config.features);
        let period = self.config.input.sweep_period;
        let gravity = self.config.imu.gravity();

        let Some(&(t_prev, prev_pose)) = self.frames.last() else {
            // the first frame anchors the map at the origin
            let state = RobotState::default();
            self.prior = Some(StatePrior::initial(&state, &self.config.solver, &self.model));
            self.insert(&features, &Transform::identity());
            self.frames.push((t, Transform::identity()));
            return Ok(self.result(t, state, &features, 0, true, false, (0, 0), elapsed()));
        };
        if !(t > t_prev) {
            return Err(Error::NonMonotonicTime {
                index: self.frames.len(),
                prev: t_prev,
                next: t,
            });
        }

        let fallback = match self.frames.iter().rev().nth(1) {
            Some(&(t_pp, pp)) => DeskewModel::from_previous_poses(&pp, &prev_pose, t_prev - t_pp, period),
            None => DeskewModel::constant_twist(Vec6::zeros(), period),
        };
        let sweep_start = t - period;

        let (state, pose, iterations, converged, degenerate, counts) = if self.mode.uses_imu() {
            let samples = imu.ok_or(Error::ImuCoverage { t0: t_prev, t1: t })?;
            let prior = self.prior.clone().expect("initialized on the first frame");
            let pre = preintegrate(samples, &prior.state().bias, &self.config.imu)?;
            let start = prior.state();
            let deskewed = deskew_features(&features, |s| {
                first_stage_imu(s, Some(&pre), &start, &gravity, sweep_start, &fallback)
            });
            let est = estimate_inertial(
                &deskewed,
                &self.map,
                &prior,
                &pre,
                &gravity,
                &self.model,
                &self.config.solver,
            );
            let pose = est.pose().to_transform();
            self.prior = Some(est.posterior_j.clone());
            (
                est.state_j,
                pose,
                est.iterations,
                est.converged,
                est.degenerate,
                (est.edge_count, est.plane_count),
            )
        } else {
            let deskewed = deskew_features(&features, |s| first_stage(s, &fallback));
            let guess = match self.frames.iter().rev().nth(1) {
                Some(&(t_pp, pp)) => {
                    let step = (pp.inverse() * prev_pose).scaled((t - t_prev) / (t_prev - t_pp));
                    Se2Pose::project(&(prev_pose * step))
                }
                None => Se2Pose::project(&prev_pose),
            };
            let est = estimate_planar(&deskewed, &self.map, &guess, &self.model, &self.config.solver);
            let degenerate = est.edge_count + est.plane_count < self.config.solver.min_correspondences;
            let pose = est.pose.to_transform();
            let state = RobotState {
                rot: pose.rot,
                pos: pose.trans,
                ..RobotState::default()
            };
            (
                state,
                pose,
                est.iterations,
                est.converged,
                degenerate,
                (est.edge_count, est.plane_count),
            )
        };

        if degenerate {
            warn!("frame at t = {t:.3}: too few correspondences, map not updated");
        } else {
            let corrected = deskew_features(&features, |s| second_stage(s, &prev_pose, &pose));
            self.insert(&corrected, &pose);
        }
        self.frames.push((t, pose));
        Ok(self.result(t, state, &features, iterations, converged, degenerate, counts, elapsed()))
    }

    fn insert(&mut self, f: &FeatureScan, pose: &Transform) {
        self.map.insert(&feature_positions(&f.edges, pose), MapKind::Edge);
        self.map.insert(&feature_positions(&f.planars, pose), MapKind::Plane);
        self.map.window(&pose.trans);
    }

    #[allow(clippy::too_many_arguments)]
    fn result(
        &self,
        t: f64,
        state: RobotState,
        features: &FeatureScan,
        iterations: usize,
        converged: bool,
        degenerate: bool,
        counts: (usize, usize),
        wall_ms: f64,
    ) -> FrameResult {
        FrameResult {
            t,
            pose: self.frames.last().map(|f| f.1).unwrap_or_else(Transform::identity),
            state,
            iterations,
            converged,
            degenerate,
            edge_correspondences: counts.0,
            plane_correspondences: counts.1,
            edge_features: features.edges.len(),
            plane_features: features.planars.len(),
            wall_ms: wall_ms.max(f64::MIN_POSITIVE),
        }
    }
}

/// Outcome of a full run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub mode: Mode,
    pub frames: Vec<FrameResult>,
    pub map: FeatureMap,
}

impl RunOutput {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory::new(
            self.frames
                .iter()
                .map(|f| StampedPose { t: f.t, pose: f.pose })
                .collect(),
        )
        .expect("frame times increase")
    }

    pub fn non_converged(&self) -> usize {
        self.frames.iter().filter(|f| !f.converged).count()
    }

    /// More than 10% of the frames failed to converge.
    pub fn is_degenerate(&self) -> bool {
        self.non_converged() * 10 > self.frames.len()
    }

    pub fn median_wall_ms(&self) -> f64 {
        let mut w: Vec<f64> = self.frames.iter().map(|f| f.wall_ms).collect();
        if w.is_empty() {
            return 0.0;
        }
        w.sort_by(f64::total_cmp);
        w[w.len() / 2]
    }

    pub fn frames_csv(&self) -> String {
        let mut s = String::from(
            "t,x,y,yaw,iterations,converged,degenerate,edge_corr,plane_corr,edge_features,plane_features,wall_ms\n",
        );
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{:.9},{:.9},{:.9},{:.9},{},{},{},{},{},{},{},{:.3}",
                f.t,
                f.pose.trans.x,
                f.pose.trans.y,
                f.pose.rot.yaw(),
                f.iterations,
                f.converged as u8,
                f.degenerate as u8,
                f.edge_correspondences,
                f.plane_correspondences,
                f.edge_features,
                f.plane_features,
                f.wall_ms
            );
        }
        s
    }
}

/// Mode actually used for `dataset`: inertial modes fall back to LiDAR-only
/// when the IMU stream is missing or too slow.
pub fn effective_mode(config: &PipelineConfig, requested: Mode, dataset: &Dataset) -> Mode {
    if !requested.uses_imu() {
        return requested;
    }
    match dataset.imu_rate() {
        None => {
            warn!("no imu stream; running {}", Mode::Se2lo);
            Mode::Se2lo
        }
        Some(rate) if rate < config.input.min_imu_rate && !config.input.force_imu => {
            warn!(
                "imu rate {rate:.1} Hz is below {} Hz; running {}",
                config.input.min_imu_rate,
                Mode::Se2lo
            );
            Mode::Se2lo
        }
        Some(_) => requested,
    }
}

pub fn run_dataset(config: &PipelineConfig, dataset: &Dataset) -> Result<RunOutput> {
    config.validate()?;
    let mode = effective_mode(config, config.mode, dataset);
    check_gaps(&dataset.times, config.input.max_gap)?;
    if mode.uses_imu() {
        let imu = dataset.imu.as_deref().unwrap_or_default();
        let t: Vec<f64> = imu.iter().map(|s| s.t).collect();
        check_gaps(&t, config.input.max_gap)?;
    }
    info!("running {} frames in {mode} mode", dataset.len());
    let mut odo = Odometry::new(config, mode);
    let mut frames = Vec::with_capacity(dataset.len());
    for (j, &t) in dataset.times.iter().enumerate() {
        let scan = dataset.scan(j)?;
        let window = match (mode.uses_imu(), j) {
            (true, 1..) => Some(imu_window(
                dataset.imu.as_deref().unwrap_or_default(),
                dataset.times[j - 1],
                t,
            )?),
            _ => None,
        };
        let r = odo.process(t, &scan, window.as_deref())?;
        debug!(
            "frame {j}: {} iterations, {} + {} correspondences, {:.1} ms",
            r.iterations, r.edge_correspondences, r.plane_correspondences, r.wall_ms
        );
        frames.push(r);
    }
    Ok(RunOutput {
        mode,
        frames,
        map: odo.map,
    })
}

pub fn run(config: &PipelineConfig) -> Result<RunOutput> {
    run_dataset(config, &Dataset::load(&config.input)?)
}

pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const FRAMES_FILE: &str = "frames.csv";
pub const EDGE_MAP_FILE: &str = "edge_map.bin";
pub const PLANE_MAP_FILE: &str = "plane_map.bin";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// Writes the trajectory, per-frame statistics, both maps and the config
/// with the mode that was actually used.
pub fn write_outputs(dir: &Path, config: &PipelineConfig, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_trajectory(&dir.join(TRAJECTORY_FILE), &out.trajectory())?;
    let frames = dir.join(FRAMES_FILE);
    std::fs::write(&frames, out.frames_csv()).map_err(|e| Error::io(&frames, e))?;
    export_points(&dir.join(EDGE_MAP_FILE), &out.map.edges.points())?;
    export_points(&dir.join(PLANE_MAP_FILE), &out.map.planes.points())?;
    let echo = PipelineConfig {
        mode: out.mode,
        ..config.clone()
    };
    let path = dir.join(CONFIG_ECHO_FILE);
    std::fs::write(&path, echo.to_toml()).map_err(|e| Error::io(&path, e))
}
