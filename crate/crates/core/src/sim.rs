//! Synthetic box-room world, ground-truth trajectories, IMU streams and
//! spinning-LiDAR scans.
//!
//! Every frame is stamped at the end of its sweep. Randomness comes from a
//! single seed split into independent ChaCha streams, so generation is
//! deterministic regardless of how frames are scheduled.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{StampedPose, Trajectory};
use crate::features::{RawScan, ScanPoint};
use crate::imu::{ImuBias, ImuNoiseParams, ImuSample, RobotState};
use crate::io;
use crate::lie::{right_jacobian, so3_exp, Rotation, Transform, Vec3};

const STREAM_PERTURBATION: u64 = 0;
const STREAM_IMU: u64 = 1;
const STREAM_SCAN_BASE: u64 = 2;

/// Two-sided rectangle `center + a·u + b·v` with `|a| ≤ half_u`, `|b| ≤ half_v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub center: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub half_u: f64,
    pub half_v: f64,
}

impl Rect {
    pub fn normal(&self) -> Vec3 {
        self.u.cross(&self.v).normalize()
    }

    /// Ray parameter of the hit with `origin + t·dir`, if any.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let n = self.u.cross(&self.v);
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.center - origin)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let q = origin + dir * t - self.center;
        (q.dot(&self.u).abs() <= self.half_u && q.dot(&self.v).abs() <= self.half_v).then_some(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: Vec3,
    pub b: Vec3,
}

/// Planes are what rays hit; edges record the creases and corners that
/// the planes form, for observability checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyntheticWorld {
    pub planes: Vec<Rect>,
    pub edges: Vec<Segment>,
}

impl SyntheticWorld {
    /// A single horizontal plane at height `z`.
    pub fn ground_plane(z: f64) -> Self {
        SyntheticWorld {
            planes: vec![Rect {
                center: Vec3::new(0.0, 0.0, z),
                u: Vec3::x(),
                v: Vec3::y(),
                half_u: 1e3,
                half_v: 1e3,
            }],
            edges: Vec::new(),
        }
    }

    /// Closed room spanning `min..max` seen from inside, with vertical corner
    /// edges.
    pub fn add_room(&mut self, min: Vec3, max: Vec3) {
        let c = (min + max) * 0.5;
        let h = (max - min) * 0.5;
        let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
        self.planes.extend([
            Rect { center: Vec3::new(min.x, c.y, c.z), u: y, v: z, half_u: h.y, half_v: h.z },
            Rect { center: Vec3::new(max.x, c.y, c.z), u: y, v: z, half_u: h.y, half_v: h.z },
            Rect { center: Vec3::new(c.x, min.y, c.z), u: x, v: z, half_u: h.x, half_v: h.z },
            Rect { center: Vec3::new(c.x, max.y, c.z), u: x, v: z, half_u: h.x, half_v: h.z },
            Rect { center: Vec3::new(c.x, c.y, min.z), u: x, v: y, half_u: h.x, half_v: h.y },
            Rect { center: Vec3::new(c.x, c.y, max.z), u: x, v: y, half_u: h.x, half_v: h.y },
        ]);
        self.add_vertical_edges(min, max);
    }

    /// Axis-aligned pillar; only its four side faces are modelled.
    pub fn add_pillar(&mut self, min: Vec3, max: Vec3) {
        let c = (min + max) * 0.5;
        let h = (max - min) * 0.5;
        let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
        self.planes.extend([
            Rect { center: Vec3::new(min.x, c.y, c.z), u: y, v: z, half_u: h.y, half_v: h.z },
            Rect { center: Vec3::new(max.x, c.y, c.z), u: y, v: z, half_u: h.y, half_v: h.z },
            Rect { center: Vec3::new(c.x, min.y, c.z), u: x, v: z, half_u: h.x, half_v: h.z },
            Rect { center: Vec3::new(c.x, max.y, c.z), u: x, v: z, half_u: h.x, half_v: h.z },
        ]);
        self.add_vertical_edges(min, max);
    }

    fn add_vertical_edges(&mut self, min: Vec3, max: Vec3) {
        for (x, y) in [(min.x, min.y), (max.x, min.y), (max.x, max.y), (min.x, max.y)] {
            self.edges.push(Segment {
                a: Vec3::new(x, y, min.z),
                b: Vec3::new(x, y, max.z),
            });
        }
    }

    /// The default scene: a 26 m × 22 m room, floor 1 m below the sensor,
    /// ceiling 3 m above, with nine 1 m square pillars placed around the
    /// default elliptical path.
    pub fn box_room() -> Self {
        let (floor, ceiling) = (-1.0, 3.0);
        let mut w = SyntheticWorld::default();
        w.add_room(Vec3::new(-12.0, -7.0, floor), Vec3::new(14.0, 15.0, ceiling));
        let pillars = [
            (0.0, 5.0),
            (-4.0, 5.0),
            (4.0, 5.0),
            (10.0, 2.0),
            (-10.0, 8.0),
            (3.0, -3.0),
            (-3.0, 12.5),
            (11.0, 11.0),
            (-10.0, -4.0),
        ];
        for (x, y) in pillars {
            w.add_pillar(Vec3::new(x - 0.5, y - 0.5, floor), Vec3::new(x + 0.5, y + 0.5, ceiling));
        }
        w
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "box_room" => Ok(Self::box_room()),
            "ground_plane" => Ok(Self::ground_plane(-1.0)),
            other => Err(Error::Config(format!("unknown scene '{other}'"))),
        }
    }

    /// Checks the observability requirements: three mutually non-parallel
    /// plane normals and three edges that are not all on one line.
    pub fn validate(&self) -> Result<()> {
        let finite = self.planes.iter().all(|p| {
            p.center.iter().chain(p.u.iter()).chain(p.v.iter()).all(|v| v.is_finite())
        }) && self
            .edges
            .iter()
            .all(|e| e.a.iter().chain(e.b.iter()).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Config("non-finite world primitive".into()));
        }
        let normals: Vec<Vec3> = self.planes.iter().map(Rect::normal).collect();
        let spans = normals.iter().any(|a| {
            normals.iter().any(|b| {
                normals
                    .iter()
                    .any(|c| a.cross(b).dot(c).abs() > 1e-3)
            })
        });
        if !spans {
            return Err(Error::Config("world planes do not constrain all directions".into()));
        }
        let mut points = self.edges.iter().flat_map(|e| [e.a, e.b]);
        let non_collinear = match (points.next(), points.next()) {
            (Some(a), Some(b)) => {
                let dir = (b - a).normalize();
                self.edges.len() >= 3
                    && self
                        .edges
                        .iter()
                        .flat_map(|e| [e.a, e.b])
                        .any(|p| (p - a).cross(&dir).norm() > 1e-3)
            }
            _ => false,
        };
        if !non_collinear {
            return Err(Error::Config("world needs three non-collinear edges".into()));
        }
        Ok(())
    }

    /// Range to the nearest surface along a unit direction.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        self.planes
            .iter()
            .filter_map(|p| p.intersect(origin, dir))
            .min_by(f64::total_cmp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathShape {
    /// Along the x axis.
    Straight,
    /// Ellipse through the origin, tangent to x there, centred at
    /// `(0, semi_minor)`.
    Ellipse { semi_major: f64, semi_minor: f64 },
}

impl PathShape {
    /// Position and its first three derivatives with respect to the path
    /// parameter.
    fn eval(&self, u: f64) -> [[f64; 2]; 4] {
        match *self {
            PathShape::Straight => [[u, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
            PathShape::Ellipse {
                semi_major: a,
                semi_minor: b,
            } => {
                let rho = 0.5 * (a + b);
                let th = u / rho;
                let (s, c) = th.sin_cos();
                [
                    [a * s, b * (1.0 - c)],
                    [a / rho * c, b / rho * s],
                    [-a / (rho * rho) * s, b / (rho * rho) * c],
                    [-a / rho.powi(3) * c, -b / rho.powi(3) * s],
                ]
            }
        }
    }
}

/// Out-of-plane perturbation process sampled once per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    /// Roll/pitch covariance, rad².
    pub theta_xy_cov: [[f64; 2]; 2],
    /// Vertical standard deviation, m.
    pub sigma_z: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            theta_xy_cov: [[0.0; 2]; 2],
            sigma_z: 0.0,
        }
    }
}

impl PerturbationSpec {
    pub fn isotropic(theta_var: f64, sigma_z: f64) -> Self {
        PerturbationSpec {
            theta_xy_cov: [[theta_var, 0.0], [0.0, theta_var]],
            sigma_z,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let [[a, b], [_, d]] = self.theta_xy_cov;
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
        let l22 = (d - l21 * l21).max(0.0).sqrt();
        let n: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        [l11 * n[0], l21 * n[0] + l22 * n[1], self.sigma_z * n[2]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub path: PathShape,
    /// Cruise speed of the path parameter, m/s.
    pub speed: f64,
    /// Duration of the smooth start from rest, s.
    pub ramp: f64,
    pub frames: usize,
    pub sweep_hz: f64,
    pub imu_hz: f64,
    pub perturbation: PerturbationSpec,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            path: PathShape::Ellipse {
                semi_major: 8.0,
                semi_minor: 5.0,
            },
            speed: 1.0,
            ramp: 2.0,
            frames: 100,
            sweep_hz: 10.0,
            imu_hz: 400.0,
            perturbation: PerturbationSpec::default(),
            seed: 0,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sweep_hz > 0.0 && self.imu_hz > 0.0) {
            return Err(Error::Config("rates must be positive".into()));
        }
        if self.imu_hz < 10.0 * self.sweep_hz {
            return Err(Error::Config(format!(
                "imu rate {} Hz is below 10x the sweep rate {} Hz",
                self.imu_hz, self.sweep_hz
            )));
        }
        if !(self.speed >= 0.0 && self.ramp >= 0.0) || self.frames == 0 {
            return Err(Error::Config("speed, ramp and frames must be non-negative".into()));
        }
        if let PathShape::Ellipse { semi_major, semi_minor } = self.path {
            if !(semi_major > 0.0 && semi_minor > 0.0) {
                return Err(Error::Config("ellipse axes must be positive".into()));
            }
        }
        let [[a, b], [c, d]] = self.perturbation.theta_xy_cov;
        if !(a >= 0.0 && d >= 0.0 && (b - c).abs() < 1e-15 && a * d - b * c >= 0.0)
            || !(self.perturbation.sigma_z >= 0.0)
        {
            return Err(Error::Config("perturbation covariance must be symmetric PSD".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.sweep_hz
    }
}

/// Pose and its derivatives at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub pose: Transform,
    /// World-frame velocity.
    pub vel: Vec3,
    /// World-frame acceleration.
    pub acc: Vec3,
    /// Body-frame angular velocity.
    pub omega: Vec3,
}

fn smootherstep(x: f64) -> [f64; 3] {
    let x = x.clamp(0.0, 1.0);
    let x2 = x * x;
    [
        x2 * x * (10.0 - 15.0 * x + 6.0 * x2),
        30.0 * x2 * (1.0 - x) * (1.0 - x),
        60.0 * x * (1.0 - x) * (1.0 - 2.0 * x),
    ]
}

/// Continuous-time ground truth: SE(2) path plus C² out-of-plane
/// perturbation interpolated between per-frame knots.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrajectory {
    pub spec: TrajectorySpec,
    /// `[eta_x, eta_y, z]` at each frame time.
    knots: Vec<[f64; 3]>,
}

pub fn gen_trajectory(spec: &TrajectorySpec) -> Result<SimTrajectory> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(STREAM_PERTURBATION);
    let mut knots = vec![[0.0; 3]];
    knots.extend((1..spec.frames).map(|_| spec.perturbation.sample(&mut rng)));
    Ok(SimTrajectory {
        spec: spec.clone(),
        knots,
    })
}

impl SimTrajectory {
    pub fn frame_time(&self, j: usize) -> f64 {
        j as f64 / self.spec.sweep_hz
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.spec.frames).map(|j| self.frame_time(j)).collect()
    }

    /// IMU sample times, covering the first sweep and ending at the last
    /// frame time.
    pub fn imu_times(&self) -> Vec<f64> {
        let per_frame = self.spec.imu_hz / self.spec.sweep_hz;
        let first = -(per_frame.ceil() as i64);
        let last = ((self.spec.frames - 1) as f64 * per_frame).round() as i64;
        (first..=last).map(|k| k as f64 / self.spec.imu_hz).collect()
    }

    /// Path parameter and its first two time derivatives.
    fn warp(&self, t: f64) -> [f64; 3] {
        let (v, ramp) = (self.spec.speed, self.spec.ramp);
        if t <= 0.0 {
            return [0.0; 3];
        }
        if ramp <= 0.0 {
            return [v * t, v, 0.0];
        }
        if t >= ramp {
            return [v * (0.5 * ramp + t - ramp), v, 0.0];
        }
        let x = t / ramp;
        let x4 = x * x * x * x;
        let tau = ramp * x4 * (x * x - 3.0 * x + 2.5);
        let s = smootherstep(x);
        [v * tau, v * s[0], v * s[1] / ramp]
    }

    /// Perturbation `[eta_x, eta_y, z]` and its first two derivatives.
    fn perturbation(&self, t: f64) -> [[f64; 3]; 3] {
        let h = self.spec.period();
        let x = t / h;
        if x <= 0.0 || self.knots.len() < 2 {
            return [self.knots[0], [0.0; 3], [0.0; 3]];
        }
        let k = x.floor() as usize;
        if k + 1 >= self.knots.len() {
            return [*self.knots.last().expect("non-empty"), [0.0; 3], [0.0; 3]];
        }
        let s = smootherstep(x - k as f64);
        let (a, b) = (self.knots[k], self.knots[k + 1]);
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            let d = b[i] - a[i];
            out[0][i] = a[i] + d * s[0];
            out[1][i] = d * s[1] / h;
            out[2][i] = d * s[2] / (h * h);
        }
        out
    }

    pub fn kinematics(&self, t: f64) -> Kinematics {
        let [u, ud, udd] = self.warp(t);
        let [p, dp, ddp, _] = self.spec.path.eval(u);
        let yaw = dp[1].atan2(dp[0]);
        let dyaw_du = (dp[0] * ddp[1] - dp[1] * ddp[0]) / (dp[0] * dp[0] + dp[1] * dp[1]);
        let [eta, deta, ddeta] = self.perturbation(t);

        let tilt = Vec3::new(eta[0], eta[1], 0.0);
        let rz = Rotation::from_yaw(yaw);
        let rot = &so3_exp(&tilt) * &rz;
        let tilt_rate = right_jacobian(&tilt) * Vec3::new(deta[0], deta[1], 0.0);
        let omega = rz.inverse().act(&tilt_rate) + Vec3::z() * (dyaw_du * ud);

        Kinematics {
            pose: Transform::new(rot, Vec3::new(p[0], p[1], eta[2])),
            vel: Vec3::new(dp[0] * ud, dp[1] * ud, deta[2]),
            acc: Vec3::new(
                ddp[0] * ud * ud + dp[0] * udd,
                ddp[1] * ud * ud + dp[1] * udd,
                ddeta[2],
            ),
            omega,
        }
    }

    pub fn pose(&self, t: f64) -> Transform {
        self.kinematics(t).pose
    }

    pub fn state(&self, t: f64, bias: ImuBias) -> RobotState {
        let k = self.kinematics(t);
        RobotState {
            rot: k.pose.rot,
            pos: k.pose.trans,
            vel: k.vel,
            bias,
        }
    }

    /// Ground truth at the frame times.
    pub fn ground_truth(&self) -> Trajectory {
        self.sampled(&self.frame_times())
    }

    /// Ground truth at the IMU times.
    pub fn imu_rate_poses(&self) -> Trajectory {
        self.sampled(&self.imu_times())
    }

    fn sampled(&self, times: &[f64]) -> Trajectory {
        Trajectory::new(
            times
                .iter()
                .map(|&t| StampedPose { t, pose: self.pose(t) })
                .collect(),
        )
        .expect("increasing sample times")
    }
}

/// Applies the IMU measurement model forward to the trajectory at its IMU
/// times, with white noise held over each sample interval and a random-walk
/// bias starting at `bias`.
pub fn synth_imu(traj: &SimTrajectory, noise: &ImuNoiseParams, bias: &ImuBias) -> Vec<ImuSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(traj.spec.seed);
    rng.set_stream(STREAM_IMU);
    let dt = 1.0 / traj.spec.imu_hz;
    let g = noise.gravity();
    let mut b = *bias;
    let mut gauss = move || -> Vec3 {
        Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        )
    };
    traj.imu_times()
        .into_iter()
        .map(|t| {
            let k = traj.kinematics(t);
            let rt = k.pose.rot.inverse();
            let gyro = k.omega + b.gyro + gauss() * (noise.gyro_noise / dt.sqrt());
            let accel = rt.act(&(k.acc - g)) + b.accel + gauss() * (noise.accel_noise / dt.sqrt());
            b.gyro += gauss() * (noise.gyro_walk * dt.sqrt());
            b.accel += gauss() * (noise.accel_walk * dt.sqrt());
            ImuSample::new(t, gyro, accel)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarSpec {
    pub rings: u16,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub columns: usize,
    /// Standard deviation of additive range noise, m.
    pub range_noise: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// Apply the motion during the sweep; off gives scans as if taken
    /// instantaneously at the sweep end.
    pub distort: bool,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec {
            rings: 16,
            min_elevation_deg: -15.0,
            max_elevation_deg: 15.0,
            columns: 1800,
            range_noise: 0.0,
            min_range: 0.1,
            max_range: 100.0,
            distort: true,
        }
    }
}

impl LidarSpec {
    pub fn sensor_model(&self) -> io::SensorModel {
        io::SensorModel {
            rings: self.rings,
            min_elevation_deg: self.min_elevation_deg,
            max_elevation_deg: self.max_elevation_deg,
        }
    }

    pub fn elevation(&self, ring: u16) -> f64 {
        let step = (self.max_elevation_deg - self.min_elevation_deg) / (self.rings.max(2) - 1) as f64;
        (self.min_elevation_deg + step * ring as f64).to_radians()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rings == 0 || self.columns == 0 {
            return Err(Error::Config("lidar needs at least one ring and column".into()));
        }
        if !(self.range_noise >= 0.0 && self.min_range >= 0.0 && self.max_range > self.min_range) {
            return Err(Error::Config("invalid lidar range settings".into()));
        }
        Ok(())
    }
}

/// Ray-casts one sweep. `pose_at(s)` gives the sensor pose at sweep
/// fraction `s`; points are returned in the sensor frame at their capture
/// time, quantized to f32 as stored on disk.
pub fn synth_scan(
    world: &SyntheticWorld,
    pose_at: &dyn Fn(f64) -> Transform,
    lidar: &LidarSpec,
    rng: &mut ChaCha8Rng,
) -> RawScan {
    let n = lidar.columns;
    let elevations: Vec<(f64, f64)> = (0..lidar.rings).map(|r| lidar.elevation(r).sin_cos()).collect();
    let mut points = Vec::with_capacity(n * lidar.rings as usize);
    for col in 0..n {
        let time = col as f32 / n as f32;
        let pose = pose_at(time as f64);
        let az = std::f64::consts::PI - std::f64::consts::TAU * time as f64;
        let (sa, ca) = az.sin_cos();
        for (ring, &(se, ce)) in elevations.iter().enumerate() {
            let dir = Vec3::new(ce * ca, ce * sa, se);
            let noise: f64 = if lidar.range_noise > 0.0 {
                lidar.range_noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let Some(range) = world.raycast(&pose.trans, &pose.rot.act(&dir)) else {
                continue;
            };
            let range = range + noise;
            if range < lidar.min_range || range > lidar.max_range {
                continue;
            }
            let p = dir * range;
            points.push(ScanPoint {
                pos: Vec3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64),
                intensity: 0.0,
                ring: ring as u16,
                time,
            });
        }
    }
    RawScan { points }
}

/// Everything needed to generate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scene: String,
    pub trajectory: TrajectorySpec,
    pub lidar: LidarSpec,
    pub imu_noise: ImuNoiseParams,
    pub accel_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scene: "box_room".into(),
            trajectory: TrajectorySpec::default(),
            lidar: LidarSpec::default(),
            imu_noise: ImuNoiseParams::noiseless(Vec3::new(0.0, 0.0, -9.81)),
            accel_bias: [0.0; 3],
            gyro_bias: [0.0; 3],
        }
    }
}

impl SimConfig {
    pub fn bias(&self) -> ImuBias {
        ImuBias::new(Vec3::from(self.accel_bias), Vec3::from(self.gyro_bias))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimDataset {
    pub times: Vec<f64>,
    pub scans: Vec<RawScan>,
    pub imu: Vec<ImuSample>,
    pub ground_truth: Trajectory,
}

pub fn simulate(config: &SimConfig) -> Result<SimDataset> {
    config.imu_noise.validate()?;
    config.lidar.validate()?;
    let world = SyntheticWorld::by_name(&config.scene)?;
    let traj = gen_trajectory(&config.trajectory)?;
    let imu = synth_imu(&traj, &config.imu_noise, &config.bias());
    let times = traj.frame_times();
    let period = traj.spec.period();
    let scan_one = |j: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(traj.spec.seed);
        rng.set_stream(STREAM_SCAN_BASE + j as u64);
        let t_end = times[j];
        let end_pose = traj.pose(t_end);
        let pose_at = |s: f64| {
            if config.lidar.distort {
                traj.pose(t_end - period + s * period)
            } else {
                end_pose
            }
        };
        synth_scan(&world, &pose_at, &config.lidar, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let scans = {
        use rayon::prelude::*;
        (0..times.len()).into_par_iter().map(scan_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let scans = (0..times.len()).map(scan_one).collect();
    Ok(SimDataset {
        ground_truth: traj.ground_truth(),
        times,
        scans,
        imu,
    })
}

pub const SCAN_DIR: &str = "scans";
pub const TIMES_FILE: &str = "times.txt";
pub const IMU_FILE: &str = "imu.txt";
pub const GROUND_TRUTH_FILE: &str = "groundtruth.txt";

pub fn scan_file_name(j: usize) -> String {
    format!("{j:06}.bin")
}

/// Writes `scans/NNNNNN.bin`, `times.txt`, `imu.txt` and `groundtruth.txt`.
pub fn write_dataset(dir: &Path, data: &SimDataset) -> Result<()> {
    let scan_dir = dir.join(SCAN_DIR);
    std::fs::create_dir_all(&scan_dir).map_err(|e| Error::io(&scan_dir, e))?;
    for (j, scan) in data.scans.iter().enumerate() {
        io::write_scan_native(&scan_dir.join(scan_file_name(j)), scan)?;
    }
    io::write_times(&dir.join(TIMES_FILE), &data.times)?;
    io::write_imu(&dir.join(IMU_FILE), &data.imu)?;
    io::write_trajectory(&dir.join(GROUND_TRUTH_FILE), &data.ground_truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::{predict, preintegrate};

    fn spec(path: PathShape, speed: f64, ramp: f64) -> TrajectorySpec {
        TrajectorySpec {
            path,
            speed,
            ramp,
            frames: 101,
            ..TrajectorySpec::default()
        }
    }

    #[test]
    fn zero_speed_is_identity() {
        let t = gen_trajectory(&spec(PathShape::Straight, 0.0, 1.0)).unwrap();
        for p in t.imu_rate_poses().poses() {
            assert_eq!(p.pose, Transform::identity());
        }
    }

    #[test]
    fn straight_line_final_position() {
        let t = gen_trajectory(&spec(PathShape::Straight, 1.0, 0.0)).unwrap();
        let end = t.pose(10.0);
        assert!((end.trans - Vec3::new(10.0, 0.0, 0.0)).norm() < 1e-9);
        assert_eq!(t.ground_truth().poses().last().unwrap().t, 10.0);
    }

    #[test]
    fn ramp_reaches_cruise_speed_smoothly() {
        let t = gen_trajectory(&spec(PathShape::Straight, 2.0, 1.5)).unwrap();
        assert_eq!(t.kinematics(0.0).vel, Vec3::zeros());
        assert!((t.kinematics(1.5).vel.x - 2.0).abs() < 1e-12);
        assert!((t.pose(1.5).trans.x - 1.5).abs() < 1e-12);
        // numeric derivative of the position matches the analytic velocity
        for &s in &[0.3, 0.9, 1.2] {
            let h = 1e-6;
            let num = (t.pose(s + h).trans - t.pose(s - h).trans) / (2.0 * h);
            assert!((num - t.kinematics(s).vel).norm() < 1e-7);
        }
    }

    #[test]
    fn kinematic_derivatives_match_finite_differences() {
        let mut s = spec(
            PathShape::Ellipse {
                semi_major: 8.0,
                semi_minor: 5.0,
            },
            1.3,
            2.0,
        );
        s.perturbation = PerturbationSpec::isotropic(1e-3, 0.02);
        let t = gen_trajectory(&s).unwrap();
        let h = 1e-5;
        for &ts in &[0.77, 1.93, 3.41, 7.05] {
            let k = t.kinematics(ts);
            let (a, b) = (t.kinematics(ts - h), t.kinematics(ts + h));
            let acc = (b.vel - a.vel) / (2.0 * h);
            assert!((acc - k.acc).norm() < 1e-5, "{acc} {}", k.acc);
            let omega = (&a.pose.rot.inverse() * &b.pose.rot).log() / (2.0 * h);
            assert!((omega - k.omega).norm() < 1e-6, "{omega} {}", k.omega);
            let vel = (b.pose.trans - a.pose.trans) / (2.0 * h);
            assert!((vel - k.vel).norm() < 1e-6);
        }
    }

    #[test]
    fn perturbation_hits_knots_at_frame_times() {
        let mut s = spec(PathShape::Straight, 1.0, 0.0);
        s.perturbation = PerturbationSpec::isotropic(1e-3, 0.02);
        let t = gen_trajectory(&s).unwrap();
        assert_eq!(t.pose(0.0).trans.z, 0.0);
        let z: Vec<f64> = (1..20).map(|j| t.pose(t.frame_time(j)).trans.z).collect();
        let spread = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        assert!(spread > 1e-5 && spread < 4e-3, "{spread}");
        let tilt = t.pose(t.frame_time(5)).rot.matrix()[(2, 2)];
        assert!(tilt < 1.0 && tilt > 0.99);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut c = SimConfig::default();
        c.trajectory.frames = 3;
        c.trajectory.perturbation = PerturbationSpec::isotropic(1e-3, 0.02);
        c.imu_noise = ImuNoiseParams::default();
        c.lidar.range_noise = 0.01;
        let a = simulate(&c).unwrap();
        let b = simulate(&c).unwrap();
        assert_eq!(a, b);
        c.trajectory.seed = 1;
        assert_ne!(simulate(&c).unwrap().scans[1], a.scans[1]);
    }

    #[test]
    fn stationary_imu_reads_gravity_reaction() {
        let t = gen_trajectory(&spec(PathShape::Straight, 0.0, 0.0)).unwrap();
        let g = Vec3::new(0.0, 0.0, -9.81);
        for s in synth_imu(&t, &ImuNoiseParams::noiseless(g), &ImuBias::zero()) {
            assert_eq!(s.gyro, Vec3::zeros());
            assert_eq!(s.accel, Vec3::new(0.0, 0.0, 9.81));
        }
    }

    #[test]
    fn constant_acceleration_imu() {
        // a straight path with a ramp has pure x acceleration at identity attitude
        let t = gen_trajectory(&spec(PathShape::Straight, 1.0, 1.0)).unwrap();
        let g = Vec3::new(0.0, 0.0, -9.81);
        let imu = synth_imu(&t, &ImuNoiseParams::noiseless(g), &ImuBias::zero());
        for s in imu.iter().filter(|s| s.t > 0.0 && s.t < 1.0) {
            let a = t.kinematics(s.t).acc;
            assert!((s.accel - (a - g)).norm() < 1e-12);
            assert!(a.x > 0.0);
        }
    }

    #[test]
    fn noiseless_imu_round_trips_through_preintegration() {
        let s = spec(
            PathShape::Ellipse {
                semi_major: 8.0,
                semi_minor: 5.0,
            },
            1.5,
            2.0,
        );
        let t = gen_trajectory(&s).unwrap();
        let g = Vec3::new(0.0, 0.0, -9.81);
        let noise = ImuNoiseParams::noiseless(g);
        let imu = synth_imu(&t, &noise, &ImuBias::zero());
        for j in [5, 17, 25, 60] {
            let (ti, tj) = (t.frame_time(j), t.frame_time(j + 1));
            let window: Vec<_> = imu
                .iter()
                .filter(|m| m.t >= ti - 1e-9 && m.t <= tj + 1e-9)
                .copied()
                .collect();
            let pre = preintegrate(&window, &ImuBias::zero(), &noise).unwrap();
            let pred = predict(&t.state(ti, ImuBias::zero()), &pre, &g);
            let truth = t.pose(tj);
            assert!((pred.pos - truth.trans).norm() < 1e-5);
            assert!((&truth.rot.inverse() * &pred.rot).log().norm() < 1e-6);
        }
    }

    #[test]
    fn ground_plane_ring_range() {
        let world = SyntheticWorld::ground_plane(-1.0);
        let lidar = LidarSpec {
            columns: 360,
            ..LidarSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scan = synth_scan(&world, &|_| Transform::identity(), &lidar, &mut rng);
        // only the eight downward rings see the plane
        assert_eq!(scan.len(), 8 * 360);
        for p in &scan.points {
            let el = lidar.elevation(p.ring);
            assert!(el < 0.0);
            assert!((p.range() - 1.0 / (-el).sin()).abs() < 1e-5);
        }
    }

    #[test]
    fn stationary_scan_is_deterministic_and_in_range() {
        let world = SyntheticWorld::box_room();
        world.validate().unwrap();
        let lidar = LidarSpec::default();
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = synth_scan(&world, &|_| Transform::identity(), &lidar, &mut r1);
        let b = synth_scan(&world, &|_| Transform::identity(), &lidar, &mut r2);
        assert_eq!(a, b);
        assert_eq!(a.len(), 16 * 1800);
        assert!(a.points.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn azimuth_matches_sensor_model_timing() {
        let lidar = LidarSpec::default();
        let model = lidar.sensor_model();
        let world = SyntheticWorld::box_room();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scan = synth_scan(&world, &|_| Transform::identity(), &lidar, &mut rng);
        for p in scan.points.iter().step_by(97) {
            assert_eq!(model.ring_of(&p.pos), Some(p.ring));
            let dt = (model.time_of(&p.pos) - p.time).abs();
            assert!(dt.min(1.0 - dt) < 1e-5, "{} {}", model.time_of(&p.pos), p.time);
        }
    }

    #[test]
    fn dataset_round_trip() {
        let mut c = SimConfig::default();
        c.trajectory.frames = 2;
        c.lidar.columns = 100;
        let d = simulate(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &d).unwrap();
        let scan = io::read_scan_native(&dir.path().join(SCAN_DIR).join(scan_file_name(1))).unwrap();
        assert_eq!(scan, d.scans[1]);
        assert_eq!(io::read_times(&dir.path().join(TIMES_FILE)).unwrap(), d.times);
        assert_eq!(io::read_imu(&dir.path().join(IMU_FILE)).unwrap().len(), d.imu.len());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = TrajectorySpec::default();
        s.imu_hz = 50.0;
        assert!(gen_trajectory(&s).is_err());
        let mut s = TrajectorySpec::default();
        s.perturbation.theta_xy_cov = [[1.0, 2.0], [2.0, 1.0]];
        assert!(gen_trajectory(&s).is_err());
        assert!(SyntheticWorld::ground_plane(0.0).validate().is_err());
    }
}
