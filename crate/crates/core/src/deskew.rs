//! Two-stage motion-distortion compensation.
//!
//! A sweep is stamped at its end. Every point carries its acquisition time
//! as a fraction `s` of the sweep period, and deskewing expresses it in the
//! sensor frame at `s = 1`.

use log::warn;

use crate::features::{RawScan, ScanPoint};
use crate::imu::{PreintegratedImu, RobotState};
use crate::lie::{Rotation, Transform, Vec3, Vec6};

/// Sensor motion over one sweep relative to the sweep-start pose.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskewModel {
    motion: Motion,
    period: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum Motion {
    /// Constant twist: the pose at fraction `s` is `exp(s * xi)`.
    Twist(Vec6),
    /// Relative poses at increasing sweep fractions, interpolated between
    /// neighbours.
    Nodes(Vec<(f64, Transform)>),
}

/// Tolerated shortfall (s) of IMU coverage at either end of a sweep.
const COVERAGE_SLACK: f64 = 1e-6;

impl DeskewModel {
    /// Constant-twist model; `xi` is the motion over the whole sweep.
    pub fn constant_twist(xi: Vec6, period: f64) -> Self {
        assert!(period > 0.0 && xi.iter().all(|v| v.is_finite()));
        DeskewModel {
            motion: Motion::Twist(xi),
            period,
        }
    }

    /// Constant-velocity model extrapolated from the two previous sweep-start
    /// poses, which are `frame_dt` seconds apart.
    pub fn from_previous_poses(
        prev: &Transform,
        last: &Transform,
        frame_dt: f64,
        period: f64,
    ) -> Self {
        let xi = (prev.inverse() * *last).log() * (period / frame_dt);
        Self::constant_twist(xi, period)
    }

    /// Model from IMU deltas integrated over the sweep; `start` is the state
    /// at the sweep start, i.e. the previous frame. Returns `None` when the
    /// deltas do not cover the sweep.
    pub fn from_imu(
        pre: &PreintegratedImu,
        start: &RobotState,
        gravity: &Vec3,
        sweep_start: f64,
        period: f64,
    ) -> Option<Self> {
        let last = pre.nodes.last()?;
        if pre.nodes.len() < 2
            || pre.t_start > sweep_start + COVERAGE_SLACK
            || last.t < sweep_start + period - COVERAGE_SLACK
        {
            return None;
        }
        let r0t = start.rot.inverse();
        let nodes = pre
            .nodes
            .iter()
            .map(|n| {
                let tau = n.t - pre.t_start;
                let trans = r0t.act(&(start.vel * tau + 0.5 * gravity * tau * tau)) + n.pos;
                let rel = Transform::new(n.rot, trans);
                ((n.t - sweep_start) / period, rel)
            })
            .collect();
        Some(DeskewModel {
            motion: Motion::Nodes(nodes),
            period,
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Pose at sweep fraction `s` relative to the sweep-start pose.
    pub fn pose_at(&self, s: f64) -> Transform {
        match &self.motion {
            Motion::Twist(xi) => Transform::exp(&(xi * s)),
            Motion::Nodes(nodes) => interpolate(nodes, s),
        }
    }

    /// Pose at sweep fraction `s` relative to the sweep-end pose.
    pub fn pose_from_end(&self, s: f64) -> Transform {
        match &self.motion {
            Motion::Twist(xi) => Transform::exp(&(xi * (s - 1.0))),
            Motion::Nodes(nodes) => interpolate(nodes, 1.0).inverse() * interpolate(nodes, s),
        }
    }

    /// Motion over the full sweep as a single tangent vector.
    pub fn sweep_tangent(&self) -> Vec6 {
        match &self.motion {
            Motion::Twist(xi) => *xi,
            Motion::Nodes(_) => self.pose_at(1.0).log(),
        }
    }
}

fn interpolate(nodes: &[(f64, Transform)], s: f64) -> Transform {
    if nodes.len() == 1 {
        return nodes[0].1;
    }
    // index of the segment containing s, clamped to extrapolate at the ends
    let k = match nodes.iter().position(|(sk, _)| *sk > s) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => nodes.len() - 2,
    };
    let (s0, t0) = &nodes[k];
    let (s1, t1) = &nodes[k + 1];
    let alpha = (s - s0) / (s1 - s0);
    if alpha == 0.0 {
        return *t0;
    }
    // rotation along the geodesic, translation linearly, like the IMU
    // states the nodes were taken from
    let dr = (t0.rot.inverse() * t1.rot).log() * alpha;
    Transform::new(t0.rot * Rotation::exp(&dr), t0.trans + (t1.trans - t0.trans) * alpha)
}

/// Expresses every point in the sweep-end frame using `model`.
pub fn first_stage(scan: &RawScan, model: &DeskewModel) -> RawScan {
    let end_inv = model.pose_at(1.0).inverse();
    map_points(scan, |p| (&end_inv * &model.pose_at(p.time as f64)).apply(&p.pos))
}

/// First stage with the constant-velocity fallback when the IMU deltas do
/// not cover the sweep.
pub fn first_stage_imu(
    scan: &RawScan,
    pre: Option<&PreintegratedImu>,
    start: &RobotState,
    gravity: &Vec3,
    sweep_start: f64,
    fallback: &DeskewModel,
) -> RawScan {
    let model = pre.and_then(|p| {
        DeskewModel::from_imu(p, start, gravity, sweep_start, fallback.period())
    });
    match model {
        Some(m) => first_stage(scan, &m),
        None => {
            warn!("imu does not cover sweep at t = {sweep_start:.3}; using constant-velocity deskew");
            first_stage(scan, fallback)
        }
    }
}

/// Re-deskews raw points with the optimized sweep motion
/// `dxi = log(T_i^-1 T_j*)`: a point at sweep fraction `s` is moved by
/// `exp(-(1 - s) * dxi)` into the sweep-end frame.
pub fn second_stage(scan: &RawScan, t_i: &Transform, t_j_star: &Transform) -> RawScan {
    let dxi = (t_i.inverse() * *t_j_star).log();
    second_stage_tangent(scan, &dxi)
}

pub fn second_stage_tangent(scan: &RawScan, dxi: &Vec6) -> RawScan {
    if dxi.iter().all(|v| *v == 0.0) {
        return scan.clone();
    }
    map_points(scan, |p| Transform::exp(&(dxi * (p.time as f64 - 1.0))).apply(&p.pos))
}

/// Sweep fraction from a point's ordinal when no per-point time is known.
pub fn ordinal_fraction(n: usize, count: usize) -> f32 {
    if count == 0 {
        0.0
    } else {
        n as f32 / count as f32
    }
}

fn map_points<F>(scan: &RawScan, f: F) -> RawScan
where
    F: Fn(&ScanPoint) -> Vec3 + Sync,
{
    let conv = |p: &ScanPoint| ScanPoint { pos: f(p), ..*p };
    #[cfg(feature = "parallel")]
    let points = {
        use rayon::prelude::*;
        scan.points.par_iter().map(conv).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let points = scan.points.iter().map(conv).collect();
    RawScan { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::{preintegrate, ImuBias, ImuNoiseParams, ImuSample};

    const G: Vec3 = Vec3::new(0.0, 0.0, -9.81);

    fn scan() -> RawScan {
        RawScan::new(
            (0..50)
                .map(|k| {
                    let a = k as f64 * 0.3;
                    ScanPoint::new(
                        Vec3::new(5.0 * a.cos(), 4.0 * a.sin(), 0.3 * (k % 3) as f64),
                        (k % 4) as u16,
                        k as f32 / 50.0,
                    )
                })
                .collect(),
        )
    }

    fn imu_stream(n: usize, period: f64, gyro: Vec3, accel: Vec3) -> Vec<ImuSample> {
        (0..n)
            .map(|k| ImuSample::new(period * k as f64 / (n - 1) as f64, gyro, accel))
            .collect()
    }

    fn model_from(samples: &[ImuSample], start: &RobotState, period: f64) -> DeskewModel {
        let pre = preintegrate(samples, &ImuBias::zero(), &ImuNoiseParams::default()).unwrap();
        DeskewModel::from_imu(&pre, start, &G, 0.0, period).unwrap()
    }

    #[test]
    fn stationary_leaves_scan_unchanged() {
        let s = imu_stream(21, 0.1, Vec3::zeros(), -G);
        let m = model_from(&s, &RobotState::default(), 0.1);
        let raw = scan();
        let out = first_stage(&raw, &m);
        for (a, b) in raw.points.iter().zip(&out.points) {
            assert!((a.pos - b.pos).amax() < 1e-12);
        }
    }

    #[test]
    fn constant_velocity_translation() {
        let s = imu_stream(21, 0.1, Vec3::zeros(), -G);
        let start = RobotState {
            vel: Vec3::new(1.0, 0.0, 0.0),
            ..Default::default()
        };
        let m = model_from(&s, &start, 0.1);
        // acquired 0.1 m behind the sweep-end pose
        let first = ScanPoint::new(Vec3::new(3.0, 1.0, 0.0), 0, 0.0);
        let last = ScanPoint::new(Vec3::new(3.0, 1.0, 0.0), 0, 1.0);
        let out = first_stage(&RawScan::new(vec![first, last]), &m);
        assert!((out.points[0].pos - Vec3::new(2.9, 1.0, 0.0)).amax() < 1e-12);
        assert!((out.points[1].pos - last.pos).amax() < 1e-12);
    }

    #[test]
    fn pure_yaw() {
        let s = imu_stream(41, 0.1, Vec3::new(0.0, 0.0, 1.0), -G);
        let m = model_from(&s, &RobotState::default(), 0.1);
        let p = ScanPoint::new(Vec3::new(3.0, 1.0, 0.5), 0, 0.5);
        let out = first_stage(&RawScan::new(vec![p]), &m);
        let expect = Rotation::exp(&Vec3::new(0.0, 0.0, -0.05)).act(&p.pos);
        assert!((out.points[0].pos - expect).amax() < 1e-12);
    }

    #[test]
    fn independent_of_imu_density() {
        // constant yaw rate while translating at constant world velocity
        let start = RobotState {
            vel: Vec3::new(2.0, -0.5, 0.0),
            ..Default::default()
        };
        let accel = Vec3::new(0.0, 0.0, 9.81);
        let gyro = Vec3::new(0.0, 0.0, 0.8);
        let coarse = model_from(&imu_stream(2, 0.1, gyro, accel), &start, 0.1);
        let fine = model_from(&imu_stream(200, 0.1, gyro, accel), &start, 0.1);
        let raw = scan();
        let a = first_stage(&raw, &coarse);
        let b = first_stage(&raw, &fine);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((p.pos - q.pos).amax() < 1e-6, "{} vs {}", p.pos, q.pos);
        }
    }

    #[test]
    fn missing_coverage_falls_back() {
        let s = imu_stream(11, 0.05, Vec3::zeros(), -G);
        let pre = preintegrate(&s, &ImuBias::zero(), &ImuNoiseParams::default()).unwrap();
        assert!(DeskewModel::from_imu(&pre, &RobotState::default(), &G, 0.0, 0.1).is_none());
        let fallback =
            DeskewModel::constant_twist(Vec6::new(0.0, 0.0, 0.0, 0.1, 0.0, 0.0), 0.1);
        let p = ScanPoint::new(Vec3::new(3.0, 1.0, 0.0), 0, 0.0);
        let out = first_stage_imu(
            &RawScan::new(vec![p]),
            Some(&pre),
            &RobotState::default(),
            &G,
            0.0,
            &fallback,
        );
        assert!((out.points[0].pos - Vec3::new(2.9, 1.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn previous_pose_extrapolation() {
        let a = Transform::identity();
        let b = Transform::new(Rotation::from_yaw(0.1), Vec3::new(0.2, 0.0, 0.0));
        let m = DeskewModel::from_previous_poses(&a, &b, 0.1, 0.1);
        let got = m.pose_at(1.0);
        assert!((got.trans - b.trans).amax() < 1e-12);
        assert!((got.rot.matrix() - b.rot.matrix()).amax() < 1e-12);
    }

    fn pose(yaw: f64, x: f64, y: f64) -> Transform {
        Transform::new(Rotation::from_yaw(yaw), Vec3::new(x, y, 0.0))
    }

    #[test]
    fn second_stage_identity_motion() {
        let t = pose(0.4, 1.0, 2.0);
        let raw = scan();
        assert_eq!(second_stage(&raw, &t, &t), raw);
    }

    #[test]
    fn second_stage_endpoints_and_midpoint() {
        let ti = pose(0.1, 1.0, 2.0);
        let tj = pose(0.25, 1.3, 2.1);
        let dxi = (ti.inverse() * tj).log();
        let p = Vec3::new(4.0, -2.0, 0.7);
        let raw = RawScan::new(vec![
            ScanPoint::new(p, 0, 0.0),
            ScanPoint::new(p, 0, 0.5),
            ScanPoint::new(p, 0, 1.0),
        ]);
        let out = second_stage(&raw, &ti, &tj);
        let full = Transform::exp(&-dxi).apply(&p);
        assert!((out.points[0].pos - full).amax() < 1e-12);
        let half = (ti.inverse() * tj).scaled(-0.5).apply(&p);
        assert!((out.points[1].pos - half).amax() < 1e-9);
        assert!((out.points[2].pos - p).amax() < 1e-12);
    }

    #[test]
    fn second_stage_composition_round_trip() {
        let ti = pose(-0.3, 5.0, 2.0);
        let tj = pose(-0.1, 5.4, 2.3);
        let raw = scan();
        let there = second_stage(&raw, &ti, &tj);
        let back = second_stage(&there, &tj, &ti);
        for (a, b) in raw.points.iter().zip(&back.points) {
            assert!((a.pos - b.pos).amax() < 1e-7);
        }
    }

    #[test]
    fn ordinal_fraction_bounds() {
        assert_eq!(ordinal_fraction(0, 10), 0.0);
        assert_eq!(ordinal_fraction(5, 10), 0.5);
        assert_eq!(ordinal_fraction(3, 0), 0.0);
    }
}
