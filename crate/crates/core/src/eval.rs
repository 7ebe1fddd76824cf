//! Absolute trajectory and rotation error metrics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, SVD};

use crate::error::{Error, Result};
use crate::lie::{Rotation, Transform, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedPose {
    pub t: f64,
    pub pose: Transform,
}

/// Poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<StampedPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<StampedPose>) -> Result<Self> {
        for (i, w) in poses.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::NonMonotonicTime {
                    index: i + 1,
                    prev: w[0].t,
                    next: w[1].t,
                });
            }
        }
        Ok(Trajectory { poses })
    }

    pub fn poses(&self) -> &[StampedPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Index of the pose closest in time to `t`; ties go to the earlier pose.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        if self.poses.is_empty() {
            return None;
        }
        let k = self.poses.partition_point(|p| p.t < t);
        let candidates = [k.checked_sub(1), (k < self.poses.len()).then_some(k)];
        candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                (self.poses[a].t - t)
                    .abs()
                    .total_cmp(&(self.poses[b].t - t).abs())
                    .then(a.cmp(&b))
            })
    }

    /// Applies `T` on the left of every pose.
    pub fn transformed(&self, t: &Transform) -> Trajectory {
        Trajectory {
            poses: self
                .poses
                .iter()
                .map(|p| StampedPose {
                    t: p.t,
                    pose: t * &p.pose,
                })
                .collect(),
        }
    }
}

/// Matched estimate/ground-truth poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Association {
    /// `(t_est, estimate, ground truth)`.
    pub pairs: Vec<(f64, Transform, Transform)>,
    pub unmatched: usize,
}

/// Pairs each estimated pose with the nearest ground-truth pose within
/// `max_dt` seconds.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<Association> {
    let mut pairs = Vec::with_capacity(est.len());
    let mut unmatched = 0;
    for e in est.poses() {
        match gt.nearest(e.t) {
            Some(k) if (gt.poses[k].t - e.t).abs() <= max_dt => {
                pairs.push((e.t, e.pose, gt.poses[k].pose));
            }
            _ => unmatched += 1,
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoPairs { max_dt });
    }
    Ok(Association { pairs, unmatched })
}

/// Per-pair translation (m) and rotation (rad) errors of `gt^-1 * est`.
pub fn pair_errors(est: &Transform, gt: &Transform) -> (f64, f64) {
    let e = gt.inverse() * *est;
    (e.trans.norm(), e.rot.angle())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// Translation RMSE, m.
    pub ate: f64,
    /// Rotation RMSE, degrees.
    pub are_deg: f64,
    pub ate_mean: f64,
    pub ate_max: f64,
    pub pairs: usize,
}

/// Translation and rotation RMSE over pairs.
pub fn ate_are(pairs: &[(Transform, Transform)]) -> Metrics {
    let n = pairs.len().max(1) as f64;
    let mut sq_t = 0.0;
    let mut sq_r = 0.0;
    let mut sum_t = 0.0;
    let mut max_t: f64 = 0.0;
    for (est, gt) in pairs {
        let (et, er) = pair_errors(est, gt);
        sq_t += et * et;
        sq_r += er * er;
        sum_t += et;
        max_t = max_t.max(et);
    }
    Metrics {
        ate: (sq_t / n).sqrt(),
        are_deg: (sq_r / n).sqrt().to_degrees(),
        ate_mean: sum_t / n,
        ate_max: max_t,
        pairs: pairs.len(),
    }
}

pub fn evaluate(assoc: &Association) -> Metrics {
    let pairs: Vec<(Transform, Transform)> =
        assoc.pairs.iter().map(|(_, e, g)| (*e, *g)).collect();
    ate_are(&pairs)
}

/// Rigid transform `T` minimizing `sum |T * est_i - gt_i|^2` over the
/// paired positions.
pub fn umeyama_alignment(pairs: &[(Transform, Transform)]) -> Transform {
    if pairs.is_empty() {
        return Transform::identity();
    }
    let n = pairs.len() as f64;
    let mu_e: Vec3 = pairs.iter().map(|(e, _)| e.trans).sum::<Vec3>() / n;
    let mu_g: Vec3 = pairs.iter().map(|(_, g)| g.trans).sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for (e, g) in pairs {
        cov += (g.trans - mu_g) * (e.trans - mu_e).transpose();
    }
    let svd = SVD::new(cov / n, true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Transform::new(Rotation::identity(), mu_g - mu_e);
    };
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = Rotation::from_matrix_unchecked(u * s * v_t).normalized();
    let t = mu_g - r.act(&mu_e);
    Transform::new(r, t)
}

/// Plain-text table and `key=value` renderings of a metrics set.
pub fn render_metrics(label: &str, m: &Metrics, unmatched: usize) -> (String, String) {
    let mut table = String::new();
    let _ = writeln!(table, "{:<12} {:>12} {:>12} {:>8}", "method", "trans.(m)", "rot.(deg)", "pairs");
    let _ = writeln!(table, "{:<12} {:>12.6} {:>12.6} {:>8}", label, m.ate, m.are_deg, m.pairs);
    let mut kv = String::new();
    let _ = writeln!(kv, "method={label}");
    let _ = writeln!(kv, "ate_rmse_m={:.9}", m.ate);
    let _ = writeln!(kv, "are_rmse_deg={:.9}", m.are_deg);
    let _ = writeln!(kv, "ate_mean_m={:.9}", m.ate_mean);
    let _ = writeln!(kv, "ate_max_m={:.9}", m.ate_max);
    let _ = writeln!(kv, "pairs={}", m.pairs);
    let _ = writeln!(kv, "unmatched={unmatched}");
    (table, kv)
}

/// Writes `x,y` rows of the estimated and ground-truth positions.
pub fn write_xy_csv(path: &Path, assoc: &Association) -> Result<()> {
    let mut s = String::from("t,est_x,est_y,gt_x,gt_y\n");
    for (t, e, g) in &assoc.pairs {
        let _ = writeln!(
            s,
            "{t:.6},{:.6},{:.6},{:.6},{:.6}",
            e.trans.x, e.trans.y, g.trans.x, g.trans.y
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(times: &[f64]) -> Trajectory {
        Trajectory::new(
            times
                .iter()
                .map(|&t| StampedPose {
                    t,
                    pose: Transform::new(Rotation::from_yaw(t), Vec3::new(t, 2.0 * t, 0.0)),
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Transform {
        let phi = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-3.0..3.0),
        );
        let t = Vec3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-5.0..5.0),
        );
        Transform::new(Rotation::exp(&phi), t)
    }

    #[test]
    fn rejects_non_increasing_times() {
        let p = StampedPose {
            t: 1.0,
            pose: Transform::identity(),
        };
        assert!(Trajectory::new(vec![p, p]).is_err());
    }

    #[test]
    fn identical_times_pair_fully() {
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let a = associate(&traj(&times), &traj(&times), 0.02).unwrap();
        assert_eq!(a.pairs.len(), 20);
        assert_eq!(a.unmatched, 0);
        let m = evaluate(&a);
        assert_eq!((m.ate, m.are_deg), (0.0, 0.0));
    }

    #[test]
    fn offset_beyond_gate_fails() {
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let shifted: Vec<f64> = times.iter().map(|t| t + 0.02 + 1e-6).collect();
        assert!(matches!(
            associate(&traj(&shifted), &traj(&times), 0.02),
            Err(Error::NoPairs { .. })
        ));
    }

    #[test]
    fn interleaved_rates_one_pair_per_estimate() {
        let est: Vec<f64> = (0..50).map(|k| k as f64 * 0.1 + 0.003).collect();
        let gt: Vec<f64> = (0..600).map(|k| k as f64 * 0.01).collect();
        let a = associate(&traj(&est), &traj(&gt), 0.02).unwrap();
        assert_eq!(a.pairs.len(), est.len());
        // brute-force nearest
        let gtt = traj(&gt);
        for (t, _, g) in &a.pairs {
            let best = gt
                .iter()
                .enumerate()
                .min_by(|x, y| (x.1 - t).abs().total_cmp(&(y.1 - t).abs()))
                .unwrap()
                .0;
            assert_eq!(*g, gtt.poses()[best].pose);
        }
    }

    #[test]
    fn three_four_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<(Transform, Transform)> = (0..30)
            .map(|_| {
                let g = Transform::new(Rotation::identity(), random_pose(&mut rng).trans);
                let e = Transform::new(Rotation::identity(), g.trans + Vec3::new(3.0, 4.0, 0.0));
                (e, g)
            })
            .collect();
        let m = ate_are(&pairs);
        assert_eq!(m.ate, 5.0);
        assert_eq!(m.are_deg, 0.0);
    }

    #[test]
    fn constant_yaw_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let off = Transform::new(Rotation::from_yaw(10f64.to_radians()), Vec3::zeros());
        let pairs: Vec<(Transform, Transform)> = (0..30)
            .map(|_| {
                let g = random_pose(&mut rng);
                (g * off, g)
            })
            .collect();
        let m = ate_are(&pairs);
        assert!((m.are_deg - 10.0).abs() < 1e-9);
        assert!(m.ate < 1e-12);
    }

    #[test]
    fn brute_force_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let pairs: Vec<(Transform, Transform)> = (0..25)
                .map(|_| (random_pose(&mut rng), random_pose(&mut rng)))
                .collect();
            let m = ate_are(&pairs);
            // independent computation through homogeneous matrices
            let mut st = 0.0;
            let mut sr = 0.0;
            for (e, g) in &pairs {
                let he = e.to_homogeneous();
                let hg = g.to_homogeneous();
                let d = hg.try_inverse().unwrap() * he;
                let t = Vec3::new(d[(0, 3)], d[(1, 3)], d[(2, 3)]);
                let c = ((d[(0, 0)] + d[(1, 1)] + d[(2, 2)] - 1.0) / 2.0).clamp(-1.0, 1.0);
                let skew = Vec3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]);
                let ang = (skew.norm() / 2.0).atan2(c);
                st += t.norm_squared();
                sr += ang * ang;
            }
            let n = pairs.len() as f64;
            assert!((m.ate - (st / n).sqrt()).abs() < 1e-12);
            assert!((m.are_deg - (sr / n).sqrt().to_degrees()).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_pose(&mut rng);
        let pairs: Vec<(Transform, Transform)> = (0..40)
            .map(|_| {
                let e = random_pose(&mut rng);
                (e, t * e)
            })
            .collect();
        let a = umeyama_alignment(&pairs);
        assert!((a.trans - t.trans).amax() < 1e-9);
        assert!((a.rot.matrix() - t.rot.matrix()).amax() < 1e-9);
    }

    proptest! {
        #[test]
        fn invariant_under_common_left_transform(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_pose(&mut rng);
            let pairs: Vec<(Transform, Transform)> = (0..10)
                .map(|_| (random_pose(&mut rng), random_pose(&mut rng)))
                .collect();
            let moved: Vec<(Transform, Transform)> =
                pairs.iter().map(|(e, g)| (w * *e, w * *g)).collect();
            let a = ate_are(&pairs);
            let b = ate_are(&moved);
            prop_assert!((a.ate - b.ate).abs() < 1e-9);
            prop_assert!((a.are_deg - b.are_deg).abs() < 1e-7);
        }

        #[test]
        fn rmse_bounds_mean(seed in any::<u64>(), n in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<(Transform, Transform)> = (0..n)
                .map(|_| (random_pose(&mut rng), random_pose(&mut rng)))
                .collect();
            let m = ate_are(&pairs);
            prop_assert!(m.ate + 1e-12 >= m.ate_mean);
            prop_assert!(m.ate_mean >= 0.0);
        }
    }
}
