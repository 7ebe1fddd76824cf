//! Inertial measurement model and mid-point preintegration between scans.
//!
//! The 15-dimensional error state is ordered `[phi, p, v, b_a, b_g]`.
//! Rotation errors are right perturbations, `R = R_hat * exp(dphi)`; every
//! other block is additive.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{right_jacobian, right_jacobian_inv, skew, so3_exp, Mat3, Rotation, Vec3};

pub type Vec15 = SVector<f64, 15>;
pub type Mat15 = SMatrix<f64, 15, 15>;
pub type Mat15x30 = SMatrix<f64, 15, 30>;

pub const PHI: usize = 0;
pub const POS: usize = 3;
pub const VEL: usize = 6;
pub const BA: usize = 9;
pub const BG: usize = 12;

/// Longest accepted gap between consecutive samples.
pub const MAX_STEP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// rad/s, body frame
    pub gyro: Vec3,
    /// m/s^2, body frame, specific force
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vec3, accel: Vec3) -> Self {
        ImuSample { t, gyro, accel }
    }
}

/// Continuous-time noise densities and gravity.
///
/// The defaults are generic MEMS placeholders, not values measured for any
/// particular sensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoiseParams {
    /// rad/s/sqrt(Hz)
    pub gyro_noise: f64,
    /// m/s^2/sqrt(Hz)
    pub accel_noise: f64,
    /// rad/s^2/sqrt(Hz)
    pub gyro_walk: f64,
    /// m/s^3/sqrt(Hz)
    pub accel_walk: f64,
    pub gravity: [f64; 3],
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        ImuNoiseParams {
            gyro_noise: 1.7e-4,
            accel_noise: 2.0e-3,
            gyro_walk: 2.0e-5,
            accel_walk: 3.0e-4,
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

impl ImuNoiseParams {
    pub fn noiseless(gravity: Vec3) -> Self {
        ImuNoiseParams {
            gyro_noise: 0.0,
            accel_noise: 0.0,
            gyro_walk: 0.0,
            accel_walk: 0.0,
            gravity: gravity.into(),
        }
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.gyro_noise,
            self.accel_noise,
            self.gyro_walk,
            self.accel_walk,
        ];
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("imu noise densities must be >= 0".into()));
        }
        let g = self.gravity().norm();
        if !(9.0..=10.5).contains(&g) {
            log::warn!("gravity magnitude {g:.3} m/s^2 is outside the Earth range");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImuBias {
    pub accel: Vec3,
    pub gyro: Vec3,
}

impl ImuBias {
    pub fn new(accel: Vec3, gyro: Vec3) -> Self {
        ImuBias { accel, gyro }
    }

    pub fn zero() -> Self {
        ImuBias::default()
    }
}

/// Body-to-world state at a scan timestamp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotState {
    pub rot: Rotation,
    pub pos: Vec3,
    pub vel: Vec3,
    pub bias: ImuBias,
}

impl Default for RobotState {
    fn default() -> Self {
        RobotState {
            rot: Rotation::identity(),
            pos: Vec3::zeros(),
            vel: Vec3::zeros(),
            bias: ImuBias::zero(),
        }
    }
}

impl RobotState {
    /// Applies a 15-dim error-state increment.
    pub fn boxplus(&self, delta: &Vec15) -> RobotState {
        let dphi: Vec3 = delta.fixed_rows::<3>(PHI).into_owned();
        RobotState {
            rot: &self.rot * &so3_exp(&dphi),
            pos: self.pos + delta.fixed_rows::<3>(POS),
            vel: self.vel + delta.fixed_rows::<3>(VEL),
            bias: ImuBias {
                accel: self.bias.accel + delta.fixed_rows::<3>(BA),
                gyro: self.bias.gyro + delta.fixed_rows::<3>(BG),
            },
        }
    }
}

impl RobotState {
    /// Increment `d` with `self.boxplus(&d) == *other`.
    pub fn boxminus(&self, other: &RobotState) -> Vec15 {
        let mut d = Vec15::zeros();
        d.fixed_rows_mut::<3>(PHI)
            .copy_from(&(&self.rot.inverse() * &other.rot).log());
        d.fixed_rows_mut::<3>(POS).copy_from(&(other.pos - self.pos));
        d.fixed_rows_mut::<3>(VEL).copy_from(&(other.vel - self.vel));
        d.fixed_rows_mut::<3>(BA)
            .copy_from(&(other.bias.accel - self.bias.accel));
        d.fixed_rows_mut::<3>(BG)
            .copy_from(&(other.bias.gyro - self.bias.gyro));
        d
    }
}

fn check_step(prev: &ImuSample, next: &ImuSample, index: usize) -> Result<f64> {
    let dt = next.t - prev.t;
    if !(dt > 0.0) {
        return Err(Error::NonMonotonicTime {
            index,
            prev: prev.t,
            next: next.t,
        });
    }
    if dt > MAX_STEP {
        return Err(Error::StepTooLong { dt });
    }
    Ok(dt)
}

/// One mid-point integration step in the world frame.
///
/// The rotation is advanced first so the second accelerometer sample is
/// rotated with the freshly integrated attitude.
pub fn midpoint_step(
    state: &RobotState,
    s_k: &ImuSample,
    s_k1: &ImuSample,
    bias: &ImuBias,
    gravity: &Vec3,
) -> Result<RobotState> {
    let dt = check_step(s_k, s_k1, 1)?;
    let w_mid = 0.5 * ((s_k.gyro - bias.gyro) + (s_k1.gyro - bias.gyro));
    let rot_k1 = &state.rot * &so3_exp(&(w_mid * dt));
    let a_mid = 0.5
        * (state.rot.act(&(s_k.accel - bias.accel)) + rot_k1.act(&(s_k1.accel - bias.accel)))
        + gravity;
    Ok(RobotState {
        rot: rot_k1,
        pos: state.pos + state.vel * dt + 0.5 * a_mid * dt * dt,
        vel: state.vel + a_mid * dt,
        bias: state.bias,
    })
}

/// Preintegrated deltas at one sample time, relative to the first sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreintegrationNode {
    pub t: f64,
    pub rot: Rotation,
    pub pos: Vec3,
    pub vel: Vec3,
}

/// Relative motion summary between two scan timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct PreintegratedImu {
    pub delta_rot: Rotation,
    pub delta_pos: Vec3,
    pub delta_vel: Vec3,
    pub dt: f64,
    pub t_start: f64,
    /// Covariance of the 15-dim residual.
    pub covariance: Mat15,
    pub d_rot_d_bg: Mat3,
    pub d_pos_d_ba: Mat3,
    pub d_pos_d_bg: Mat3,
    pub d_vel_d_ba: Mat3,
    pub d_vel_d_bg: Mat3,
    /// Bias the deltas were integrated with.
    pub lin_bias: ImuBias,
    /// Deltas at every sample, first entry is the identity.
    pub nodes: Vec<PreintegrationNode>,
}

/// Incremental builder for [`PreintegratedImu`].
#[derive(Clone, Debug)]
pub struct Preintegrator {
    bias: ImuBias,
    noise: ImuNoiseParams,
    last: Option<ImuSample>,
    rot: Rotation,
    pos: Vec3,
    vel: Vec3,
    dt: f64,
    t_start: f64,
    cov: Mat15,
    jac: Mat15,
    nodes: Vec<PreintegrationNode>,
}

impl Preintegrator {
    pub fn new(bias: ImuBias, noise: ImuNoiseParams) -> Self {
        Preintegrator {
            bias,
            noise,
            last: None,
            rot: Rotation::identity(),
            pos: Vec3::zeros(),
            vel: Vec3::zeros(),
            dt: 0.0,
            t_start: 0.0,
            cov: Mat15::zeros(),
            jac: Mat15::identity(),
            nodes: Vec::new(),
        }
    }

    pub fn samples(&self) -> usize {
        self.nodes.len()
    }

    pub fn push(&mut self, sample: &ImuSample) -> Result<()> {
        if !(sample.gyro.iter().chain(sample.accel.iter()).all(|v| v.is_finite())
            && sample.t.is_finite())
        {
            return Err(Error::Config(format!(
                "non-finite imu sample at t = {}",
                sample.t
            )));
        }
        let Some(prev) = self.last else {
            self.last = Some(*sample);
            self.t_start = sample.t;
            self.nodes.push(PreintegrationNode {
                t: sample.t,
                rot: Rotation::identity(),
                pos: Vec3::zeros(),
                vel: Vec3::zeros(),
            });
            return Ok(());
        };
        let dt = check_step(&prev, sample, self.nodes.len())?;
        self.step(&prev, sample, dt);
        self.last = Some(*sample);
        self.nodes.push(PreintegrationNode {
            t: sample.t,
            rot: self.rot,
            pos: self.pos,
            vel: self.vel,
        });
        Ok(())
    }

    fn step(&mut self, s0: &ImuSample, s1: &ImuSample, dt: f64) {
        let w_mid = 0.5 * ((s0.gyro - self.bias.gyro) + (s1.gyro - self.bias.gyro));
        let a0 = s0.accel - self.bias.accel;
        let a1 = s1.accel - self.bias.accel;
        let theta = w_mid * dt;
        let inc = so3_exp(&theta);
        let jr = right_jacobian(&theta);
        let r0 = *self.rot.matrix();
        let rot1 = (&self.rot * &inc).normalized();
        let r1 = *rot1.matrix();

        let a_mid = 0.5 * (r0 * a0 + r1 * a1);
        let pos1 = self.pos + self.vel * dt + 0.5 * a_mid * dt * dt;
        let vel1 = self.vel + a_mid * dt;

        // Linearized error propagation of the mid-point scheme.
        let inc_t = inc.matrix().transpose();
        let a_phi = -0.5 * (r0 * skew(&a0) + r1 * skew(&a1) * inc_t);
        let a_ba = -0.5 * (r0 + r1);
        let a_bg = 0.5 * r1 * skew(&a1) * jr * dt;
        let half_dt2 = 0.5 * dt * dt;

        let mut f = Mat15::identity();
        f.fixed_view_mut::<3, 3>(PHI, PHI).copy_from(&inc_t);
        f.fixed_view_mut::<3, 3>(PHI, BG).copy_from(&(-jr * dt));
        f.fixed_view_mut::<3, 3>(POS, PHI).copy_from(&(a_phi * half_dt2));
        f.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(Mat3::identity() * dt));
        f.fixed_view_mut::<3, 3>(POS, BA).copy_from(&(a_ba * half_dt2));
        f.fixed_view_mut::<3, 3>(POS, BG).copy_from(&(a_bg * half_dt2));
        f.fixed_view_mut::<3, 3>(VEL, PHI).copy_from(&(a_phi * dt));
        f.fixed_view_mut::<3, 3>(VEL, BA).copy_from(&(a_ba * dt));
        f.fixed_view_mut::<3, 3>(VEL, BG).copy_from(&(a_bg * dt));

        // Noise inputs [n_g, n_a, w_ba, w_bg]; white noise is held constant
        // over the interval so both end points see the same draw.
        let mut g = SMatrix::<f64, 15, 12>::zeros();
        let a_ng = 0.5 * r1 * skew(&a1) * jr * dt;
        let a_na = a_ba;
        g.fixed_view_mut::<3, 3>(PHI, 0).copy_from(&(-jr * dt));
        g.fixed_view_mut::<3, 3>(POS, 0).copy_from(&(a_ng * half_dt2));
        g.fixed_view_mut::<3, 3>(POS, 3).copy_from(&(a_na * half_dt2));
        g.fixed_view_mut::<3, 3>(VEL, 0).copy_from(&(a_ng * dt));
        g.fixed_view_mut::<3, 3>(VEL, 3).copy_from(&(a_na * dt));
        g.fixed_view_mut::<3, 3>(BA, 6).copy_from(&Mat3::identity());
        g.fixed_view_mut::<3, 3>(BG, 9).copy_from(&Mat3::identity());

        let n = &self.noise;
        let mut q = SVector::<f64, 12>::zeros();
        for i in 0..3 {
            q[i] = n.gyro_noise * n.gyro_noise / dt;
            q[3 + i] = n.accel_noise * n.accel_noise / dt;
            q[6 + i] = n.accel_walk * n.accel_walk * dt;
            q[9 + i] = n.gyro_walk * n.gyro_walk * dt;
        }
        let q = SMatrix::<f64, 12, 12>::from_diagonal(&q);

        self.cov = f * self.cov * f.transpose() + g * q * g.transpose();
        self.cov = 0.5 * (self.cov + self.cov.transpose());
        self.jac = f * self.jac;

        self.rot = rot1;
        self.pos = pos1;
        self.vel = vel1;
        self.dt += dt;
    }

    pub fn finish(self) -> Result<PreintegratedImu> {
        if self.nodes.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: self.nodes.len(),
            });
        }
        let block = |r: usize, c: usize| -> Mat3 { self.jac.fixed_view::<3, 3>(r, c).into_owned() };
        Ok(PreintegratedImu {
            delta_rot: self.rot,
            delta_pos: self.pos,
            delta_vel: self.vel,
            dt: self.dt,
            t_start: self.t_start,
            covariance: self.cov,
            d_rot_d_bg: block(PHI, BG),
            d_pos_d_ba: block(POS, BA),
            d_pos_d_bg: block(POS, BG),
            d_vel_d_ba: block(VEL, BA),
            d_vel_d_bg: block(VEL, BG),
            lin_bias: self.bias,
            nodes: self.nodes,
        })
    }
}

/// Integrates a sample stream into relative deltas expressed in the body
/// frame of the first sample; no world state is read.
pub fn preintegrate(
    samples: &[ImuSample],
    bias: &ImuBias,
    noise: &ImuNoiseParams,
) -> Result<PreintegratedImu> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let mut p = Preintegrator::new(*bias, *noise);
    for s in samples {
        p.push(s)?;
    }
    p.finish()
}

/// Deltas after first-order bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectedDeltas {
    pub rot: Rotation,
    pub pos: Vec3,
    pub vel: Vec3,
}

pub fn correct_bias(pre: &PreintegratedImu, new_bias: &ImuBias) -> CorrectedDeltas {
    let dba = new_bias.accel - pre.lin_bias.accel;
    let dbg = new_bias.gyro - pre.lin_bias.gyro;
    let shift = dba.norm().max(dbg.norm());
    if shift > 0.1 {
        log::debug!("bias moved {shift:.3} from its linearization point; correction is first order");
    }
    CorrectedDeltas {
        rot: &pre.delta_rot * &so3_exp(&(pre.d_rot_d_bg * dbg)),
        pos: pre.delta_pos + pre.d_pos_d_ba * dba + pre.d_pos_d_bg * dbg,
        vel: pre.delta_vel + pre.d_vel_d_ba * dba + pre.d_vel_d_bg * dbg,
    }
}

/// Propagates `state_i` through the preintegrated motion.
pub fn predict(state_i: &RobotState, pre: &PreintegratedImu, gravity: &Vec3) -> RobotState {
    let c = correct_bias(pre, &state_i.bias);
    let dt = pre.dt;
    RobotState {
        rot: (&state_i.rot * &c.rot).normalized(),
        pos: state_i.pos + state_i.vel * dt + 0.5 * gravity * dt * dt + state_i.rot.act(&c.pos),
        vel: state_i.vel + gravity * dt + state_i.rot.act(&c.vel),
        bias: state_i.bias,
    }
}

/// Stacked residual `[r_phi, r_p, r_v, r_ba, r_bg]`.
pub fn imu_residual(
    state_i: &RobotState,
    state_j: &RobotState,
    pre: &PreintegratedImu,
    gravity: &Vec3,
) -> Vec15 {
    let c = correct_bias(pre, &state_i.bias);
    let dt = pre.dt;
    let ri_t = state_i.rot.inverse();
    let r_phi = (&(&c.rot.inverse() * &ri_t) * &state_j.rot).log();
    let r_p = ri_t.act(
        &(state_j.pos - state_i.pos - state_i.vel * dt - 0.5 * gravity * dt * dt),
    ) - c.pos;
    let r_v = ri_t.act(&(state_j.vel - state_i.vel - gravity * dt)) - c.vel;
    let mut r = Vec15::zeros();
    r.fixed_rows_mut::<3>(PHI).copy_from(&r_phi);
    r.fixed_rows_mut::<3>(POS).copy_from(&r_p);
    r.fixed_rows_mut::<3>(VEL).copy_from(&r_v);
    r.fixed_rows_mut::<3>(BA)
        .copy_from(&(state_j.bias.accel - state_i.bias.accel));
    r.fixed_rows_mut::<3>(BG)
        .copy_from(&(state_j.bias.gyro - state_i.bias.gyro));
    r
}

/// Jacobian of [`imu_residual`] with respect to
/// `[dphi_i, dp_i, dv_i, dba_i, dbg_i, dphi_j, dp_j, dv_j, dba_j, dbg_j]`.
pub fn imu_jacobian(
    state_i: &RobotState,
    state_j: &RobotState,
    pre: &PreintegratedImu,
    gravity: &Vec3,
) -> Mat15x30 {
    let c = correct_bias(pre, &state_i.bias);
    let dt = pre.dt;
    let ri = *state_i.rot.matrix();
    let rj = *state_j.rot.matrix();
    let ri_t = ri.transpose();
    let err_rot = c.rot.inverse().matrix() * ri_t * rj;
    let r_phi = Rotation::from_matrix_unchecked(err_rot).log();
    let jr_inv = right_jacobian_inv(&r_phi);

    let dbg = state_i.bias.gyro - pre.lin_bias.gyro;
    let jr_bias = right_jacobian(&(pre.d_rot_d_bg * dbg));

    let dp_world = state_j.pos - state_i.pos - state_i.vel * dt - 0.5 * gravity * dt * dt;
    let dv_world = state_j.vel - state_i.vel - gravity * dt;

    let j = 15;
    let mut jac = Mat15x30::zeros();
    let mut set = |r: usize, c: usize, m: Mat3| jac.fixed_view_mut::<3, 3>(r, c).copy_from(&m);

    set(PHI, PHI, -jr_inv * rj.transpose() * ri);
    set(PHI, BG, -jr_inv * err_rot.transpose() * jr_bias * pre.d_rot_d_bg);
    set(PHI, j + PHI, jr_inv);

    set(POS, PHI, skew(&(ri_t * dp_world)));
    set(POS, POS, -ri_t);
    set(POS, VEL, -ri_t * dt);
    set(POS, BA, -pre.d_pos_d_ba);
    set(POS, BG, -pre.d_pos_d_bg);
    set(POS, j + POS, ri_t);

    set(VEL, PHI, skew(&(ri_t * dv_world)));
    set(VEL, VEL, -ri_t);
    set(VEL, BA, -pre.d_vel_d_ba);
    set(VEL, BG, -pre.d_vel_d_bg);
    set(VEL, j + VEL, ri_t);

    set(BA, BA, -Mat3::identity());
    set(BA, j + BA, Mat3::identity());
    set(BG, BG, -Mat3::identity());
    set(BG, j + BG, Mat3::identity());
    jac
}
