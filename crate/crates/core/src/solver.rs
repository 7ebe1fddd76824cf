//! SE(2)-constrained frame-to-map estimation.
//!
//! LiDAR residuals act on the planar pose `(d_x, d_y, psi)` of the current
//! frame. Roll, pitch and height deviations are folded into each residual's
//! variance through the perturbation model. When an IMU factor is present the
//! full 15-dim states of the previous and current frame are estimated
//! jointly.
//!
//! Each state is parameterized as
//! `[d_x, d_y, psi, eta_x, eta_y, z, v (3), b_a (3), b_g (3)]` with
//! `R = Exp([eta_x, eta_y, 0]) * Rz(psi)` and `P = (d_x, d_y, z)`.

use log::debug;
use nalgebra::{
    DMatrix, DVector, Matrix2, Matrix2x3, Matrix3x2, RowVector2, RowVector3, SymmetricEigen, Vector2,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureScan;
use crate::imu::{imu_jacobian, imu_residual, ImuBias, Mat15, PreintegratedImu, RobotState, Vec15};
use crate::lie::{right_jacobian, skew, wrap_angle, Mat3, Rotation, Se2Pose, Vec3};
use crate::map::{FeatureMap, MapKind};

/// Residuals below this are treated as sitting on the kink of `|.|`.
pub const KINK_EPS: f64 = 1e-9;
/// Minimum length of an edge direction or plane normal cross product.
pub const DEGENERACY_EPS: f64 = 1e-6;

/// Parameter indices within one state block.
pub mod param {
    pub const DX: usize = 0;
    pub const DY: usize = 1;
    pub const PSI: usize = 2;
    pub const ETA_X: usize = 3;
    pub const ETA_Y: usize = 4;
    pub const Z: usize = 5;
    pub const VEL: usize = 6;
    pub const BA: usize = 9;
    pub const BG: usize = 12;
}

/// Out-of-plane perturbation and sensor noise levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationModel {
    /// Roll/pitch perturbation covariance, rad^2.
    pub theta_xy_cov: [[f64; 2]; 2],
    /// Height perturbation standard deviation, m.
    pub sigma_z: f64,
    /// Range noise standard deviation, m.
    pub sigma_k: f64,
}

impl Default for PerturbationModel {
    fn default() -> Self {
        Self::indoor()
    }
}

impl PerturbationModel {
    pub fn isotropic(theta_var: f64, sigma_z: f64, sigma_k: f64) -> Self {
        PerturbationModel {
            theta_xy_cov: [[theta_var, 0.0], [0.0, theta_var]],
            sigma_z,
            sigma_k,
        }
    }

    /// `1e-3 rad^2` tilt covariance.
    pub fn indoor() -> Self {
        Self::isotropic(1e-3, 0.05, 0.05)
    }

    /// `1e-4 rad^2` tilt covariance.
    pub fn outdoor() -> Self {
        Self::isotropic(1e-4, 0.05, 0.05)
    }

    /// Same sensor noise with the out-of-plane terms removed.
    pub fn without_perturbation(&self) -> Self {
        PerturbationModel {
            theta_xy_cov: [[0.0; 2]; 2],
            sigma_z: 0.0,
            sigma_k: self.sigma_k,
        }
    }

    pub fn theta_cov(&self) -> Matrix2<f64> {
        let c = &self.theta_xy_cov;
        Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1])
    }

    pub fn tilt_is_zero(&self) -> bool {
        self.theta_cov().iter().all(|v| *v == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.theta_cov();
        let finite = c.iter().all(|v| v.is_finite())
            && self.sigma_z.is_finite()
            && self.sigma_k.is_finite();
        if !finite || self.sigma_z < 0.0 || self.sigma_k < 0.0 {
            return Err(Error::Config("perturbation model must be finite and non-negative".into()));
        }
        if c[(0, 1)] != c[(1, 0)] {
            return Err(Error::Config("theta_xy_cov must be symmetric".into()));
        }
        if !self.tilt_is_zero() && !(c[(0, 0)] > 0.0 && c.determinant() > 0.0) {
            return Err(Error::Config(
                "theta_xy_cov must be zero or positive definite".into(),
            ));
        }
        Ok(())
    }
}

/// `p_hat = Rz(psi) p + (d, 0)`.
pub fn transform_point(pose: &Se2Pose, p: &Vec3) -> Vec3 {
    let (s, c) = pose.yaw().sin_cos();
    Vec3::new(
        c * p.x - s * p.y + pose.d.x,
        s * p.x + c * p.y + pose.d.y,
        p.z,
    )
}

/// Derivative of [`transform_point`] with respect to `(d_x, d_y, psi)`,
/// the yaw entering as a right perturbation.
pub fn pose_point_jacobian(pose: &Se2Pose, p: &Vec3) -> Mat3 {
    let r = Rotation::from_yaw(pose.yaw());
    let col = -(r.matrix() * skew(p) * Vec3::z());
    let mut j = Mat3::zeros();
    j[(0, 0)] = 1.0;
    j[(1, 1)] = 1.0;
    j.set_column(2, &col);
    j
}

/// Point-to-line correspondence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeCorrespondence {
    /// Source point in the sensor frame.
    pub p: Vec3,
    pub a: Vec3,
    pub b: Vec3,
}

impl EdgeCorrespondence {
    /// `None` for a degenerate line.
    pub fn new(p: Vec3, a: Vec3, b: Vec3) -> Option<Self> {
        ((a - b).norm() > DEGENERACY_EPS).then_some(EdgeCorrespondence { p, a, b })
    }

    /// Distance from `q` to the line through `a` and `b`.
    pub fn distance(&self, q: &Vec3) -> f64 {
        (q - self.b).cross(&(q - self.a)).norm() / (self.a - self.b).norm()
    }

    pub fn residual(&self, pose: &Se2Pose) -> f64 {
        self.distance(&transform_point(pose, &self.p))
    }

    /// Gradient of [`distance`](Self::distance) at `q`; zero on the line.
    pub fn gradient(&self, q: &Vec3) -> RowVector3<f64> {
        let ab = self.a - self.b;
        let c = (q - self.b).cross(&(q - self.a));
        let cn = c.norm();
        if cn / ab.norm() < KINK_EPS {
            return RowVector3::zeros();
        }
        (c / cn).transpose() * skew(&ab) / ab.norm()
    }
}

/// Point-to-plane correspondence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneCorrespondence {
    pub p: Vec3,
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
}

impl PlaneCorrespondence {
    /// `None` for a degenerate plane.
    pub fn new(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<Self> {
        ((a - b).cross(&(c - a)).norm() > DEGENERACY_EPS).then_some(PlaneCorrespondence {
            p,
            a,
            b,
            c,
        })
    }

    pub fn normal(&self) -> Vec3 {
        (self.a - self.b).cross(&(self.c - self.a)).normalize()
    }

    pub fn signed_distance(&self, q: &Vec3) -> f64 {
        (q - self.a).dot(&self.normal())
    }

    pub fn distance(&self, q: &Vec3) -> f64 {
        self.signed_distance(q).abs()
    }

    pub fn residual(&self, pose: &Se2Pose) -> f64 {
        self.distance(&transform_point(pose, &self.p))
    }

    /// Gradient of [`distance`](Self::distance) at `q`; zero on the plane.
    pub fn gradient(&self, q: &Vec3) -> RowVector3<f64> {
        let s = self.signed_distance(q);
        if s.abs() < KINK_EPS {
            return RowVector3::zeros();
        }
        self.normal().transpose() * s.signum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Correspondence {
    Edge(EdgeCorrespondence),
    Plane(PlaneCorrespondence),
}

impl Correspondence {
    pub fn source(&self) -> &Vec3 {
        match self {
            Correspondence::Edge(c) => &c.p,
            Correspondence::Plane(c) => &c.p,
        }
    }

    pub fn distance(&self, q: &Vec3) -> f64 {
        match self {
            Correspondence::Edge(c) => c.distance(q),
            Correspondence::Plane(c) => c.distance(q),
        }
    }

    pub fn gradient(&self, q: &Vec3) -> RowVector3<f64> {
        match self {
            Correspondence::Edge(c) => c.gradient(q),
            Correspondence::Plane(c) => c.gradient(q),
        }
    }

    pub fn residual(&self, pose: &Se2Pose) -> f64 {
        self.distance(&transform_point(pose, self.source()))
    }

    /// Row of the residual with respect to `(d_x, d_y, psi)`.
    pub fn jacobian(&self, pose: &Se2Pose) -> RowVector3<f64> {
        let q = transform_point(pose, self.source());
        self.gradient(&q) * pose_point_jacobian(pose, self.source())
    }
}

pub fn edge_jacobian(c: &EdgeCorrespondence, pose: &Se2Pose) -> RowVector3<f64> {
    Correspondence::Edge(*c).jacobian(pose)
}

pub fn plane_jacobian(c: &PlaneCorrespondence, pose: &Se2Pose) -> RowVector3<f64> {
    Correspondence::Plane(*c).jacobian(pose)
}

/// Sensitivities of the residual to a tilt `eta` applied as
/// `R <- Exp(eta) R` and a height offset `eta_z` applied as `P <- P + eta_z e3`.
pub fn perturbation_jacobians(c: &Correspondence, pose: &Se2Pose) -> (RowVector3<f64>, f64) {
    let rp = Rotation::from_yaw(pose.yaw()).act(c.source());
    let q = transform_point(pose, c.source());
    let grad = c.gradient(&q);
    (grad * -skew(&rp), grad[2])
}

/// Residual variance: projected tilt and height perturbation plus range noise.
pub fn lidar_noise_variance(j_theta: &RowVector3<f64>, j_z: f64, model: &PerturbationModel) -> f64 {
    let jt = RowVector2::new(j_theta[0], j_theta[1]);
    let tilt = (jt * model.theta_cov() * jt.transpose())[(0, 0)].max(0.0);
    let var = tilt + model.sigma_z * model.sigma_z * j_z * j_z + model.sigma_k * model.sigma_k;
    debug_assert!(var >= model.sigma_k * model.sigma_k);
    var
}

/// One weighted scalar LiDAR residual.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorBlock {
    pub residual: f64,
    /// With respect to `(d_x, d_y, psi)`.
    pub jacobian: RowVector3<f64>,
    /// Inverse variance.
    pub weight: f64,
}

impl FactorBlock {
    pub fn new(c: &Correspondence, pose: &Se2Pose, model: &PerturbationModel) -> Self {
        let (jt, jz) = perturbation_jacobians(c, pose);
        FactorBlock {
            residual: c.residual(pose),
            jacobian: c.jacobian(pose),
            weight: 1.0 / lidar_noise_variance(&jt, jz, model),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub max_iterations: usize,
    /// Convergence threshold on the update norm (rad and m mixed).
    pub tolerance: f64,
    pub min_correspondences: usize,
    /// Map neighbours, all within the map's `max_dist`, that a plane is
    /// fitted to. The fit is rejected if any of them lies farther than
    /// `plane_fit_tolerance` from it or if the points spread less than
    /// `min_plane_spread` (standard deviation, m) along either in-plane axis.
    pub plane_neighbors: usize,
    pub plane_fit_tolerance: f64,
    pub min_plane_spread: f64,
    /// Edge counterpart: the dominant direction must carry more than three
    /// times the variance of the next one and every neighbour must lie
    /// within `edge_fit_tolerance` of the line.
    pub edge_neighbors: usize,
    pub edge_fit_tolerance: f64,
    /// Optional Huber threshold in meters.
    pub huber: Option<f64>,
    pub condition_limit: f64,
    pub damping: f64,
    /// Prior standard deviations for the first state.
    pub initial_pose_sigma: f64,
    pub initial_velocity_sigma: f64,
    pub initial_accel_bias_sigma: f64,
    pub initial_gyro_bias_sigma: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            max_iterations: 30,
            tolerance: 1e-4,
            min_correspondences: 10,
            plane_neighbors: 5,
            plane_fit_tolerance: 0.05,
            min_plane_spread: 0.1,
            edge_neighbors: 5,
            edge_fit_tolerance: 0.1,
            huber: None,
            condition_limit: 1e12,
            damping: 1e-6,
            initial_pose_sigma: 1e-6,
            initial_velocity_sigma: 0.1,
            initial_accel_bias_sigma: 0.05,
            initial_gyro_bias_sigma: 0.005,
        }
    }
}

/// Centroid and principal axes of a point set, variances ascending.
struct PrincipalAxes {
    centroid: Vec3,
    variances: [f64; 3],
    axes: [Vec3; 3],
}

impl PrincipalAxes {
    fn new(points: impl Iterator<Item = Vec3> + Clone) -> Self {
        let n = points.clone().count().max(1) as f64;
        let centroid = points.clone().sum::<Vec3>() / n;
        let cov = points.fold(Mat3::zeros(), |acc, p| {
            let d = p - centroid;
            acc + d * d.transpose()
        }) / n;
        let eig = SymmetricEigen::new(cov);
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        PrincipalAxes {
            centroid,
            variances: order.map(|k| eig.eigenvalues[k].max(0.0)),
            axes: order.map(|k| eig.eigenvectors.column(k).into_owned()),
        }
    }
}

/// Matches feature points, transformed by `pose`, against the map.
pub fn find_correspondences(
    features: &FeatureScan,
    map: &FeatureMap,
    pose: &Se2Pose,
    params: &SolverParams,
) -> Vec<Correspondence> {
    let max_dist = map.params.max_dist;
    let edge = |p: &Vec3| -> Option<Correspondence> {
        let q = transform_point(pose, p);
        let k = params.edge_neighbors;
        let nn = map.nearest_k(MapKind::Edge, &q, k, max_dist);
        if nn.len() < k {
            return None;
        }
        let fit = PrincipalAxes::new(nn.iter().map(|n| n.point));
        if fit.variances[2] <= 3.0 * fit.variances[1] {
            return None;
        }
        let dir = fit.axes[2] * 0.1;
        let c = EdgeCorrespondence::new(*p, fit.centroid + dir, fit.centroid - dir)?;
        let straight = nn
            .iter()
            .all(|n| c.distance(&n.point) <= params.edge_fit_tolerance);
        straight.then_some(Correspondence::Edge(c))
    };
    let plane = |p: &Vec3| -> Option<Correspondence> {
        let q = transform_point(pose, p);
        let k = params.plane_neighbors;
        let nn = map.nearest_k(MapKind::Plane, &q, k, max_dist);
        if nn.len() < k {
            return None;
        }
        let fit = PrincipalAxes::new(nn.iter().map(|n| n.point));
        if fit.variances[1].sqrt() < params.min_plane_spread {
            return None;
        }
        let o = fit.centroid;
        let c = PlaneCorrespondence::new(*p, o, o + fit.axes[2], o + fit.axes[1])?;
        let flat = nn
            .iter()
            .all(|n| c.distance(&n.point) <= params.plane_fit_tolerance);
        flat.then_some(Correspondence::Plane(c))
    };
    let edges: Vec<Vec3> = features.edges.iter().map(|p| p.pos).collect();
    let planes: Vec<Vec3> = features.planars.iter().map(|p| p.pos).collect();

    #[cfg(feature = "parallel")]
    let (e, s): (Vec<_>, Vec<_>) = {
        use rayon::prelude::*;
        (
            edges.par_iter().map(edge).collect(),
            planes.par_iter().map(plane).collect(),
        )
    };
    #[cfg(not(feature = "parallel"))]
    let (e, s): (Vec<_>, Vec<_>) = (
        edges.iter().map(edge).collect(),
        planes.iter().map(plane).collect(),
    );
    e.into_iter().chain(s).flatten().collect()
}

/// Point-to-line residual as the 2-vector offset from the line, expressed
/// in a fixed basis of the plane perpendicular to it. Its norm is the
/// scalar edge distance, and projecting its covariance onto the gradient
/// direction gives [`lidar_noise_variance`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeBlock {
    pub residual: Vector2<f64>,
    /// With respect to `(d_x, d_y, psi)`.
    pub jacobian: Matrix2x3<f64>,
    pub information: Matrix2<f64>,
}

impl EdgeBlock {
    pub fn new(c: &EdgeCorrespondence, pose: &Se2Pose, model: &PerturbationModel) -> Self {
        let d = (c.a - c.b).normalize();
        let helper = if d.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
        let u1 = d.cross(&helper).normalize();
        let u2 = d.cross(&u1);
        let basis = Matrix3x2::from_columns(&[u1, u2]);
        let q = transform_point(pose, &c.p);
        let rp = Rotation::from_yaw(pose.yaw()).act(&c.p);
        let tilt = (-skew(&rp)).fixed_columns::<2>(0).into_owned();
        let cov_q = tilt * model.theta_cov() * tilt.transpose()
            + Vec3::z() * Vec3::z().transpose() * model.sigma_z.powi(2)
            + Mat3::identity() * model.sigma_k.powi(2);
        let cov = basis.transpose() * cov_q * basis + Matrix2::identity() * COVARIANCE_FLOOR;
        EdgeBlock {
            residual: basis.transpose() * (q - c.b),
            jacobian: basis.transpose() * pose_point_jacobian(pose, &c.p),
            information: cov.try_inverse().unwrap_or_else(Matrix2::zeros),
        }
    }
}

/// Added to residual variances so an all-zero noise model stays invertible.
const COVARIANCE_FLOOR: f64 = 1e-12;

/// A LiDAR term of the normal equations.
#[derive(Clone, Copy, Debug, PartialEq)]
enum LidarFactor {
    Plane(FactorBlock),
    Edge(EdgeBlock),
}

impl LidarFactor {
    fn new(c: &Correspondence, pose: &Se2Pose, model: &PerturbationModel, huber: Option<f64>) -> Self {
        let mut f = match c {
            Correspondence::Plane(_) => LidarFactor::Plane(FactorBlock::new(c, pose, model)),
            Correspondence::Edge(e) => LidarFactor::Edge(EdgeBlock::new(e, pose, model)),
        };
        if let Some(delta) = huber {
            match &mut f {
                LidarFactor::Plane(b) if b.residual > delta => b.weight *= delta / b.residual,
                LidarFactor::Edge(b) if b.residual.norm() > delta => {
                    b.information *= delta / b.residual.norm()
                }
                _ => {}
            }
        }
        f
    }

    fn add_to(&self, ne: &mut NormalEquations, cols: &[Option<usize>; 3]) {
        match self {
            LidarFactor::Plane(b) => ne.add_scalar(b.residual, b.jacobian.as_slice(), cols, b.weight),
            LidarFactor::Edge(b) => ne.add_block(
                &DVector::from_column_slice(b.residual.as_slice()),
                &DMatrix::from_row_slice(2, 3, b.jacobian.transpose().as_slice()),
                cols,
                &DMatrix::from_column_slice(2, 2, b.information.as_slice()),
            ),
        }
    }
}

fn lidar_factors(
    corr: &[Correspondence],
    pose: &Se2Pose,
    model: &PerturbationModel,
    huber: Option<f64>,
) -> Vec<LidarFactor> {
    let build = |c: &Correspondence| LidarFactor::new(c, pose, model, huber);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        corr.par_iter().map(build).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        corr.iter().map(build).collect()
    }
}

fn count_kinds(corr: &[Correspondence]) -> (usize, usize) {
    let edges = corr
        .iter()
        .filter(|c| matches!(c, Correspondence::Edge(_)))
        .count();
    (edges, corr.len() - edges)
}

/// Dense normal equations over an active parameter set.
#[derive(Clone, Debug)]
pub struct NormalEquations {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub cost: f64,
}

impl NormalEquations {
    pub fn new(n: usize) -> Self {
        NormalEquations {
            h: DMatrix::zeros(n, n),
            g: DVector::zeros(n),
            cost: 0.0,
        }
    }

    /// Adds `w * (r + J dx)^2` where `cols[k]` is the active index of
    /// `jac[k]` (or `None` for an inactive parameter).
    pub fn add_scalar(&mut self, r: f64, jac: &[f64], cols: &[Option<usize>], w: f64) {
        for (a, ca) in jac.iter().zip(cols) {
            let Some(ia) = *ca else { continue };
            self.g[ia] += w * a * r;
            for (b, cb) in jac.iter().zip(cols) {
                let Some(ib) = *cb else { continue };
                self.h[(ia, ib)] += w * a * b;
            }
        }
        self.cost += w * r * r;
    }

    /// Adds `(r + J dx)^T W (r + J dx)` for a vector residual; `cols` maps
    /// the columns of `jac` to active indices.
    pub fn add_block(
        &mut self,
        r: &DVector<f64>,
        jac: &DMatrix<f64>,
        cols: &[Option<usize>],
        info: &DMatrix<f64>,
    ) {
        let wj = info * jac;
        let jtwj = jac.transpose() * &wj;
        let jtwr = wj.transpose() * r;
        for (ka, ca) in cols.iter().enumerate() {
            let Some(ia) = *ca else { continue };
            self.g[ia] += jtwr[ka];
            for (kb, cb) in cols.iter().enumerate() {
                let Some(ib) = *cb else { continue };
                self.h[(ia, ib)] += jtwj[(ka, kb)];
            }
        }
        self.cost += (r.transpose() * info * r)[(0, 0)];
    }

    /// Gauss-Newton step `-H^-1 g`, damped when `H` is ill-conditioned.
    pub fn solve(&self, condition_limit: f64, damping: f64) -> Option<DVector<f64>> {
        let h = self.conditioned(condition_limit, damping);
        h.cholesky().map(|c| -c.solve(&self.g))
    }

    /// Inverse of the (conditioned) normal matrix.
    pub fn covariance(&self, condition_limit: f64, damping: f64) -> Option<DMatrix<f64>> {
        let h = self.conditioned(condition_limit, damping);
        h.cholesky().map(|c| c.inverse())
    }

    fn conditioned(&self, condition_limit: f64, damping: f64) -> DMatrix<f64> {
        let mut h = self.h.clone();
        let eig = SymmetricEigen::new(h.clone()).eigenvalues;
        let max = eig.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.iter().cloned().fold(f64::MAX, f64::min);
        if !(min > 0.0) || max / min > condition_limit {
            debug!("normal matrix ill-conditioned ({min:.3e}..{max:.3e}); damping");
            for i in 0..h.nrows() {
                h[(i, i)] += damping;
            }
        }
        h
    }
}

/// Re-searches correspondences every iteration until the matched set starts
/// alternating between two configurations; from then on the current set is
/// kept so Gauss-Newton can settle on it.
#[derive(Default)]
struct Matcher {
    previous: Option<Vec<Correspondence>>,
    latest: Option<Vec<Correspondence>>,
    frozen: bool,
}

impl Matcher {
    fn matches(
        &mut self,
        features: &FeatureScan,
        map: &FeatureMap,
        pose: &Se2Pose,
        params: &SolverParams,
    ) -> Vec<Correspondence> {
        if self.frozen {
            if let Some(c) = &self.latest {
                return c.clone();
            }
        }
        let corr = find_correspondences(features, map, pose, params);
        if self.previous.as_ref() == Some(&corr) && self.latest.as_ref() != Some(&corr) {
            debug!("correspondence set alternates; keeping it fixed");
            self.frozen = true;
        }
        self.previous = self.latest.replace(corr.clone());
        corr
    }
}

/// Outcome of a planar (LiDAR-only) solve.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarEstimate {
    pub pose: Se2Pose,
    pub converged: bool,
    pub iterations: usize,
    pub edge_count: usize,
    pub plane_count: usize,
    /// Weighted cost at the start of every iteration.
    pub costs: Vec<f64>,
}

/// Gauss-Newton over `(d_x, d_y, psi)` of the current frame.
pub fn estimate_planar(
    features: &FeatureScan,
    map: &FeatureMap,
    initial: &Se2Pose,
    model: &PerturbationModel,
    params: &SolverParams,
) -> PlanarEstimate {
    let mut pose = *initial;
    let mut out = PlanarEstimate {
        pose,
        converged: false,
        iterations: 0,
        edge_count: 0,
        plane_count: 0,
        costs: Vec::new(),
    };
    let cols = [Some(0), Some(1), Some(2)];
    let mut matcher = Matcher::default();
    for it in 0..params.max_iterations {
        let corr = matcher.matches(features, map, &pose, params);
        (out.edge_count, out.plane_count) = count_kinds(&corr);
        out.iterations = it + 1;
        if corr.len() < params.min_correspondences {
            out.converged = false;
            out.pose = *initial;
            return out;
        }
        let mut ne = NormalEquations::new(3);
        for f in lidar_factors(&corr, &pose, model, params.huber) {
            f.add_to(&mut ne, &cols);
        }
        out.costs.push(ne.cost);
        let Some(dx) = ne.solve(params.condition_limit, params.damping) else {
            break;
        };
        pose = Se2Pose::new(pose.yaw() + dx[2], pose.d.x + dx[0], pose.d.y + dx[1]);
        if dx.norm() < params.tolerance {
            out.converged = true;
            break;
        }
    }
    out.pose = pose;
    out
}

/// Parameter vector of a state.
pub fn state_to_params(state: &RobotState) -> Vec15 {
    let r = state.rot.matrix();
    let n = r.column(2).into_owned();
    let axis = Vec3::new(-n.y, n.x, 0.0);
    let s = axis.norm();
    let eta = if s < 1e-15 {
        Vec3::zeros()
    } else {
        axis / s * s.atan2(n.z)
    };
    let rz = Rotation::exp(&eta).inverse().matrix() * r;
    let psi = rz[(1, 0)].atan2(rz[(0, 0)]);
    let mut th = Vec15::zeros();
    th[param::DX] = state.pos.x;
    th[param::DY] = state.pos.y;
    th[param::PSI] = psi;
    th[param::ETA_X] = eta.x;
    th[param::ETA_Y] = eta.y;
    th[param::Z] = state.pos.z;
    th.fixed_rows_mut::<3>(param::VEL).copy_from(&state.vel);
    th.fixed_rows_mut::<3>(param::BA).copy_from(&state.bias.accel);
    th.fixed_rows_mut::<3>(param::BG).copy_from(&state.bias.gyro);
    th
}

pub fn params_to_state(th: &Vec15) -> RobotState {
    let eta = Vec3::new(th[param::ETA_X], th[param::ETA_Y], 0.0);
    RobotState {
        rot: (Rotation::exp(&eta) * Rotation::from_yaw(th[param::PSI])).normalized(),
        pos: Vec3::new(th[param::DX], th[param::DY], th[param::Z]),
        vel: th.fixed_rows::<3>(param::VEL).into_owned(),
        bias: ImuBias::new(
            th.fixed_rows::<3>(param::BA).into_owned(),
            th.fixed_rows::<3>(param::BG).into_owned(),
        ),
    }
}

pub fn planar_pose(th: &Vec15) -> Se2Pose {
    Se2Pose::new(th[param::PSI], th[param::DX], th[param::DY])
}

/// Maps a parameter increment to the state's error-state increment
/// `[dphi, dp, dv, dba, dbg]` (right perturbation on rotation).
pub fn error_state_map(th: &Vec15) -> Mat15 {
    use crate::imu::{BA, BG, PHI, POS, VEL};
    let eta = Vec3::new(th[param::ETA_X], th[param::ETA_Y], 0.0);
    let rz_t = Rotation::from_yaw(th[param::PSI]).inverse();
    let tilt = rz_t.matrix() * right_jacobian(&eta);
    let mut m = Mat15::zeros();
    m.fixed_view_mut::<3, 1>(PHI, param::PSI).copy_from(&Vec3::z());
    m.fixed_view_mut::<3, 2>(PHI, param::ETA_X)
        .copy_from(&tilt.fixed_columns::<2>(0));
    m[(POS, param::DX)] = 1.0;
    m[(POS + 1, param::DY)] = 1.0;
    m[(POS + 2, param::Z)] = 1.0;
    for k in 0..3 {
        m[(VEL + k, param::VEL + k)] = 1.0;
        m[(BA + k, param::BA + k)] = 1.0;
        m[(BG + k, param::BG + k)] = 1.0;
    }
    m
}

fn apply_increment(th: &mut Vec15, d: &Vec15) {
    *th += d;
    th[param::PSI] = wrap_angle(th[param::PSI]);
}

/// Difference `a - b` of parameter vectors with yaw wrapped.
pub fn param_diff(a: &Vec15, b: &Vec15) -> Vec15 {
    let mut d = a - b;
    d[param::PSI] = wrap_angle(d[param::PSI]);
    d
}

/// Gaussian belief over one state in parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePrior {
    pub params: Vec15,
    pub covariance: Mat15,
}

impl StatePrior {
    /// Belief about the first state, anchored at the origin.
    pub fn initial(state: &RobotState, p: &SolverParams, model: &PerturbationModel) -> Self {
        let mut cov = Mat15::zeros();
        let pose_var = p.initial_pose_sigma.powi(2);
        for k in [param::DX, param::DY, param::PSI] {
            cov[(k, k)] = pose_var;
        }
        let tilt = model.theta_cov();
        cov.fixed_view_mut::<2, 2>(param::ETA_X, param::ETA_X).copy_from(&tilt);
        cov[(param::Z, param::Z)] = model.sigma_z.powi(2);
        for k in 0..3 {
            cov[(param::VEL + k, param::VEL + k)] = p.initial_velocity_sigma.powi(2);
            cov[(param::BA + k, param::BA + k)] = p.initial_accel_bias_sigma.powi(2);
            cov[(param::BG + k, param::BG + k)] = p.initial_gyro_bias_sigma.powi(2);
        }
        let mut params = state_to_params(state);
        if model.tilt_is_zero() {
            params[param::ETA_X] = 0.0;
            params[param::ETA_Y] = 0.0;
        }
        if model.sigma_z == 0.0 {
            params[param::Z] = 0.0;
        }
        StatePrior {
            params,
            covariance: cov,
        }
    }

    pub fn state(&self) -> RobotState {
        params_to_state(&self.params)
    }
}

/// Parameters of one state that take part in the solve. Tilt and height are
/// fixed at zero when the perturbation model assigns them no variance.
pub fn active_params(model: &PerturbationModel) -> Vec<usize> {
    (0..15)
        .filter(|&k| match k {
            param::ETA_X | param::ETA_Y => !model.tilt_is_zero(),
            param::Z => model.sigma_z != 0.0,
            _ => true,
        })
        .collect()
}

/// Outcome of a joint previous/current state solve.
#[derive(Clone, Debug, PartialEq)]
pub struct InertialEstimate {
    pub state_i: RobotState,
    pub state_j: RobotState,
    /// Marginal belief over the current state, the prior for the next frame.
    pub posterior_j: StatePrior,
    pub converged: bool,
    pub iterations: usize,
    pub edge_count: usize,
    pub plane_count: usize,
    pub costs: Vec<f64>,
    pub degenerate: bool,
}

impl InertialEstimate {
    pub fn pose(&self) -> Se2Pose {
        planar_pose(&self.posterior_j.params)
    }
}

fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    sym.cholesky().map(|c| c.inverse())
}

/// Jointly estimates the previous and current states from the LiDAR
/// residuals of the current frame, the IMU factor between the frames, the
/// previous belief and the out-of-plane prior on the current state.
pub fn estimate_inertial(
    features: &FeatureScan,
    map: &FeatureMap,
    prior_i: &StatePrior,
    pre: &PreintegratedImu,
    gravity: &Vec3,
    model: &PerturbationModel,
    params: &SolverParams,
) -> InertialEstimate {
    let active = active_params(model);
    let na = active.len();
    let n = 2 * na;
    // column of parameter k of state s (0 = i, 1 = j)
    let mut col_of = [[None; 15]; 2];
    for (s, row) in col_of.iter_mut().enumerate() {
        for (a, &k) in active.iter().enumerate() {
            row[k] = Some(s * na + a);
        }
    }

    let sub = |m: &Mat15| DMatrix::from_fn(na, na, |r, c| m[(active[r], active[c])]);
    let prior_info = inverse_spd(&sub(&prior_i.covariance));
    let mut tilt_prior = DMatrix::zeros(3, 3);
    let tcov = model.theta_cov();
    if !model.tilt_is_zero() {
        let inv = tcov.try_inverse().unwrap_or_else(Matrix2::zeros);
        tilt_prior.fixed_view_mut::<2, 2>(0, 0).copy_from(&inv);
    }
    if model.sigma_z > 0.0 {
        tilt_prior[(2, 2)] = 1.0 / model.sigma_z.powi(2);
    }
    let imu_info = inverse_spd(&DMatrix::from_fn(15, 15, |r, c| pre.covariance[(r, c)]));

    let mut th_i = prior_i.params;
    let mut th_j = state_to_params(&crate::imu::predict(&prior_i.state(), pre, gravity));
    for k in 0..15 {
        if col_of[1][k].is_none() {
            th_j[k] = 0.0;
        }
    }

    let build = |th_i: &Vec15, th_j: &Vec15, corr: Option<&[Correspondence]>| -> NormalEquations {
        let mut ne = NormalEquations::new(n);
        // previous belief
        if let Some(info) = &prior_info {
            let d = param_diff(th_i, &prior_i.params);
            let r = DVector::from_fn(na, |a, _| d[active[a]]);
            let jac = DMatrix::identity(na, na);
            let cols: Vec<Option<usize>> = (0..na).map(Some).collect();
            ne.add_block(&r, &jac, &cols, info);
        }
        // out-of-plane prior on the current state
        let r = DVector::from_vec(vec![th_j[param::ETA_X], th_j[param::ETA_Y], th_j[param::Z]]);
        let jac = DMatrix::identity(3, 3);
        let cols = [
            col_of[1][param::ETA_X],
            col_of[1][param::ETA_Y],
            col_of[1][param::Z],
        ];
        ne.add_block(&r, &jac, &cols, &tilt_prior);
        // inertial factor
        if let Some(info) = &imu_info {
            let si = params_to_state(th_i);
            let sj = params_to_state(th_j);
            let r = imu_residual(&si, &sj, pre, gravity);
            let je = imu_jacobian(&si, &sj, pre, gravity);
            let mi = error_state_map(th_i);
            let mj = error_state_map(th_j);
            let ji = je.fixed_columns::<15>(0) * mi;
            let jj = je.fixed_columns::<15>(15) * mj;
            let jac = DMatrix::from_fn(15, 30, |rr, cc| {
                if cc < 15 {
                    ji[(rr, cc)]
                } else {
                    jj[(rr, cc - 15)]
                }
            });
            let cols: Vec<Option<usize>> =
                col_of[0].iter().chain(col_of[1].iter()).copied().collect();
            let r = DVector::from_fn(15, |k, _| r[k]);
            ne.add_block(&r, &jac, &cols, info);
        }
        // lidar
        if let Some(corr) = corr {
            let pose = planar_pose(th_j);
            let cols = [
                col_of[1][param::DX],
                col_of[1][param::DY],
                col_of[1][param::PSI],
            ];
            for f in lidar_factors(corr, &pose, model, params.huber) {
                f.add_to(&mut ne, &cols);
            }
        }
        ne
    };

    let expand = |dx: &DVector<f64>, s: usize| -> Vec15 {
        let mut d = Vec15::zeros();
        for (a, &k) in active.iter().enumerate() {
            d[k] = dx[s * na + a];
        }
        d
    };

    let mut converged = false;
    let mut degenerate = false;
    let mut iterations = 0;
    let mut costs = Vec::new();
    let mut counts = (0, 0);
    let mut last_corr: Vec<Correspondence> = Vec::new();
    let mut matcher = Matcher::default();
    for it in 0..params.max_iterations {
        iterations = it + 1;
        let corr = matcher.matches(features, map, &planar_pose(&th_j), params);
        counts = count_kinds(&corr);
        if corr.len() < params.min_correspondences {
            degenerate = true;
            break;
        }
        let ne = build(&th_i, &th_j, Some(&corr));
        costs.push(ne.cost);
        last_corr = corr;
        let Some(dx) = ne.solve(params.condition_limit, params.damping) else {
            break;
        };
        apply_increment(&mut th_i, &expand(&dx, 0));
        apply_increment(&mut th_j, &expand(&dx, 1));
        if dx.norm() < params.tolerance {
            converged = true;
            break;
        }
    }

    if degenerate {
        // propagate with the inertial factor alone
        th_i = prior_i.params;
        th_j = state_to_params(&crate::imu::predict(&prior_i.state(), pre, gravity));
        for k in 0..15 {
            if col_of[1][k].is_none() {
                th_j[k] = 0.0;
            }
        }
        last_corr.clear();
    }
    let corr = (!last_corr.is_empty()).then_some(last_corr.as_slice());
    let ne = build(&th_i, &th_j, corr);
    let mut cov_j = Mat15::zeros();
    if let Some(cov) = ne.covariance(params.condition_limit, params.damping) {
        for (a, &ka) in active.iter().enumerate() {
            for (b, &kb) in active.iter().enumerate() {
                cov_j[(ka, kb)] = 0.5 * (cov[(na + a, na + b)] + cov[(na + b, na + a)]);
            }
        }
    } else {
        cov_j = prior_i.covariance;
    }
    InertialEstimate {
        state_i: params_to_state(&th_i),
        state_j: params_to_state(&th_j),
        posterior_j: StatePrior {
            params: th_j,
            covariance: cov_j,
        },
        converged: converged && !degenerate,
        iterations,
        edge_count: counts.0,
        plane_count: counts.1,
        costs,
        degenerate,
    }
}
