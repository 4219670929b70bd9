//! Fisheye camera model and vision-based position-uncertainty metrics.
//!
//! The camera uses the equidistant projection model. Image features are
//! represented as bearing vectors; pixel noise propagates to an (isotropic)
//! bearing covariance, which feeds two Fisher-information forms: the full
//! per-feature matrix and a position-only reduction that is independent of
//! the camera rotation. A fast fused metric combines landmark-centroid
//! information with per-landmark depth uncertainty.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::math::{sym_eigenvalues_3x3, Dual, Quat, Scalar, M3, V3};
use crate::track::Landmark;
use crate::{Error, Result};

/// Depth-uncertainty grazing guard: below this facing/optical-axis cosine the
/// size-based distance estimate blows up and is capped instead.
pub const GRAZING_COS_MIN: f64 = 0.05;
/// Depth standard deviation assigned to grazing observations [m].
pub const GRAZING_SIGMA_CAP: f64 = 100.0;
/// Diagonal floor added inside the log-det when the fused information matrix
/// is numerically singular.
pub const INFO_FLOOR: f64 = 1e-9;
/// Condition-number threshold that triggers the floor.
pub const INFO_COND_MAX: f64 = 1e12;

/// Fisheye camera intrinsics, extrinsics, field of view, and pixel noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, from = "CameraConfig")]
pub struct CameraModel {
    /// Focal lengths [px]
    pub fx: f64,
    pub fy: f64,
    /// Principal point [px]
    pub cx: f64,
    pub cy: f64,
    /// Horizontal FOV half-angle [rad]
    pub alpha_max: f64,
    /// Vertical FOV half-angle [rad]
    pub beta_max: f64,
    /// Minimum landmark depth [m]
    pub z_min: f64,
    /// Camera-to-body rotation (tilt folded in)
    pub r_bc: UnitQuaternion<f64>,
    /// Camera position in the body frame [m]
    pub t_cb: Vector3<f64>,
    /// Pixel noise standard deviations [px]
    pub sigma_u: f64,
    pub sigma_v: f64,
}

/// Serialized camera description: angles in degrees, tilt instead of a
/// quaternion extrinsic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub alpha_max_deg: f64,
    pub beta_max_deg: f64,
    pub z_min: f64,
    pub tilt_deg: f64,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub t_cb: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 320.0,
            alpha_max_deg: 128.1,
            beta_max_deg: 72.2,
            z_min: 0.3,
            tilt_deg: 30.0,
            sigma_u: 10.0,
            sigma_v: 10.0,
            t_cb: [0.0; 3],
        }
    }
}

impl From<CameraConfig> for CameraModel {
    fn from(c: CameraConfig) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            alpha_max: c.alpha_max_deg.to_radians(),
            beta_max: c.beta_max_deg.to_radians(),
            z_min: c.z_min,
            r_bc: body_camera_rotation(c.tilt_deg.to_radians()),
            t_cb: Vector3::new(c.t_cb[0], c.t_cb[1], c.t_cb[2]),
            sigma_u: c.sigma_u,
            sigma_v: c.sigma_v,
        }
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraConfig::default().into()
    }
}

/// Camera-to-body rotation for a forward-looking camera pitched up by `tilt`.
///
/// Body frame is FLU (x forward, y left, z up); the camera frame is the usual
/// computer-vision convention (z along the optical axis, x right in the
/// image, y down).
pub fn body_camera_rotation(tilt: f64) -> UnitQuaternion<f64> {
    let base = nalgebra::Rotation3::from_matrix_unchecked(Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    ));
    let tilt_rot = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), -tilt);
    UnitQuaternion::from_rotation_matrix(&(tilt_rot * base))
}

impl CameraModel {
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: CameraConfig = serde_json::from_str(&text)?;
        let cam: CameraModel = config.into();
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Parse("camera: focal lengths must be positive".into()));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max < std::f64::consts::PI) {
            return Err(Error::Parse("camera: alpha_max out of (0, pi)".into()));
        }
        if !(self.beta_max > 0.0 && self.beta_max < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Parse("camera: beta_max out of (0, pi/2)".into()));
        }
        if !(self.z_min > 0.0) {
            return Err(Error::Parse("camera: z_min must be positive".into()));
        }
        if !(self.sigma_u > 0.0 && self.sigma_v > 0.0) {
            return Err(Error::Parse("camera: pixel noise must be positive".into()));
        }
        Ok(())
    }

    /// Equidistant projection of a camera-frame point to pixel coordinates.
    pub fn project(&self, p_c: &Vector3<f64>) -> Result<(f64, f64)> {
        let r = (p_c.x * p_c.x + p_c.y * p_c.y).sqrt();
        if r < 1e-15 && p_c.z.abs() < 1e-15 {
            return Err(Error::DegeneratePoint);
        }
        if r < 1e-15 {
            // on-axis: maps to the principal point (forward) or its antipode
            return Ok(if p_c.z > 0.0 {
                (self.cx, self.cy)
            } else {
                (self.fx * std::f64::consts::PI + self.cx, self.cy)
            });
        }
        let theta = r.atan2(p_c.z);
        let xn = p_c.x / r;
        let yn = p_c.y / r;
        Ok((self.fx * theta * xn + self.cx, self.fy * theta * yn + self.cy))
    }

    /// Inverse of [`Self::project`]: pixel coordinates to a unit bearing
    /// vector in the camera frame.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        let xn = (u - self.cx) / self.fx;
        let yn = (v - self.cy) / self.fy;
        let theta = (xn * xn + yn * yn).sqrt();
        // sin(theta)/theta with the small-angle limit
        let sinc = if theta < 1e-9 { 1.0 - theta * theta / 6.0 } else { theta.sin() / theta };
        Vector3::new(sinc * xn, sinc * yn, theta.cos())
    }

    /// Azimuth, elevation, and depth of a camera-frame point.
    pub fn angular_coords(&self, p_c: &Vector3<f64>) -> (f64, f64, f64) {
        let alpha = p_c.x.atan2(p_c.z);
        let beta = p_c.y.atan2((p_c.x * p_c.x + p_c.z * p_c.z).sqrt());
        (alpha, beta, p_c.z)
    }

    /// Hard visibility indicator: inside both FOV half-angles and in front of
    /// the camera by at least `z_min`.
    pub fn hard_visibility(&self, p_c: &Vector3<f64>) -> bool {
        let (alpha, beta, z) = self.angular_coords(p_c);
        alpha.abs() <= self.alpha_max && beta.abs() <= self.beta_max && z > self.z_min
    }

    /// Smooth visibility weight in [0, 1]: product of tanh sigmoids on
    /// azimuth, elevation, and depth with sharpness `lambda_v`.
    pub fn smooth_visibility(&self, p_c: &Vector3<f64>, lambda_v: f64) -> f64 {
        let p = V3::<f64>::from_na(p_c);
        smooth_visibility_kernel(self, &p, lambda_v)
    }

    /// Bearing-vector noise covariance propagated from pixel noise.
    pub fn bearing_covariance(&self, mode: CovarianceMode) -> BearingCovariance {
        match mode {
            CovarianceMode::Isotropic => {
                let s = (self.sigma_u / self.fx).powi(2);
                BearingCovariance { diag: Vector3::new(s, s, s) }
            }
            CovarianceMode::Full => BearingCovariance {
                diag: Vector3::new(
                    (self.sigma_u / self.fx).powi(2),
                    (self.sigma_v / self.fy).powi(2),
                    (self.sigma_u * self.cx / (self.fx * self.fx)
                        + self.sigma_v * self.cy / (self.fy * self.fy))
                        .powi(2),
                ),
            },
        }
    }
}

/// Which simplification of the bearing covariance to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMode {
    /// All diagonal entries `sigma_u^2 / fx^2`; required by the position-only
    /// information form.
    Isotropic,
    /// Per-axis diagonal including the principal-point bound on the z entry.
    Full,
}

/// Diagonal bearing-vector covariance.
#[derive(Debug, Clone)]
pub struct BearingCovariance {
    pub diag: Vector3<f64>,
}

impl BearingCovariance {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.diag)
    }

    pub fn inverse_diag(&self) -> Vector3<f64> {
        Vector3::new(1.0 / self.diag.x, 1.0 / self.diag.y, 1.0 / self.diag.z)
    }
}

/// Camera pose in the world frame (`orientation` maps camera to world).
#[derive(Debug, Clone)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl CameraPose {
    /// Pose of the camera given the body state.
    pub fn from_body(
        body_position: &Vector3<f64>,
        body_orientation: &UnitQuaternion<f64>,
        cam: &CameraModel,
    ) -> Self {
        Self {
            position: body_position + body_orientation * cam.t_cb,
            orientation: body_orientation * cam.r_bc,
        }
    }

    /// Level camera whose optical axis points along world +x (the convention
    /// used for uncertainty grid maps).
    pub fn looking_along_x(position: Vector3<f64>) -> Self {
        let r = nalgebra::Rotation3::from_matrix_unchecked(Matrix3::new(
            0.0, 0.0, 1.0, //
            -1.0, 0.0, 0.0, //
            0.0, -1.0, 0.0,
        ));
        Self { position, orientation: UnitQuaternion::from_rotation_matrix(&r) }
    }

    /// World-frame point expressed in the camera frame.
    pub fn world_to_camera(&self, p_w: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (p_w - self.position)
    }

    /// Optical axis direction in the world frame.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }
}

/// Per-state output of the fast uncertainty evaluation.
#[derive(Debug, Clone)]
pub struct UncertaintyReport {
    /// Fused information matrix (centroid FIM plus per-landmark depth info).
    pub information: Matrix3<f64>,
    /// Scalar metric: negative log-determinant of the fused information.
    pub metric: f64,
    /// Smooth visibility weight per landmark.
    pub visibilities: Vec<f64>,
    /// Augmented depth standard deviation per landmark [m].
    pub depth_sigmas: Vec<f64>,
    /// Whether the singularity floor was added inside the log-det.
    pub floored: bool,
}

impl UncertaintyReport {
    /// Conservative position uncertainty in meters: the standard deviation
    /// along the least-informative axis.
    pub fn position_sigma(&self) -> f64 {
        let eig = sym_eigenvalues_3x3(&self.information);
        let lo = eig[0].max(INFO_FLOOR * 1e-3);
        1.0 / lo.sqrt()
    }
}

/// `floor + s * ln(1 + exp((x - floor)/s))`: smooth approximation of
/// `max(x, floor)` with transition width `s`.
fn softplus_floor<T: Scalar>(x: T, floor: f64, width: f64) -> T {
    let t = (x - T::from_f64(floor)) * T::from_f64(1.0 / width);
    // guard the exp against overflow; the branch is far from the transition
    if t.value() > 30.0 {
        x
    } else {
        T::from_f64(floor) + T::from_f64(width) * (T::from_f64(1.0) + t.exp()).ln()
    }
}

/// Sigmoid factor `1/2 + 1/2 tanh(lambda m)`, evaluated in the equivalent
/// logistic form `1 / (1 + exp(-2 lambda m))`, which stays smooth and
/// accurate deep into the tails where the tanh form cancels to ulp steps.
fn visibility_factor<T: Scalar>(margin: T, lambda: f64) -> T {
    let y = margin * T::from_f64(2.0 * lambda);
    if y.value() < -700.0 {
        return T::from_f64(0.0);
    }
    T::from_f64(1.0) / (T::from_f64(1.0) + (-y).exp())
}

pub(crate) fn smooth_visibility_kernel<T: Scalar>(
    cam: &CameraModel,
    p_c: &V3<T>,
    lambda_v: f64,
) -> T {
    let (x, y, z) = (p_c.0[0], p_c.0[1], p_c.0[2]);
    let alpha = x.atan2(z);
    let beta = y.atan2((x * x + z * z).sqrt());
    let v_alpha = visibility_factor(T::from_f64(cam.alpha_max) - alpha.abs(), lambda_v);
    let v_beta = visibility_factor(T::from_f64(cam.beta_max) - beta.abs(), lambda_v);
    let v_z = visibility_factor(z - T::from_f64(cam.z_min), lambda_v);
    v_alpha * v_beta * v_z
}

/// Full Fisher information of the camera position from every landmark
/// feature, with smooth visibility weights computed at the given pose.
///
/// Each feature contributes `v * J^T S^-1 J` where `J` is the bearing
/// Jacobian with respect to the camera position and `S` the bearing
/// covariance.
pub fn fim_full(
    cam: &CameraModel,
    pose: &CameraPose,
    landmarks: &[Landmark],
    lambda_v: f64,
    cov: &BearingCovariance,
) -> Matrix3<f64> {
    let r_cw = pose.orientation.inverse().to_rotation_matrix();
    let s_inv = Matrix3::from_diagonal(&cov.inverse_diag());
    let mut info = Matrix3::zeros();
    for lm in landmarks {
        for f in &lm.features {
            let p_c = pose.world_to_camera(f);
            let d = p_c.norm();
            if d < 1e-12 {
                continue;
            }
            let v = cam.smooth_visibility(&p_c, lambda_v);
            let rho = p_c / d;
            let j = (Matrix3::identity() - rho * rho.transpose()) * (-r_cw.matrix()) / d;
            info += v * j.transpose() * s_inv * j;
        }
    }
    info
}

/// Position-only Fisher information: depends only on the camera position and
/// the supplied visibility weights, never on any rotation.
///
/// `items` pairs world-frame feature positions with their visibility weights;
/// `sigma_rho_sq` is the isotropic bearing variance.
pub fn fim_position_only(
    sigma_rho_sq: f64,
    camera_position: &Vector3<f64>,
    items: &[(Vector3<f64>, f64)],
) -> Matrix3<f64> {
    let mut info = Matrix3::zeros();
    for (feature, vis) in items {
        let rel = feature - camera_position;
        let d = rel.norm();
        if d < 1e-12 {
            continue;
        }
        let rho = rel / d;
        let a = (Matrix3::identity() - rho * rho.transpose()) / d;
        info += (*vis / sigma_rho_sq) * a.transpose() * a;
    }
    info
}

/// Negative log-determinant with the singularity floor applied when the
/// matrix is rank-deficient or badly conditioned.
pub fn neg_log_det_floored(m: &Matrix3<f64>) -> (f64, bool) {
    let eig = sym_eigenvalues_3x3(m);
    let needs_floor = eig[2] <= 1e-60 || eig[0] <= eig[2] / INFO_COND_MAX;
    let mm = if needs_floor { m + Matrix3::identity() * INFO_FLOOR } else { *m };
    (-mm.determinant().ln(), needs_floor)
}

/// Standard deviation of the size-based distance estimate to a landmark.
///
/// Returns the grazing cap (flagged) when the landmark plane is seen nearly
/// edge-on.
pub fn depth_sigma(cam: &CameraModel, landmark: &Landmark, pose: &CameraPose) -> (f64, bool) {
    let d = (landmark.centroid - pose.position).norm();
    let cos_phi = landmark.facing.dot(&pose.optical_axis());
    if cos_phi <= GRAZING_COS_MIN {
        return (GRAZING_SIGMA_CAP, true);
    }
    let sigma = (std::f64::consts::SQRT_2 * d * d / (landmark.size * cos_phi * cam.fx)).abs()
        * cam.sigma_u;
    (sigma, false)
}

/// Fast position-uncertainty evaluation over landmark centroids.
///
/// Per landmark: smooth visibility from the centroid bearing, augmented depth
/// variance `sigma_d^2 + sigma_u / (d^4 + eps)`, an isotropic per-landmark
/// information block, and a centroid-level position-only FIM. The metric is
/// the negative log-determinant of the fused sum.
pub fn fast_uncertainty(
    cam: &CameraModel,
    pose: &CameraPose,
    landmarks: &[Landmark],
    lambda_v: f64,
    epsilon: f64,
) -> UncertaintyReport {
    let pos = V3::<f64>::from_na(&pose.position);
    let att = Quat::<f64>::from_na(&pose.orientation);
    let (metric, fused, vis, sigmas, floored) =
        fast_uncertainty_kernel(&pos, &att, cam, landmarks, lambda_v, epsilon);
    UncertaintyReport {
        information: fused.value(),
        metric,
        visibilities: vis,
        depth_sigmas: sigmas,
        floored,
    }
}

/// Generic kernel behind [`fast_uncertainty`]; also instantiated with dual
/// numbers to obtain exact gradients for the planner objective.
pub(crate) fn fast_uncertainty_kernel<T: Scalar>(
    cam_pos: &V3<T>,
    cam_att: &Quat<T>,
    cam: &CameraModel,
    landmarks: &[Landmark],
    lambda_v: f64,
    epsilon: f64,
) -> (T, M3<T>, Vec<f64>, Vec<f64>, bool) {
    let sigma_rho_sq = (cam.sigma_u / cam.fx).powi(2);
    let inv_sigma_rho_sq = T::from_f64(1.0 / sigma_rho_sq);
    let one = T::from_f64(1.0);
    let mut centroid_info = M3::<T>::zeros();
    let mut fused_extra = M3::<T>::zeros();
    let mut visibilities = Vec::with_capacity(landmarks.len());
    let mut sigmas = Vec::with_capacity(landmarks.len());

    let optical_axis = cam_att.rotate(&V3::new(
        T::from_f64(0.0),
        T::from_f64(0.0),
        T::from_f64(1.0),
    ));

    for lm in landmarks {
        let rel = V3::<T>::from_na(&lm.centroid) - *cam_pos;
        let d = rel.norm();
        let rho_w = rel.scale(one / d);
        let p_c = cam_att.rotate_inv(&rel);
        let vis = smooth_visibility_kernel(cam, &p_c, lambda_v);

        // position-only information from the centroid bearing:
        // A^T S^-1 A = (I - rho rho^T) / (sigma^2 d^2)
        let proj = M3::identity() - M3::outer(&rho_w, &rho_w);
        centroid_info = centroid_info + proj.scale(vis * inv_sigma_rho_sq / (d * d));

        // per-landmark depth information with a smooth grazing guard: the
        // facing/optical cosine saturates at GRAZING_COS_MIN through a
        // softplus floor, so the metric stays differentiable while the
        // near-edge-on blowup is capped
        let cos_phi = V3::<T>::from_na(&lm.facing).dot(&optical_axis);
        let cos_eff = softplus_floor(cos_phi, GRAZING_COS_MIN, 0.02);
        let sigma_d = T::from_f64(std::f64::consts::SQRT_2 * cam.sigma_u / (lm.size * cam.fx))
            * d * d / cos_eff;
        let d4 = d * d * d * d;
        let sigma_dp_sq = sigma_d * sigma_d + T::from_f64(cam.sigma_u) / (d4 + T::from_f64(epsilon));
        fused_extra = fused_extra + M3::scaled_identity(vis / sigma_dp_sq);

        visibilities.push(vis.value());
        sigmas.push(sigma_dp_sq.value().sqrt());
    }

    let mut fused = centroid_info + fused_extra;
    let eig = sym_eigenvalues_3x3(&fused.value());
    // floor when rank-deficient, badly conditioned, or so dark that the
    // log-det would run into underflow
    let floored = eig[2] <= 1e-60 || eig[0] <= eig[2] / INFO_COND_MAX;
    if floored {
        fused = fused + M3::scaled_identity(T::from_f64(INFO_FLOOR));
    }
    let metric = -fused.det().ln();
    (metric, fused, visibilities, sigmas, floored)
}

/// Gradient of the fast uncertainty metric with respect to the camera pose
/// (position and quaternion components), via forward-mode duals.
pub fn fast_uncertainty_gradient(
    cam: &CameraModel,
    pose: &CameraPose,
    landmarks: &[Landmark],
    lambda_v: f64,
    epsilon: f64,
) -> (f64, Vector3<f64>, [f64; 4]) {
    let mut pos = V3::<Dual<7>>::zeros();
    for k in 0..3 {
        pos.0[k] = Dual::var(pose.position[k], k);
    }
    let q = pose.orientation.quaternion();
    let att = Quat([
        Dual::var(q.i, 3),
        Dual::var(q.j, 4),
        Dual::var(q.k, 5),
        Dual::var(q.w, 6),
    ]);
    let (metric, ..) = fast_uncertainty_kernel(&pos, &att, cam, landmarks, lambda_v, epsilon);
    let g = metric.eps;
    (metric.re, Vector3::new(g[0], g[1], g[2]), [g[3], g[4], g[5], g[6]])
}

/// Empirical position uncertainty: perturb observed feature pixels, re-solve
/// the position by nonlinear least squares on bearing residuals (orientation
/// held at the true value), and return the total standard deviation of the
/// estimates. Test/benchmark oracle, not used by the planner.
pub fn pnp_uncertainty_oracle(
    cam: &CameraModel,
    pose: &CameraPose,
    landmarks: &[Landmark],
    n_trials: usize,
    rng: &mut impl rand::Rng,
) -> Result<f64> {
    use rand_distr::{Distribution, Normal};

    let mut visible = Vec::new();
    for lm in landmarks {
        for f in &lm.features {
            let p_c = pose.world_to_camera(f);
            if cam.hard_visibility(&p_c) {
                let (u, v) = cam.project(&p_c)?;
                visible.push((*f, u, v));
            }
        }
    }
    if visible.len() < 4 {
        return Err(Error::InsufficientFeatures { needed: 4, got: visible.len() });
    }

    let noise_u = Normal::new(0.0, cam.sigma_u).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    let noise_v = Normal::new(0.0, cam.sigma_v).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    let r_cw = pose.orientation.inverse().to_rotation_matrix();

    let mut estimates = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let observations: Vec<(Vector3<f64>, Vector3<f64>)> = visible
            .iter()
            .map(|(f, u, v)| {
                let rho = cam.unproject(u + noise_u.sample(rng), v + noise_v.sample(rng));
                (*f, rho)
            })
            .collect();

        // Gauss-Newton on stacked bearing residuals
        let mut p = pose.position;
        for _ in 0..25 {
            let mut h = Matrix3::zeros();
            let mut g = Vector3::zeros();
            for (f, rho_obs) in &observations {
                let rel = f - p;
                let d = rel.norm();
                let p_c = pose.orientation.inverse() * rel;
                let rho_pred = p_c / d;
                let r = rho_obs - rho_pred;
                let rho_c = p_c / d;
                let j = (Matrix3::identity() - rho_c * rho_c.transpose()) * (-r_cw.matrix()) / d;
                // residual = rho_obs - rho_pred, d(residual)/dp = -J
                h += j.transpose() * j;
                g += -j.transpose() * r;
            }
            let step = h
                .lu()
                .solve(&(-g))
                .ok_or_else(|| Error::NumericalFailure("singular normal equations".into()))?;
            p += step;
            if step.norm() < 1e-12 {
                break;
            }
        }
        estimates.push(p);
    }

    let n = estimates.len() as f64;
    let mean: Vector3<f64> = estimates.iter().sum::<Vector3<f64>>() / n;
    let var: f64 = estimates.iter().map(|e| (e - mean).norm_squared()).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt())
}
