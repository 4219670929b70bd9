//! Perception and regularization cost terms evaluated on trajectory nodes:
//! look-ahead gaze alignment, field-of-view slack penalties, position
//! uncertainty, and jerk regulation.
//!
//! Every term comes in two forms: a plain value and a gradient version that
//! returns exact forward-mode derivatives with respect to the node components
//! it depends on.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{fast_uncertainty_kernel, CameraModel};
use crate::math::{Dual, Quat, Scalar, V3};
use crate::quad::{jerk_kernel, QuadParams, QuadState, RotorRateInput};
use crate::track::Landmark;
use crate::Result;

/// Displacements shorter than this give no usable gaze direction.
pub const LA_MIN_DISPLACEMENT: f64 = 1e-3;

/// Weights and shape parameters of the perception objectives.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionWeights {
    /// Look-ahead gaze weight.
    pub w_la: f64,
    /// Look-ahead decay parameter.
    pub lambda_la: f64,
    /// FOV slack penalty weight.
    pub w_fov: f64,
    /// Position-uncertainty weight.
    pub w_pum: f64,
    /// Visibility sigmoid sharpness.
    pub lambda_v: f64,
    /// Jerk regulation weight.
    #[serde(alias = "w_jerk")]
    pub w_mr: f64,
    /// Look-ahead horizon [s].
    pub t_la: f64,
    /// Singularity guard in the augmented depth variance.
    pub epsilon: f64,
}

impl Default for PerceptionWeights {
    fn default() -> Self {
        Self {
            w_la: 0.005,
            lambda_la: 3.0,
            w_fov: 0.05,
            w_pum: 3e-4,
            lambda_v: 10.0,
            w_mr: 1e-7,
            t_la: 0.5,
            epsilon: 1e-6,
        }
    }
}

impl PerceptionWeights {
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn body_to_camera_pose<T: Scalar>(
    p: &V3<T>,
    q: &Quat<T>,
    cam: &CameraModel,
) -> (V3<T>, Quat<T>) {
    let qn = q.normalized();
    let q_bc = Quat::<T>::from_na(&cam.r_bc);
    let cam_pos = *p + qn.rotate(&V3::from_na(&cam.t_cb));
    let cam_att = qn.mul_quat(&q_bc);
    (cam_pos, cam_att)
}

fn la_kernel<T: Scalar>(
    p: &V3<T>,
    q: &Quat<T>,
    p_ahead: &V3<T>,
    cam: &CameraModel,
    w_la: f64,
    lambda_la: f64,
) -> Option<T> {
    let to_target = *p_ahead - *p;
    let dist = to_target.norm();
    if dist.value() <= LA_MIN_DISPLACEMENT {
        return None;
    }
    let b = to_target.scale(T::from_f64(1.0) / dist);
    let (_, cam_att) = body_to_camera_pose(p, q, cam);
    let z_axis = V3::new(T::from_f64(0.0), T::from_f64(0.0), T::from_f64(1.0));
    let z_c = cam_att.rotate(&z_axis);
    let angle = b.dot(&z_c).acos();
    let cost = -(T::from_f64(w_la)
        * (-T::from_f64(lambda_la) * angle.powi(4)).exp());
    Some(cost)
}

/// Look-ahead gaze cost: aligns the optical axis with the direction toward a
/// future trajectory point. Returns `(cost, degenerate)`; a near-zero
/// displacement yields zero cost with the flag set.
pub fn la_cost(
    state: &QuadState,
    p_ahead: &Vector3<f64>,
    cam: &CameraModel,
    weights: &PerceptionWeights,
) -> (f64, bool) {
    let p = V3::<f64>::from_na(&state.position);
    let q = Quat::<f64>::from_na(&state.orientation);
    match la_kernel(&p, &q, &V3::from_na(p_ahead), cam, weights.w_la, weights.lambda_la) {
        Some(c) => (c, false),
        None => (0.0, true),
    }
}

/// Gradient bundle of the look-ahead cost.
#[derive(Debug, Clone)]
pub struct LaGradient {
    pub value: f64,
    pub d_position: Vector3<f64>,
    pub d_quaternion: [f64; 4],
    pub d_p_ahead: Vector3<f64>,
    pub degenerate: bool,
}

pub fn la_cost_gradient(
    state: &QuadState,
    p_ahead: &Vector3<f64>,
    cam: &CameraModel,
    weights: &PerceptionWeights,
) -> LaGradient {
    type D = Dual<10>;
    let p = V3([
        D::var(state.position.x, 0),
        D::var(state.position.y, 1),
        D::var(state.position.z, 2),
    ]);
    let qc = state.orientation.quaternion();
    let q = Quat([D::var(qc.i, 3), D::var(qc.j, 4), D::var(qc.k, 5), D::var(qc.w, 6)]);
    let ahead = V3([D::var(p_ahead.x, 7), D::var(p_ahead.y, 8), D::var(p_ahead.z, 9)]);
    match la_kernel(&p, &q, &ahead, cam, weights.w_la, weights.lambda_la) {
        Some(c) => LaGradient {
            value: c.re,
            d_position: Vector3::new(c.eps[0], c.eps[1], c.eps[2]),
            d_quaternion: [c.eps[3], c.eps[4], c.eps[5], c.eps[6]],
            d_p_ahead: Vector3::new(c.eps[7], c.eps[8], c.eps[9]),
            degenerate: false,
        },
        None => LaGradient {
            value: 0.0,
            d_position: Vector3::zeros(),
            d_quaternion: [0.0; 4],
            d_p_ahead: Vector3::zeros(),
            degenerate: true,
        },
    }
}

/// FOV slack penalty `w * (1^T S + 0.5 ||S||^2)` over all slack entries.
pub fn fov_penalty(slacks: &[f64], w_fov: f64) -> f64 {
    let linear: f64 = slacks.iter().sum();
    let quad: f64 = slacks.iter().map(|s| s * s).sum();
    w_fov * (linear + 0.5 * quad)
}

/// Gradient of [`fov_penalty`] with respect to each slack.
pub fn fov_penalty_gradient(slacks: &[f64], w_fov: f64) -> Vec<f64> {
    slacks.iter().map(|s| w_fov * (1.0 + s)).collect()
}

fn fov_residual_kernel<T: Scalar>(
    p: &V3<T>,
    q: &Quat<T>,
    landmark_pos: &Vector3<f64>,
    cam: &CameraModel,
) -> [T; 3] {
    let (cam_pos, cam_att) = body_to_camera_pose(p, q, cam);
    let p_c = cam_att.rotate_inv(&(V3::from_na(landmark_pos) - cam_pos));
    let (x, y, z) = (p_c.0[0], p_c.0[1], p_c.0[2]);
    let alpha = x.atan2(z);
    let beta = y.atan2((x * x + z * z).sqrt());
    [
        alpha.abs() - T::from_f64(cam.alpha_max),
        beta.abs() - T::from_f64(cam.beta_max),
        T::from_f64(cam.z_min) - z,
    ]
}

/// Raw visibility residuals for one landmark: `[|alpha| - alpha_max,
/// |beta| - beta_max, z_min - Z]`. The relaxed constraints are
/// `residual_k - S_k <= 0` with slacks `S >= 0`.
pub fn fov_residuals(
    state: &QuadState,
    landmark: &Landmark,
    cam: &CameraModel,
) -> [f64; 3] {
    let p = V3::<f64>::from_na(&state.position);
    let q = Quat::<f64>::from_na(&state.orientation);
    fov_residual_kernel(&p, &q, &landmark.centroid, cam)
}

fn fov_residual_smooth_kernel<T: Scalar>(
    p: &V3<T>,
    q: &Quat<T>,
    landmark_pos: &Vector3<f64>,
    cam: &CameraModel,
) -> [T; 3] {
    let (cam_pos, cam_att) = body_to_camera_pose(p, q, cam);
    let p_c = cam_att.rotate_inv(&(V3::from_na(landmark_pos) - cam_pos));
    let (x, y, z) = (p_c.0[0], p_c.0[1], p_c.0[2]);
    let eps = T::from_f64(1e-12);
    let r_xz = (x * x + z * z + eps).sqrt();
    let r_all = (x * x + y * y + z * z + eps).sqrt();
    [
        T::from_f64(cam.alpha_max.cos()) - z / r_xz,
        T::from_f64(cam.beta_max.cos()) - r_xz / r_all,
        T::from_f64(cam.z_min) - z,
    ]
}

/// Smooth reformulation of the visibility residuals used inside the
/// trajectory optimizer: `cos(angle) >= cos(limit)` instead of
/// `|angle| <= limit`. The feasible region is identical but the residuals
/// are rational in the camera-frame coordinates, free of the gradient flips
/// that the wrapped azimuth has directly behind the camera.
pub fn fov_residuals_smooth(
    state: &QuadState,
    landmark: &Landmark,
    cam: &CameraModel,
) -> [f64; 3] {
    let p = V3::<f64>::from_na(&state.position);
    let q = Quat::<f64>::from_na(&state.orientation);
    fov_residual_smooth_kernel(&p, &q, &landmark.centroid, cam)
}

pub fn fov_residuals_smooth_gradient(
    state: &QuadState,
    landmark: &Landmark,
    cam: &CameraModel,
) -> FovGradient {
    type D = Dual<7>;
    let p = V3([
        D::var(state.position.x, 0),
        D::var(state.position.y, 1),
        D::var(state.position.z, 2),
    ]);
    let qc = state.orientation.quaternion();
    let q = Quat([D::var(qc.i, 3), D::var(qc.j, 4), D::var(qc.k, 5), D::var(qc.w, 6)]);
    let r = fov_residual_smooth_kernel(&p, &q, &landmark.centroid, cam);
    let mut out = FovGradient {
        residuals: [r[0].re, r[1].re, r[2].re],
        d_position: [Vector3::zeros(); 3],
        d_quaternion: [[0.0; 4]; 3],
    };
    for k in 0..3 {
        out.d_position[k] = Vector3::new(r[k].eps[0], r[k].eps[1], r[k].eps[2]);
        out.d_quaternion[k] = [r[k].eps[3], r[k].eps[4], r[k].eps[5], r[k].eps[6]];
    }
    out
}

/// Residuals plus derivatives with respect to position and quaternion.
#[derive(Debug, Clone)]
pub struct FovGradient {
    pub residuals: [f64; 3],
    pub d_position: [Vector3<f64>; 3],
    pub d_quaternion: [[f64; 4]; 3],
}

pub fn fov_residuals_gradient(
    state: &QuadState,
    landmark: &Landmark,
    cam: &CameraModel,
) -> FovGradient {
    type D = Dual<7>;
    let p = V3([
        D::var(state.position.x, 0),
        D::var(state.position.y, 1),
        D::var(state.position.z, 2),
    ]);
    let qc = state.orientation.quaternion();
    let q = Quat([D::var(qc.i, 3), D::var(qc.j, 4), D::var(qc.k, 5), D::var(qc.w, 6)]);
    let r = fov_residual_kernel(&p, &q, &landmark.centroid, cam);
    let mut out = FovGradient {
        residuals: [r[0].re, r[1].re, r[2].re],
        d_position: [Vector3::zeros(); 3],
        d_quaternion: [[0.0; 4]; 3],
    };
    for k in 0..3 {
        out.d_position[k] = Vector3::new(r[k].eps[0], r[k].eps[1], r[k].eps[2]);
        out.d_quaternion[k] = [r[k].eps[3], r[k].eps[4], r[k].eps[5], r[k].eps[6]];
    }
    out
}

fn pum_kernel<T: Scalar>(
    p: &V3<T>,
    q: &Quat<T>,
    cam: &CameraModel,
    landmarks: &[Landmark],
    weights: &PerceptionWeights,
) -> T {
    let (cam_pos, cam_att) = body_to_camera_pose(p, q, cam);
    let (metric, ..) = fast_uncertainty_kernel(
        &cam_pos,
        &cam_att,
        cam,
        landmarks,
        weights.lambda_v,
        weights.epsilon,
    );
    T::from_f64(weights.w_pum) * metric
}

/// Position-uncertainty cost `w_pum * metric` at a body state.
pub fn pum_cost(
    state: &QuadState,
    cam: &CameraModel,
    landmarks: &[Landmark],
    weights: &PerceptionWeights,
) -> f64 {
    let p = V3::<f64>::from_na(&state.position);
    let q = Quat::<f64>::from_na(&state.orientation);
    pum_kernel(&p, &q, cam, landmarks, weights)
}

#[derive(Debug, Clone)]
pub struct PumGradient {
    pub value: f64,
    pub d_position: Vector3<f64>,
    pub d_quaternion: [f64; 4],
}

pub fn pum_cost_gradient(
    state: &QuadState,
    cam: &CameraModel,
    landmarks: &[Landmark],
    weights: &PerceptionWeights,
) -> PumGradient {
    type D = Dual<7>;
    let p = V3([
        D::var(state.position.x, 0),
        D::var(state.position.y, 1),
        D::var(state.position.z, 2),
    ]);
    let qc = state.orientation.quaternion();
    let q = Quat([D::var(qc.i, 3), D::var(qc.j, 4), D::var(qc.k, 5), D::var(qc.w, 6)]);
    let c = pum_kernel(&p, &q, cam, landmarks, weights);
    PumGradient {
        value: c.re,
        d_position: Vector3::new(c.eps[0], c.eps[1], c.eps[2]),
        d_quaternion: [c.eps[3], c.eps[4], c.eps[5], c.eps[6]],
    }
}

fn mr_kernel<T: Scalar>(
    q: &Quat<T>,
    omega: &V3<T>,
    f: &[T; 4],
    u: &[T; 4],
    params: &QuadParams,
    w_mr: f64,
) -> T {
    let thrust_sum = f[0] + f[1] + f[2] + f[3];
    let rate_sum = u[0] + u[1] + u[2] + u[3];
    let j = jerk_kernel(&q.normalized(), omega, thrust_sum, rate_sum, params.mass);
    T::from_f64(w_mr) * j.norm_squared()
}

/// Motion-regulation cost `w_mr * ||jerk||^2`.
pub fn motion_regulation(
    state: &QuadState,
    input: &RotorRateInput,
    params: &QuadParams,
    w_mr: f64,
) -> f64 {
    let q = Quat::<f64>::from_na(&state.orientation);
    let omega = V3::<f64>::from_na(&state.body_rates);
    mr_kernel(&q, &omega, &state.rotor_thrusts.into(), &input.rates.into(), params, w_mr)
}

#[derive(Debug, Clone)]
pub struct MrGradient {
    pub value: f64,
    pub d_quaternion: [f64; 4],
    pub d_omega: Vector3<f64>,
    pub d_thrusts: [f64; 4],
    pub d_rates: [f64; 4],
}

pub fn motion_regulation_gradient(
    state: &QuadState,
    input: &RotorRateInput,
    params: &QuadParams,
    w_mr: f64,
) -> MrGradient {
    type D = Dual<15>;
    let qc = state.orientation.quaternion();
    let q = Quat([D::var(qc.i, 0), D::var(qc.j, 1), D::var(qc.k, 2), D::var(qc.w, 3)]);
    let omega = V3([
        D::var(state.body_rates.x, 4),
        D::var(state.body_rates.y, 5),
        D::var(state.body_rates.z, 6),
    ]);
    let f: [D; 4] = std::array::from_fn(|i| D::var(state.rotor_thrusts[i], 7 + i));
    let u: [D; 4] = std::array::from_fn(|i| D::var(input.rates[i], 11 + i));
    let c = mr_kernel(&q, &omega, &f, &u, params, w_mr);
    MrGradient {
        value: c.re,
        d_quaternion: [c.eps[0], c.eps[1], c.eps[2], c.eps[3]],
        d_omega: Vector3::new(c.eps[4], c.eps[5], c.eps[6]),
        d_thrusts: [c.eps[7], c.eps[8], c.eps[9], c.eps[10]],
        d_rates: [c.eps[11], c.eps[12], c.eps[13], c.eps[14]],
    }
}
