//! Quadrotor rigid-body model with per-rotor thrust states.
//!
//! State: position, unit quaternion (body to world), world velocity, body
//! rates, and four rotor thrusts (17 dimensions). Input: the four thrust
//! rates. Linear drag acts in the body frame via a diagonal coefficient
//! matrix. All operations are pure functions over immutable values.

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::math::{Quat, Scalar, V3};
use crate::{Error, Result};

/// Dimension of the flat state vector.
pub const STATE_DIM: usize = 17;
/// Dimension of the input vector.
pub const INPUT_DIM: usize = 4;

/// Physical parameters of the vehicle.
///
/// Defaults correspond to a 0.7 kg racing quad: diagonal inertia in kg.m^2,
/// per-rotor thrust in [0, 8.5] N, body-rate limits [10, 10, 6] rad/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadParams {
    /// Mass [kg]
    pub mass: f64,
    /// Arm length [m]
    pub arm_length: f64,
    /// Diagonal of the inertia matrix [kg.m^2]
    pub inertia: Vector3<f64>,
    /// Rotor torque constant (thrust-to-torque ratio)
    pub torque_constant: f64,
    /// Per-rotor thrust lower bound [N]
    pub thrust_min: f64,
    /// Per-rotor thrust upper bound [N]
    pub thrust_max: f64,
    /// Thrust-rate lower bound [N/s]
    pub thrust_rate_min: f64,
    /// Thrust-rate upper bound [N/s]
    pub thrust_rate_max: f64,
    /// Body-rate limits per axis [rad/s]
    pub omega_max: Vector3<f64>,
    /// Diagonal linear drag coefficients [1/s], body frame
    pub drag: Vector3<f64>,
    /// Gravity vector [m/s^2]
    pub gravity: Vector3<f64>,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 0.7,
            arm_length: 0.125,
            inertia: Vector3::new(2.4e-3, 1.8e-3, 3.7e-3),
            torque_constant: 0.033,
            thrust_min: 0.0,
            thrust_max: 8.5,
            thrust_rate_min: -100.0,
            thrust_rate_max: 100.0,
            omega_max: Vector3::new(10.0, 10.0, 6.0),
            drag: Vector3::zeros(),
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }
}

impl QuadParams {
    /// Load from a JSON key-value file; missing keys take the defaults.
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let params: Self = serde_json::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::Parse("mass must be positive".into()));
        }
        if !self.inertia.iter().all(|j| *j > 0.0) {
            return Err(Error::Parse("inertia diagonal must be positive".into()));
        }
        if self.thrust_min > self.thrust_max || self.thrust_rate_min > self.thrust_rate_max {
            return Err(Error::Parse("thrust bounds must be ordered".into()));
        }
        if !self.omega_max.iter().all(|w| *w > 0.0) {
            return Err(Error::Parse("omega_max must be positive".into()));
        }
        if !self.drag.iter().all(|d| *d >= 0.0) {
            return Err(Error::Parse("drag coefficients must be nonnegative".into()));
        }
        Ok(())
    }

    /// Thrust per rotor that balances gravity.
    pub fn hover_thrust_per_rotor(&self) -> f64 {
        self.mass * self.gravity.norm() / 4.0
    }
}

/// Full vehicle state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    /// Position [m], world frame
    pub position: Vector3<f64>,
    /// Orientation, body to world
    pub orientation: UnitQuaternion<f64>,
    /// Velocity [m/s], world frame
    pub velocity: Vector3<f64>,
    /// Body rates [rad/s]
    pub body_rates: Vector3<f64>,
    /// Per-rotor thrusts [N]
    pub rotor_thrusts: Vector4<f64>,
}

impl QuadState {
    /// Stationary hover at a position, thrusts balancing gravity.
    pub fn hover(position: Vector3<f64>, params: &QuadParams) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::identity(),
            velocity: Vector3::zeros(),
            body_rates: Vector3::zeros(),
            rotor_thrusts: Vector4::repeat(params.hover_thrust_per_rotor()),
        }
    }

    /// Pack into a flat array: p(3), q as [x,y,z,w], v(3), omega(3), f(4).
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let q = self.orientation.quaternion();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.i,
            q.j,
            q.k,
            q.w,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
            self.body_rates.x,
            self.body_rates.y,
            self.body_rates.z,
            self.rotor_thrusts.x,
            self.rotor_thrusts.y,
            self.rotor_thrusts.z,
            self.rotor_thrusts.w,
        ]
    }

    /// Unpack from a flat array (inverse of [`Self::to_array`]); the
    /// quaternion is normalized.
    pub fn from_array(x: &[f64; STATE_DIM]) -> Self {
        Self {
            position: Vector3::new(x[0], x[1], x[2]),
            orientation: UnitQuaternion::from_quaternion(Quaternion::new(x[6], x[3], x[4], x[5])),
            velocity: Vector3::new(x[7], x[8], x[9]),
            body_rates: Vector3::new(x[10], x[11], x[12]),
            rotor_thrusts: Vector4::new(x[13], x[14], x[15], x[16]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Thrust-rate input for the four rotors [N/s].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RotorRateInput {
    pub rates: Vector4<f64>,
}

impl RotorRateInput {
    pub fn new(rates: Vector4<f64>) -> Self {
        Self { rates }
    }

    pub fn zeros() -> Self {
        Self { rates: Vector4::zeros() }
    }

    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        [self.rates.x, self.rates.y, self.rates.z, self.rates.w]
    }

    pub fn from_array(u: &[f64; INPUT_DIM]) -> Self {
        Self { rates: Vector4::new(u[0], u[1], u[2], u[3]) }
    }
}

/// Collective thrust vector (body frame) and body torque from the four rotor
/// thrusts, X configuration.
pub fn collective_thrust_and_torque(
    f: &Vector4<f64>,
    params: &QuadParams,
) -> (Vector3<f64>, Vector3<f64>) {
    let s = params.arm_length / std::f64::consts::SQRT_2;
    let thrust = Vector3::new(0.0, 0.0, f.x + f.y + f.z + f.w);
    let torque = Vector3::new(
        s * (f.x + f.y - f.z - f.w),
        s * (-f.x + f.y + f.z - f.w),
        params.torque_constant * (f.x - f.y + f.z - f.w),
    );
    (thrust, torque)
}

/// Continuous-time dynamics kernel, generic over the scalar type so the same
/// code yields values (`f64`) and exact forward-mode derivatives (`Dual`).
///
/// Layout: p(0..3), q(3..7) scalar-last, v(7..10), omega(10..13), f(13..17).
pub(crate) fn dynamics_kernel<T: Scalar>(
    x: &[T; STATE_DIM],
    u: &[T; INPUT_DIM],
    params: &QuadParams,
) -> [T; STATE_DIM] {
    let q = Quat([x[3], x[4], x[5], x[6]]);
    let v = V3([x[7], x[8], x[9]]);
    let omega = V3([x[10], x[11], x[12]]);
    let half = T::from_f64(0.5);

    // qdot = 1/2 q (omega, 0) with (omega, 0) a pure quaternion
    let omega_quat = Quat([omega.0[0], omega.0[1], omega.0[2], T::from_f64(0.0)]);
    let qdot = q.mul_quat(&omega_quat);

    // vdot = (1/m) R f_T + g - R D R^T v
    let thrust_sum = x[13] + x[14] + x[15] + x[16];
    let e_z = V3::new(T::from_f64(0.0), T::from_f64(0.0), T::from_f64(1.0));
    let inv_m = T::from_f64(1.0 / params.mass);
    let accel_thrust = q.rotate(&e_z).scale(thrust_sum * inv_m);
    let g = V3::from_na(&params.gravity);
    let v_body = q.rotate_inv(&v);
    let drag_body = V3([
        v_body.0[0] * T::from_f64(params.drag.x),
        v_body.0[1] * T::from_f64(params.drag.y),
        v_body.0[2] * T::from_f64(params.drag.z),
    ]);
    let vdot = accel_thrust + g - q.rotate(&drag_body);

    // omegadot = J^-1 (tau - omega x J omega)
    let s = T::from_f64(params.arm_length / std::f64::consts::SQRT_2);
    let tau = V3([
        s * (x[13] + x[14] - x[15] - x[16]),
        s * (-x[13] + x[14] + x[15] - x[16]),
        T::from_f64(params.torque_constant) * (x[13] - x[14] + x[15] - x[16]),
    ]);
    let j_omega = V3([
        omega.0[0] * T::from_f64(params.inertia.x),
        omega.0[1] * T::from_f64(params.inertia.y),
        omega.0[2] * T::from_f64(params.inertia.z),
    ]);
    let gyro = omega.cross(&j_omega);
    let omegadot = V3([
        (tau.0[0] - gyro.0[0]) * T::from_f64(1.0 / params.inertia.x),
        (tau.0[1] - gyro.0[1]) * T::from_f64(1.0 / params.inertia.y),
        (tau.0[2] - gyro.0[2]) * T::from_f64(1.0 / params.inertia.z),
    ]);

    [
        v.0[0],
        v.0[1],
        v.0[2],
        half * qdot.0[0],
        half * qdot.0[1],
        half * qdot.0[2],
        half * qdot.0[3],
        vdot.0[0],
        vdot.0[1],
        vdot.0[2],
        omegadot.0[0],
        omegadot.0[1],
        omegadot.0[2],
        u[0],
        u[1],
        u[2],
        u[3],
    ]
}

/// One RK4 step with quaternion renormalization at the end, generic kernel.
pub(crate) fn rk4_kernel<T: Scalar>(
    x: &[T; STATE_DIM],
    u: &[T; INPUT_DIM],
    dt: T,
    params: &QuadParams,
) -> [T; STATE_DIM] {
    let half = T::from_f64(0.5);
    let sixth = T::from_f64(1.0 / 6.0);
    let two = T::from_f64(2.0);

    let k1 = dynamics_kernel(x, u, params);
    let x2 = add_scaled(x, &k1, dt * half);
    let k2 = dynamics_kernel(&x2, u, params);
    let x3 = add_scaled(x, &k2, dt * half);
    let k3 = dynamics_kernel(&x3, u, params);
    let x4 = add_scaled(x, &k3, dt);
    let k4 = dynamics_kernel(&x4, u, params);

    let mut out = *x;
    for i in 0..STATE_DIM {
        out[i] += dt * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    let q = Quat([out[3], out[4], out[5], out[6]]).normalized();
    out[3] = q.0[0];
    out[4] = q.0[1];
    out[5] = q.0[2];
    out[6] = q.0[3];
    out
}

fn add_scaled<T: Scalar>(x: &[T; STATE_DIM], k: &[T; STATE_DIM], s: T) -> [T; STATE_DIM] {
    let mut out = *x;
    for i in 0..STATE_DIM {
        out[i] += s * k[i];
    }
    out
}

/// Time derivative of the full state.
pub fn dynamics(
    state: &QuadState,
    input: &RotorRateInput,
    params: &QuadParams,
) -> Result<[f64; STATE_DIM]> {
    if !state.is_finite() || !input.rates.iter().all(|r| r.is_finite()) {
        return Err(Error::InvalidState("non-finite state or input".into()));
    }
    let q_norm = state.orientation.quaternion().norm();
    if (q_norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidState(format!(
            "quaternion norm {q_norm} deviates from 1 by more than 1e-6"
        )));
    }
    Ok(dynamics_kernel(&state.to_array(), &input.to_array(), params))
}

/// One RK4 integration step of duration `dt`; the quaternion is renormalized
/// after the step, which keeps the integrator a pure function and bounds
/// drift.
pub fn rk4_step(
    state: &QuadState,
    input: &RotorRateInput,
    dt: f64,
    params: &QuadParams,
) -> Result<QuadState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidStep(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::InvalidState("non-finite state".into()));
    }
    let out = rk4_kernel(&state.to_array(), &input.to_array(), dt, params);
    Ok(QuadState::from_array(&out))
}

/// Jerk kernel: the drag contribution is omitted, matching the acceleration
/// derivative of the thrust and gravity terms only.
pub(crate) fn jerk_kernel<T: Scalar>(
    q: &Quat<T>,
    omega: &V3<T>,
    thrust_sum: T,
    rate_sum: T,
    mass: f64,
) -> V3<T> {
    let e_z = V3::new(T::from_f64(0.0), T::from_f64(0.0), T::from_f64(1.0));
    let inv_m = T::from_f64(1.0 / mass);
    let tilt = q.rotate(&omega.cross(&e_z)).scale(thrust_sum * inv_m);
    let axial = q.rotate(&e_z).scale(rate_sum * inv_m);
    tilt + axial
}

/// Translational jerk [m/s^3] from the current state and input.
pub fn jerk(state: &QuadState, input: &RotorRateInput, params: &QuadParams) -> Vector3<f64> {
    let q = Quat::<f64>::from_na(&state.orientation);
    let omega = V3::<f64>::from_na(&state.body_rates);
    jerk_kernel(
        &q,
        &omega,
        state.rotor_thrusts.sum(),
        input.rates.sum(),
        params.mass,
    )
    .value()
}
