//! Polynomial trajectory stages: closed-form minimum-effort splines through
//! waypoints, the differential-flatness map to full states and inputs,
//! feasibility checking, gate-traversal time/waypoint optimization, and
//! segment subdivision.
//!
//! Smoothness order is fixed at 4 (snap), so each segment is a degree-7
//! polynomial per axis and body rates and thrust rates recovered through the
//! flatness map are continuous.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::nlp;
use crate::quad::{QuadParams, QuadState, RotorRateInput};
use crate::track::{Track, TrackConstraint};
use crate::trajectory::{DiscreteTrajectory, TrajectoryNode};
use crate::{Error, Result};

/// Smoothness order: minimum-snap.
pub const SMOOTHNESS: usize = 4;
/// Polynomial coefficients per segment per axis (degree 2s-1).
pub const NCOEF: usize = 2 * SMOOTHNESS;

/// Boundary condition for one end of the spline: position and derivatives up
/// to order `SMOOTHNESS - 1`.
pub type FlatBoundary = [Vector3<f64>; SMOOTHNESS];

/// Flat output sample: position and time derivatives up to order 5
/// (position, velocity, acceleration, jerk, snap, crackle). Orders above the
/// smoothness order come straight from the polynomial and feed the
/// input-level flatness map.
#[derive(Debug, Clone, Copy)]
pub struct FlatSample {
    pub derivs: [Vector3<f64>; 6],
}

impl FlatSample {
    pub fn position(&self) -> Vector3<f64> {
        self.derivs[0]
    }
    pub fn velocity(&self) -> Vector3<f64> {
        self.derivs[1]
    }
    pub fn acceleration(&self) -> Vector3<f64> {
        self.derivs[2]
    }
}

/// Piecewise degree-7 polynomial in three axes with per-segment durations.
/// Coefficients are stored in normalized local time `s = tau / T_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewisePolyTrajectory {
    pub durations: Vec<f64>,
    /// `coeffs[segment][axis][power]`
    pub coeffs: Vec<[[f64; NCOEF]; 3]>,
    pub smoothness: usize,
    starts: Vec<f64>,
}

impl PiecewisePolyTrajectory {
    fn new(durations: Vec<f64>, coeffs: Vec<[[f64; NCOEF]; 3]>) -> Self {
        let mut starts = Vec::with_capacity(durations.len() + 1);
        let mut acc = 0.0;
        starts.push(0.0);
        for d in &durations {
            acc += d;
            starts.push(acc);
        }
        Self { durations, coeffs, smoothness: SMOOTHNESS, starts }
    }

    pub fn total_duration(&self) -> f64 {
        *self.starts.last().unwrap_or(&0.0)
    }

    pub fn num_segments(&self) -> usize {
        self.durations.len()
    }

    /// Segment index and local time for a global time, clamped to the span.
    fn locate(&self, t: f64) -> (usize, f64) {
        let t = t.clamp(0.0, self.total_duration());
        // segments are few; linear scan is fine
        for i in 0..self.durations.len() {
            if t <= self.starts[i + 1] || i == self.durations.len() - 1 {
                return (i, t - self.starts[i]);
            }
        }
        (0, 0.0)
    }

    /// Derivative of order `k` at global time `t` (clamped to the span).
    pub fn derivative(&self, t: f64, k: usize) -> Vector3<f64> {
        let (seg, tau) = self.locate(t);
        let ti = self.durations[seg];
        let s = tau / ti;
        let scale = ti.powi(k as i32);
        let mut out = Vector3::zeros();
        for axis in 0..3 {
            let c = &self.coeffs[seg][axis];
            let mut v = 0.0;
            for m in k..NCOEF {
                let mut fact = 1.0;
                for j in 0..k {
                    fact *= (m - j) as f64;
                }
                v += c[m] * fact * s.powi((m - k) as i32);
            }
            out[axis] = v / scale;
        }
        out
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        self.derivative(t, 0)
    }

    /// Flat sample with derivatives up to order 5 at time `t`.
    pub fn flat_sample(&self, t: f64) -> FlatSample {
        FlatSample { derivs: std::array::from_fn(|k| self.derivative(t, k)) }
    }

    /// Worst junction mismatch per derivative order `0..=order`.
    pub fn junction_mismatch(&self, order: usize) -> Vec<f64> {
        let mut worst = vec![0.0f64; order + 1];
        for j in 1..self.durations.len() {
            let t = self.starts[j];
            for (k, w) in worst.iter_mut().enumerate() {
                let left = self.derivative(t - 1e-13, k);
                let right = self.derivative(t + 1e-13, k);
                *w = w.max((left - right).norm());
            }
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut traj: Self = serde_json::from_str(text)?;
        let mut acc = 0.0;
        traj.starts = std::iter::once(0.0)
            .chain(traj.durations.iter().map(|d| {
                acc += d;
                acc
            }))
            .collect();
        Ok(traj)
    }
}

/// Factorial-style falling product `m! / (m-k)!`.
fn falling(m: usize, k: usize) -> f64 {
    let mut f = 1.0;
    for j in 0..k {
        f *= (m - j) as f64;
    }
    f
}

/// Closed-form minimum ∫||y^(4)||² spline through `waypoints` with segment
/// durations `durations` and clamped boundary derivatives.
///
/// The optimality system is square: boundary derivatives (orders 0..3 at both
/// ends), waypoint interpolation at each junction, and continuity of
/// derivative orders 1..6 across junctions. Its solution is unique for
/// positive durations.
pub fn solve_coefficients(
    waypoints: &[Vector3<f64>],
    durations: &[f64],
    y_init: &FlatBoundary,
    y_term: &FlatBoundary,
) -> Result<PiecewisePolyTrajectory> {
    let n = durations.len();
    if n != waypoints.len() + 1 {
        return Err(Error::DegenerateTiming(format!(
            "{} durations for {} waypoints (need waypoints + 1)",
            n,
            waypoints.len()
        )));
    }
    if durations.iter().any(|t| !(*t > 1e-6) || !t.is_finite()) {
        return Err(Error::DegenerateTiming("nonpositive segment duration".into()));
    }

    let dim = NCOEF * n;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = vec![DVector::<f64>::zeros(dim); 3];
    let mut row = 0;

    // basis row: derivative order k at normalized time s in segment `seg`
    let basis = |a: &mut DMatrix<f64>, row: usize, seg: usize, s: f64, k: usize, scale: f64| {
        for m in k..NCOEF {
            a[(row, NCOEF * seg + m)] = falling(m, k) * s.powi((m - k) as i32) * scale;
        }
    };

    // clamped start: y^(k)(0) = init[k]
    for k in 0..SMOOTHNESS {
        let scale = 1.0 / durations[0].powi(k as i32);
        basis(&mut a, row, 0, 0.0, k, scale);
        for axis in 0..3 {
            rhs[axis][row] = y_init[k][axis];
        }
        row += 1;
    }
    // clamped end
    for k in 0..SMOOTHNESS {
        let scale = 1.0 / durations[n - 1].powi(k as i32);
        basis(&mut a, row, n - 1, 1.0, k, scale);
        for axis in 0..3 {
            rhs[axis][row] = y_term[k][axis];
        }
        row += 1;
    }
    // junctions
    for j in 0..n - 1 {
        // left value equals waypoint
        basis(&mut a, row, j, 1.0, 0, 1.0);
        for axis in 0..3 {
            rhs[axis][row] = waypoints[j][axis];
        }
        row += 1;
        // right value equals waypoint
        basis(&mut a, row, j + 1, 0.0, 0, 1.0);
        for axis in 0..3 {
            rhs[axis][row] = waypoints[j][axis];
        }
        row += 1;
        // continuity of orders 1..=2s-2
        for k in 1..=(2 * SMOOTHNESS - 2) {
            let sl = 1.0 / durations[j].powi(k as i32);
            let sr = 1.0 / durations[j + 1].powi(k as i32);
            basis(&mut a, row, j, 1.0, k, sl);
            for m in k..NCOEF {
                a[(row, NCOEF * (j + 1) + m)] = -falling(m, k) * 0.0f64.powi((m - k) as i32) * sr;
            }
            row += 1;
        }
    }
    debug_assert_eq!(row, dim);

    let lu = a.lu();
    let mut coeffs = vec![[[0.0; NCOEF]; 3]; n];
    for axis in 0..3 {
        let sol = lu
            .solve(&rhs[axis])
            .ok_or_else(|| Error::DegenerateTiming("singular spline system".into()))?;
        for seg in 0..n {
            for m in 0..NCOEF {
                coeffs[seg][axis][m] = sol[NCOEF * seg + m];
            }
        }
    }
    Ok(PiecewisePolyTrajectory::new(durations.to_vec(), coeffs))
}

/// Boundary flat state (position + derivative orders 1..3) of a quad state.
/// Acceleration is recovered from attitude and thrust; jerk is taken as zero.
pub fn boundary_from_state(state: &QuadState, params: &QuadParams) -> FlatBoundary {
    let thrust: f64 = state.rotor_thrusts.iter().sum();
    let accel = state.orientation * Vector3::new(0.0, 0.0, thrust / params.mass)
        + params.gravity
        - drag_accel(&state.orientation, &state.velocity, params);
    [state.position, state.velocity, accel, Vector3::zeros()]
}

fn drag_accel(
    q: &UnitQuaternion<f64>,
    v: &Vector3<f64>,
    params: &QuadParams,
) -> Vector3<f64> {
    let vb = q.inverse() * v;
    q * Vector3::new(params.drag.x * vb.x, params.drag.y * vb.y, params.drag.z * vb.z)
}


/// Direction field defining the yaw reference: the horizontal velocity with a
/// short look-ahead through acceleration and jerk. The blend keeps the
/// heading defined through momentary velocity stalls (a raw `atan2` of the
/// velocity flips by pi wherever the xy-velocity reverses, which would inject
/// unbounded fake yaw rates).
fn heading_dir(sample: &FlatSample) -> Vector3<f64> {
    sample.derivs[1] + sample.derivs[2] * 0.3 + sample.derivs[3] * 0.05
}

/// Smooth velocity-heading yaw reference for one trajectory.
///
/// The heading direction is sampled on a fixed normalized grid and its unit
/// x/y components are fit with confidence-weighted smoothing splines:
/// samples where the heading field is strong follow the data, stretches near
/// velocity stalls are bridged smoothly from their confident neighbors. The
/// yaw is the angle of the smoothed direction, so there is no angle
/// unwrapping anywhere and the reference varies continuously with the
/// trajectory. Natural cubic interpolation with linear extension beyond the
/// span keeps the first two derivatives clean at the rest endpoints.
#[derive(Debug, Clone)]
pub struct YawRef {
    duration: f64,
    hx: SplineChannel,
    hy: SplineChannel,
}

#[derive(Debug, Clone)]
struct SplineChannel {
    values: Vec<f64>,
    second: Vec<f64>,
}

impl SplineChannel {
    fn new(values: Vec<f64>) -> Self {
        let second = natural_spline_second_derivatives(&values);
        Self { values, second }
    }

    /// Natural cubic interpolation on a unit grid over [0, n-1], extended
    /// linearly beyond (the natural end conditions make that smooth).
    fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        if x < 0.0 {
            let slope = (self.values[1] - self.values[0]) - self.second[1] / 6.0;
            return self.values[0] + slope * x;
        }
        if x > (n - 1) as f64 {
            let slope = (self.values[n - 1] - self.values[n - 2]) + self.second[n - 2] / 6.0;
            return self.values[n - 1] + slope * (x - (n - 1) as f64);
        }
        let i = (x.floor() as usize).min(n - 2);
        let s = x - i as f64;
        let (a, b) = (1.0 - s, s);
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) / 6.0
    }
}

const YAW_GRID: usize = 128;
const YAW_CONFIDENCE_SPEED: f64 = 0.3;
const YAW_SMOOTHING: f64 = 2e4;

impl YawRef {
    pub fn build(traj: &PiecewisePolyTrajectory) -> Self {
        let duration = traj.total_duration().max(1e-9);
        let mut dir_x = vec![0.0; YAW_GRID];
        let mut dir_y = vec![0.0; YAW_GRID];
        let mut weight = vec![0.0; YAW_GRID];
        for k in 0..YAW_GRID {
            let t = duration * k as f64 / (YAW_GRID - 1) as f64;
            let h = heading_dir(&traj.flat_sample(t));
            let speed_sq = h.x * h.x + h.y * h.y;
            weight[k] = speed_sq / (speed_sq + YAW_CONFIDENCE_SPEED * YAW_CONFIDENCE_SPEED);
            if speed_sq > 1e-30 {
                let inv = speed_sq.sqrt().recip();
                dir_x[k] = h.x * inv;
                dir_y[k] = h.y * inv;
            }
        }
        if weight.iter().sum::<f64>() < 1e-9 {
            return Self::constant_with(duration, 0.0);
        }
        let hx = SplineChannel::new(smoothing_spline(&dir_x, &weight, YAW_SMOOTHING));
        let hy = SplineChannel::new(smoothing_spline(&dir_y, &weight, YAW_SMOOTHING));
        Self { duration, hx, hy }
    }

    fn constant_with(duration: f64, yaw: f64) -> Self {
        Self {
            duration,
            hx: SplineChannel::new(vec![yaw.cos(); 4]),
            hy: SplineChannel::new(vec![yaw.sin(); 4]),
        }
    }

    pub fn constant(yaw: f64) -> Self {
        Self::constant_with(1.0, yaw)
    }

    /// Yaw angle of the smoothed heading direction at time `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.hx.values.len();
        let x = (t / self.duration) * (n - 1) as f64;
        let hx = self.hx.eval(x);
        let hy = self.hy.eval(x);
        if hx == 0.0 && hy == 0.0 {
            return 0.0;
        }
        hy.atan2(hx)
    }
}

/// Weighted discrete smoothing: minimize
/// `sum_k w_k (x_k - y_k)^2 + lambda * sum (x_{k-1} - 2 x_k + x_{k+1})^2`.
/// The normal equations are pentadiagonal SPD; solved with a banded
/// Cholesky in O(n).
fn smoothing_spline(y: &[f64], w: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    // bands: d0 main, d1 first off, d2 second off
    let mut d0 = vec![0.0; n];
    let mut d1 = vec![0.0; n.saturating_sub(1)];
    let mut d2 = vec![0.0; n.saturating_sub(2)];
    let mut rhs = vec![0.0; n];
    for k in 0..n {
        d0[k] = w[k];
        rhs[k] = w[k] * y[k];
    }
    for k in 1..n - 1 {
        d0[k - 1] += lambda;
        d0[k] += 4.0 * lambda;
        d0[k + 1] += lambda;
        d1[k - 1] += -2.0 * lambda;
        d1[k] += -2.0 * lambda;
        d2[k - 1] += lambda;
    }
    // banded LDL^T factorization (bandwidth 2)
    let mut l1 = vec![0.0; n.saturating_sub(1)];
    let mut l2 = vec![0.0; n.saturating_sub(2)];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let mut di = d0[i];
        if i >= 1 {
            di -= l1[i - 1] * l1[i - 1] * d[i - 1];
        }
        if i >= 2 {
            di -= l2[i - 2] * l2[i - 2] * d[i - 2];
        }
        if di <= 1e-300 {
            return y.to_vec();
        }
        d[i] = di;
        if i + 1 < n {
            let mut v = d1[i];
            if i >= 1 {
                v -= l2[i - 1] * l1[i - 1] * d[i - 1];
            }
            l1[i] = v / di;
        }
        if i + 2 < n {
            l2[i] = d2[i] / di;
        }
    }
    // forward substitution L z = rhs
    let mut z = rhs;
    for i in 0..n {
        if i >= 1 {
            z[i] -= l1[i - 1] * z[i - 1];
        }
        if i >= 2 {
            z[i] -= l2[i - 2] * z[i - 2];
        }
    }
    // diagonal and back substitution L^T x = z / d
    for i in 0..n {
        z[i] /= d[i];
    }
    for i in (0..n).rev() {
        if i + 1 < n {
            z[i] -= l1[i] * z[i + 1];
        }
        if i + 2 < n {
            z[i] -= l2[i] * z[i + 2];
        }
    }
    z
}

/// Second derivatives of a natural cubic spline on a unit-spaced grid
/// (tridiagonal solve).
fn natural_spline_second_derivatives(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let mut diag = vec![4.0; n - 2];
    let mut rhs: Vec<f64> = (1..n - 1).map(|i| 6.0 * (y[i - 1] - 2.0 * y[i] + y[i + 1])).collect();
    // Thomas algorithm with unit off-diagonals
    for i in 1..n - 2 {
        let w = 1.0 / diag[i - 1];
        diag[i] -= w;
        rhs[i] -= w * rhs[i - 1];
    }
    let mut sol = vec![0.0; n - 2];
    sol[n - 3] = rhs[n - 3] / diag[n - 3];
    for i in (0..n - 3).rev() {
        sol[i] = (rhs[i] - sol[i + 1]) / diag[i];
    }
    m[1..n - 1].copy_from_slice(&sol);
    m
}

/// Attitude and collective thrust implied by a flat sample at a given yaw.
/// Drag enters the required specific force through a short fixed-point
/// iteration (exact when drag is zero).
fn attitude_from_flat(
    sample: &FlatSample,
    yaw: f64,
    params: &QuadParams,
) -> Result<(UnitQuaternion<f64>, f64)> {
    let a = sample.acceleration();
    let v = sample.velocity();
    let mut rot = UnitQuaternion::identity();
    let mut f_spec = a - params.gravity;
    for _ in 0..3 {
        f_spec = a - params.gravity + drag_accel(&rot, &v, params);
        let norm = f_spec.norm();
        if norm < 1e-6 {
            return Err(Error::FlatnessSingularity(
                "specific force vanishes (free fall)".into(),
            ));
        }
        let z_b = f_spec / norm;
        let x_c = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let y_b_raw = z_b.cross(&x_c);
        let y_b = y_b_raw.try_normalize(1e-9).ok_or_else(|| {
            Error::FlatnessSingularity("thrust axis parallel to heading".into())
        })?;
        let x_b = y_b.cross(&z_b);
        let r = nalgebra::Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
            x_b, y_b, z_b,
        ]));
        rot = UnitQuaternion::from_rotation_matrix(&r);
    }
    Ok((rot, params.mass * f_spec.norm()))
}

/// Taylor-shift a flat sample by `dt` (exact for the degree-7 polynomial up
/// to the stored order).
fn shift_sample(sample: &FlatSample, dt: f64) -> FlatSample {
    let mut out = [Vector3::zeros(); 6];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = Vector3::zeros();
        let mut fact = 1.0;
        for j in 0..(6 - k) {
            if j > 0 {
                fact *= j as f64;
            }
            acc += sample.derivs[k + j] * dt.powi(j as i32) / fact;
        }
        *slot = acc;
    }
    FlatSample { derivs: out }
}

const RATE_FD_STEP: f64 = 1e-3;

/// Map a flat sample to the full vehicle state and thrust-rate input at a
/// constant yaw reference.
pub fn flatness_map(
    sample: &FlatSample,
    yaw: f64,
    params: &QuadParams,
) -> Result<(QuadState, RotorRateInput)> {
    flatness_map_with_yaw(sample, 0.0, &YawRef::constant(yaw), params)
}

/// Flatness map with a trajectory-level yaw reference evaluated at time `t`.
///
/// Attitude and collective thrust are closed-form; body rates, rotor
/// thrusts, and thrust rates come from central differences over a seven-point
/// attitude stencil (exact Taylor shifts of the polynomial sample).
pub fn flatness_map_with_yaw(
    sample: &FlatSample,
    t: f64,
    yaw: &YawRef,
    params: &QuadParams,
) -> Result<(QuadState, RotorRateInput)> {
    let h = RATE_FD_STEP;
    // attitude and collective thrust at offsets -3h..3h
    let mut quats = [UnitQuaternion::identity(); 7];
    let mut thrusts = [0.0; 7];
    for (idx, offset) in (-3..=3).enumerate() {
        let dt = offset as f64 * h;
        let shifted = shift_sample(sample, dt);
        let (q, thrust) = attitude_from_flat(&shifted, yaw.eval(t + dt), params)?;
        quats[idx] = q;
        thrusts[idx] = thrust;
    }
    // body rates at -2h..2h from adjacent attitude pairs
    let omega_at = |i: usize| -> Vector3<f64> {
        let delta = quats[i - 1].inverse() * quats[i + 1];
        delta.scaled_axis() / (2.0 * h)
    };
    let omegas = [omega_at(1), omega_at(2), omega_at(3), omega_at(4), omega_at(5)];

    // rotor thrusts at -h, 0, h from the rigid-body wrench
    let j = params.inertia;
    let s_mix = params.arm_length / std::f64::consts::SQRT_2;
    let c_mix = params.torque_constant;
    #[rustfmt::skip]
    let mix = nalgebra::Matrix4::new(
        1.0,   1.0,   1.0,   1.0,
        s_mix, s_mix, -s_mix, -s_mix,
       -s_mix, s_mix,  s_mix, -s_mix,
        c_mix, -c_mix, c_mix, -c_mix,
    );
    let mix_lu = mix.lu();
    let rotor_at = |oi: usize| -> Result<Vector4<f64>> {
        // omegas index: oi-1, oi, oi+1 are centered at stencil 2+oi-1...
        let omega = omegas[oi];
        let omega_dot = (omegas[oi + 1] - omegas[oi - 1]) / (2.0 * h);
        let j_omega = Vector3::new(j.x * omega.x, j.y * omega.y, j.z * omega.z);
        let tau = Vector3::new(j.x * omega_dot.x, j.y * omega_dot.y, j.z * omega_dot.z)
            + omega.cross(&j_omega);
        let wrench = Vector4::new(thrusts[oi + 1], tau.x, tau.y, tau.z);
        mix_lu
            .solve(&wrench)
            .ok_or_else(|| Error::NumericalFailure("singular rotor mixer".into()))
    };
    let f_m = rotor_at(1)?;
    let f_0 = rotor_at(2)?;
    let f_p = rotor_at(3)?;
    let rates = (f_p - f_m) / (2.0 * h);
    Ok((
        QuadState {
            position: sample.position(),
            orientation: quats[3],
            velocity: sample.velocity(),
            body_rates: omegas[2],
            rotor_thrusts: f_0,
        },
        RotorRateInput::new(rates),
    ))
}

/// Worst constraint violations along a polynomial trajectory, sampled at
/// `samples_per_piece` points per segment through the flatness map.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Worst per-rotor thrust bound violation [N].
    pub thrust: f64,
    /// Worst thrust-rate bound violation [N/s].
    pub thrust_rate: f64,
    /// Worst per-axis body-rate bound violation [rad/s].
    pub body_rate: f64,
    /// Whether any sample hit a flatness singularity.
    pub singular: bool,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.thrust.max(self.thrust_rate).max(self.body_rate)
    }
}

pub fn check_feasibility(
    traj: &PiecewisePolyTrajectory,
    params: &QuadParams,
    samples_per_piece: usize,
) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();
    let yaw = YawRef::build(traj);
    for seg in 0..traj.num_segments() {
        for k in 0..samples_per_piece.max(2) {
            let frac = k as f64 / (samples_per_piece.max(2) - 1) as f64;
            let t = traj.starts[seg] + frac * traj.durations[seg];
            let sample = traj.flat_sample(t);
            match flatness_map_with_yaw(&sample, t, &yaw, params) {
                Ok((state, input)) => {
                    for i in 0..4 {
                        report.thrust = report
                            .thrust
                            .max(state.rotor_thrusts[i] - params.thrust_max)
                            .max(params.thrust_min - state.rotor_thrusts[i]);
                        report.thrust_rate = report
                            .thrust_rate
                            .max(input.rates[i] - params.thrust_rate_max)
                            .max(params.thrust_rate_min - input.rates[i]);
                    }
                    for a in 0..3 {
                        report.body_rate =
                            report.body_rate.max(state.body_rates[a].abs() - params.omega_max[a]);
                    }
                }
                Err(_) => report.singular = true,
            }
        }
    }
    report.thrust = report.thrust.max(0.0);
    report.thrust_rate = report.thrust_rate.max(0.0);
    report.body_rate = report.body_rate.max(0.0);
    report
}

/// Planning mode: traversal fixed at waypoint centers within their tolerance
/// spheres, or free placement anywhere inside the gate polytopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanMode {
    Waypoint,
    Gate,
}

/// Knobs for the gate-traversal optimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TogtOptions {
    pub mode: PlanMode,
    /// Constraint samples per polynomial piece.
    pub samples_per_piece: usize,
    /// Feasibility penalty weight (escalated when violations persist).
    pub penalty_weight: f64,
    /// Escalation rounds.
    pub max_rounds: usize,
    /// Inner iteration cap per round.
    pub max_iters: usize,
    /// Target max violation [natural units].
    pub violation_tol: f64,
    /// Cruise speed for the initial time allocation [m/s].
    pub cruise_speed: f64,
}

impl Default for TogtOptions {
    fn default() -> Self {
        Self {
            mode: PlanMode::Gate,
            samples_per_piece: 50,
            penalty_weight: 20.0,
            max_rounds: 6,
            max_iters: 200,
            violation_tol: 1e-3,
            cruise_speed: 3.0,
        }
    }
}

/// Result of the polynomial stages.
#[derive(Debug, Clone)]
pub struct TogtResult {
    pub trajectory: PiecewisePolyTrajectory,
    /// Traversal point at each junction.
    pub junction_waypoints: Vec<Vector3<f64>>,
    /// Track-constraint index pinned to each junction (None = free).
    pub junction_constraint: Vec<Option<usize>>,
    pub feasibility: FeasibilityReport,
    pub converged: bool,
    pub penalty_rounds: usize,
}

impl TogtResult {
    pub fn duration(&self) -> f64 {
        self.trajectory.total_duration()
    }
}

/// Projection of a candidate traversal point onto its constraint set
/// (waypoint-mode spheres or collision-eroded gate polytopes).
fn project_waypoint(
    p: &Vector3<f64>,
    constraint: &TrackConstraint,
    mode: PlanMode,
    collision_radius: f64,
) -> Vector3<f64> {
    match (mode, constraint) {
        (PlanMode::Waypoint, TrackConstraint::Waypoint(w)) => w.project(p),
        (PlanMode::Waypoint, TrackConstraint::Gate(_)) => *p, // held fixed upstream
        (PlanMode::Gate, TrackConstraint::Waypoint(w)) => w.project(p),
        (PlanMode::Gate, TrackConstraint::Gate(g)) => {
            let eroded = g.eroded(collision_radius);
            eroded
                .project(p)
                .or_else(|_| g.project(p))
                .unwrap_or_else(|_| constraint.nominal_point())
        }
    }
}

struct PlanLayout {
    /// Junction -> track constraint index (None for free subdivision points).
    junction_constraint: Vec<Option<usize>>,
    /// Whether each junction's waypoint is a decision variable.
    movable: Vec<bool>,
    init: FlatBoundary,
    term: FlatBoundary,
}

fn violation_penalty(
    traj: &PiecewisePolyTrajectory,
    params: &QuadParams,
    colloc: &[usize],
) -> f64 {
    let yaw = YawRef::build(traj);
    let mut penalty = 0.0;
    let mut count = 0usize;
    for seg in 0..traj.num_segments() {
        let n = colloc[seg].max(2);
        for k in 0..n {
            let frac = k as f64 / (n - 1) as f64;
            let t = traj.starts[seg] + frac * traj.durations[seg];
            let sample = traj.flat_sample(t);
            count += 1;
            match flatness_map_with_yaw(&sample, t, &yaw, params) {
                Ok((state, input)) => {
                    // fixed physical scales keep the penalty pointwise
                    // monotone in the bounds (relaxing a bound never raises it)
                    for i in 0..4 {
                        let hi = (state.rotor_thrusts[i] - params.thrust_max).max(0.0);
                        let lo = (params.thrust_min - state.rotor_thrusts[i]).max(0.0);
                        penalty += (hi + lo).powi(2);
                        let rhi = (input.rates[i] - params.thrust_rate_max).max(0.0);
                        let rlo = (params.thrust_rate_min - input.rates[i]).max(0.0);
                        penalty += ((rhi + rlo) / 10.0).powi(2);
                    }
                    for a in 0..3 {
                        let w = (state.body_rates[a].abs() - params.omega_max[a]).max(0.0);
                        penalty += w.powi(2);
                    }
                }
                Err(_) => penalty += 10.0,
            }
        }
    }
    let _ = count;
    penalty
}

/// Solve the spline for a parameter vector `z = [ln T_0.., movable waypoint
/// coordinates..]`, with movable waypoints projected onto their sets.
struct PlanEvaluator<'a> {
    layout: &'a PlanLayout,
    track: &'a Track,
    params: &'a QuadParams,
    options: &'a TogtOptions,
    base_waypoints: Vec<Vector3<f64>>,
    movable_index: Vec<usize>, // junction index per movable slot
    /// Collocation samples per segment, fixed for the whole solve so the
    /// objective stays continuous in the decision variables.
    colloc: Vec<usize>,
}

impl PlanEvaluator<'_> {
    fn n_segments(&self) -> usize {
        self.layout.junction_constraint.len() + 1
    }

    fn decode(&self, z: &[f64]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        let n = self.n_segments();
        let durations: Vec<f64> = z[..n].iter().map(|t| t.exp()).collect();
        let mut waypoints = self.base_waypoints.clone();
        for (slot, &j) in self.movable_index.iter().enumerate() {
            let raw = Vector3::new(
                z[n + 3 * slot],
                z[n + 3 * slot + 1],
                z[n + 3 * slot + 2],
            );
            waypoints[j] = match self.layout.junction_constraint[j] {
                Some(c) => project_waypoint(
                    &raw,
                    &self.track.constraints[c],
                    self.options.mode,
                    self.track.collision_radius,
                ),
                None => raw,
            };
        }
        (durations, waypoints)
    }

    fn solve(&self, z: &[f64]) -> Result<PiecewisePolyTrajectory> {
        let (durations, waypoints) = self.decode(z);
        solve_coefficients(&waypoints, &durations, &self.layout.init, &self.layout.term)
    }

    fn objective(&self, z: &[f64], penalty_weight: f64) -> f64 {
        match self.solve(z) {
            Ok(traj) => {
                traj.total_duration()
                    + penalty_weight * violation_penalty(&traj, self.params, &self.colloc)
            }
            Err(_) => 1e6,
        }
    }
}

fn optimize_layout(
    layout: &PlanLayout,
    track: &Track,
    params: &QuadParams,
    options: &TogtOptions,
    init_durations: &[f64],
    init_waypoints: &[Vector3<f64>],
) -> Result<TogtResult> {
    let movable_index: Vec<usize> = layout
        .movable
        .iter()
        .enumerate()
        .filter_map(|(j, m)| if *m { Some(j) } else { None })
        .collect();
    // collocation density tracks time (short subdivided pieces need fewer
    // points), frozen at the warm start so the objective stays smooth
    let colloc: Vec<usize> = init_durations
        .iter()
        .map(|t| ((t / 0.012).ceil() as usize).clamp(8, options.samples_per_piece.max(8)))
        .collect();
    let evaluator = PlanEvaluator {
        layout,
        track,
        params,
        options,
        base_waypoints: init_waypoints.to_vec(),
        movable_index: movable_index.clone(),
        colloc,
    };

    let n_seg = evaluator.n_segments();
    let n_vars = n_seg + 3 * movable_index.len();
    let mut z = vec![0.0; n_vars];
    for (i, d) in init_durations.iter().enumerate() {
        z[i] = d.max(0.05).ln();
    }
    for (slot, &j) in movable_index.iter().enumerate() {
        for a in 0..3 {
            z[n_seg + 3 * slot + a] = init_waypoints[j][a];
        }
    }

    let mut lower = vec![f64::NEG_INFINITY; n_vars];
    let mut upper = vec![f64::INFINITY; n_vars];
    for i in 0..n_seg {
        lower[i] = 0.05f64.ln();
        upper[i] = 30.0f64.ln();
    }

    let descend = |z0: &[f64], penalty: f64, iters: usize| -> (Vec<f64>, f64) {
        let problem = nlp::FiniteDiffProblem {
            n: n_vars,
            m_eq: 0,
            m_ineq: 0,
            lower: lower.clone(),
            upper: upper.clone(),
            f: |x: &[f64]| evaluator.objective(x, penalty),
            c: |_: &[f64], _: &mut [f64], _: &mut [f64]| {},
            step: 1e-6,
        };
        let config = nlp::SolverConfig {
            tol: 1e-5,
            max_outer: 1,
            max_inner: iters,
            max_total_inner: iters,
            ..Default::default()
        };
        let (z_new, report) = nlp::solve(&problem, z0, &config);
        if std::env::var("RACELINE_PLAN_DEBUG").is_ok() {
            eprintln!(
                "[plan] descend: status {:?} inner {} kkt {:.2e} obj {:.6}",
                report.status, report.inner_iterations, report.kkt_residual, report.objective
            );
        }
        (z_new, report.objective)
    };

    let mut best_z = z.clone();
    let mut penalty = options.penalty_weight;
    let mut rounds = 0;
    let mut converged = false;
    for round in 0..options.max_rounds {
        rounds = round + 1;
        let (z_new, mut j_new) = descend(&best_z, penalty, options.max_iters);
        best_z = z_new;
        // time-shrink restarts: a uniform kick toward shorter times followed
        // by a fresh descent escapes time-suboptimal stationary points
        for _ in 0..4 {
            let mut z_try = best_z.clone();
            for item in z_try.iter_mut().take(n_seg) {
                *item += 0.93f64.ln();
            }
            let (z_restart, j_restart) = descend(&z_try, penalty, options.max_iters / 2);
            if j_restart < j_new - 1e-9 {
                best_z = z_restart;
                j_new = j_restart;
            } else {
                break;
            }
        }
        let _ = round;
        let traj = evaluator.solve(&best_z)?;
        let feas = check_feasibility(&traj, params, options.samples_per_piece);
        if feas.max_violation() <= options.violation_tol && !feas.singular {
            converged = true;
            break;
        }
        penalty *= 8.0;
    }

    let mut traj = evaluator.solve(&best_z)?;
    let (_, waypoints) = evaluator.decode(&best_z);
    let mut feasibility = check_feasibility(&traj, params, options.samples_per_piece.max(50));

    // Residual violations that the penalty rounds could not polish away are
    // removed by stretching all segment times uniformly: aggressiveness is
    // monotone in the time scale, so a short bisection always lands feasible.
    if (feasibility.max_violation() > options.violation_tol || feasibility.singular)
        && !converged
    {
        let n_seg = evaluator.n_segments();
        let stretched = |z: &[f64], scale: f64| {
            let mut zs = z.to_vec();
            for item in zs.iter_mut().take(n_seg) {
                *item += scale.ln();
            }
            zs
        };
        let feasible_at = |scale: f64| -> Option<(PiecewisePolyTrajectory, FeasibilityReport)> {
            let traj = evaluator.solve(&stretched(&best_z, scale)).ok()?;
            let feas = check_feasibility(&traj, params, options.samples_per_piece.max(50));
            (feas.max_violation() <= options.violation_tol && !feas.singular)
                .then_some((traj, feas))
        };
        let mut hi = 1.02;
        let mut upper = None;
        for _ in 0..8 {
            if let Some(found) = feasible_at(hi) {
                upper = Some((hi, found));
                break;
            }
            hi *= 1.07;
        }
        if let Some((mut hi, mut found)) = upper {
            let mut lo = 1.0;
            for _ in 0..12 {
                let mid = 0.5 * (lo + hi);
                match feasible_at(mid) {
                    Some(f) => {
                        hi = mid;
                        found = f;
                    }
                    None => lo = mid,
                }
            }
            traj = found.0;
            feasibility = found.1;
            converged = true;
        }
    }

    Ok(TogtResult {
        trajectory: traj,
        junction_waypoints: waypoints,
        junction_constraint: layout.junction_constraint.clone(),
        feasibility,
        converged,
        penalty_rounds: rounds,
    })
}

/// Stage-one planner: locally time-optimal polynomial trajectory through the
/// ordered track constraints. In `Gate` mode traversal points move freely
/// inside the (collision-eroded) polytopes; in `Waypoint` mode they stay
/// within the tolerance spheres around the nominal centers.
pub fn optimize_togt(
    track: &Track,
    params: &QuadParams,
    options: &TogtOptions,
) -> Result<TogtResult> {
    let n_constraints = track.constraints.len();
    if n_constraints == 0 {
        return Err(Error::Parse("track has no constraints".into()));
    }
    let init = boundary_from_state(&track.start, params);
    let term = boundary_from_state(&track.end, params);

    let mut junction_constraint = Vec::with_capacity(n_constraints);
    let mut movable = Vec::with_capacity(n_constraints);
    let mut waypoints = Vec::with_capacity(n_constraints);
    for (ci, c) in track.constraints.iter().enumerate() {
        junction_constraint.push(Some(ci));
        let nominal = match c {
            TrackConstraint::Waypoint(w) => w.center,
            TrackConstraint::Gate(g) => g
                .eroded(track.collision_radius)
                .interior_point()
                .or_else(|_| g.interior_point())
                .unwrap_or_else(|_| c.nominal_point()),
        };
        waypoints.push(nominal);
        let is_movable = match (options.mode, c) {
            (PlanMode::Waypoint, TrackConstraint::Waypoint(w)) => w.tolerance > 0.0,
            (PlanMode::Waypoint, TrackConstraint::Gate(_)) => false,
            (PlanMode::Gate, _) => true,
        };
        movable.push(is_movable);
    }

    // initial time allocation from straight-line distances at cruise speed
    let mut points = vec![track.start.position];
    points.extend(waypoints.iter().copied());
    points.push(track.end.position);
    let durations: Vec<f64> = points
        .windows(2)
        .map(|w| ((w[1] - w[0]).norm() / options.cruise_speed).max(0.3))
        .collect();

    if options.mode == PlanMode::Gate {
        // solve the fixed-waypoint problem first; starting the free-placement
        // problem from that solution keeps gate mode from ever doing worse
        let fixed_layout = PlanLayout {
            junction_constraint: junction_constraint.clone(),
            movable: vec![false; movable.len()],
            init,
            term,
        };
        let seed = optimize_layout(&fixed_layout, track, params, options, &durations, &waypoints)?;
        let layout = PlanLayout { junction_constraint, movable, init, term };
        return optimize_layout(
            &layout,
            track,
            params,
            options,
            &seed.trajectory.durations,
            &seed.junction_waypoints,
        );
    }

    let layout = PlanLayout { junction_constraint, movable, init, term };
    optimize_layout(&layout, track, params, options, &durations, &waypoints)
}

/// Stage two: split every segment into `mp` pieces (new junctions free) and
/// re-optimize from the warm start. Never returns a longer trajectory than
/// the input.
pub fn subdivide_and_refine(
    result: &TogtResult,
    track: &Track,
    params: &QuadParams,
    mp: usize,
    options: &TogtOptions,
) -> Result<TogtResult> {
    if mp == 0 {
        return Err(Error::Parse("subdivision factor must be at least 1".into()));
    }
    if mp == 1 {
        return Ok(result.clone());
    }
    let traj = &result.trajectory;
    let n_old = traj.num_segments();

    let mut junction_constraint = Vec::new();
    let mut movable = Vec::new();
    let mut waypoints = Vec::new();
    let mut durations = Vec::new();
    for seg in 0..n_old {
        for piece in 0..mp {
            durations.push(traj.durations[seg] / mp as f64);
            let is_last_piece = piece == mp - 1;
            if seg == n_old - 1 && is_last_piece {
                break; // terminal boundary, not a junction
            }
            if is_last_piece {
                // original junction between seg and seg+1
                junction_constraint.push(result.junction_constraint[seg]);
                movable.push(match result.junction_constraint[seg] {
                    Some(ci) => match (&track.constraints[ci], options.mode) {
                        (TrackConstraint::Waypoint(w), _) => w.tolerance > 0.0,
                        (TrackConstraint::Gate(_), PlanMode::Gate) => true,
                        (TrackConstraint::Gate(_), PlanMode::Waypoint) => false,
                    },
                    None => true,
                });
                waypoints.push(result.junction_waypoints[seg]);
            } else {
                junction_constraint.push(None);
                movable.push(true);
                let t = traj.starts[seg] + traj.durations[seg] * (piece + 1) as f64 / mp as f64;
                waypoints.push(traj.position(t));
            }
        }
    }

    let layout = PlanLayout {
        junction_constraint,
        movable,
        init: boundary_from_state(&track.start, params),
        term: boundary_from_state(&track.end, params),
    };
    let refine_options = TogtOptions {
        samples_per_piece: (options.samples_per_piece / 2).max(10),
        ..options.clone()
    };
    let refined =
        optimize_layout(&layout, track, params, &refine_options, &durations, &waypoints)?;

    if std::env::var("RACELINE_PLAN_DEBUG").is_ok() {
        eprintln!(
            "[plan] refine: duration {:.4} -> {:.4}, converged {} -> {}, viol {:.2e}",
            result.duration(),
            refined.duration(),
            result.converged,
            refined.converged,
            refined.feasibility.max_violation()
        );
    }
    // duration must not regress past the warm start
    if refined.duration() > result.duration() + 1e-6
        || (!refined.converged && result.converged)
    {
        return Ok(result.clone());
    }
    Ok(refined)
}

/// Stage-two output sampled into a discrete trajectory: per-segment node
/// counts `N_i = round(T_i / dt_bar)` (at least one), states and inputs via
/// the flatness map, and the junction traversal nodes recorded for pinning.
pub fn sample_discrete(
    result: &TogtResult,
    params: &QuadParams,
    dt_bar: f64,
) -> Result<DiscreteTrajectory> {
    if !(dt_bar > 0.0) {
        return Err(Error::InvalidStep("sampling step must be positive".into()));
    }
    let traj = &result.trajectory;
    let n_seg = traj.num_segments();
    let mut segment_counts = Vec::with_capacity(n_seg);
    let mut segment_dts = Vec::with_capacity(n_seg);
    for seg in 0..n_seg {
        let n = (traj.durations[seg] / dt_bar).round().max(1.0) as usize;
        segment_counts.push(n);
        segment_dts.push(traj.durations[seg] / n as f64);
    }

    let yaw = YawRef::build(traj);
    let mut nodes = Vec::new();
    let mut gate_nodes = Vec::new();
    let mut gate_targets = Vec::new();
    let mut node_index = 0usize;
    let mut t_accum = 0.0;
    for seg in 0..n_seg {
        let n = segment_counts[seg];
        let dt = segment_dts[seg];
        for k in 0..n {
            let t = t_accum + k as f64 * dt;
            let sample = traj.flat_sample(t);
            let (state, input) = flatness_map_with_yaw(&sample, t, &yaw, params)?;
            nodes.push(TrajectoryNode { t, state, input });
            node_index += 1;
        }
        t_accum += traj.durations[seg];
        // junction at the end of this segment (if not terminal)
        if seg < n_seg - 1 {
            if let Some(ci) = result.junction_constraint[seg] {
                let _ = ci;
                gate_nodes.push(node_index);
                gate_targets.push(result.junction_waypoints[seg]);
            }
        }
    }
    // terminal node
    let t_end = traj.total_duration();
    let sample = traj.flat_sample(t_end);
    let (state, input) = flatness_map_with_yaw(&sample, t_end, &yaw, params)?;
    nodes.push(TrajectoryNode { t: t_end, state, input });

    // q and -q encode the same rotation but the rotation-matrix conversion
    // picks an arbitrary sign; align consecutive nodes onto one hemisphere so
    // that component-wise quaternion arithmetic along the trajectory stays
    // continuous
    for k in 1..nodes.len() {
        let prev = *nodes[k - 1].state.orientation.quaternion();
        let cur = *nodes[k].state.orientation.quaternion();
        if prev.dot(&cur) < 0.0 {
            nodes[k].state.orientation = UnitQuaternion::new_unchecked(-cur);
        }
    }

    Ok(DiscreteTrajectory {
        nodes,
        segment_counts,
        segment_dts,
        gate_nodes,
        gate_targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{dynamics, rk4_step};
    use crate::track::{parse_track, PolyhedralGate, WaypointConstraint};
    use approx::assert_relative_eq;

    fn rest_boundary(p: Vector3<f64>) -> FlatBoundary {
        [p, Vector3::zeros(), Vector3::zeros(), Vector3::zeros()]
    }

    #[test]
    fn single_segment_symmetric_midpoint() {
        let a = Vector3::new(0.0, 0.0, 1.0);
        let b = Vector3::new(2.0, 0.0, 1.0);
        let traj =
            solve_coefficients(&[], &[2.0], &rest_boundary(a), &rest_boundary(b)).unwrap();
        assert_relative_eq!(traj.position(1.0), (a + b) / 2.0, epsilon = 1e-9);
        assert_relative_eq!(traj.position(0.0), a, epsilon = 1e-10);
        assert_relative_eq!(traj.position(2.0), b, epsilon = 1e-10);
    }

    #[test]
    fn gluing_property_collinear_midpoint() {
        // A midpoint waypoint with equal times reproduces the one-segment
        // solution on a straight rest-to-rest line.
        let a = Vector3::new(0.0, 0.0, 1.0);
        let b = Vector3::new(4.0, 0.0, 1.0);
        let one = solve_coefficients(&[], &[2.0], &rest_boundary(a), &rest_boundary(b)).unwrap();
        let two = solve_coefficients(
            &[(a + b) / 2.0],
            &[1.0, 1.0],
            &rest_boundary(a),
            &rest_boundary(b),
        )
        .unwrap();
        for k in 0..=20 {
            let t = 2.0 * k as f64 / 20.0;
            assert_relative_eq!(one.position(t), two.position(t), epsilon = 1e-8);
        }
    }

    #[test]
    fn spline_satisfies_kkt_of_min_snap_qp() {
        // Independent optimality check: assemble the snap Gram matrix and the
        // constraint rows in unnormalized coefficients and verify stationarity
        // (H c lies in the row space of the constraints) and feasibility.
        let waypoints = [Vector3::new(1.0, 0.5, 1.2), Vector3::new(2.5, -0.5, 0.8)];
        let durations = [0.9, 1.4, 1.1];
        let init = rest_boundary(Vector3::new(0.0, 0.0, 1.0));
        let term = rest_boundary(Vector3::new(3.0, 0.0, 1.0));
        let traj = solve_coefficients(&waypoints, &durations, &init, &term).unwrap();

        let n = durations.len();
        // unnormalized coefficients c_m = chat_m / T^m
        let unnorm = |seg: usize, axis: usize| -> [f64; NCOEF] {
            std::array::from_fn(|m| traj.coeffs[seg][axis][m] / durations[seg].powi(m as i32))
        };

        // Gram matrix of the snap inner product per segment
        let mut h = DMatrix::<f64>::zeros(NCOEF * n, NCOEF * n);
        for seg in 0..n {
            let t = durations[seg];
            for m in SMOOTHNESS..NCOEF {
                for k in SMOOTHNESS..NCOEF {
                    let pow = (m + k - 2 * SMOOTHNESS + 1) as i32;
                    h[(NCOEF * seg + m, NCOEF * seg + k)] = falling(m, SMOOTHNESS)
                        * falling(k, SMOOTHNESS)
                        * t.powi(pow)
                        / pow as f64;
                }
            }
        }

        // equality constraints in unnormalized coefficients
        let basis_row = |seg: usize, tau: f64, k: usize| -> DVector<f64> {
            let mut row = DVector::zeros(NCOEF * n);
            for m in k..NCOEF {
                row[NCOEF * seg + m] = falling(m, k) * tau.powi((m - k) as i32);
            }
            row
        };
        let mut rows: Vec<DVector<f64>> = Vec::new();
        for k in 0..SMOOTHNESS {
            rows.push(basis_row(0, 0.0, k));
            rows.push(basis_row(n - 1, durations[n - 1], k));
        }
        for j in 0..n - 1 {
            rows.push(basis_row(j, durations[j], 0));
            rows.push(basis_row(j + 1, 0.0, 0));
            for k in 1..SMOOTHNESS {
                rows.push(basis_row(j, durations[j], k) - basis_row(j + 1, 0.0, k));
            }
        }
        let m_rows = rows.len();
        let mut a = DMatrix::<f64>::zeros(m_rows, NCOEF * n);
        for (r, row) in rows.iter().enumerate() {
            a.set_row(r, &row.transpose());
        }

        for axis in 0..3 {
            let mut c = DVector::<f64>::zeros(NCOEF * n);
            for seg in 0..n {
                let u = unnorm(seg, axis);
                for m in 0..NCOEF {
                    c[NCOEF * seg + m] = u[m];
                }
            }
            // stationarity: H c = A^T lambda must be solvable
            let hc = &h * &c;
            let at = a.transpose();
            let lambda = at.clone().svd(true, true).solve(&hc, 1e-12).unwrap();
            let residual = (&at * lambda - &hc).norm();
            let scale = hc.norm().max(1.0);
            assert!(residual / scale < 1e-8, "KKT residual {}", residual / scale);
        }
    }

    #[test]
    fn degenerate_timing_is_rejected() {
        let init = rest_boundary(Vector3::zeros());
        let term = rest_boundary(Vector3::new(1.0, 0.0, 0.0));
        assert!(matches!(
            solve_coefficients(&[], &[0.0], &init, &term),
            Err(Error::DegenerateTiming(_))
        ));
        assert!(matches!(
            solve_coefficients(&[Vector3::zeros()], &[1.0], &init, &term),
            Err(Error::DegenerateTiming(_))
        ));
    }

    #[test]
    fn junctions_are_smooth() {
        let waypoints = [Vector3::new(1.0, 1.0, 1.5), Vector3::new(2.0, -1.0, 1.0)];
        let traj = solve_coefficients(
            &waypoints,
            &[1.2, 0.8, 1.5],
            &rest_boundary(Vector3::zeros()),
            &rest_boundary(Vector3::new(3.0, 0.0, 1.2)),
        )
        .unwrap();
        let mismatch = traj.junction_mismatch(SMOOTHNESS - 1);
        for (k, m) in mismatch.iter().enumerate() {
            assert!(*m < 1e-8, "order {k} mismatch {m}");
        }
    }

    #[test]
    fn flatness_hover_state() {
        let params = QuadParams::default();
        let sample = FlatSample { derivs: [Vector3::new(1.0, 2.0, 3.0); 1].into_iter()
            .chain([Vector3::zeros(); 5])
            .collect::<Vec<_>>()
            .try_into()
            .unwrap() };
        let (state, input) = flatness_map(&sample, 0.0, &params).unwrap();
        assert_relative_eq!(state.position, Vector3::new(1.0, 2.0, 3.0));
        assert!(state.orientation.angle_to(&UnitQuaternion::identity()) < 1e-9);
        let hover = params.mass * 9.81 / 4.0;
        for i in 0..4 {
            assert_relative_eq!(state.rotor_thrusts[i], hover, epsilon = 1e-6);
            assert!(input.rates[i].abs() < 1e-6);
        }
        assert!(state.body_rates.norm() < 1e-9);
    }

    #[test]
    fn flatness_constant_horizontal_acceleration() {
        let params = QuadParams::default();
        let ax = 3.0;
        let sample = FlatSample {
            derivs: [
                Vector3::zeros(),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(ax, 0.0, 0.0),
                Vector3::zeros(),
                Vector3::zeros(),
                Vector3::zeros(),
            ],
        };
        let (state, _) = flatness_map(&sample, 0.0, &params).unwrap();
        // pitch by atan(ax/g), thrust m*sqrt(ax^2+g^2)
        let expect_pitch = (ax / 9.81).atan();
        let (_roll, pitch, _yaw) = state.orientation.euler_angles();
        assert_relative_eq!(pitch, expect_pitch, epsilon = 1e-9);
        let total: f64 = state.rotor_thrusts.iter().sum();
        assert_relative_eq!(total, params.mass * (ax * ax + 9.81f64 * 9.81).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn flatness_free_fall_is_singular() {
        let params = QuadParams::default();
        let sample = FlatSample {
            derivs: [
                Vector3::zeros(),
                Vector3::zeros(),
                params.gravity, // accelerating with gravity: zero thrust
                Vector3::zeros(),
                Vector3::zeros(),
                Vector3::zeros(),
            ],
        };
        assert!(matches!(
            flatness_map(&sample, 0.0, &params),
            Err(Error::FlatnessSingularity(_))
        ));
    }

    #[test]
    fn flatness_consistent_with_dynamics() {
        // Map a smooth trajectory sample, then check the dynamics of the
        // mapped state reproduce the flat derivatives.
        let params = QuadParams::default();
        let traj = solve_coefficients(
            &[Vector3::new(1.5, 1.0, 1.5)],
            &[1.5, 1.5],
            &rest_boundary(Vector3::new(0.0, 0.0, 1.0)),
            &rest_boundary(Vector3::new(3.0, 0.0, 1.0)),
        )
        .unwrap();
        for &t in &[0.5, 1.0, 1.5, 2.0, 2.5] {
            let sample = traj.flat_sample(t);
            let (state, input) = flatness_map(&sample, 0.0, &params).unwrap();
            let dx = dynamics(&state, &input, &params).unwrap();
            // position derivative = velocity
            for a in 0..3 {
                assert_relative_eq!(dx[a], sample.velocity()[a], epsilon = 1e-6);
            }
            // velocity derivative = acceleration
            for a in 0..3 {
                assert_relative_eq!(dx[7 + a], sample.acceleration()[a], epsilon = 1e-6);
            }
        }
    }

    fn desk_track() -> Track {
        let params = QuadParams::default();
        parse_track(
            r#"{
                "order": ["g1", "g2"],
                "gates": [
                    {"name": "g1", "square": {"center": [2.0, 0.5, 1.5], "normal": [1, 0, 0], "side": 1.45}},
                    {"name": "g2", "square": {"center": [4.0, 2.0, 1.5], "normal": [0, 1, 0], "side": 1.45}}
                ],
                "start": {"position": [0.0, 0.0, 1.5]},
                "end": {"position": [4.0, 4.0, 1.5]},
                "collision_radius": 0.2
            }"#,
            &params,
        )
        .unwrap()
    }

    #[test]
    fn togt_produces_feasible_plan_through_gates() {
        let params = QuadParams::default();
        let track = desk_track();
        let options = TogtOptions { max_iters: 120, ..Default::default() };
        let result = optimize_togt(&track, &params, &options).unwrap();
        assert!(result.converged, "feasibility rounds exhausted: {:?}", result.feasibility);
        assert!(result.feasibility.max_violation() <= 1e-3);
        // traversal points inside their gates
        for (j, c) in result.junction_constraint.iter().enumerate() {
            if let Some(ci) = c {
                let (_, violation) =
                    track.constraints[*ci].contains(&result.junction_waypoints[j]);
                assert!(violation <= 1e-6, "junction {j} violation {violation}");
            }
        }
        // sanity: duration in a plausible range for a ~7 m desk track
        assert!(result.duration() > 1.0 && result.duration() < 20.0, "{}", result.duration());
    }

    #[test]
    fn waypoint_tolerance_shortens_duration() {
        let params = QuadParams::default();
        let mk_track = |tol: f64| Track {
            constraints: vec![TrackConstraint::Waypoint(WaypointConstraint {
                center: Vector3::new(2.0, 2.0, 1.5),
                tolerance: tol,
            })],
            names: vec!["w".into()],
            start: QuadState::hover(Vector3::new(0.0, 0.0, 1.5), &params),
            end: QuadState::hover(Vector3::new(4.0, 0.0, 1.5), &params),
            landmarks: vec![],
            constraint_landmarks: vec![None],
            fov_target_landmark: None,
            collision_radius: 0.2,
        };
        let options = TogtOptions { mode: PlanMode::Waypoint, max_iters: 120, ..Default::default() };
        let tight = optimize_togt(&mk_track(0.0), &params, &options).unwrap();
        let loose = optimize_togt(&mk_track(1.0), &params, &options).unwrap();
        assert!(
            loose.duration() < tight.duration() - 1e-3,
            "loose {} vs tight {}",
            loose.duration(),
            tight.duration()
        );
        // the loose waypoint stays within its tolerance sphere
        let wp = loose.junction_waypoints[0];
        assert!((wp - Vector3::new(2.0, 2.0, 1.5)).norm() <= 1.0 + 1e-6);
    }

    #[test]
    fn aggressive_timing_increases_violations() {
        let params = QuadParams::default();
        let track = desk_track();
        let options = TogtOptions { max_iters: 60, ..Default::default() };
        let result = optimize_togt(&track, &params, &options).unwrap();
        let base = check_feasibility(&result.trajectory, &params, 50);
        let squeezed = PiecewisePolyTrajectory::new(
            result.trajectory.durations.iter().map(|d| d * 0.5).collect(),
            result.trajectory.coeffs.clone(),
        );
        let tighter = check_feasibility(&squeezed, &params, 50);
        assert!(tighter.max_violation() > base.max_violation());
        assert!(tighter.max_violation() > 0.0);
    }

    #[test]
    fn feasibility_report_matches_denser_sampling() {
        let params = QuadParams::default();
        let traj = solve_coefficients(
            &[Vector3::new(2.0, 1.0, 1.5)],
            &[0.8, 0.8],
            &rest_boundary(Vector3::new(0.0, 0.0, 1.5)),
            &rest_boundary(Vector3::new(4.0, 0.0, 1.5)),
        )
        .unwrap();
        let coarse = check_feasibility(&traj, &params, 50);
        // 491 = 10*(50-1)+1 nests the coarse grid inside the fine one
        let fine = check_feasibility(&traj, &params, 491);
        // denser sampling can only reveal more violation, and not much more
        assert!(fine.max_violation() + 1e-9 >= coarse.max_violation());
        assert!(fine.max_violation() - coarse.max_violation() < 0.2 * fine.max_violation().max(0.1));
    }

    #[test]
    fn relaxed_thrust_never_slower() {
        let params = QuadParams::default();
        let mut fast_params = params.clone();
        fast_params.thrust_max *= 2.0;
        let track = desk_track();
        let options = TogtOptions { max_iters: 120, ..Default::default() };
        let base = optimize_togt(&track, &params, &options).unwrap();
        let relaxed = optimize_togt(&track, &fast_params, &options).unwrap();
        assert!(
            relaxed.duration() <= base.duration() + 1e-6,
            "relaxed {} vs base {}",
            relaxed.duration(),
            base.duration()
        );
    }

    #[test]
    fn subdivision_never_longer_and_stays_smooth() {
        let params = QuadParams::default();
        let track = desk_track();
        let options = TogtOptions { max_iters: 100, ..Default::default() };
        let stage1 = optimize_togt(&track, &params, &options).unwrap();
        let same = subdivide_and_refine(&stage1, &track, &params, 1, &options).unwrap();
        assert_relative_eq!(same.duration(), stage1.duration(), epsilon = 1e-12);
        let stage2 = subdivide_and_refine(&stage1, &track, &params, 3, &options).unwrap();
        assert!(stage2.duration() <= stage1.duration() + 1e-6);
        let mismatch = stage2.trajectory.junction_mismatch(SMOOTHNESS - 1);
        for m in mismatch {
            assert!(m < 1e-8);
        }
        // gate waypoints still inside their gates
        for (j, c) in stage2.junction_constraint.iter().enumerate() {
            if let Some(ci) = c {
                let (_, violation) =
                    track.constraints[*ci].contains(&stage2.junction_waypoints[j]);
                assert!(violation <= 1e-6);
            }
        }
    }

    #[test]
    fn sample_counts_follow_dt_bar() {
        let params = QuadParams::default();
        let traj = solve_coefficients(
            &[],
            &[1.0],
            &rest_boundary(Vector3::new(0.0, 0.0, 1.0)),
            &rest_boundary(Vector3::new(1.0, 0.0, 1.0)),
        )
        .unwrap();
        let result = TogtResult {
            trajectory: traj,
            junction_waypoints: vec![],
            junction_constraint: vec![],
            feasibility: FeasibilityReport::default(),
            converged: true,
            penalty_rounds: 1,
        };
        let discrete = sample_discrete(&result, &params, 0.002).unwrap();
        assert_eq!(discrete.segment_counts, vec![500]);
        assert_eq!(discrete.nodes.len(), 501);
        assert!(sample_discrete(&result, &params, 0.0).is_err());
    }

    #[test]
    fn hover_spline_samples_identical_states() {
        let params = QuadParams::default();
        let p = Vector3::new(0.5, -0.25, 2.0);
        let traj = solve_coefficients(&[], &[1.0], &rest_boundary(p), &rest_boundary(p)).unwrap();
        let result = TogtResult {
            trajectory: traj,
            junction_waypoints: vec![],
            junction_constraint: vec![],
            feasibility: FeasibilityReport::default(),
            converged: true,
            penalty_rounds: 1,
        };
        let discrete = sample_discrete(&result, &params, 0.05).unwrap();
        let hover = params.mass * 9.81 / 4.0;
        for node in &discrete.nodes {
            assert_relative_eq!(node.state.position, p, epsilon = 1e-9);
            assert!(node.state.velocity.norm() < 1e-9);
            for i in 0..4 {
                assert_relative_eq!(node.state.rotor_thrusts[i], hover, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn rollout_of_sampled_inputs_reproduces_states() {
        // Dynamic consistency: integrating the sampled inputs with RK4
        // reproduces the sampled states to within 5 cm over one second.
        let params = QuadParams::default();
        let traj = solve_coefficients(
            &[Vector3::new(1.0, 0.6, 1.3)],
            &[1.2, 1.2],
            &rest_boundary(Vector3::new(0.0, 0.0, 1.0)),
            &rest_boundary(Vector3::new(2.0, 0.0, 1.2)),
        )
        .unwrap();
        let result = TogtResult {
            trajectory: traj,
            junction_waypoints: vec![Vector3::new(1.0, 0.6, 1.3)],
            junction_constraint: vec![None],
            feasibility: FeasibilityReport::default(),
            converged: true,
            penalty_rounds: 1,
        };
        let discrete = sample_discrete(&result, &params, 0.002).unwrap();
        let mut state = discrete.nodes[0].state.clone();
        let mut worst: f64 = 0.0;
        let mut k = 0;
        while discrete.nodes[k].t < 1.0 {
            let dt = discrete.nodes[k + 1].t - discrete.nodes[k].t;
            state = rk4_step(&state, &discrete.nodes[k].input, dt, &params).unwrap();
            worst = worst.max((state.position - discrete.nodes[k + 1].state.position).norm());
            k += 1;
        }
        assert!(worst < 0.05, "rollout drift {worst}");
    }

    #[test]
    fn coefficients_json_round_trip() {
        let traj = solve_coefficients(
            &[Vector3::new(1.0, 0.0, 1.0)],
            &[1.0, 1.3],
            &rest_boundary(Vector3::zeros()),
            &rest_boundary(Vector3::new(2.0, 0.0, 1.0)),
        )
        .unwrap();
        let json = traj.to_json().unwrap();
        let back = PiecewisePolyTrajectory::from_json(&json).unwrap();
        for &t in &[0.0, 0.7, 1.6, 2.3] {
            assert_relative_eq!(traj.position(t), back.position(t), epsilon = 1e-12);
        }
    }

    #[test]
    fn gate_mode_no_slower_than_waypoint_mode() {
        let params = QuadParams::default();
        let track = desk_track();
        let wp = optimize_togt(
            &track,
            &params,
            &TogtOptions { mode: PlanMode::Waypoint, max_iters: 120, ..Default::default() },
        )
        .unwrap();
        let gate = optimize_togt(
            &track,
            &params,
            &TogtOptions { mode: PlanMode::Gate, max_iters: 120, ..Default::default() },
        )
        .unwrap();
        assert!(
            gate.duration() <= wp.duration() + 1e-6,
            "gate {} vs waypoint {}",
            gate.duration(),
            wp.duration()
        );
    }

    #[test]
    fn project_waypoint_respects_sets() {
        let gate = PolyhedralGate::square(
            &Vector3::new(2.0, 0.0, 1.5),
            &Vector3::x(),
            &Vector3::z(),
            1.45,
            0.3,
        )
        .unwrap();
        let c = TrackConstraint::Gate(gate);
        let p = project_waypoint(&Vector3::new(2.0, 5.0, 1.5), &c, PlanMode::Gate, 0.2);
        let (_, violation) = c.contains(&p);
        assert!(violation <= 1e-6);
        // eroded: at least collision radius inside the in-plane bounds
        assert!(p.y <= 0.725 - 0.2 + 1e-6);
    }
}
