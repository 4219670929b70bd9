//! Contouring model-predictive tracking: reference interpolation,
//! closest-point progress search, lateral/longitudinal error split, the
//! receding-horizon optimal control problem, and a closed-loop simulation
//! harness with noise and disturbance injection.
//!
//! The controller anchors its reference window at the closest point on the
//! path rather than at wall-clock time, and weights the lateral (contouring)
//! error independently of the longitudinal (progress) error. A naive
//! time-indexed variant is included as the corner-cutting baseline.

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::math::Dual;
use crate::nlp::{self, NlpProblem, SolveStatus, SolverConfig};
use crate::quad::{rk4_kernel, rk4_step, QuadParams, QuadState, RotorRateInput, INPUT_DIM, STATE_DIM};
use crate::track::Track;
use crate::trajectory::DiscreteTrajectory;
use crate::{Error, Result};

/// Reference speeds below this retain the last valid path tangent.
pub const TANGENT_MIN_SPEED: f64 = 0.1;

/// Dense time-indexed reference with interpolation (linear for vectors,
/// spherical for quaternions).
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    times: Vec<f64>,
    states: Vec<QuadState>,
    inputs: Vec<RotorRateInput>,
}

impl ReferenceTrajectory {
    pub fn from_discrete(traj: &DiscreteTrajectory) -> Result<Self> {
        if traj.nodes.is_empty() {
            return Err(Error::Parse("empty reference trajectory".into()));
        }
        for w in traj.nodes.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::Parse("reference timestamps must strictly increase".into()));
            }
        }
        Ok(Self {
            times: traj.nodes.iter().map(|n| n.t).collect(),
            states: traj
                .nodes
                .iter()
                .map(|n| {
                    let mut s = n.state.clone();
                    s.orientation = UnitQuaternion::new_normalize(*s.orientation.quaternion());
                    s
                })
                .collect(),
            inputs: traj.nodes.iter().map(|n| n.input).collect(),
        })
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn time_at(&self, idx: usize) -> f64 {
        self.times[idx.min(self.times.len() - 1)]
    }

    pub fn position_at(&self, idx: usize) -> Vector3<f64> {
        self.states[idx.min(self.states.len() - 1)].position
    }

    /// Interpolated state and input at time `t`, clamped to the span.
    pub fn sample(&self, t: f64) -> (QuadState, RotorRateInput) {
        let t = t.clamp(self.start_time(), self.end_time());
        let idx = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
        .min(self.times.len().saturating_sub(2));
        let i = idx;
        let j = (i + 1).min(self.times.len() - 1);
        if i == j {
            return (self.states[i].clone(), self.inputs[i]);
        }
        let f = ((t - self.times[i]) / (self.times[j] - self.times[i])).clamp(0.0, 1.0);
        let a = &self.states[i];
        let b = &self.states[j];
        let state = QuadState {
            position: a.position.lerp(&b.position, f),
            orientation: UnitQuaternion::new_normalize(
                *a.orientation.slerp(&b.orientation, f).quaternion(),
            ),
            velocity: a.velocity.lerp(&b.velocity, f),
            body_rates: a.body_rates.lerp(&b.body_rates, f),
            rotor_thrusts: a.rotor_thrusts * (1.0 - f) + b.rotor_thrusts * f,
        };
        let input = RotorRateInput::new(self.inputs[i].rates * (1.0 - f) + self.inputs[j].rates * f);
        (state, input)
    }
}

/// Closest-point progress search: scan forward from `prev_idx`, stop at the
/// first distance increase, never move backward. Ties keep the earlier
/// sample. Returns `(index, t0, p0)`.
pub fn closest_point(
    reference: &ReferenceTrajectory,
    p: &Vector3<f64>,
    prev_idx: usize,
) -> (usize, f64, Vector3<f64>) {
    let n = reference.len();
    let mut best = prev_idx.min(n - 1);
    let mut best_d = (reference.position_at(best) - p).norm();
    let mut k = best + 1;
    while k < n {
        let d = (reference.position_at(k) - p).norm();
        if d < best_d {
            best = k;
            best_d = d;
        } else {
            break;
        }
        k += 1;
    }
    (best, reference.time_at(best), reference.position_at(best))
}

/// Reference states `x^d(t0 + k dt)` for `k = 0..=n`, clamped at the end.
pub fn reference_window(
    reference: &ReferenceTrajectory,
    t0: f64,
    n: usize,
    dt: f64,
) -> Vec<(QuadState, RotorRateInput)> {
    (0..=n).map(|k| reference.sample(t0 + k as f64 * dt)).collect()
}

/// Split a position error into progress (along the tangent) and contouring
/// (orthogonal) components. When the reference speed is too low to define a
/// tangent, `last_tangent` is retained.
pub fn error_split(
    p: &Vector3<f64>,
    reference_state: &QuadState,
    last_tangent: &mut Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let v = reference_state.velocity;
    if v.norm() >= TANGENT_MIN_SPEED {
        *last_tangent = v.normalize();
    }
    let t = *last_tangent;
    let e = p - reference_state.position;
    let e_l = t * e.dot(&t);
    (e_l, e - e_l)
}

/// Per-dimension tracking weights and horizon of the contouring OCP.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcWeights {
    pub q_progress: Vector3<f64>,
    pub q_contour: Vector3<f64>,
    pub q_attitude: Vector3<f64>,
    pub q_velocity: Vector3<f64>,
    pub q_rates: Vector3<f64>,
    pub q_thrust: Vector4<f64>,
    pub q_input: Vector4<f64>,
    pub n_mpc: usize,
    pub dt_mpc: f64,
}

impl Default for MpcWeights {
    fn default() -> Self {
        Self {
            q_progress: Vector3::repeat(20.0),
            q_contour: Vector3::repeat(200.0),
            q_attitude: Vector3::repeat(15.0),
            q_velocity: Vector3::repeat(4.0),
            q_rates: Vector3::repeat(0.2),
            q_thrust: Vector4::repeat(0.02),
            q_input: Vector4::repeat(1e-8),
            n_mpc: 20,
            dt_mpc: 0.05,
        }
    }
}

/// Small-angle attitude error `2 vec(q_ref^-1 * q)`, flipped to the
/// hemisphere nearest identity.
pub fn quaternion_error(q: &UnitQuaternion<f64>, q_ref: &UnitQuaternion<f64>) -> Vector3<f64> {
    let d = q_ref.inverse() * q;
    let c = d.quaternion();
    let sign = if c.w >= 0.0 { 2.0 } else { -2.0 };
    Vector3::new(c.i, c.j, c.k) * sign
}

/// Receding-horizon tracking problem over a fixed reference window.
struct TrackingOcp<'a> {
    params: &'a QuadParams,
    weights: &'a MpcWeights,
    x0: [f64; STATE_DIM],
    /// reference states, tangents, and inputs at nodes 1..=N
    refs: Vec<([f64; STATE_DIM], Vector3<f64>)>,
}

impl TrackingOcp<'_> {
    fn n(&self) -> usize {
        self.refs.len()
    }

    fn off_u(&self) -> usize {
        STATE_DIM * self.n()
    }

    fn state<'z>(&self, z: &'z [f64], k: usize) -> &'z [f64] {
        // k = 1..=N maps to slot k-1
        &z[STATE_DIM * (k - 1)..STATE_DIM * k]
    }

    fn input<'z>(&self, z: &'z [f64], k: usize) -> &'z [f64] {
        let o = self.off_u() + INPUT_DIM * k;
        &z[o..o + INPUT_DIM]
    }

    fn tracking_cost_kernel<T: crate::math::Scalar>(
        &self,
        x: &[T; STATE_DIM],
        reference: &([f64; STATE_DIM], Vector3<f64>),
        w: &MpcWeights,
    ) -> T {
        let (xr, tangent) = reference;
        let mut cost = T::from_f64(0.0);
        // progress/contour split of the position error
        let e = [
            x[0] - T::from_f64(xr[0]),
            x[1] - T::from_f64(xr[1]),
            x[2] - T::from_f64(xr[2]),
        ];
        let t = [
            T::from_f64(tangent.x),
            T::from_f64(tangent.y),
            T::from_f64(tangent.z),
        ];
        let along = e[0] * t[0] + e[1] * t[1] + e[2] * t[2];
        for i in 0..3 {
            let e_l = along * t[i];
            let e_c = e[i] - e_l;
            cost += T::from_f64(w.q_progress[i]) * e_l * e_l;
            cost += T::from_f64(w.q_contour[i]) * e_c * e_c;
        }
        // attitude error 2 vec(q_ref^-1 q), hemisphere-corrected on values
        let q = crate::math::Quat([x[3], x[4], x[5], x[6]]);
        let qr = crate::math::Quat([
            T::from_f64(-xr[3]),
            T::from_f64(-xr[4]),
            T::from_f64(-xr[5]),
            T::from_f64(xr[6]),
        ]);
        let d = qr.mul_quat(&q);
        let sign = if d.0[3].value() >= 0.0 { 2.0 } else { -2.0 };
        for i in 0..3 {
            let qe = d.0[i] * T::from_f64(sign);
            cost += T::from_f64(w.q_attitude[i]) * qe * qe;
        }
        for i in 0..3 {
            let ev = x[7 + i] - T::from_f64(xr[7 + i]);
            cost += T::from_f64(w.q_velocity[i]) * ev * ev;
            let ew = x[10 + i] - T::from_f64(xr[10 + i]);
            cost += T::from_f64(w.q_rates[i]) * ew * ew;
        }
        for i in 0..4 {
            let ef = x[13 + i] - T::from_f64(xr[13 + i]);
            cost += T::from_f64(w.q_thrust[i]) * ef * ef;
        }
        cost
    }
}

impl NlpProblem for TrackingOcp<'_> {
    fn num_vars(&self) -> usize {
        (STATE_DIM + INPUT_DIM) * self.n()
    }

    fn num_eq(&self) -> usize {
        STATE_DIM * self.n()
    }

    fn num_ineq(&self) -> usize {
        0
    }

    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        lower.fill(f64::NEG_INFINITY);
        upper.fill(f64::INFINITY);
        for k in 0..self.n() {
            let o = STATE_DIM * k;
            for i in 3..7 {
                lower[o + i] = -1.5;
                upper[o + i] = 1.5;
            }
            for a in 0..3 {
                lower[o + 10 + a] = -self.params.omega_max[a];
                upper[o + 10 + a] = self.params.omega_max[a];
            }
            for i in 13..17 {
                lower[o + i] = self.params.thrust_min;
                upper[o + i] = self.params.thrust_max;
            }
        }
        let o_u = self.off_u();
        for i in 0..INPUT_DIM * self.n() {
            lower[o_u + i] = self.params.thrust_rate_min;
            upper[o_u + i] = self.params.thrust_rate_max;
        }
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let mut total = 0.0;
        for k in 1..=self.n() {
            let mut x = [0.0; STATE_DIM];
            x.copy_from_slice(self.state(z, k));
            total += self.tracking_cost_kernel(&x, &self.refs[k - 1], self.weights);
        }
        for k in 0..self.n() {
            let u = self.input(z, k);
            for i in 0..4 {
                total += self.weights.q_input[i] * u[i] * u[i];
            }
        }
        total
    }

    fn constraints(&self, z: &[f64], eq: &mut [f64], _ineq: &mut [f64]) {
        let n = self.n();
        let dt = self.weights.dt_mpc;
        for k in 0..n {
            let mut x = [0.0; STATE_DIM];
            if k == 0 {
                x = self.x0;
            } else {
                x.copy_from_slice(self.state(z, k));
            }
            let mut u = [0.0; INPUT_DIM];
            u.copy_from_slice(self.input(z, k));
            let pred = rk4_kernel(&x, &u, dt, self.params);
            let next = self.state(z, k + 1);
            for i in 0..STATE_DIM {
                eq[STATE_DIM * k + i] = next[i] - pred[i];
            }
        }
    }

    fn gradient(&self, z: &[f64], w_obj: f64, a: &[f64], _b: &[f64], out: &mut [f64]) {
        let n = self.n();
        let dt = self.weights.dt_mpc;
        if w_obj != 0.0 {
            type D = Dual<STATE_DIM>;
            for k in 1..=n {
                let xs = self.state(z, k);
                let x: [D; STATE_DIM] = std::array::from_fn(|i| D::var(xs[i], i));
                let c = self.tracking_cost_kernel(&x, &self.refs[k - 1], self.weights);
                let o = STATE_DIM * (k - 1);
                for i in 0..STATE_DIM {
                    out[o + i] += w_obj * c.eps[i];
                }
            }
            let o_u = self.off_u();
            for k in 0..n {
                let u = self.input(z, k);
                for i in 0..4 {
                    out[o_u + INPUT_DIM * k + i] += w_obj * 2.0 * self.weights.q_input[i] * u[i];
                }
            }
        }
        // defect rows
        type DS = Dual<21>;
        for k in 0..n {
            let a_k = &a[STATE_DIM * k..STATE_DIM * (k + 1)];
            if a_k.iter().all(|v| *v == 0.0) {
                continue;
            }
            let xs: [f64; STATE_DIM] = if k == 0 {
                self.x0
            } else {
                let mut x = [0.0; STATE_DIM];
                x.copy_from_slice(self.state(z, k));
                x
            };
            let us = self.input(z, k);
            let x: [DS; STATE_DIM] = std::array::from_fn(|i| DS::var(xs[i], i));
            let u: [DS; INPUT_DIM] = std::array::from_fn(|i| DS::var(us[i], STATE_DIM + i));
            let pred = rk4_kernel(&x, &u, DS::constant(dt), self.params);
            let o_u = self.off_u() + INPUT_DIM * k;
            for i in 0..STATE_DIM {
                let ai = a_k[i];
                if ai == 0.0 {
                    continue;
                }
                out[STATE_DIM * k + i] += ai; // d next / d x_{k+1}
                if k > 0 {
                    let o_x = STATE_DIM * (k - 1);
                    for j in 0..STATE_DIM {
                        out[o_x + j] -= ai * pred[i].eps[j];
                    }
                }
                for j in 0..INPUT_DIM {
                    out[o_u + j] -= ai * pred[i].eps[STATE_DIM + j];
                }
            }
        }
    }
}

/// Controller configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub weights: MpcWeights,
    /// Inner solver settings per step.
    pub max_outer: usize,
    pub max_inner: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    /// Progress anchored at the closest point on the path.
    Contouring,
    /// Reference window indexed by wall-clock time (corner-cutting baseline).
    Naive,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Contouring,
            weights: MpcWeights::default(),
            max_outer: 5,
            max_inner: 120,
        }
    }
}

/// One receding-horizon solve. Returns the first input, the predicted state
/// sequence, and the solver status. On solver failure the caller should hold
/// the previous input.
pub fn solve_mpctc(
    current: &QuadState,
    window: &[(QuadState, RotorRateInput)],
    tangents: &[Vector3<f64>],
    weights: &MpcWeights,
    params: &QuadParams,
    warm: Option<&[f64]>,
    config: &ControllerConfig,
) -> (RotorRateInput, Vec<f64>, SolveStatus) {
    let n = window.len() - 1;
    let refs: Vec<([f64; STATE_DIM], Vector3<f64>)> = (1..=n)
        .map(|k| (window[k].0.to_array(), tangents[k]))
        .collect();
    let ocp = TrackingOcp { params, weights, x0: current.to_array(), refs };

    // warm start: previous shifted solution or the reference window itself
    let mut z0 = vec![0.0; ocp.num_vars()];
    match warm {
        Some(w) if w.len() == z0.len() => z0.copy_from_slice(w),
        _ => {
            for k in 1..=n {
                z0[STATE_DIM * (k - 1)..STATE_DIM * k].copy_from_slice(&window[k].0.to_array());
            }
            for k in 0..n {
                let o = ocp.off_u() + INPUT_DIM * k;
                z0[o..o + INPUT_DIM].copy_from_slice(&window[k].1.to_array());
            }
        }
    }

    let mut scale = vec![1.0; ocp.num_vars()];
    for k in 0..n {
        let o = STATE_DIM * k;
        for i in 0..3 {
            scale[o + 7 + i] = 2.0;
            scale[o + 10 + i] = 2.0;
        }
        for i in 0..4 {
            scale[o + 13 + i] = 0.5 * (params.thrust_max - params.thrust_min).max(1.0);
            scale[ocp.off_u() + INPUT_DIM * k + i] =
                0.25 * (params.thrust_rate_max - params.thrust_rate_min).max(1.0);
        }
    }
    let scaled = nlp::Scaled::new(&ocp, scale);
    let y0 = scaled.from_inner(&z0);
    let solver = SolverConfig {
        tol: 1e-3,
        feas_tol: 1e-5,
        max_outer: config.max_outer,
        max_inner: config.max_inner,
        max_total_inner: config.max_outer * config.max_inner,
        penalty_init: 1e3,
        lbfgs_memory: 20,
        ..Default::default()
    };
    let (y, report) = nlp::solve(&scaled, &y0, &solver);
    let z = scaled.to_inner(&y);

    let status = report.status;
    let usable = matches!(
        status,
        SolveStatus::Converged | SolveStatus::MaxIterations | SolveStatus::Stalled
    ) && z.iter().all(|v| v.is_finite())
        && report.max_eq_violation < 0.5;
    if !usable {
        return (RotorRateInput::zeros(), z, SolveStatus::NumericalFailure);
    }
    let mut u0 = [0.0; INPUT_DIM];
    u0.copy_from_slice(&z[ocp.off_u()..ocp.off_u() + INPUT_DIM]);
    (RotorRateInput::from_array(&u0), z, status)
}

/// State-estimate noise levels (standard deviations).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub pos_std: f64,
    pub vel_std: f64,
    /// Small-angle attitude noise [rad].
    pub att_std: f64,
    pub rate_std: f64,
}

/// Plant-side disturbances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DisturbanceConfig {
    /// Constant acceleration bias [m/s^2] (wind/model error analogue).
    pub accel_bias: Vector3<f64>,
    /// White acceleration noise, resampled each control step [m/s^2].
    pub accel_noise_std: f64,
    /// Multiplicative rotor thrust factor applied by the plant.
    pub thrust_gain: f64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self { accel_bias: Vector3::zeros(), accel_noise_std: 0.0, thrust_gain: 1.0 }
    }
}

/// Full closed-loop scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub plant_dt: f64,
    pub controller: ControllerConfig,
    pub noise: NoiseConfig,
    pub disturbance: DisturbanceConfig,
    /// Initial position offset from the reference start.
    pub initial_offset: Vector3<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            plant_dt: 1e-3,
            controller: ControllerConfig::default(),
            noise: NoiseConfig::default(),
            disturbance: DisturbanceConfig::default(),
            initial_offset: Vector3::zeros(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One control-step record.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub t: f64,
    pub state: QuadState,
    pub reference_time: f64,
    pub reference_position: Vector3<f64>,
    pub progress_error: f64,
    pub contour_error: f64,
    pub path_distance: f64,
    pub input: RotorRateInput,
    pub solver_status: SolveStatus,
}

/// Closed-loop log: control-rate rows plus the dense plant positions used
/// for gate checks.
#[derive(Debug, Clone, Default)]
pub struct TrackingLog {
    pub rows: Vec<LogRow>,
    pub dense_positions: Vec<Vector3<f64>>,
}

impl TrackingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema: raceline-tracking-v1\n");
        out.push_str(
            "t,px,py,pz,ref_t,ref_x,ref_y,ref_z,e_progress,e_contour,path_dist,u1,u2,u3,u4,status\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4},{}\n",
                r.t,
                r.state.position.x,
                r.state.position.y,
                r.state.position.z,
                r.reference_time,
                r.reference_position.x,
                r.reference_position.y,
                r.reference_position.z,
                r.progress_error,
                r.contour_error,
                r.path_distance,
                r.input.rates.x,
                r.input.rates.y,
                r.input.rates.z,
                r.input.rates.w,
                match r.solver_status {
                    SolveStatus::Converged => 0,
                    SolveStatus::MaxIterations => 1,
                    SolveStatus::Stalled => 2,
                    SolveStatus::Infeasible => 3,
                    SolveStatus::NumericalFailure => 4,
                },
            ));
        }
        out
    }
}

/// Closed-loop outcome summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingSummary {
    /// RMS position error against the time-indexed reference [m].
    pub rmse: f64,
    /// Maximum position error against the time-indexed reference [m].
    pub max_error: f64,
    /// Maximum distance to the reference path [m].
    pub max_path_distance: f64,
    /// All ordered track constraints traversed (when a track was supplied).
    pub success: bool,
    pub constraints_missed: Vec<String>,
    pub solver_failures: usize,
}

/// Distance from a point to the polyline of reference positions near a
/// progress index.
fn path_distance(reference: &ReferenceTrajectory, p: &Vector3<f64>, near_idx: usize) -> f64 {
    let lo = near_idx.saturating_sub(60);
    let hi = (near_idx + 60).min(reference.len() - 1);
    let mut best = f64::INFINITY;
    for k in lo..hi {
        let a = reference.position_at(k);
        let b = reference.position_at(k + 1);
        let ab = b - a;
        let denom = ab.norm_squared();
        let t = if denom > 1e-12 { ((p - a).dot(&ab) / denom).clamp(0.0, 1.0) } else { 0.0 };
        best = best.min((a + ab * t - p).norm());
    }
    best
}

/// Run the closed-loop simulation: RK4 plant at a fine step, controller at
/// `dt_mpc`, optional estimate noise and plant disturbances. Deterministic
/// for a fixed seed.
pub fn simulate_closed_loop(
    reference: &ReferenceTrajectory,
    params: &QuadParams,
    scenario: &ScenarioConfig,
    track: Option<&Track>,
) -> Result<(TrackingLog, TrackingSummary)> {
    let mut log = TrackingLog::default();
    let duration = reference.end_time() - reference.start_time();
    if duration <= 0.0 || reference.len() < 2 {
        return Ok((
            log,
            TrackingSummary {
                rmse: 0.0,
                max_error: 0.0,
                max_path_distance: 0.0,
                success: true,
                constraints_missed: vec![],
                solver_failures: 0,
            },
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    let weights = &scenario.controller.weights;
    let dt_mpc = weights.dt_mpc;
    let n_mpc = weights.n_mpc;

    let (start_state, _) = reference.sample(reference.start_time());
    let mut truth = start_state.clone();
    truth.position += scenario.initial_offset;

    let mut t_sim = reference.start_time();
    let mut progress_idx = 0usize;
    let mut last_tangent = Vector3::x();
    let mut warm: Option<Vec<f64>> = None;
    let mut last_input = RotorRateInput::zeros();
    let mut sq_sum = 0.0;
    let mut max_error: f64 = 0.0;
    let mut max_path: f64 = 0.0;
    let mut solver_failures = 0usize;

    let steps = ((duration / dt_mpc).ceil() as usize).max(1);
    for _ in 0..steps {
        // state estimate
        let mut estimate = truth.clone();
        if scenario.noise.pos_std > 0.0 {
            estimate.position +=
                Vector3::from_fn(|_, _| normal.sample(&mut rng) * scenario.noise.pos_std);
        }
        if scenario.noise.vel_std > 0.0 {
            estimate.velocity +=
                Vector3::from_fn(|_, _| normal.sample(&mut rng) * scenario.noise.vel_std);
        }
        if scenario.noise.att_std > 0.0 {
            let axis =
                Vector3::from_fn(|_, _| normal.sample(&mut rng) * scenario.noise.att_std);
            estimate.orientation = UnitQuaternion::from_scaled_axis(axis) * estimate.orientation;
        }
        if scenario.noise.rate_std > 0.0 {
            estimate.body_rates +=
                Vector3::from_fn(|_, _| normal.sample(&mut rng) * scenario.noise.rate_std);
        }

        // progress anchor
        let t0 = match scenario.controller.kind {
            ControllerKind::Contouring => {
                let (idx, t0, _) = closest_point(reference, &estimate.position, progress_idx);
                progress_idx = idx;
                t0
            }
            ControllerKind::Naive => {
                // track progress index anyway for logging comparability
                let (idx, _, _) = closest_point(reference, &estimate.position, progress_idx);
                progress_idx = idx;
                t_sim.min(reference.end_time())
            }
        };

        let window = reference_window(reference, t0, n_mpc, dt_mpc);
        let mut tangents = Vec::with_capacity(window.len());
        let mut tangent_state = last_tangent;
        for (state, _) in &window {
            let v = state.velocity;
            if v.norm() >= TANGENT_MIN_SPEED {
                tangent_state = v.normalize();
            }
            tangents.push(tangent_state);
        }

        let (u0, z, status) = solve_mpctc(
            &estimate,
            &window,
            &tangents,
            weights,
            params,
            warm.as_deref(),
            &scenario.controller,
        );
        let input = if status == SolveStatus::NumericalFailure {
            solver_failures += 1;
            last_input
        } else {
            // shift for the next warm start: drop the first stage
            let n = n_mpc;
            let mut shifted = z.clone();
            shifted.copy_within(STATE_DIM..STATE_DIM * n, 0);
            let o_u = STATE_DIM * n;
            shifted.copy_within(o_u + INPUT_DIM..o_u + INPUT_DIM * n, o_u);
            warm = Some(shifted);
            last_input = u0;
            u0
        };

        // log before stepping the plant
        let (ref_state, _) = reference.sample(t0);
        let (e_l, e_c) = error_split(&truth.position, &ref_state, &mut last_tangent);
        let time_ref = reference.sample(t_sim).0.position;
        let err = (truth.position - time_ref).norm();
        sq_sum += err * err;
        max_error = max_error.max(err);
        let pd = path_distance(reference, &truth.position, progress_idx);
        max_path = max_path.max(pd);
        log.rows.push(LogRow {
            t: t_sim,
            state: truth.clone(),
            reference_time: t0,
            reference_position: ref_state.position,
            progress_error: e_l.norm(),
            contour_error: e_c.norm(),
            path_distance: pd,
            input,
            solver_status: status,
        });

        // plant rollout with disturbances
        let accel_noise = if scenario.disturbance.accel_noise_std > 0.0 {
            Vector3::from_fn(|_, _| normal.sample(&mut rng) * scenario.disturbance.accel_noise_std)
        } else {
            Vector3::zeros()
        };
        let n_sub = (dt_mpc / scenario.plant_dt).round().max(1.0) as usize;
        let dt_sub = dt_mpc / n_sub as f64;
        for _ in 0..n_sub {
            let mut plant_state = truth.clone();
            plant_state.rotor_thrusts *= scenario.disturbance.thrust_gain;
            let mut next = rk4_step(&plant_state, &input, dt_sub, params)?;
            // undo the gain on the stored thrust state; it models the rotors
            // producing more/less force than commanded
            next.rotor_thrusts /= scenario.disturbance.thrust_gain;
            let extra = scenario.disturbance.accel_bias + accel_noise;
            next.velocity += extra * dt_sub;
            next.position += extra * (0.5 * dt_sub * dt_sub);
            truth = next;
            log.dense_positions.push(truth.position);
        }
        t_sim += dt_mpc;
    }

    let rmse = (sq_sum / log.rows.len() as f64).sqrt();
    let (success, constraints_missed) = match track {
        Some(track) => check_traversal(track, &log.dense_positions),
        None => (true, vec![]),
    };
    Ok((
        log,
        TrackingSummary {
            rmse,
            max_error,
            max_path_distance: max_path,
            success,
            constraints_missed,
            solver_failures,
        },
    ))
}

/// A gate counts as traversed when some plant sample lies inside it; a
/// waypoint when some sample comes within its tolerance plus the collision
/// radius.
fn check_traversal(track: &Track, positions: &[Vector3<f64>]) -> (bool, Vec<String>) {
    let mut missed = Vec::new();
    for (i, c) in track.constraints.iter().enumerate() {
        let hit = match c {
            crate::track::TrackConstraint::Gate(g) => {
                positions.iter().any(|p| g.contains(p).0)
            }
            crate::track::TrackConstraint::Waypoint(w) => positions
                .iter()
                .any(|p| (p - w.center).norm() <= w.tolerance + track.collision_radius),
        };
        if !hit {
            missed.push(track.names.get(i).cloned().unwrap_or_else(|| format!("#{i}")));
        }
    }
    (missed.is_empty(), missed)
}
