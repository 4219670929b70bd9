//! Multiple-shooting trajectory refinement over the full rotor-level
//! dynamics.
//!
//! The discretized near-time-optimal trajectory from the polynomial stages is
//! transcribed into a constrained program: per-node states and inputs, one
//! free time step per track segment, RK4 defect equalities between
//! consecutive nodes, per-node quaternion-norm equalities, traversal nodes
//! pinned to their gate points, and box bounds on rates, thrusts, inputs, and
//! steps. Perception costs (look-ahead, FOV slacks, position uncertainty,
//! jerk regulation) attach per node. Derivatives are exact forward-mode duals
//! assembled stage by stage.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::math::Dual;
use crate::nlp::{self, NlpProblem, SolveReport, SolverConfig};
use crate::objectives::{
    fov_penalty, fov_penalty_gradient, fov_residuals_smooth, fov_residuals_smooth_gradient,
    la_cost, la_cost_gradient, motion_regulation, motion_regulation_gradient, pum_cost,
    pum_cost_gradient, PerceptionWeights,
};
use crate::quad::{rk4_kernel, QuadParams, QuadState, RotorRateInput, INPUT_DIM, STATE_DIM};
use crate::track::{Landmark, Track};
use crate::trajectory::{DiscreteTrajectory, TrajectoryNode};
use crate::{Error, Result};

/// Warm-start position defects above this abort the transcription.
pub const MAX_WARM_DEFECT: f64 = 0.5;
/// Time-step bounds relative to the nominal sampling time.
pub const DT_LOWER_FACTOR: f64 = 0.25;
pub const DT_UPPER_FACTOR: f64 = 4.0;

/// Which perception terms are active in the refinement objective.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CostToggles {
    pub la: bool,
    pub fov: bool,
    pub pum: bool,
    pub mr: bool,
}

impl CostToggles {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn any(&self) -> bool {
        self.la || self.fov || self.pum || self.mr
    }
}

/// Scene and weights feeding the perception costs.
#[derive(Debug, Clone)]
pub struct CostConfig {
    pub toggles: CostToggles,
    pub weights: PerceptionWeights,
    pub camera: Option<CameraModel>,
}

impl CostConfig {
    pub fn time_only() -> Self {
        Self { toggles: CostToggles::none(), weights: PerceptionWeights::default(), camera: None }
    }
}

/// Transcribed multi-stage shooting program.
pub struct ShootingProblem {
    params: QuadParams,
    landmarks: Vec<Landmark>,
    costs: CostConfig,
    /// Stages per segment; total stages N = sum.
    seg_counts: Vec<usize>,
    dt_nominal: f64,
    /// Segment index of each stage k (selects the time-step variable).
    stage_seg: Vec<usize>,
    x_init: [f64; STATE_DIM],
    x_term: [f64; STATE_DIM],
    pinned: Vec<(usize, Vector3<f64>)>,
    /// Look-ahead pairs `(node, lookup node)`.
    la_pairs: Vec<(usize, usize)>,
    /// FOV-active entries `(node, landmark index)`, three slacks each.
    fov_entries: Vec<(usize, usize)>,
    warm: Vec<f64>,
}

impl ShootingProblem {
    pub fn num_stages(&self) -> usize {
        self.stage_seg.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_stages() + 1
    }

    fn off_inputs(&self) -> usize {
        STATE_DIM * self.num_nodes()
    }

    fn off_dts(&self) -> usize {
        self.off_inputs() + INPUT_DIM * self.num_stages()
    }

    fn off_slacks(&self) -> usize {
        self.off_dts() + self.seg_counts.len()
    }

    fn state_slice<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        &z[STATE_DIM * k..STATE_DIM * (k + 1)]
    }

    fn input_slice<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        let o = self.off_inputs() + INPUT_DIM * k;
        &z[o..o + INPUT_DIM]
    }

    fn node_state(&self, z: &[f64], k: usize) -> QuadState {
        let mut x = [0.0; STATE_DIM];
        x.copy_from_slice(self.state_slice(z, k));
        QuadState::from_array(&x)
    }

    fn node_input(&self, z: &[f64], k: usize) -> RotorRateInput {
        let mut u = [0.0; INPUT_DIM];
        u.copy_from_slice(self.input_slice(z, k));
        RotorRateInput::from_array(&u)
    }

    pub fn warm_start(&self) -> &[f64] {
        &self.warm
    }

    /// Per-variable magnitudes used to precondition the solve: comparable
    /// curvature across position/attitude/velocity/rate/thrust/step blocks.
    pub fn variable_scales(&self) -> Vec<f64> {
        let n = self.num_stages();
        let mut s = vec![1.0; self.num_vars()];
        for k in 0..=n {
            let o = STATE_DIM * k;
            for i in 0..3 {
                s[o + 7 + i] = 2.0; // velocity
                s[o + 10 + i] = 2.0; // body rates
            }
            for i in 0..4 {
                s[o + 13 + i] = 0.5 * (self.params.thrust_max - self.params.thrust_min).max(1.0);
            }
        }
        let o_u = self.off_inputs();
        let u_scale =
            0.25 * (self.params.thrust_rate_max - self.params.thrust_rate_min).max(1.0);
        for i in 0..INPUT_DIM * n {
            s[o_u + i] = u_scale;
        }
        let o_dt = self.off_dts();
        for i in 0..self.seg_counts.len() {
            s[o_dt + i] = self.dt_nominal;
        }
        s
    }

    /// Total trajectory duration implied by the time-step variables.
    pub fn duration(&self, z: &[f64]) -> f64 {
        let o = self.off_dts();
        self.seg_counts.iter().enumerate().map(|(i, n)| *n as f64 * z[o + i]).sum()
    }

    /// Extract the trajectory from a solution vector.
    pub fn to_trajectory(&self, z: &[f64]) -> DiscreteTrajectory {
        let n = self.num_stages();
        let o_dt = self.off_dts();
        let mut nodes = Vec::with_capacity(n + 1);
        let mut t = 0.0;
        for k in 0..=n {
            let state = self.node_state(z, k);
            let input = if k < n { self.node_input(z, k) } else { self.node_input(z, n - 1) };
            nodes.push(TrajectoryNode { t, state, input });
            if k < n {
                t += z[o_dt + self.stage_seg[k]];
            }
        }
        let segment_dts: Vec<f64> =
            (0..self.seg_counts.len()).map(|i| z[o_dt + i]).collect();
        DiscreteTrajectory {
            nodes,
            segment_counts: self.seg_counts.clone(),
            segment_dts,
            gate_nodes: self.pinned.iter().map(|(k, _)| *k).collect(),
            gate_targets: self.pinned.iter().map(|(_, p)| *p).collect(),
        }
    }

    /// Stage dynamics Jacobian via 22-direction duals (17 state + 4 input +
    /// the step). Returns F and dF as a 17 x 22 row-major matrix.
    fn stage_jacobian(
        &self,
        x: &[f64],
        u: &[f64],
        dt: f64,
    ) -> ([f64; STATE_DIM], [[f64; 22]; STATE_DIM]) {
        type D = Dual<22>;
        let xd: [D; STATE_DIM] = std::array::from_fn(|i| D::var(x[i], i));
        let ud: [D; INPUT_DIM] = std::array::from_fn(|i| D::var(u[i], STATE_DIM + i));
        let dtd = D::var(dt, 21);
        let out = rk4_kernel(&xd, &ud, dtd, &self.params);
        let mut value = [0.0; STATE_DIM];
        let mut jac = [[0.0; 22]; STATE_DIM];
        for i in 0..STATE_DIM {
            value[i] = out[i].re;
            jac[i] = out[i].eps;
        }
        (value, jac)
    }

    fn stage_value(&self, x: &[f64], u: &[f64], dt: f64) -> [f64; STATE_DIM] {
        let mut xa = [0.0; STATE_DIM];
        xa.copy_from_slice(x);
        let mut ua = [0.0; INPUT_DIM];
        ua.copy_from_slice(u);
        rk4_kernel(&xa, &ua, dt, &self.params)
    }

    /// Breakdown of the objective into named contributions.
    pub fn cost_breakdown(&self, z: &[f64]) -> CostBreakdown {
        let mut b = CostBreakdown { time: self.duration(z), ..Default::default() };
        let cam = self.costs.camera.as_ref();
        for k in 0..self.num_nodes() {
            let state = self.node_state(z, k);
            if self.costs.toggles.pum {
                if let Some(cam) = cam {
                    b.pum +=
                        pum_cost(&state, cam, &self.landmarks, &self.costs.weights);
                }
            }
            if self.costs.toggles.mr {
                let input =
                    if k < self.num_stages() { self.node_input(z, k) } else { Default::default() };
                b.mr += motion_regulation(&state, &input, &self.params, self.costs.weights.w_mr);
            }
        }
        if self.costs.toggles.la {
            if let Some(cam) = cam {
                for (k, ka) in &self.la_pairs {
                    let state = self.node_state(z, *k);
                    let ahead = self.node_state(z, *ka).position;
                    b.la += la_cost(&state, &ahead, cam, &self.costs.weights).0;
                }
            }
        }
        if self.costs.toggles.fov {
            let slacks = &z[self.off_slacks()..];
            b.fov = fov_penalty(slacks, self.costs.weights.w_fov);
        }
        b
    }

    /// Mean position-uncertainty metric along the node sequence (unweighted).
    pub fn mean_pum_metric(&self, z: &[f64]) -> Option<f64> {
        let cam = self.costs.camera.as_ref()?;
        let w = PerceptionWeights { w_pum: 1.0, ..self.costs.weights.clone() };
        let n = self.num_nodes();
        let sum: f64 = (0..n)
            .map(|k| pum_cost(&self.node_state(z, k), cam, &self.landmarks, &w))
            .sum();
        Some(sum / n as f64)
    }

    /// Fraction of FOV-scheduled nodes whose target landmark is outside the
    /// hard visibility region.
    pub fn out_of_fov_fraction(&self, z: &[f64]) -> Option<f64> {
        let cam = self.costs.camera.as_ref()?;
        if self.fov_entries.is_empty() {
            return None;
        }
        let mut out = 0usize;
        for (k, lm) in &self.fov_entries {
            let state = self.node_state(z, *k);
            let pose =
                crate::camera::CameraPose::from_body(&state.position, &state.orientation, cam);
            let p_c = pose.world_to_camera(&self.landmarks[*lm].centroid);
            if !cam.hard_visibility(&p_c) {
                out += 1;
            }
        }
        Some(out as f64 / self.fov_entries.len() as f64)
    }
}

/// Named objective contributions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub time: f64,
    pub la: f64,
    pub fov: f64,
    pub pum: f64,
    pub mr: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.time + self.la + self.fov + self.pum + self.mr
    }
}

impl NlpProblem for ShootingProblem {
    fn num_vars(&self) -> usize {
        self.off_slacks() + 3 * self.fov_entries.len()
    }

    fn num_eq(&self) -> usize {
        STATE_DIM * self.num_stages() + self.num_nodes()
    }

    fn num_ineq(&self) -> usize {
        3 * self.fov_entries.len()
    }

    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        lower.fill(f64::NEG_INFINITY);
        upper.fill(f64::INFINITY);
        let n = self.num_stages();
        for k in 0..=n {
            let o = STATE_DIM * k;
            // quaternion components stay in a sane box
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
        // boundary states fixed by bounds
        for i in 0..STATE_DIM {
            lower[i] = self.x_init[i];
            upper[i] = self.x_init[i];
            let o = STATE_DIM * n + i;
            lower[o] = self.x_term[i];
            upper[o] = self.x_term[i];
        }
        // pinned traversal positions
        for (k, target) in &self.pinned {
            for a in 0..3 {
                lower[STATE_DIM * k + a] = target[a];
                upper[STATE_DIM * k + a] = target[a];
            }
        }
        let o_u = self.off_inputs();
        for k in 0..INPUT_DIM * n {
            lower[o_u + k] = self.params.thrust_rate_min;
            upper[o_u + k] = self.params.thrust_rate_max;
        }
        let o_dt = self.off_dts();
        for i in 0..self.seg_counts.len() {
            lower[o_dt + i] = DT_LOWER_FACTOR * self.dt_nominal;
            upper[o_dt + i] = DT_UPPER_FACTOR * self.dt_nominal;
        }
        let o_s = self.off_slacks();
        for i in 0..3 * self.fov_entries.len() {
            lower[o_s + i] = 0.0;
        }
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let mut total = self.duration(z);
        let cam = self.costs.camera.as_ref();
        if self.costs.toggles.mr {
            for k in 0..self.num_stages() {
                let state = self.node_state(z, k);
                let input = self.node_input(z, k);
                total +=
                    motion_regulation(&state, &input, &self.params, self.costs.weights.w_mr);
            }
        }
        if self.costs.toggles.pum {
            if let Some(cam) = cam {
                for k in 0..self.num_nodes() {
                    let state = self.node_state(z, k);
                    total += pum_cost(&state, cam, &self.landmarks, &self.costs.weights);
                }
            }
        }
        if self.costs.toggles.la {
            if let Some(cam) = cam {
                for (k, ka) in &self.la_pairs {
                    let state = self.node_state(z, *k);
                    let ahead = self.node_state(z, *ka).position;
                    total += la_cost(&state, &ahead, cam, &self.costs.weights).0;
                }
            }
        }
        if self.costs.toggles.fov {
            total += fov_penalty(&z[self.off_slacks()..], self.costs.weights.w_fov);
        }
        total
    }

    fn constraints(&self, z: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        let n = self.num_stages();
        let o_dt = self.off_dts();
        for k in 0..n {
            let dt = z[o_dt + self.stage_seg[k]];
            let pred = self.stage_value(self.state_slice(z, k), self.input_slice(z, k), dt);
            let next = self.state_slice(z, k + 1);
            for i in 0..STATE_DIM {
                eq[STATE_DIM * k + i] = next[i] - pred[i];
            }
        }
        let o_q = STATE_DIM * n;
        for k in 0..=n {
            let x = self.state_slice(z, k);
            let qn = x[3] * x[3] + x[4] * x[4] + x[5] * x[5] + x[6] * x[6];
            eq[o_q + k] = qn - 1.0;
        }
        if self.costs.toggles.fov {
            if let Some(cam) = self.costs.camera.as_ref() {
                let o_s = self.off_slacks();
                for (e, (k, lm)) in self.fov_entries.iter().enumerate() {
                    let state = self.node_state(z, *k);
                    let r = fov_residuals_smooth(&state, &self.landmarks[*lm], cam);
                    for j in 0..3 {
                        ineq[3 * e + j] = r[j] - z[o_s + 3 * e + j];
                    }
                }
            }
        }
    }

    fn gradient(&self, z: &[f64], w_obj: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
        let n = self.num_stages();
        let o_u = self.off_inputs();
        let o_dt = self.off_dts();
        let o_s = self.off_slacks();
        let cam = self.costs.camera.as_ref();

        // objective: time term
        if w_obj != 0.0 {
            for (i, count) in self.seg_counts.iter().enumerate() {
                out[o_dt + i] += w_obj * *count as f64;
            }
            if self.costs.toggles.mr {
                for k in 0..n {
                    let state = self.node_state(z, k);
                    let input = self.node_input(z, k);
                    let g = motion_regulation_gradient(
                        &state,
                        &input,
                        &self.params,
                        self.costs.weights.w_mr,
                    );
                    let o = STATE_DIM * k;
                    for i in 0..4 {
                        out[o + 3 + i] += w_obj * g.d_quaternion[i];
                    }
                    for i in 0..3 {
                        out[o + 10 + i] += w_obj * g.d_omega[i];
                    }
                    for i in 0..4 {
                        out[o + 13 + i] += w_obj * g.d_thrusts[i];
                        out[o_u + INPUT_DIM * k + i] += w_obj * g.d_rates[i];
                    }
                }
            }
            if self.costs.toggles.pum {
                if let Some(cam) = cam {
                    for k in 0..=n {
                        let state = self.node_state(z, k);
                        let g =
                            pum_cost_gradient(&state, cam, &self.landmarks, &self.costs.weights);
                        let o = STATE_DIM * k;
                        for i in 0..3 {
                            out[o + i] += w_obj * g.d_position[i];
                        }
                        for i in 0..4 {
                            out[o + 3 + i] += w_obj * g.d_quaternion[i];
                        }
                    }
                }
            }
            if self.costs.toggles.la {
                if let Some(cam) = cam {
                    for (k, ka) in &self.la_pairs {
                        let state = self.node_state(z, *k);
                        let ahead = self.node_state(z, *ka).position;
                        let g = la_cost_gradient(&state, &ahead, cam, &self.costs.weights);
                        let o = STATE_DIM * k;
                        for i in 0..3 {
                            out[o + i] += w_obj * g.d_position[i];
                            out[STATE_DIM * ka + i] += w_obj * g.d_p_ahead[i];
                        }
                        for i in 0..4 {
                            out[o + 3 + i] += w_obj * g.d_quaternion[i];
                        }
                    }
                }
            }
            if self.costs.toggles.fov {
                let slacks = &z[o_s..];
                let g = fov_penalty_gradient(slacks, self.costs.weights.w_fov);
                for (i, gi) in g.iter().enumerate() {
                    out[o_s + i] += w_obj * gi;
                }
            }
        }

        // defect constraints
        for k in 0..n {
            let dt = z[o_dt + self.stage_seg[k]];
            let (_, jac) =
                self.stage_jacobian(self.state_slice(z, k), self.input_slice(z, k), dt);
            let a_k = &a[STATE_DIM * k..STATE_DIM * (k + 1)];
            let o_x = STATE_DIM * k;
            let o_xn = STATE_DIM * (k + 1);
            for i in 0..STATE_DIM {
                let ai = a_k[i];
                if ai == 0.0 {
                    continue;
                }
                out[o_xn + i] += ai;
                for j in 0..STATE_DIM {
                    out[o_x + j] -= ai * jac[i][j];
                }
                for j in 0..INPUT_DIM {
                    out[o_u + INPUT_DIM * k + j] -= ai * jac[i][STATE_DIM + j];
                }
                out[o_dt + self.stage_seg[k]] -= ai * jac[i][21];
            }
        }

        // quaternion-norm rows
        let o_qrow = STATE_DIM * n;
        for k in 0..=n {
            let ai = a[o_qrow + k];
            if ai == 0.0 {
                continue;
            }
            let x = self.state_slice(z, k);
            for i in 3..7 {
                out[STATE_DIM * k + i] += ai * 2.0 * x[i];
            }
        }

        // FOV inequality rows
        if self.costs.toggles.fov {
            if let Some(cam) = cam {
                for (e, (k, lm)) in self.fov_entries.iter().enumerate() {
                    let rows = &b[3 * e..3 * e + 3];
                    if rows.iter().all(|r| *r == 0.0) {
                        continue;
                    }
                    let state = self.node_state(z, *k);
                    let g = fov_residuals_smooth_gradient(&state, &self.landmarks[*lm], cam);
                    let o = STATE_DIM * k;
                    for j in 0..3 {
                        let bj = rows[j];
                        if bj == 0.0 {
                            continue;
                        }
                        for i in 0..3 {
                            out[o + i] += bj * g.d_position[j][i];
                        }
                        for i in 0..4 {
                            out[o + 3 + i] += bj * g.d_quaternion[j][i];
                        }
                        out[o_s + 3 * e + j] -= bj;
                    }
                }
            }
        }
    }
}

/// Build the shooting program from a sampled warm start.
///
/// The warm start must carry its segment structure (node counts and steps)
/// and be dynamically consistent: any stage whose RK4 prediction misses the
/// next node position by more than half a meter aborts.
pub fn transcribe(
    warm: &DiscreteTrajectory,
    track: &Track,
    params: &QuadParams,
    costs: CostConfig,
    dt_nominal: f64,
) -> Result<ShootingProblem> {
    if warm.segment_counts.is_empty() {
        return Err(Error::BadInitialization("warm start lacks segment structure".into()));
    }
    let n: usize = warm.segment_counts.iter().sum();
    if warm.nodes.len() != n + 1 {
        return Err(Error::BadInitialization(format!(
            "node count {} does not match segment structure ({})",
            warm.nodes.len(),
            n + 1
        )));
    }

    let mut stage_seg = Vec::with_capacity(n);
    for (i, c) in warm.segment_counts.iter().enumerate() {
        stage_seg.extend(std::iter::repeat(i).take(*c));
    }

    // defect consistency check
    for k in 0..n {
        let dt = warm.segment_dts[stage_seg[k]];
        let pred = crate::quad::rk4_step(&warm.nodes[k].state, &warm.nodes[k].input, dt, params)?;
        let gap = (pred.position - warm.nodes[k + 1].state.position).norm();
        if gap > MAX_WARM_DEFECT {
            return Err(Error::BadInitialization(format!(
                "warm-start defect {gap:.3} m at stage {k} exceeds {MAX_WARM_DEFECT}"
            )));
        }
    }

    let pinned: Vec<(usize, Vector3<f64>)> = warm
        .gate_nodes
        .iter()
        .copied()
        .zip(warm.gate_targets.iter().copied())
        .collect();
    for w in pinned.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::BadInitialization("pinned nodes not strictly increasing".into()));
        }
    }

    // look-ahead pairs: a fixed node offset approximating t_la
    let la_pairs = if costs.toggles.la {
        let offset = (costs.weights.t_la / dt_nominal).round().max(1.0) as usize;
        (0..=n).map(|k| (k, (k + offset).min(n))).collect()
    } else {
        Vec::new()
    };

    // FOV schedule: either one target landmark on every node (set per track
    // file) or, by default, the nodes of the segment leading into each
    // pinned gate with a landmark
    let mut fov_entries = Vec::new();
    if costs.toggles.fov {
        if let Some(lm) = track.fov_target_landmark {
            for k in 0..=n {
                fov_entries.push((k, lm));
            }
        } else {
            let mut seg_start_node = vec![0usize; warm.segment_counts.len()];
            let mut acc = 0;
            for (i, c) in warm.segment_counts.iter().enumerate() {
                seg_start_node[i] = acc;
                acc += c;
            }
            for (gi, (node, _)) in pinned.iter().enumerate() {
                let lm = track.constraint_landmarks.get(gi).copied().flatten();
                if let Some(lm) = lm {
                    // nodes in the segment ending at this pinned node
                    let seg = stage_seg[node.saturating_sub(1).min(n - 1)];
                    let start = seg_start_node[seg];
                    for k in start..*node {
                        fov_entries.push((k, lm));
                    }
                }
            }
        }
    }

    let mut problem = ShootingProblem {
        params: params.clone(),
        landmarks: track.landmarks.clone(),
        costs,
        seg_counts: warm.segment_counts.clone(),
        dt_nominal,
        stage_seg,
        x_init: warm.nodes[0].state.to_array(),
        x_term: warm.nodes[n].state.to_array(),
        pinned,
        la_pairs,
        fov_entries,
        warm: Vec::new(),
    };

    let mut z = vec![0.0; problem.num_vars()];
    for (k, node) in warm.nodes.iter().enumerate() {
        z[STATE_DIM * k..STATE_DIM * (k + 1)].copy_from_slice(&node.state.to_array());
        if k < n {
            let o = problem.off_inputs() + INPUT_DIM * k;
            z[o..o + INPUT_DIM].copy_from_slice(&node.input.to_array());
        }
    }
    let o_dt = problem.off_dts();
    for (i, dt) in warm.segment_dts.iter().enumerate() {
        z[o_dt + i] = *dt;
    }
    // slacks start at the current residual magnitude so the start is feasible
    if problem.costs.toggles.fov {
        if let Some(cam) = problem.costs.camera.as_ref() {
            let o_s = problem.off_slacks();
            for (e, (k, lm)) in problem.fov_entries.iter().enumerate() {
                let state = problem.node_state(&z, *k);
                let r = fov_residuals_smooth(&state, &problem.landmarks[*lm], cam);
                for j in 0..3 {
                    z[o_s + 3 * e + j] = r[j].max(0.0);
                }
            }
        }
    }
    problem.warm = z;
    Ok(problem)
}

/// Solver settings that work well for desk-scale shooting problems: scaled
/// variables still leave the merit fairly stiff, so the quasi-Newton inner
/// solver gets a long leash and a warm penalty start.
pub fn default_solver_config() -> SolverConfig {
    SolverConfig {
        tol: 1e-3,
        feas_tol: 1e-6,
        max_outer: 40,
        max_inner: 2000,
        max_total_inner: 60000,
        penalty_init: 100.0,
        lbfgs_memory: 25,
        ..Default::default()
    }
}

/// Solve outcome with diagnostics mirrored into the run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShootingReport {
    pub solve: SolveReport,
    pub duration: f64,
    pub max_defect: f64,
    pub max_pin_error: f64,
    pub cost_breakdown: CostBreakdown,
    pub mean_pum_metric: Option<f64>,
    pub out_of_fov_fraction: Option<f64>,
    pub dt_values: Vec<f64>,
    pub dt_nominal: f64,
    /// How derivatives were produced.
    pub derivative_mode: String,
}

/// Run the refinement. Returns the refined trajectory plus a report; a
/// non-converged solve still returns the best iterate, flagged in the report.
///
/// After the primary solve, up to two deterministic restarts kick every time
/// step down a notch and re-descend; a kicked solve is kept only when it ends
/// at least as feasible and strictly cheaper. This pulls shallow stalls the
/// last stretch toward the time-optimal floor.
pub fn solve(
    problem: &ShootingProblem,
    config: &SolverConfig,
) -> Result<(DiscreteTrajectory, ShootingReport)> {
    let scaled = nlp::Scaled::new(problem, problem.variable_scales());
    let run = |start: &[f64]| {
        let warm_scaled = scaled.from_inner(start);
        let (y, report) = nlp::solve(&scaled, &warm_scaled, config);
        let z = scaled.to_inner(&y);
        let objective = problem.objective(&z);
        (z, report, objective)
    };
    let (mut z, mut solve_report, mut objective) = run(&problem.warm);
    let o_dt = problem.off_dts();
    let dt_floor = DT_LOWER_FACTOR * problem.dt_nominal;
    for _ in 0..2 {
        let mut kicked = z.clone();
        for i in 0..problem.seg_counts.len() {
            kicked[o_dt + i] = (kicked[o_dt + i] * 0.93).max(dt_floor);
        }
        let (z_new, report_new, obj_new) = run(&kicked);
        let feasible = report_new.max_eq_violation
            <= solve_report.max_eq_violation.max(10.0 * config.feas_tol);
        if feasible && obj_new < objective - 1e-9 {
            z = z_new;
            solve_report = report_new;
            objective = obj_new;
        } else {
            break;
        }
    }
    if std::env::var("RACELINE_SHOOT_DEBUG").is_ok() {
        let mut eq = vec![0.0; problem.num_eq()];
        let mut ineq = vec![0.0; problem.num_ineq()];
        problem.constraints(&z, &mut eq, &mut ineq);
        let n = problem.num_stages();
        let mut worst: Vec<(f64, String)> = Vec::new();
        for (i, c) in eq.iter().enumerate() {
            let label = if i < STATE_DIM * n {
                format!("defect stage {} comp {}", i / STATE_DIM, i % STATE_DIM)
            } else {
                format!("quatnorm node {}", i - STATE_DIM * n)
            };
            worst.push((c.abs(), label));
        }
        for (i, g) in ineq.iter().enumerate() {
            worst.push((g.max(0.0), format!("fov row {} (entry {})", i % 3, i / 3)));
        }
        worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (v, label) in worst.iter().take(5) {
            eprintln!("[shoot] viol {v:.3e}: {label}");
        }
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite iterate".into()));
    }
    let trajectory = problem.to_trajectory(&z);

    let n = problem.num_stages();
    let mut eq = vec![0.0; problem.num_eq()];
    let mut ineq = vec![0.0; problem.num_ineq()];
    problem.constraints(&z, &mut eq, &mut ineq);
    let max_defect =
        eq[..STATE_DIM * n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_pin_error = problem
        .pinned
        .iter()
        .map(|(k, target)| (problem.node_state(&z, *k).position - target).norm())
        .fold(0.0, f64::max);

    let o_dt = problem.off_dts();
    let report = ShootingReport {
        duration: problem.duration(&z),
        max_defect,
        max_pin_error,
        cost_breakdown: problem.cost_breakdown(&z),
        mean_pum_metric: problem.mean_pum_metric(&z),
        out_of_fov_fraction: problem.out_of_fov_fraction(&z),
        dt_values: (0..problem.seg_counts.len()).map(|i| z[o_dt + i]).collect(),
        dt_nominal: problem.dt_nominal,
        derivative_mode: "forward-mode dual numbers".into(),
        solve: solve_report,
    };
    Ok((trajectory, report))
}
