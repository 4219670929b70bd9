//! Self-contained constrained nonlinear programming solver.
//!
//! Augmented-Lagrangian outer loop with a bound-constrained projected L-BFGS
//! inner solver. Equality constraints and `g(x) <= 0` inequalities are
//! penalized with multiplier estimates; variable box bounds are handled
//! exactly by projection inside the inner solver.
//!
//! Problems expose a combined gradient `w f' + Jc^T a + Jg^T b` so that
//! structured problems (multiple shooting) can assemble it stage by stage
//! without ever materializing full Jacobians.

use serde::{Deserialize, Serialize};

/// Solver tolerances and iteration caps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Convergence tolerance on the projected gradient (KKT residual).
    pub tol: f64,
    /// Feasibility tolerance on constraint violations.
    pub feas_tol: f64,
    /// Maximum outer (multiplier) iterations.
    pub max_outer: usize,
    /// Maximum inner iterations per outer iteration.
    pub max_inner: usize,
    /// Total inner-iteration cap across all outer iterations.
    pub max_total_inner: usize,
    /// Initial quadratic penalty.
    pub penalty_init: f64,
    /// Penalty growth factor when feasibility stalls.
    pub penalty_factor: f64,
    /// Penalty cap; hitting it flags ill-conditioning.
    pub penalty_max: f64,
    /// L-BFGS memory length.
    pub lbfgs_memory: usize,
    /// Declare practical convergence when the objective is feasible and
    /// stationary to this relative tolerance across three multiplier
    /// updates. Zero disables the shortcut.
    pub stationary_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            feas_tol: 1e-6,
            max_outer: 30,
            max_inner: 600,
            max_total_inner: 20000,
            penalty_init: 10.0,
            penalty_factor: 10.0,
            penalty_max: 1e8,
            lbfgs_memory: 10,
            stationary_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn from_json_file(path: &std::path::Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Outcome of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// Penalty cap reached without feasibility progress.
    Infeasible,
    /// Line search could not make progress.
    Stalled,
    NumericalFailure,
}

/// Per-outer-iteration record; the merit is monotone within each record by
/// construction of the line search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterRecord {
    pub objective: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub penalty: f64,
    pub merit_start: f64,
    pub merit_end: f64,
    pub inner_iterations: usize,
}

/// Solve result: final point plus diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub objective: f64,
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
    /// Infinity norm of the projected Lagrangian gradient at the solution.
    pub kkt_residual: f64,
    pub penalty: f64,
    pub trace: Vec<OuterRecord>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// A smooth constrained problem over box-bounded variables.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Fill per-variable lower/upper bounds (use infinities when free).
    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]);

    fn objective(&self, x: &[f64]) -> f64;

    /// Evaluate equality residuals `c(x)` and inequality residuals `g(x)`
    /// (feasible when `c = 0` and `g <= 0`).
    fn constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]);

    /// Accumulate `out = w_obj * f'(x) + Jc(x)^T a + Jg(x)^T b`.
    fn gradient(&self, x: &[f64], w_obj: f64, a: &[f64], b: &[f64], out: &mut [f64]);
}

struct Merit<'a, P: NlpProblem> {
    problem: &'a P,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    rho: f64,
    eq_buf: std::cell::RefCell<Vec<f64>>,
    ineq_buf: std::cell::RefCell<Vec<f64>>,
}

impl<'a, P: NlpProblem> Merit<'a, P> {
    fn value(&self, x: &[f64]) -> f64 {
        let mut eq = self.eq_buf.borrow_mut();
        let mut ineq = self.ineq_buf.borrow_mut();
        self.problem.constraints(x, &mut eq, &mut ineq);
        let mut phi = self.problem.objective(x);
        for (c, l) in eq.iter().zip(self.lambda.iter()) {
            phi += l * c + 0.5 * self.rho * c * c;
        }
        for (g, m) in ineq.iter().zip(self.mu.iter()) {
            let t = m + self.rho * g;
            if t > 0.0 {
                phi += (t * t - m * m) / (2.0 * self.rho);
            } else {
                phi -= m * m / (2.0 * self.rho);
            }
        }
        phi
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let mut eq = self.eq_buf.borrow_mut();
        let mut ineq = self.ineq_buf.borrow_mut();
        self.problem.constraints(x, &mut eq, &mut ineq);
        let a: Vec<f64> =
            eq.iter().zip(self.lambda.iter()).map(|(c, l)| l + self.rho * c).collect();
        let b: Vec<f64> =
            ineq.iter().zip(self.mu.iter()).map(|(g, m)| (m + self.rho * g).max(0.0)).collect();
        out.fill(0.0);
        self.problem.gradient(x, 1.0, &a, &b, out);
    }
}

fn clamp_to_bounds(x: &mut [f64], lb: &[f64], ub: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lb[i], ub[i]);
    }
}

/// Infinity norm of the projected gradient `x - clamp(x - g)`.
fn projected_gradient_norm(x: &[f64], g: &[f64], lb: &[f64], ub: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let step = (x[i] - g[i]).clamp(lb[i], ub[i]);
        worst = worst.max((x[i] - step).abs());
    }
    worst
}

struct LbfgsMemory {
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    rho: Vec<f64>,
    cap: usize,
}

impl LbfgsMemory {
    fn new(cap: usize) -> Self {
        Self { s: Vec::new(), y: Vec::new(), rho: Vec::new(), cap }
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy: f64 = s.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let sn: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yn: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * sn * yn && sy.is_finite() {
            self.s.push(s);
            self.y.push(y);
            self.rho.push(1.0 / sy);
            if self.s.len() > self.cap {
                self.s.remove(0);
                self.y.remove(0);
                self.rho.remove(0);
            }
        }
    }

    /// Two-loop recursion: d = -H g.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] =
                self.rho[i] * self.s[i].iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>();
            for (qj, yj) in q.iter_mut().zip(self.y[i].iter()) {
                *qj -= alpha[i] * yj;
            }
        }
        if k > 0 {
            let last = k - 1;
            let yy: f64 = self.y[last].iter().map(|v| v * v).sum();
            let sy = 1.0 / self.rho[last];
            let gamma = sy / yy.max(1e-300);
            for qj in q.iter_mut() {
                *qj *= gamma;
            }
        }
        for i in 0..k {
            let beta =
                self.rho[i] * self.y[i].iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>();
            for (qj, sj) in q.iter_mut().zip(self.s[i].iter()) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        for qj in q.iter_mut() {
            *qj = -*qj;
        }
        q
    }
}

struct InnerResult {
    iterations: usize,
    merit_start: f64,
    merit_end: f64,
    pg_norm: f64,
    stalled: bool,
    failed: bool,
}

/// Projected L-BFGS descent on the merit function.
fn inner_solve<P: NlpProblem>(
    merit: &Merit<'_, P>,
    x: &mut [f64],
    lb: &[f64],
    ub: &[f64],
    tol: f64,
    max_iter: usize,
    memory_cap: usize,
) -> InnerResult {
    let n = x.len();
    let mut mem = LbfgsMemory::new(memory_cap);
    let mut g = vec![0.0; n];
    let mut phi = merit.value(x);
    let merit_start = phi;
    if !phi.is_finite() {
        return InnerResult {
            iterations: 0,
            merit_start,
            merit_end: phi,
            pg_norm: f64::INFINITY,
            stalled: false,
            failed: true,
        };
    }
    merit.gradient(x, &mut g);
    let mut stalled = false;
    let mut iterations = 0;
    let mut slow_steps = 0;

    for _ in 0..max_iter {
        let pg = projected_gradient_norm(x, &g, lb, ub);
        if pg <= tol {
            break;
        }
        // give up politely when the merit has stopped moving
        if slow_steps >= 30 {
            break;
        }
        iterations += 1;

        let mut d = mem.direction(&g);
        let gd: f64 = g.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
        let gn: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dn: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gd < -1e-12 * gn * dn) || !gd.is_finite() {
            d = g.iter().map(|v| -v).collect();
            mem.clear();
        }

        // Armijo backtracking along the projected arc; without curvature
        // information yet, open with a step inversely proportional to the
        // gradient so cliff-scale gradients cannot fling the iterate away
        let mut alpha = if mem.s.is_empty() { (1.0 / gn.max(1.0)).min(1.0) } else { 1.0 };
        let mut accepted = false;
        let mut trial = vec![0.0; n];
        let mut phi_trial = phi;
        for _ in 0..50 {
            for i in 0..n {
                trial[i] = (x[i] + alpha * d[i]).clamp(lb[i], ub[i]);
            }
            let dir_deriv: f64 =
                g.iter().zip(trial.iter().zip(x.iter())).map(|(gi, (t, xi))| gi * (t - xi)).sum();
            phi_trial = merit.value(&trial);
            if phi_trial.is_finite() && phi_trial <= phi + 1e-4 * dir_deriv && dir_deriv < 0.0 {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // retry from steepest descent once before declaring a stall
            if !mem.s.is_empty() {
                mem.clear();
                continue;
            }
            stalled = true;
            break;
        }

        let mut g_new = vec![0.0; n];
        merit.gradient(&trial, &mut g_new);
        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(t, xi)| t - xi).collect();
        let y: Vec<f64> = g_new.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
        mem.push(s, y);
        x.copy_from_slice(&trial);
        if phi - phi_trial <= 3e-8 * (1.0 + phi.abs()) {
            slow_steps += 1;
        } else {
            slow_steps = 0;
        }
        phi = phi_trial;
        g = g_new;
    }

    let pg_norm = projected_gradient_norm(x, &g, lb, ub);
    InnerResult {
        iterations,
        merit_start,
        merit_end: phi,
        pg_norm,
        stalled,
        failed: false,
    }
}

/// Solve a constrained problem starting from `x0`.
pub fn solve<P: NlpProblem>(problem: &P, x0: &[f64], config: &SolverConfig) -> (Vec<f64>, SolveReport) {
    let n = problem.num_vars();
    assert_eq!(x0.len(), n, "x0 dimension mismatch");
    let mut lb = vec![f64::NEG_INFINITY; n];
    let mut ub = vec![f64::INFINITY; n];
    problem.bounds(&mut lb, &mut ub);

    let mut x = x0.to_vec();
    clamp_to_bounds(&mut x, &lb, &ub);

    let m_eq = problem.num_eq();
    let m_ineq = problem.num_ineq();
    let mut lambda = vec![0.0; m_eq];
    let mut mu = vec![0.0; m_ineq];
    let mut rho = config.penalty_init;

    let mut eq = vec![0.0; m_eq];
    let mut ineq = vec![0.0; m_ineq];
    let mut trace = Vec::new();
    let mut total_inner = 0;
    let mut status = SolveStatus::MaxIterations;
    let mut last_pg = f64::INFINITY;
    let mut prev_viol = f64::INFINITY;
    let mut stall_count = 0;
    let mut prev_obj = f64::INFINITY;
    let mut flat_outers = 0;

    // feasibility-driven multiplier/penalty schedule: update multipliers when
    // the violation meets the current target, otherwise raise the penalty;
    // unconstrained problems go straight to the final tolerance
    let mut omega = if m_eq + m_ineq == 0 { config.tol } else { 1.0 / rho };
    let mut eta = 1.0 / rho.powf(0.1);

    let mut outer_done = 0;
    for outer in 0..config.max_outer {
        outer_done = outer + 1;
        let merit = Merit {
            problem,
            lambda: lambda.clone(),
            mu: mu.clone(),
            rho,
            eq_buf: std::cell::RefCell::new(vec![0.0; m_eq]),
            ineq_buf: std::cell::RefCell::new(vec![0.0; m_ineq]),
        };
        let budget = config.max_inner.min(config.max_total_inner.saturating_sub(total_inner));
        if budget == 0 {
            status = SolveStatus::MaxIterations;
            break;
        }
        let inner =
            inner_solve(&merit, &mut x, &lb, &ub, omega.max(config.tol), budget, config.lbfgs_memory);
        total_inner += inner.iterations;
        last_pg = inner.pg_norm;

        problem.constraints(&x, &mut eq, &mut ineq);
        let viol_eq = eq.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let viol_ineq = ineq.iter().fold(0.0f64, |m, g| m.max(g.max(0.0)));
        let viol = viol_eq.max(viol_ineq);

        trace.push(OuterRecord {
            objective: problem.objective(&x),
            eq_violation: viol_eq,
            ineq_violation: viol_ineq,
            penalty: rho,
            merit_start: inner.merit_start,
            merit_end: inner.merit_end,
            inner_iterations: inner.iterations,
        });

        if inner.failed {
            status = SolveStatus::NumericalFailure;
            break;
        }

        if viol <= config.feas_tol && inner.pg_norm <= config.tol {
            status = SolveStatus::Converged;
            break;
        }

        // practical convergence: feasible and the objective has been
        // stationary across several multiplier updates
        let obj_now = trace.last().map(|r| r.objective).unwrap_or(f64::INFINITY);
        if config.stationary_tol > 0.0
            && viol <= config.feas_tol
            && (obj_now - prev_obj).abs() <= config.stationary_tol * (1.0 + obj_now.abs())
        {
            flat_outers += 1;
            if flat_outers >= 3 {
                status = SolveStatus::Converged;
                break;
            }
        } else {
            flat_outers = 0;
        }
        prev_obj = obj_now;

        if viol <= eta.max(config.feas_tol) {
            // violation target met: update multipliers, keep the penalty,
            // tighten both targets
            for (l, c) in lambda.iter_mut().zip(eq.iter()) {
                *l += rho * c;
            }
            for (m, g) in mu.iter_mut().zip(ineq.iter()) {
                *m = (*m + rho * g).max(0.0);
            }
            eta = (eta / rho.powf(0.9)).max(config.feas_tol);
            omega = (omega / rho).max(config.tol);
        } else {
            // feasibility too poor: raise the penalty and reset the targets
            if rho >= config.penalty_max {
                if viol >= 0.9 * prev_viol {
                    stall_count += 1;
                } else {
                    stall_count = 0;
                }
                if stall_count >= 3 {
                    status = SolveStatus::Infeasible;
                    break;
                }
            }
            rho = (rho * config.penalty_factor).min(config.penalty_max);
            eta = 1.0 / rho.powf(0.1);
            omega = (1.0 / rho).max(config.tol);
        }

        if inner.stalled && viol <= config.feas_tol {
            // merit can no longer decrease; accept as stalled-but-feasible
            status = if inner.pg_norm <= config.tol * 10.0 {
                SolveStatus::Converged
            } else {
                SolveStatus::Stalled
            };
            break;
        }
        prev_viol = viol;
    }

    problem.constraints(&x, &mut eq, &mut ineq);
    let report = SolveReport {
        status,
        outer_iterations: outer_done,
        inner_iterations: total_inner,
        objective: problem.objective(&x),
        max_eq_violation: eq.iter().fold(0.0f64, |m, c| m.max(c.abs())),
        max_ineq_violation: ineq.iter().fold(0.0f64, |m, g| m.max(g.max(0.0))),
        kkt_residual: last_pg,
        penalty: rho,
        trace,
    };
    (x, report)
}

/// Diagonal variable scaling around an inner problem: the solver works in
/// `y = x / scale`, which evens out curvature across variable blocks and is
/// often the difference between crawling and converging for quasi-Newton
/// methods on mixed-unit problems.
pub struct Scaled<'a, P: NlpProblem> {
    pub inner: &'a P,
    pub scale: Vec<f64>,
}

impl<'a, P: NlpProblem> Scaled<'a, P> {
    pub fn new(inner: &'a P, scale: Vec<f64>) -> Self {
        assert_eq!(scale.len(), inner.num_vars());
        assert!(scale.iter().all(|s| *s > 0.0));
        Self { inner, scale }
    }

    pub fn to_inner(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(self.scale.iter()).map(|(v, s)| v * s).collect()
    }

    pub fn from_inner(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.scale.iter()).map(|(v, s)| v / s).collect()
    }
}

impl<P: NlpProblem> NlpProblem for Scaled<'_, P> {
    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }
    fn num_eq(&self) -> usize {
        self.inner.num_eq()
    }
    fn num_ineq(&self) -> usize {
        self.inner.num_ineq()
    }
    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        self.inner.bounds(lower, upper);
        for i in 0..lower.len() {
            lower[i] /= self.scale[i];
            upper[i] /= self.scale[i];
        }
    }
    fn objective(&self, y: &[f64]) -> f64 {
        self.inner.objective(&self.to_inner(y))
    }
    fn constraints(&self, y: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        self.inner.constraints(&self.to_inner(y), eq, ineq)
    }
    fn gradient(&self, y: &[f64], w_obj: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
        let mut inner_out = vec![0.0; out.len()];
        self.inner.gradient(&self.to_inner(y), w_obj, a, b, &mut inner_out);
        for i in 0..out.len() {
            out[i] += inner_out[i] * self.scale[i];
        }
    }
}

/// Convenience problem built from closures, for small dense programs.
pub struct ClosureProblem<F, C, G>
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&[f64], &mut [f64], &mut [f64]),
    G: Fn(&[f64], f64, &[f64], &[f64], &mut [f64]),
{
    pub n: usize,
    pub m_eq: usize,
    pub m_ineq: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub f: F,
    pub c: C,
    pub grad: G,
}

impl<F, C, G> NlpProblem for ClosureProblem<F, C, G>
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&[f64], &mut [f64], &mut [f64]),
    G: Fn(&[f64], f64, &[f64], &[f64], &mut [f64]),
{
    fn num_vars(&self) -> usize {
        self.n
    }
    fn num_eq(&self) -> usize {
        self.m_eq
    }
    fn num_ineq(&self) -> usize {
        self.m_ineq
    }
    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        lower.copy_from_slice(&self.lower);
        upper.copy_from_slice(&self.upper);
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        (self.c)(x, eq, ineq)
    }
    fn gradient(&self, x: &[f64], w_obj: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
        (self.grad)(x, w_obj, a, b, out)
    }
}

/// A problem with finite-difference gradients wrapped around value-only
/// closures. Fallback path for small problems and tests.
pub struct FiniteDiffProblem<F, C>
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&[f64], &mut [f64], &mut [f64]),
{
    pub n: usize,
    pub m_eq: usize,
    pub m_ineq: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub f: F,
    pub c: C,
    pub step: f64,
}

impl<F, C> NlpProblem for FiniteDiffProblem<F, C>
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&[f64], &mut [f64], &mut [f64]),
{
    fn num_vars(&self) -> usize {
        self.n
    }
    fn num_eq(&self) -> usize {
        self.m_eq
    }
    fn num_ineq(&self) -> usize {
        self.m_ineq
    }
    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        lower.copy_from_slice(&self.lower);
        upper.copy_from_slice(&self.upper);
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        (self.c)(x, eq, ineq)
    }
    fn gradient(&self, x: &[f64], w_obj: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
        // central differences of the weighted scalarization
        let scalar = |z: &[f64]| -> f64 {
            let mut eq = vec![0.0; self.m_eq];
            let mut ineq = vec![0.0; self.m_ineq];
            (self.c)(z, &mut eq, &mut ineq);
            let mut s = w_obj * (self.f)(z);
            for (c, ai) in eq.iter().zip(a.iter()) {
                s += ai * c;
            }
            for (g, bi) in ineq.iter().zip(b.iter()) {
                s += bi * g;
            }
            s
        };
        let mut z = x.to_vec();
        for i in 0..self.n {
            let h = self.step * (1.0 + x[i].abs());
            z[i] = x[i] + h;
            let fp = scalar(&z);
            z[i] = x[i] - h;
            let fm = scalar(&z);
            z[i] = x[i];
            out[i] += (fp - fm) / (2.0 * h);
        }
    }
}
