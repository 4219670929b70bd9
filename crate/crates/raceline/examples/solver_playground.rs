//! The built-in augmented-Lagrangian solver on two classic problems: a
//! box-constrained convex QP and the banana function restricted to a line.
//!
//! ```bash
//! cargo run --release -p raceline --example solver_playground
//! ```

use raceline::nlp::{self, FiniteDiffProblem, SolverConfig};

fn main() {
    // minimize x^2 + y^2 subject to x + y >= 1 (as 1 - x - y <= 0)
    let problem = FiniteDiffProblem {
        n: 2,
        m_eq: 0,
        m_ineq: 1,
        lower: vec![f64::NEG_INFINITY; 2],
        upper: vec![f64::INFINITY; 2],
        f: |x: &[f64]| x[0] * x[0] + x[1] * x[1],
        c: |x: &[f64], _eq: &mut [f64], ineq: &mut [f64]| {
            ineq[0] = 1.0 - x[0] - x[1];
        },
        step: 1e-6,
    };
    let (x, report) = nlp::solve(&problem, &[2.0, -1.0], &SolverConfig::default());
    println!(
        "nearest point to the origin on x+y>=1: ({:.6}, {:.6}), status {:?}, {} inner iterations",
        x[0], x[1], report.status, report.inner_iterations
    );

    // minimize the banana function on the line x + y = 1
    let problem = FiniteDiffProblem {
        n: 2,
        m_eq: 1,
        m_ineq: 0,
        lower: vec![f64::NEG_INFINITY; 2],
        upper: vec![f64::INFINITY; 2],
        f: |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
        c: |x: &[f64], eq: &mut [f64], _ineq: &mut [f64]| {
            eq[0] = x[0] + x[1] - 1.0;
        },
        step: 1e-6,
    };
    let config = SolverConfig { tol: 1e-7, feas_tol: 1e-9, ..Default::default() };
    let (x, report) = nlp::solve(&problem, &[0.2, 0.2], &config);
    println!(
        "banana on x+y=1: ({:.6}, {:.6}), constraint residual {:.1e}, status {:?}",
        x[0], x[1], report.max_eq_violation, report.status
    );
    for (k, rec) in report.trace.iter().enumerate() {
        println!(
            "  outer {k}: objective {:.6}, violation {:.2e}, penalty {:.0e}",
            rec.objective, rec.eq_violation, rec.penalty
        );
    }
}
