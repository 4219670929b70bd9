//! Closed-loop tracking with the contouring controller, and the
//! corner-cutting comparison against a naive time-indexed controller on a
//! sharp 90-degree corner with a lagged start and an underpowered plant.
//!
//! ```bash
//! cargo run --release -p raceline --example closed_loop_tracking
//! ```

use nalgebra::Vector3;
use raceline::mpctc::{
    simulate_closed_loop, ControllerConfig, ControllerKind, MpcWeights, ReferenceTrajectory,
    ScenarioConfig,
};
use raceline::polytraj::{sample_discrete, solve_coefficients, TogtResult};
use raceline::quad::QuadParams;

fn rest(p: Vector3<f64>) -> [Vector3<f64>; 4] {
    [p, Vector3::zeros(), Vector3::zeros(), Vector3::zeros()]
}

fn main() -> raceline::Result<()> {
    let params = QuadParams::default();

    // a moderate dogleg, tracked with a perfect model
    let smooth = solve_coefficients(
        &[Vector3::new(1.5, 0.4, 1.3)],
        &[1.7, 1.7],
        &rest(Vector3::new(0.0, 0.0, 1.2)),
        &rest(Vector3::new(3.0, 0.0, 1.2)),
    )?;
    let smooth = TogtResult {
        trajectory: smooth,
        junction_waypoints: vec![Vector3::new(1.5, 0.4, 1.3)],
        junction_constraint: vec![None],
        feasibility: Default::default(),
        converged: true,
        penalty_rounds: 0,
    };
    let reference =
        ReferenceTrajectory::from_discrete(&sample_discrete(&smooth, &params, 0.02)?)?;
    let (_, nominal) =
        simulate_closed_loop(&reference, &params, &ScenarioConfig::default(), None)?;
    println!(
        "perfect model: rmse {:.4} m, max error {:.4} m",
        nominal.rmse, nominal.max_error
    );

    // sharp corner at speed, starting 0.7 m behind the reference: the
    // baseline's catch-up transient crosses the corner diagonally
    let corner = solve_coefficients(
        &[Vector3::new(2.2, 0.0, 1.2)],
        &[1.1, 1.1],
        &rest(Vector3::new(0.0, 0.0, 1.2)),
        &rest(Vector3::new(2.2, 2.2, 1.2)),
    )?;
    let corner = TogtResult {
        trajectory: corner,
        junction_waypoints: vec![Vector3::new(2.2, 0.0, 1.2)],
        junction_constraint: vec![None],
        feasibility: Default::default(),
        converged: true,
        penalty_rounds: 0,
    };
    let corner_ref =
        ReferenceTrajectory::from_discrete(&sample_discrete(&corner, &params, 0.02)?)?;

    for kind in [ControllerKind::Contouring, ControllerKind::Naive] {
        let weights = MpcWeights {
            n_mpc: 12,
            dt_mpc: 0.025,
            q_progress: Vector3::repeat(2.0),
            q_contour: Vector3::repeat(400.0),
            q_velocity: Vector3::repeat(4.0),
            ..Default::default()
        };
        let scenario = ScenarioConfig {
            controller: ControllerConfig { kind, weights, ..Default::default() },
            initial_offset: Vector3::new(-0.7, 0.0, 0.0),
            ..Default::default()
        };
        let (log, summary) = simulate_closed_loop(&corner_ref, &params, &scenario, None)?;
        // the cut shows in the corner region, past the shared start transient
        let corner_max = log
            .rows
            .iter()
            .filter(|row| row.t >= 0.77 && row.t <= 1.98)
            .map(|row| row.path_distance)
            .fold(0.0f64, f64::max);
        println!(
            "{kind:?}: corner path error {:.3} m (rmse vs time-indexed reference {:.3} m)",
            corner_max, summary.rmse
        );
    }
    Ok(())
}
