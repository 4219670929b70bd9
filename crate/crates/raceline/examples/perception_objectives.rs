//! The four perception cost terms evaluated at a sample state: look-ahead
//! gaze alignment, FOV slack penalty, position-uncertainty metric, and jerk
//! regulation, with their exact gradients.
//!
//! ```bash
//! cargo run --release -p raceline --example perception_objectives
//! ```

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use raceline::camera::{CameraConfig, CameraModel};
use raceline::objectives::*;
use raceline::quad::{QuadParams, QuadState, RotorRateInput};
use raceline::track::Landmark;

fn main() {
    let params = QuadParams::default();
    let cam = CameraModel::from(CameraConfig { tilt_deg: 0.0, ..Default::default() });
    let weights = PerceptionWeights::default();
    let landmarks = vec![
        Landmark::new(Vector3::new(5.0, 0.0, 1.4), Vector3::x(), 1.45, vec![]).unwrap(),
        Landmark::new(Vector3::new(4.0, -2.5, 1.2), Vector3::x(), 1.45, vec![]).unwrap(),
    ];

    let mut state = QuadState::hover(Vector3::new(0.0, 0.0, 1.3), &params);
    state.orientation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -0.15);
    state.velocity = Vector3::new(3.0, -0.5, 0.0);
    state.body_rates = Vector3::new(0.4, -0.2, 0.6);
    let input = RotorRateInput::new(Vector4::new(4.0, -2.0, 1.0, -3.0));

    let ahead = state.position + Vector3::new(2.5, -0.4, 0.05);
    let (la, degenerate) = la_cost(&state, &ahead, &cam, &weights);
    println!("look-ahead cost: {la:.6} (degenerate: {degenerate})");
    let g = la_cost_gradient(&state, &ahead, &cam, &weights);
    println!("  d/d position: {:?}", g.d_position.as_slice());

    let residuals = fov_residuals(&state, &landmarks[0], &cam);
    println!("FOV residuals (<= slack when relaxed): {residuals:.4?}");
    println!("  penalty at slack [0.1, 0, 0]: {:.6}", fov_penalty(&[0.1, 0.0, 0.0], weights.w_fov));

    let pum = pum_cost(&state, &cam, &landmarks, &weights);
    let gp = pum_cost_gradient(&state, &cam, &landmarks, &weights);
    println!("uncertainty cost: {pum:.6}");
    println!("  d/d position: {:?}", gp.d_position.as_slice());

    let mr = motion_regulation(&state, &input, &params, weights.w_mr);
    let gm = motion_regulation_gradient(&state, &input, &params, weights.w_mr);
    println!("jerk regulation: {mr:.3e}");
    println!("  d/d body rates: {:?}", gm.d_omega.as_slice());
}
