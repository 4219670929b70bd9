//! Vision quality along a planned trajectory: position uncertainty sampled
//! at fixed intervals with the loss-accumulation rule, plus the visible-gate
//! count per sample.
//!
//! ```bash
//! cargo run --release -p raceline --example evaluate_trajectory
//! ```

use raceline::cli::{evaluate_uncertainty, EVALUATE_INCREMENT, EVALUATE_INTERVAL, EVALUATE_THRESHOLD};
use raceline::camera::CameraModel;
use raceline::mpctc::ReferenceTrajectory;
use raceline::objectives::PerceptionWeights;
use raceline::polytraj::{optimize_togt, sample_discrete, TogtOptions};
use raceline::quad::QuadParams;
use raceline::track::load_track;

fn main() -> raceline::Result<()> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let params = QuadParams::default();
    let track = load_track(&root.join("fixtures/two_gate.json"), &params)?;
    let camera = CameraModel::default();

    let plan = optimize_togt(&track, &params, &TogtOptions::default())?;
    let reference =
        ReferenceTrajectory::from_discrete(&sample_discrete(&plan, &params, 0.02)?)?;

    let rows = evaluate_uncertainty(
        &reference,
        &camera,
        &track.landmarks,
        &PerceptionWeights::default(),
        EVALUATE_INTERVAL,
        EVALUATE_THRESHOLD,
        EVALUATE_INCREMENT,
    );
    println!("{:>6} {:>10} {:>12} {:>8}", "t [s]", "sigma [m]", "accumulated", "visible");
    for r in &rows {
        println!(
            "{:>6.2} {:>10.3} {:>12.3} {:>8}{}",
            r.t,
            r.sigma.min(999.0),
            r.accumulated,
            r.visible,
            if r.lost { "  (lost)" } else { "" }
        );
    }
    let mean =
        rows.iter().map(|r| r.accumulated).sum::<f64>() / rows.len().max(1) as f64;
    println!("mean accumulated uncertainty: {mean:.3} m over {} samples", rows.len());
    Ok(())
}
