//! Gate-traversal versus waypoint planning on the same track: letting the
//! traversal point move anywhere inside the gate opening never loses time
//! against pinning it to the gate center.
//!
//! ```bash
//! cargo run --release -p raceline --example togt_vs_towp
//! ```

use raceline::polytraj::{optimize_togt, PlanMode, TogtOptions};
use raceline::quad::QuadParams;
use raceline::track::load_track;

fn main() -> raceline::Result<()> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let params = QuadParams::default();
    let track = load_track(&root.join("fixtures/two_gate.json"), &params)?;

    let towp = optimize_togt(
        &track,
        &params,
        &TogtOptions { mode: PlanMode::Waypoint, ..Default::default() },
    )?;
    println!("waypoint mode (fixed centers): {:.3} s", towp.duration());

    let togt = optimize_togt(
        &track,
        &params,
        &TogtOptions { mode: PlanMode::Gate, ..Default::default() },
    )?;
    println!("gate mode (free traversal):    {:.3} s", togt.duration());
    for (j, wp) in togt.junction_waypoints.iter().enumerate() {
        println!("  traversal point {j}: [{:.2}, {:.2}, {:.2}]", wp.x, wp.y, wp.z);
    }
    println!(
        "gate mode saves {:.1}% of the lap",
        100.0 * (1.0 - togt.duration() / towp.duration())
    );
    Ok(())
}
