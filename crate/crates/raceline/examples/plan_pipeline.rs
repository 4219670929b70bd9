//! Full three-stage planning pipeline on the bundled two-gate track:
//! polynomial gate-traversal optimization, segment subdivision, and
//! multiple-shooting refinement over the rotor-level dynamics.
//!
//! ```bash
//! cargo run --release -p raceline --example plan_pipeline
//! ```

use raceline::polytraj::{optimize_togt, sample_discrete, subdivide_and_refine, TogtOptions};
use raceline::quad::QuadParams;
use raceline::shooting::{self, CostConfig};
use raceline::track::load_track;

fn main() -> raceline::Result<()> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let params = QuadParams::default();
    let track = load_track(&root.join("fixtures/two_gate.json"), &params)?;

    println!("stage 1: polynomial gate-traversal optimization");
    let options = TogtOptions::default();
    let stage1 = optimize_togt(&track, &params, &options)?;
    println!(
        "  duration {:.3} s, worst violation {:.1e}",
        stage1.duration(),
        stage1.feasibility.max_violation()
    );

    println!("stage 2: subdividing each segment into 5 pieces");
    let stage2 = subdivide_and_refine(&stage1, &track, &params, 5, &options)?;
    println!(
        "  duration {:.3} s, worst violation {:.1e}",
        stage2.duration(),
        stage2.feasibility.max_violation()
    );

    println!("stage 3: multiple-shooting refinement (time only)");
    let dt_bar = 0.05;
    let warm = sample_discrete(&stage2, &params, dt_bar)?;
    let problem = shooting::transcribe(&warm, &track, &params, CostConfig::time_only(), dt_bar)?;
    let (refined, report) = shooting::solve(&problem, &shooting::default_solver_config())?;
    println!(
        "  duration {:.3} s over {} nodes, max defect {:.1e}, status {:?}",
        report.duration,
        refined.nodes.len(),
        report.max_defect,
        report.solve.status
    );

    let out = std::env::temp_dir().join("raceline_plan_pipeline.csv");
    refined.write_csv(&out)?;
    println!("trajectory written to {}", out.display());
    Ok(())
}
