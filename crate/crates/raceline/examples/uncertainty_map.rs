//! Position-uncertainty grid over the bundled three-gate scene: the fast
//! fused centroid metric against the full per-feature information metric,
//! with their rank agreement. Writes both grids as CSV for plotting.
//!
//! ```bash
//! cargo run --release -p raceline --example uncertainty_map
//! ```

use nalgebra::Vector3;
use raceline::camera::{
    fast_uncertainty, fim_full, neg_log_det_floored, CameraConfig, CameraModel, CameraPose,
    CovarianceMode,
};
use raceline::cli::load_scene;
use raceline::quad::QuadParams;

fn main() -> raceline::Result<()> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let params = QuadParams::default();
    let landmarks = load_scene(&root.join("fixtures/three_gate_scene.json"), &params)?;
    let cam = CameraModel::from(CameraConfig { tilt_deg: 0.0, ..Default::default() });
    let cov = cam.bearing_covariance(CovarianceMode::Isotropic);

    let n = 50;
    let mut fast_vals = Vec::new();
    let mut full_vals = Vec::new();
    let mut csv = String::from("x,y,fast,full\n");
    for j in 0..n {
        for i in 0..n {
            let x = -2.0 + 5.0 * i as f64 / (n - 1) as f64;
            let y = -4.0 + 9.0 * j as f64 / (n - 1) as f64;
            // the camera's optical axis is aligned with the world x-axis
            let pose = CameraPose::looking_along_x(Vector3::new(x, y, 1.5));
            let fast = fast_uncertainty(&cam, &pose, &landmarks, 10.0, 1e-6).metric;
            let full = neg_log_det_floored(&fim_full(&cam, &pose, &landmarks, 10.0, &cov)).0;
            csv.push_str(&format!("{x:.4},{y:.4},{fast:.6},{full:.6}\n"));
            fast_vals.push(fast);
            full_vals.push(full);
        }
    }

    let out = std::env::temp_dir().join("raceline_uncertainty_map.csv");
    std::fs::write(&out, csv)?;
    println!("50x50 grid written to {}", out.display());
    println!("Spearman rank correlation fast vs full: {:.4}", spearman(&fast_vals, &full_vals));
    Ok(())
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|i, j| v[*i].partial_cmp(&v[*j]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        num += (ra[i] - mean) * (rb[i] - mean);
        da += (ra[i] - mean).powi(2);
        db += (rb[i] - mean).powi(2);
    }
    num / (da.sqrt() * db.sqrt())
}
