//! Size-based depth uncertainty: the closed-form standard deviation of the
//! distance estimate against a Monte-Carlo perturb-and-resolve experiment,
//! across distances and viewing angles.
//!
//! ```bash
//! cargo run --release -p raceline --example depth_uncertainty
//! ```

use nalgebra::Vector3;
use raceline::camera::{depth_sigma, CameraConfig, CameraModel, CameraPose};
use raceline::track::Landmark;
use rand::SeedableRng;
use rand_distr::Distribution;

fn main() {
    let cam = CameraModel::from(CameraConfig { tilt_deg: 0.0, sigma_u: 2.0, sigma_v: 2.0, ..Default::default() });
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let size = 1.45;
    println!("{:>6} {:>8} {:>12} {:>12} {:>8}", "d [m]", "phi", "analytic", "monte-carlo", "ratio");
    for d in [2.0, 5.0, 10.0] {
        for phi_deg in [0.0f64, 30.0, 60.0] {
            let phi = phi_deg.to_radians();
            let lm = Landmark::new(
                Vector3::new(d, 0.0, 0.0),
                Vector3::new(phi.cos(), phi.sin(), 0.0),
                size,
                vec![],
            )
            .unwrap();
            let pose = CameraPose::looking_along_x(Vector3::zeros());
            let (analytic, grazing) = depth_sigma(&cam, &lm, &pose);

            // perturb the apparent size in pixels and re-solve the distance
            let l_true = cam.fx * size * phi.cos() / d;
            let noise =
                rand_distr::Normal::new(0.0, std::f64::consts::SQRT_2 * cam.sigma_u).unwrap();
            let n = 100_000;
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..n {
                let est = cam.fx * size * phi.cos() / (l_true + noise.sample(&mut rng));
                sum += est;
                sum_sq += est * est;
            }
            let mean = sum / n as f64;
            let mc = (sum_sq / n as f64 - mean * mean).sqrt();
            println!(
                "{d:>6.1} {phi_deg:>7.0}° {analytic:>12.4} {mc:>12.4} {:>8.3}{}",
                mc / analytic,
                if grazing { "  (grazing cap)" } else { "" }
            );
        }
    }
}
