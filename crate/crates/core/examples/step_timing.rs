//! Times one batched loss/gradient evaluation at the default model size.

use std::time::Instant;

use metanerf::encoding::HashGridConfig;
use metanerf::field::{loss_and_gradient, FieldModel, MlpConfig, RayTarget};
use metanerf::geometry::{generate_ray, look_at_pose, CameraIntrinsics, Vec3};
use metanerf::render::RenderConfig;

fn main() -> metanerf::Result<()> {
    let rays: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1024);
    let samples: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let model = FieldModel::new(HashGridConfig::default(), MlpConfig::default())?;
    let params = model.init_params(0);
    let intr = CameraIntrinsics::new(128, 128, 150.0)?;
    let pose = look_at_pose(Vec3::new(0.0, 1.0, 3.0), Vec3::zeros(), Vec3::y())?;
    let batch: Vec<RayTarget> = (0..rays)
        .map(|i| RayTarget {
            ray: generate_ray((i * 37 % 128) as f64, (i * 91 % 128) as f64, &intr, &pose),
            rgb: [0.5, 0.2, 0.9],
        })
        .collect();
    let cfg = RenderConfig { samples_per_ray: samples, jitter: true, ..RenderConfig::default() };
    let reps = 5;
    let start = Instant::now();
    for r in 0..reps {
        let (loss, _) = loss_and_gradient(&model, params.as_slice(), &batch, &cfg, Some(r))?;
        std::hint::black_box(loss);
    }
    let per = start.elapsed().as_secs_f64() / reps as f64;
    println!("{rays} rays x {samples} samples: {:.1} ms/step, {:.0} samples/s", per * 1e3, (rays * samples) as f64 / per);
    Ok(())
}
