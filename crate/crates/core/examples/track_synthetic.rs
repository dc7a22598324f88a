//! Generates the moving benchmark in memory and tracks it frame by frame.
//!
//!     cargo run --release --example track_synthetic -- [frames]

use std::time::Instant;

use snaketrack::estimator::{initial_belief, EstimatorConfig, Tracker};
use snaketrack::kinematics::RobotModel;
use snaketrack::masks::iou;
use snaketrack::renderer::render_robot_hard;
use snaketrack::synth::{generate_trajectory, joint_error, perturb_state, position_error, NoiseSpec, TrajectoryConfig};
use snaketrack::types::CameraIntrinsics;

fn main() -> snaketrack::Result<()> {
    let frames: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let model = RobotModel::default();
    let cam = CameraIntrinsics::working_default();
    let mut scene = TrajectoryConfig::moving_benchmark(model.joint_count());
    scene.frames = frames;
    let truth = generate_trajectory(&model, &scene)?;
    let noise = NoiseSpec::default();

    let cfg = EstimatorConfig {
        meas_noise_px: 20.0,
        process_noise: [vec![4e-4; 6], vec![1e-4; 7]].concat(),
        ..Default::default()
    };
    let init = perturb_state(&truth[0], 0.01, 0.05, 0.0, 0)?;
    let mut tracker = Tracker::new(initial_belief(init), &model, &cam, &cfg)?;
    let clock = Instant::now();
    for (i, (gt, t)) in truth.iter().zip(scene.times()).enumerate() {
        let clean = render_robot_hard(&model, gt, &cam, 0.01)?;
        let out = tracker.process(t, &noise.degrade(&clean, i))?;
        if i % 5 == 0 || i + 1 == frames {
            let est = &out.belief.mean;
            println!(
                "frame {i:>3}: pos {:.4} m, joint {:.4} rad, IoU {:.3}, loss {:.0}",
                position_error(est, gt),
                joint_error(est, gt)?,
                iou(&render_robot_hard(&model, est, &cam, 0.01)?, &clean)?,
                out.loss.unwrap_or(f64::NAN)
            );
        }
    }
    println!("{:.1} FPS", frames as f64 / clock.elapsed().as_secs_f64());
    Ok(())
}
