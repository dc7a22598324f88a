//! Accuracy against speed for 1, 5 and 10 refinement steps on a shortened
//! moving benchmark.
//!
//!     cargo run --release --example refinement_sweep -- [frames]

use std::time::Instant;

use snaketrack::estimator::{initial_belief, EstimatorConfig, Tracker};
use snaketrack::kinematics::RobotModel;
use snaketrack::renderer::render_robot_hard;
use snaketrack::synth::{evaluate_sequence, generate_trajectory, NoiseSpec, TrajectoryConfig};
use snaketrack::types::CameraIntrinsics;

fn main() -> snaketrack::Result<()> {
    let frames: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let model = RobotModel::default();
    let cam = CameraIntrinsics::working_default();
    let mut scene = TrajectoryConfig::moving_benchmark(model.joint_count());
    scene.frames = frames;
    let truth = generate_trajectory(&model, &scene)?;
    let clean = truth
        .iter()
        .map(|s| render_robot_hard(&model, s, &cam, 0.01))
        .collect::<snaketrack::Result<Vec<_>>>()?;
    let noise = NoiseSpec::default();
    let observed: Vec<_> = clean.iter().enumerate().map(|(i, m)| noise.degrade(m, i)).collect();

    println!("{:>5}  {:>8}  {:>8}  {:>7}  {:>7}", "steps", "pos [m]", "joint", "IoU", "FPS");
    for steps in [1, 5, 10] {
        let cfg = EstimatorConfig {
            refine_steps: steps,
            meas_noise_px: 20.0,
            process_noise: [vec![4e-4; 6], vec![1e-4; 7]].concat(),
            ..Default::default()
        };
        let mut tracker = Tracker::new(initial_belief(truth[0].clone()), &model, &cam, &cfg)?;
        let mut est = Vec::with_capacity(frames);
        let mut busy = 0.0;
        for (t, m) in scene.times().into_iter().zip(&observed) {
            let clock = Instant::now();
            est.push(tracker.process(t, m)?.belief.mean);
            busy += clock.elapsed().as_secs_f64();
        }
        let pred = est
            .iter()
            .map(|s| render_robot_hard(&model, s, &cam, 0.01))
            .collect::<snaketrack::Result<Vec<_>>>()?;
        let r = evaluate_sequence(&est, &truth, &scene.times(), &pred, &clean)?;
        println!(
            "{steps:>5}  {:>8.4}  {:>8.4}  {:>7.4}  {:>7.1}",
            r.mean_pos_err(),
            r.mean_joint_err(),
            r.mean_iou(),
            frames as f64 / busy
        );
    }
    Ok(())
}
