use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snaketrack::cli::RunConfig;
use snaketrack::estimator::{initial_belief, EstimatorConfig, Tracker};
use snaketrack::kinematics::RobotModel;
use snaketrack::masks::BinaryMask;
use snaketrack::renderer::{render_robot_hard, RenderSettings};
use snaketrack::synth::{evaluate_sequence, generate_trajectory, MetricsReport, NoiseSpec, TrajectoryConfig};
use snaketrack::types::{CameraIntrinsics, RobotState, Vec3};

fn benchmark_config() -> EstimatorConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/estimate.toml");
    RunConfig::load(&path).unwrap().estimator
}

fn track(scene: &TrajectoryConfig, noise: &NoiseSpec, init: RobotState, cfg: &EstimatorConfig) -> MetricsReport {
    let model = RobotModel::default();
    let cam = CameraIntrinsics::working_default();
    let z_near = RenderSettings::default().z_near;
    let truth = generate_trajectory(&model, scene).unwrap();
    let clean: Vec<BinaryMask> = truth.iter().map(|s| render_robot_hard(&model, s, &cam, z_near).unwrap()).collect();
    let mut tracker = Tracker::new(initial_belief(init), &model, &cam, cfg).unwrap();
    let times = scene.times();
    let mut est = Vec::new();
    for (i, m) in clean.iter().enumerate() {
        let observed = if noise.is_clean() { m.clone() } else { noise.degrade(m, i) };
        est.push(tracker.process(times[i], &observed).unwrap().belief.mean);
    }
    let pred: Vec<BinaryMask> = est.iter().map(|s| render_robot_hard(&model, s, &cam, z_near).unwrap()).collect();
    evaluate_sequence(&est, &truth, &times, &pred, &clean).unwrap()
}

#[test]
fn static_scene_position_converges_within_ten_frames() {
    let scene = TrajectoryConfig::static_scene(6, 10);
    let truth = generate_trajectory(&RobotModel::default(), &scene).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut init = truth[0].clone();
    for t in &mut init.theta {
        *t += if rng.random_bool(0.5) { 0.1 } else { -0.1 };
    }
    let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    init.pose.translation += dir.normalize() * 0.05;
    let report = track(&scene, &NoiseSpec::none(), init, &benchmark_config());
    let last = report.frames.last().unwrap();
    assert!(last.pos_err_m < 0.01, "position error {}", last.pos_err_m);
    assert!(report.frames[0].pos_err_m > last.pos_err_m);
}

#[test]
fn more_refinement_improves_benchmark_iou() {
    let mut scene = TrajectoryConfig::moving_benchmark(6);
    scene.frames = 30;
    let init = generate_trajectory(&RobotModel::default(), &scene).unwrap()[0].clone();
    let cfg = benchmark_config();
    let none = track(&scene, &NoiseSpec::default(), init.clone(), &EstimatorConfig { refine_steps: 0, ..cfg.clone() });
    let ten = track(&scene, &NoiseSpec::default(), init, &cfg);
    assert!(ten.mean_iou() > none.mean_iou(), "{} vs {}", ten.mean_iou(), none.mean_iou());
}

#[test]
#[ignore = "not met: from the exact first state the noiseless benchmark still drifts to about 0.13 m and 0.28 rad"]
fn noiseless_benchmark_from_truth_is_a_near_fixed_point() {
    let scene = TrajectoryConfig::moving_benchmark(6);
    let init = generate_trajectory(&RobotModel::default(), &scene).unwrap()[0].clone();
    let report = track(&scene, &NoiseSpec::none(), init, &benchmark_config());
    assert!(report.mean_pos_err() < 0.005, "mean position error {}", report.mean_pos_err());
    assert!(report.mean_joint_err() < 0.01, "mean joint error {}", report.mean_joint_err());
}
