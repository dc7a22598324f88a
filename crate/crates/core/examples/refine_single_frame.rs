//! Adam refinement of a perturbed state against one observed mask.
//!
//!     cargo run --release --example refine_single_frame -- [steps]

use snaketrack::estimator::{refine, EstimatorConfig};
use snaketrack::kinematics::RobotModel;
use snaketrack::masks::iou;
use snaketrack::renderer::render_robot_hard;
use snaketrack::synth::{joint_error, perturb_state, position_error};
use snaketrack::types::{CameraIntrinsics, Pose, RobotState, UnitQuaternion, Vec3};

fn main() -> snaketrack::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let model = RobotModel::default();
    let cam = CameraIntrinsics::working_default();
    let truth = RobotState::new(
        vec![0.25, -0.3, 0.2, 0.35, -0.25, 0.3],
        Pose::new(UnitQuaternion::from_axis_angle(&Vec3::x(), 0.785), Vec3::new(-0.45, 0.0, 1.5)),
    );
    let reference = render_robot_hard(&model, &truth, &cam, 0.01)?;
    let start = perturb_state(&truth, 0.01, 0.05, 0.0, 1)?;

    let cfg = EstimatorConfig { refine_steps: steps, ..Default::default() };
    let r = refine(&start, &reference, &model, &cam, &cfg)?;
    for (label, s) in [("start", &start), ("refined", &r.state)] {
        println!(
            "{label:>8}: pos err {:.4} m, joint err {:.4} rad, IoU {:.4}",
            position_error(s, &truth),
            joint_error(s, &truth)?,
            iou(&render_robot_hard(&model, s, &cam, 0.01)?, &reference)?
        );
    }
    println!("loss {:.1} -> {:.1} in {steps} steps", r.initial_loss, r.final_loss);
    Ok(())
}
