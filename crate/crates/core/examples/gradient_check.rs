//! Compares the analytic centroid Jacobian and loss gradient with central
//! finite differences at several step sizes.
//!
//!     cargo run --release --example gradient_check

use snaketrack::gradients::{analytic, centroid_jacobian, mask_loss_gradient, FdSteps};
use snaketrack::kinematics::RobotModel;
use snaketrack::renderer::{render_robot_hard, RenderSettings};
use snaketrack::types::{CameraIntrinsics, Pose, RobotState, UnitQuaternion, Vec3};

fn worst_relative(reference: &[f64], other: &[f64]) -> f64 {
    reference
        .iter()
        .zip(other)
        .filter(|(r, _)| r.abs() > 1e-6)
        .map(|(r, o)| (o - r).abs() / r.abs())
        .fold(0.0, f64::max)
}

fn main() -> snaketrack::Result<()> {
    let model = RobotModel::default();
    let cam = CameraIntrinsics::working_default();
    let settings = RenderSettings::default();
    let state = RobotState::new(
        vec![0.25, -0.3, 0.2, 0.35, -0.25, 0.3],
        Pose::new(UnitQuaternion::from_axis_angle(&Vec3::x(), 0.7), Vec3::new(-0.45, 0.0, 1.5)),
    );
    let mut target = state.clone();
    target.pose.translation += Vec3::new(0.01, -0.01, 0.02);
    target.theta[3] += 0.05;
    let reference = render_robot_hard(&model, &target, &cam, settings.z_near)?;

    let (_, jac) = analytic::centroid_and_jacobian(&state, &model, &cam, &settings)?;
    let (_, grad) = analytic::loss_and_gradient(&state, &reference, &model, &cam, &settings)?;
    let jac: Vec<f64> = jac.iter().copied().collect();

    println!("{:>10}  {:>14}  {:>14}", "fd step", "worst rel (H)", "worst rel (dL)");
    for scale in [1.0, 0.5, 1e-2, 1e-3, 1e-5] {
        let steps = FdSteps::default().scaled(scale);
        let fd: Vec<f64> = centroid_jacobian(&state, &model, &cam, &settings, &steps)?.iter().copied().collect();
        let fd_grad = mask_loss_gradient(&state, &reference, &model, &cam, &settings, &steps)?;
        println!(
            "{:>10.1e}  {:>14.3e}  {:>14.3e}",
            steps.step_theta,
            worst_relative(&fd, &jac),
            worst_relative(&fd_grad, &grad)
        );
    }
    Ok(())
}
