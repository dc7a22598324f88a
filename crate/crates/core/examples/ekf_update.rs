//! One centroid update on a deliberately offset prior, showing the gain,
//! the mean correction and the covariance shrinkage.
//!
//!     cargo run --release --example ekf_update

use snaketrack::estimator::{ekf_update, initial_belief, EstimatorConfig, Observation};
use snaketrack::gradients::{observe, GradientBackend};
use snaketrack::kinematics::RobotModel;
use snaketrack::renderer::{render_robot_hard, RenderSettings};
use snaketrack::types::{CameraIntrinsics, Pose, RobotState, Vec3};

fn main() -> snaketrack::Result<()> {
    let model = RobotModel::default();
    let cam = CameraIntrinsics::working_default();
    let settings = RenderSettings::default();
    let truth = RobotState::new(vec![0.2, -0.2, 0.2, -0.2, 0.2, -0.2], Pose::from_translation(Vec3::new(-0.4, 0.0, 1.5)));
    let mut guess = truth.clone();
    guess.pose.translation += Vec3::new(0.04, -0.02, 0.0);

    let observed = render_robot_hard(&model, &truth, &cam, settings.z_near)?;
    let obs = Observation::from_mask(&observed)?;
    let prior = initial_belief(guess);
    let (predicted, h) = observe(GradientBackend::Analytic, &prior.mean, &model, &cam, &settings, &Default::default())?;

    for r_px in [0.5, 2.0, 20.0] {
        let cfg = EstimatorConfig { meas_noise_px: r_px, ..Default::default() };
        let post = ekf_update(&prior, &obs, predicted, &h, &cfg)?;
        let err = |s: &RobotState| (s.pose.translation - truth.pose.translation).norm();
        println!(
            "R = {r_px:>4} px: residual ({:+.2}, {:+.2}) px, base error {:.4} -> {:.4} m, trace {:.4} -> {:.4}",
            obs.m.0 - predicted.0,
            obs.m.1 - predicted.1,
            err(&prior.mean),
            err(&post.mean),
            prior.covariance.trace(),
            post.covariance.trace()
        );
    }
    Ok(())
}
