//! Zeroth and first image moments, and the centroid, of soft and hard
//! silhouettes.
//!
//!     cargo run --release --example image_moments

use snaketrack::kinematics::RobotModel;
use snaketrack::renderer::{centroid, compute_moment, render_robot_hard, render_robot_soft, RenderSettings};
use snaketrack::types::{CameraIntrinsics, Pose, RobotState, Vec3};

fn main() -> snaketrack::Result<()> {
    let model = RobotModel::default();
    let cam = CameraIntrinsics::working_default();
    for x in [-0.6, -0.45, -0.3] {
        let state = RobotState::new(vec![0.2; 6], Pose::from_translation(Vec3::new(x, 0.02, 1.4)));
        let hard = render_robot_hard(&model, &state, &cam, 0.01)?;
        let soft = render_robot_soft(&model, &state, &cam, &RenderSettings::default())?;
        let (hu, hv) = centroid(&hard)?;
        let (su, sv) = centroid(&soft)?;
        println!(
            "b_x {x:+.2}: M00 hard {:.0} soft {:.1}, M10 soft {:.3e}, M01 soft {:.3e}, centroid hard ({hu:.2}, {hv:.2}) soft ({su:.2}, {sv:.2})",
            compute_moment(&hard, 0, 0),
            compute_moment(&soft, 0, 0),
            compute_moment(&soft, 1, 0),
            compute_moment(&soft, 0, 1),
        );
    }
    Ok(())
}
