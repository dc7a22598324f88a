//! Renders soft and hard silhouettes of one pose and writes them as PNGs.
//!
//!     cargo run --release --example soft_silhouette -- [out_dir]

use std::path::PathBuf;

use snaketrack::kinematics::RobotModel;
use snaketrack::masks::{iou, save_mask};
use snaketrack::renderer::{render_robot_hard, render_robot_soft, Coverage, RenderSettings};
use snaketrack::types::{CameraIntrinsics, Pose, RobotState, UnitQuaternion, Vec3};

fn main() -> snaketrack::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "silhouettes".into()));
    std::fs::create_dir_all(&out).map_err(|e| snaketrack::Error::Parameter(e.to_string()))?;

    let model = RobotModel::default();
    let cam = CameraIntrinsics::working_default();
    let state = RobotState::new(
        vec![0.3, -0.35, 0.2, 0.4, -0.25, 0.3],
        Pose::new(
            UnitQuaternion::from_axis_angle(&Vec3::x(), 0.8),
            Vec3::new(-0.45, 0.0, 1.5),
        ),
    );

    let hard = render_robot_hard(&model, &state, &cam, 0.01)?;
    save_mask(&hard, &out.join("hard.png"))?;
    println!("hard: {} px", hard.count());

    for sigma in [0.5, 1.0, 2.0] {
        for coverage in [Coverage::Links, Coverage::Faces] {
            let settings = RenderSettings {
                coverage,
                ..RenderSettings::with_sigma(sigma)
            };
            let soft = render_robot_soft(&model, &state, &cam, &settings)?;
            let name = format!("soft_{coverage:?}_sigma{sigma}.png").to_lowercase();
            soft.save_png(&out.join(&name))?;
            println!(
                "{name}: mass {:.1}, IoU of 0.5-threshold vs hard {:.4}",
                soft.sum(),
                iou(&soft.threshold(0.5), &hard)?
            );
        }
    }
    println!("written to {}", out.display());
    Ok(())
}
