//! Link frames, skeleton points and the reconstructed mesh of the default
//! six-link robot.
//!
//!     cargo run --example forward_kinematics

use snaketrack::kinematics::{forward_kinematics, reconstruct_mesh, skeleton_points, RobotModel};

fn main() -> snaketrack::Result<()> {
    let model = RobotModel::default();
    let theta = [0.3, -0.2, 0.25, 0.0, -0.3, 0.15];
    println!("{} links, {} state components", model.joint_count(), model.state_dim());

    for (k, frame) in forward_kinematics(&model, &theta)?.iter().enumerate() {
        let t = frame.translation;
        let q = frame.rotation.to_array();
        println!(
            "A_{}: origin ({:+.4}, {:+.4}, {:+.4}) quat [{:+.4}, {:+.4}, {:+.4}, {:+.4}]",
            k + 1,
            t.x,
            t.y,
            t.z,
            q[0],
            q[1],
            q[2],
            q[3]
        );
    }

    let pts = skeleton_points(&model, &theta)?;
    let tip = pts.last().unwrap();
    println!("tip at ({:+.4}, {:+.4}, {:+.4})", tip.x, tip.y, tip.z);

    let mesh = reconstruct_mesh(&model, &theta)?;
    println!(
        "mesh: {} vertices, {} faces, area {:.4} m^2",
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.surface_area()
    );
    Ok(())
}
