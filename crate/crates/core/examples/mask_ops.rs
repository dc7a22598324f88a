//! Mask utilities: prompt boxes, dilation and erosion, IoU and the
//! segmentation-noise model.
//!
//!     cargo run --release --example mask_ops

use snaketrack::kinematics::RobotModel;
use snaketrack::masks::{dilate, dilate_signed, erode, iou, mask_to_box};
use snaketrack::renderer::render_robot_hard;
use snaketrack::synth::{NoiseSpec, PROMPT_DILATION_PX};
use snaketrack::types::{CameraIntrinsics, Pose, RobotState, Vec3};

fn main() -> snaketrack::Result<()> {
    let model = RobotModel::default();
    let cam = CameraIntrinsics::working_default();
    let state = RobotState::new(vec![0.3, -0.3, 0.3, -0.3, 0.3, -0.3], Pose::from_translation(Vec3::new(-0.4, 0.0, 1.4)));
    let mask = render_robot_hard(&model, &state, &cam, 0.01)?;

    let b = mask_to_box(&mask)?;
    let prompt = mask_to_box(&dilate(&mask, PROMPT_DILATION_PX))?;
    println!("mask {} px, box {b:?}", mask.count());
    println!("prompt box after {PROMPT_DILATION_PX} px dilation: {prompt:?}");

    for k in [-2, -1, 1, 2] {
        let m = dilate_signed(&mask, k);
        println!("erode/dilate {k:+}: {} px, IoU {:.4}", m.count(), iou(&m, &mask)?);
    }
    println!("erode(2)∘dilate(2) IoU {:.4}", iou(&erode(&dilate(&mask, 2), 2), &mask)?);

    let noise = NoiseSpec::default();
    for frame in 0..3 {
        let noisy = noise.degrade(&mask, frame);
        println!("noisy frame {frame}: {} px, IoU {:.4}", noisy.count(), iou(&noisy, &mask)?);
    }
    Ok(())
}
