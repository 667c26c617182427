use nalgebra::{Matrix2x3, Matrix2x6, Matrix3x6, Matrix3, Vector2, Vector3};

use crate::domain::{CameraIntrinsics, Pose3};
use crate::error::Result;

/// Reprojection residual `obs - π(p_c)` with its Jacobians.
///
/// `j_pose` is taken with respect to a left perturbation `δ = [ρ; φ]` of the
/// world-to-camera transform, `T_cw ← Exp(δ) · T_cw`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    pub r: Vector2<f64>,
    pub j_pose: Matrix2x6<f64>,
    pub j_point: Matrix2x3<f64>,
}

/// Residual for a camera whose centre is offset by `shift` metres along the
/// rig x axis (0 for the left camera, the stereo baseline for the right).
pub(crate) fn residual_cw(
    pose_cw: &Pose3,
    point: &Vector3<f64>,
    obs: &Vector2<f64>,
    intr: &CameraIntrinsics,
    shift: f64,
) -> Result<Residual> {
    let pc = pose_cw.transform_point(point);
    let ps = Vector3::new(pc.x - shift, pc.y, pc.z);
    let proj = intr.project_camera(&ps)?;
    let jpi = intr.projection_jacobian(&ps);
    let mut dp_dxi = Matrix3x6::zeros();
    dp_dxi.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    dp_dxi.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-pc.cross_matrix()));
    Ok(Residual {
        r: obs - proj,
        j_pose: -jpi * dp_dxi,
        j_point: -jpi * pose_cw.rotation_matrix(),
    })
}

/// Left-camera residual for a camera-to-world `pose`.
pub fn reprojection_residual(
    pose: &Pose3,
    point: &Vector3<f64>,
    obs_pixel: &Vector2<f64>,
    intr: &CameraIntrinsics,
) -> Result<Residual> {
    residual_cw(&pose.inverse(), point, obs_pixel, intr, 0.0)
}

/// Right-camera residual for a camera-to-world `pose` of the left camera.
pub fn reprojection_residual_right(
    pose: &Pose3,
    point: &Vector3<f64>,
    obs_pixel: &Vector2<f64>,
    intr: &CameraIntrinsics,
) -> Result<Residual> {
    residual_cw(&pose.inverse(), point, obs_pixel, intr, intr.baseline)
}
