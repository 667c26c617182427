use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::Pose3;
use crate::error::{invalid, Error, Result};

/// Minimum camera-frame depth accepted by [`CameraIntrinsics::project`].
pub const MIN_DEPTH: f64 = 0.01;

/// Rectified stereo pinhole camera. The left camera is the reference; the
/// right camera sits `baseline` meters along the left camera's +x axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            baseline: 0.12,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, baseline: f64, width: usize, height: usize) -> Result<Self> {
        let c = Self {
            fx,
            fy,
            cx,
            cy,
            baseline,
            width,
            height,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.baseline > 0.0) {
            return Err(invalid("focal lengths and baseline must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(invalid("principal point must lie inside the image"));
        }
        Ok(())
    }

    /// Projects a point expressed in the camera frame.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(p.z > MIN_DEPTH) {
            return Err(Error::BehindCamera { depth: p.z });
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Projects a world point seen from a camera whose camera-to-world pose is `pose`.
    pub fn project(&self, pose: &Pose3, point: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project_camera(&pose.inverse().transform_point(point))
    }

    /// Projection into the right camera of the stereo pair (camera-frame input).
    pub fn project_right_camera(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project_camera(&Vector3::new(p.x - self.baseline, p.y, p.z))
    }

    /// Back-projects a pixel at the given depth into the camera frame.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(invalid(format!("depth must be positive, got {depth}")));
        }
        Ok(Vector3::new(
            (pixel.x - self.cx) * depth / self.fx,
            (pixel.y - self.cy) * depth / self.fy,
            depth,
        ))
    }

    /// Jacobian of the pinhole projection with respect to the camera-frame point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }

    /// Depth from a stereo disparity `u_left - u_right`.
    pub fn depth_from_disparity(&self, disparity: f64) -> Option<f64> {
        (disparity > 0.0).then(|| self.fx * self.baseline / disparity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 0.1, 100, 100).unwrap()
    }

    #[test]
    fn principal_axis_hits_principal_point() {
        let px = small().project(&Pose3::identity(), &Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(px, Vector2::new(50.0, 50.0));
    }

    #[test]
    fn off_axis_projection() {
        let px = small().project(&Pose3::identity(), &Vector3::new(1.0, 0.0, 5.0)).unwrap();
        assert!((px - Vector2::new(70.0, 50.0)).norm() < 1e-12);
    }

    #[test]
    fn unproject_examples() {
        let c = small();
        assert!((c.unproject(&Vector2::new(50.0, 50.0), 5.0).unwrap() - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
        assert!((c.unproject(&Vector2::new(70.0, 50.0), 5.0).unwrap() - Vector3::new(1.0, 0.0, 5.0)).norm() < 1e-12);
        assert!(c.unproject(&Vector2::new(1.0, 1.0), 0.0).is_err());
        assert!(c.unproject(&Vector2::new(1.0, 1.0), -2.0).is_err());
    }

    #[test]
    fn behind_camera_rejected() {
        let err = small().project(&Pose3::identity(), &Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(err, Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraIntrinsics::new(0.0, 100.0, 50.0, 50.0, 0.1, 100, 100).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 150.0, 50.0, 0.1, 100, 100).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 0.0, 100, 100).is_err());
    }

    #[test]
    fn stereo_depth_from_disparity() {
        let c = CameraIntrinsics::default();
        assert!((c.depth_from_disparity(12.0).unwrap() - 5.0).abs() < 1e-12);
        assert!(c.depth_from_disparity(0.0).is_none());
    }

    proptest! {
        #[test]
        fn project_unproject_round_trip(
            u in 0.0f64..640.0, v in 0.0f64..480.0, d in 0.1f64..50.0,
            r in prop::array::uniform3(-0.5f64..0.5), t in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let c = CameraIntrinsics::default();
            let px = Vector2::new(u, v);
            let p = c.unproject(&px, d).unwrap();
            prop_assert!((c.project_camera(&p).unwrap() - px).norm() < 1e-9);
            // world round trip through a pose
            let pose = Pose3::from_rotvec(Vector3::from(r), Vector3::from(t));
            let pw = pose.transform_point(&p);
            let back = c.unproject(&c.project(&pose, &pw).unwrap(), d).unwrap();
            prop_assert!((pose.transform_point(&back) - pw).norm() < 1e-9);
        }
    }
}
