use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::lie::Se3Pose;

/// Pinhole intrinsics with a single focal length and no distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub principal_point: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt()
    }
}

impl CameraIntrinsics {
    pub fn new(focal: f64, cx: f64, cy: f64) -> Self {
        Self {
            focal,
            principal_point: Vector2::new(cx, cy),
        }
    }

    /// Centered intrinsics for an image of the given size.
    pub fn centered(focal: f64, size: ImageSize) -> Self {
        Self::new(focal, size.width as f64 / 2.0, size.height as f64 / 2.0)
    }

    pub fn is_valid(&self, size: &ImageSize) -> bool {
        self.focal > 0.0 && self.focal.is_finite() && size.contains(&self.principal_point)
    }

    pub fn with_focal(&self, focal: f64) -> Self {
        Self { focal, ..*self }
    }

    /// Pixel of a camera-frame point, `None` when it is not in front.
    pub fn project_camera(&self, x_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if x_cam.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.focal * x_cam.x / x_cam.z + self.principal_point.x,
            self.focal * x_cam.y / x_cam.z + self.principal_point.y,
        ))
    }

    /// Normalized image coordinates `K⁻¹ [u v 1]ᵀ` (first two entries).
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        (pixel - self.principal_point) / self.focal
    }

    /// Homogeneous ray `(x, y, 1)` in the camera frame.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let n = self.normalize(pixel);
        Vector3::new(n.x, n.y, 1.0)
    }
}

/// Project a world point. `None` flags a point behind (or on) the image plane.
pub fn project(k: &CameraIntrinsics, pose: &Se3Pose, x: &Vector3<f64>) -> Option<Vector2<f64>> {
    k.project_camera(&pose.apply(x))
}

pub fn project_with_focal(
    k: &CameraIntrinsics,
    focal: f64,
    pose: &Se3Pose,
    x: &Vector3<f64>,
) -> Option<Vector2<f64>> {
    k.with_focal(focal).project_camera(&pose.apply(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        let k = CameraIntrinsics::new(1.0, 0.0, 0.0);
        assert_eq!(
            project(&k, &Se3Pose::identity(), &Vector3::new(0.0, 0.0, 5.0)),
            Some(Vector2::new(0.0, 0.0))
        );
        let k = CameraIntrinsics::new(100.0, 50.0, 50.0);
        assert_eq!(
            project(&k, &Se3Pose::identity(), &Vector3::new(1.0, 1.0, 2.0)),
            Some(Vector2::new(100.0, 100.0))
        );
        assert_eq!(
            project(&k, &Se3Pose::identity(), &Vector3::new(0.0, 0.0, -1.0)),
            None
        );
    }

    #[test]
    fn camera_from_world_convention() {
        // A camera centered at (0, 0, -10) looking down +z sees the origin
        // on its optical axis at depth 10.
        let pose = Se3Pose::from_center(nalgebra::Matrix3::identity(), Vector3::new(0.0, 0.0, -10.0));
        assert_eq!(pose.apply(&Vector3::zeros()), Vector3::new(0.0, 0.0, 10.0));
        let k = CameraIntrinsics::new(500.0, 320.0, 240.0);
        assert_eq!(
            project(&k, &pose, &Vector3::zeros()),
            Some(Vector2::new(320.0, 240.0))
        );
    }

    #[test]
    fn normalize_inverts_projection() {
        let k = CameraIntrinsics::new(800.0, 400.0, 300.0);
        let x = Vector3::new(0.3, -0.2, 4.0);
        let pix = k.project_camera(&x).unwrap();
        let ray = k.ray(&pix);
        assert!((ray * 4.0 - x).norm() < 1e-12);
        assert!(k.is_valid(&ImageSize::new(800, 600)));
        assert!(!k.is_valid(&ImageSize::new(300, 200)));
    }
}
