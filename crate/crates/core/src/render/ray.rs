use nalgebra::Vector3;

use crate::scene_io::CameraPose;

use super::RenderError;

/// `r(k) = origin + k · direction` for `k ∈ [near, far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.near < self.far) {
            return Err(RenderError::InvalidRay(format!(
                "near {} >= far {}",
                self.near, self.far
            )));
        }
        let n = self.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(RenderError::InvalidRay(format!("direction norm {n}")));
        }
        Ok(())
    }

    pub fn at(&self, k: f64) -> [f64; 3] {
        [
            self.origin[0] + k * self.direction[0],
            self.origin[1] + k * self.direction[1],
            self.origin[2] + k * self.direction[2],
        ]
    }
}

/// Integration interval along camera rays.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayBounds {
    pub near: f64,
    pub far: f64,
}

impl RayBounds {
    /// 5%–150% of the box diagonal.
    pub fn from_bbox(min: [f64; 3], max: [f64; 3]) -> Self {
        let diag = (0..3)
            .map(|k| (max[k] - min[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        Self {
            near: 0.05 * diag,
            far: 1.5 * diag,
        }
    }
}

/// Every pixel of a `width × height` image, row-major.
pub fn all_pixels(width: u32, height: u32) -> Vec<(u32, u32)> {
    (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .collect()
}

/// Rays through the centers of `pixels`.
pub fn generate_rays(
    camera: &CameraPose,
    pixels: &[(u32, u32)],
    bounds: RayBounds,
) -> Result<Vec<Ray>, RenderError> {
    let r = &camera.rotation;
    let det = r.determinant();
    let ortho = (r.transpose() * r - nalgebra::Matrix3::identity())
        .abs()
        .max();
    if !det.is_finite() || (det - 1.0).abs() > 1e-5 || ortho > 1e-5 {
        return Err(RenderError::SingularRotation(det));
    }
    if !(camera.fx > 0.0 && camera.fy > 0.0) {
        return Err(RenderError::InvalidRay(
            "focal lengths must be positive".into(),
        ));
    }
    if !(bounds.near < bounds.far) {
        return Err(RenderError::InvalidRay(format!(
            "near {} >= far {}",
            bounds.near, bounds.far
        )));
    }
    let origin = [
        camera.translation.x,
        camera.translation.y,
        camera.translation.z,
    ];
    pixels
        .iter()
        .map(|&(x, y)| {
            if x >= camera.width || y >= camera.height {
                return Err(RenderError::PixelOutOfBounds { x, y });
            }
            let cam_dir = Vector3::new(
                (x as f64 + 0.5 - camera.cx) / camera.fx,
                (y as f64 + 0.5 - camera.cy) / camera.fy,
                1.0,
            );
            let d = (r * cam_dir).normalize();
            Ok(Ray {
                origin,
                direction: [d.x, d.y, d.z],
                near: bounds.near,
                far: bounds.far,
            })
        })
        .collect()
}
