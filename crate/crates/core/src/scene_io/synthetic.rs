use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CameraPose, Frame, SceneDataset, SceneIoError};
use crate::image::Image;
use crate::render::RayBounds;

/// A flat-shaded sphere resting on a square floor, seen from a ring of
/// cameras. Rays that miss both are black.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub sphere_center: [f64; 3],
    pub sphere_radius: f64,
    pub sphere_color: [f64; 3],
    pub plane_color: [f64; 3],
    /// Half side length of the floor, centered under the sphere.
    pub plane_half_extent: f64,
    pub n_views: usize,
    pub width: u32,
    pub height: u32,
    pub camera_distance: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,
    /// Maximum random azimuth offset per view, in degrees.
    pub azimuth_jitter_deg: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            sphere_center: [0.0; 3],
            sphere_radius: 0.5,
            sphere_color: [0.2, 0.4, 0.85],
            plane_color: [0.75, 0.7, 0.6],
            plane_half_extent: 1.2,
            n_views: 20,
            width: 64,
            height: 64,
            camera_distance: 3.2,
            elevation_deg: 30.0,
            fov_deg: 50.0,
            azimuth_jitter_deg: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Hit {
    Sphere(f64),
    Plane(f64),
    Miss,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SceneIoError> {
        let bad = |m: &str| Err(SceneIoError::Degenerate(m.into()));
        if !(self.sphere_radius > 0.0) {
            return bad("sphere radius must be positive");
        }
        if self.n_views < 2 {
            return bad("at least two views are required");
        }
        if self.width == 0 || self.height == 0 {
            return bad("empty image size");
        }
        if !(self.plane_half_extent > self.sphere_radius) {
            return bad("floor must extend past the sphere");
        }
        if !(self.camera_distance > self.sphere_radius) {
            return bad("cameras must lie outside the sphere");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("field of view must lie in (0, 180) degrees");
        }
        if !(self.elevation_deg.abs() < 89.0) {
            return bad("elevation must stay below the pole");
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan()
    }

    pub fn plane_height(&self) -> f64 {
        self.sphere_center[1] - self.sphere_radius
    }

    /// Scene box: the floor footprint from just under the floor to just
    /// above the sphere.
    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        let [cx, cy, cz] = self.sphere_center;
        let (e, r) = (self.plane_half_extent + 0.1, self.sphere_radius);
        (
            [cx - e, cy - r - 0.2, cz - e],
            [cx + e, cy + r + 0.3, cz + e],
        )
    }

    fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Hit {
        let c = Vector3::from(self.sphere_center);
        let oc = o - c;
        let b = oc.dot(d);
        let disc = b * b - (oc.norm_squared() - self.sphere_radius * self.sphere_radius);
        let sphere = if disc >= 0.0 {
            let s = disc.sqrt();
            [-b - s, -b + s].into_iter().find(|&t| t > 0.0)
        } else {
            None
        };
        let plane = if d.y.abs() > 1e-12 {
            let t = (self.plane_height() - o.y) / d.y;
            let p = o + d * t;
            let inside = (p.x - c.x).abs() <= self.plane_half_extent
                && (p.z - c.z).abs() <= self.plane_half_extent;
            (t > 0.0 && inside).then_some(t)
        } else {
            None
        };
        match (sphere, plane) {
            (Some(s), Some(p)) if p < s => Hit::Plane(p),
            (Some(s), _) => Hit::Sphere(s),
            (None, Some(p)) => Hit::Plane(p),
            (None, None) => Hit::Miss,
        }
    }

    /// Ray-traces one view: color image and exact sphere mask.
    pub fn render_view(&self, camera: &CameraPose) -> (Image, Image) {
        let (w, h) = (camera.width as usize, camera.height as usize);
        let mut image = Image::new(w, h, 3);
        let mut mask = Image::new(w, h, 1);
        let o = camera.center();
        for y in 0..h {
            for x in 0..w {
                let dc = Vector3::new(
                    (x as f64 + 0.5 - camera.cx) / camera.fx,
                    (y as f64 + 0.5 - camera.cy) / camera.fy,
                    1.0,
                );
                let d = (camera.rotation * dc).normalize();
                let (color, m) = match self.trace(&o, &d) {
                    Hit::Sphere(_) => (self.sphere_color, 1.0),
                    Hit::Plane(_) => (self.plane_color, 0.0),
                    Hit::Miss => ([0.0; 3], 0.0),
                };
                image.pixel_mut(x, y).copy_from_slice(&color);
                mask.pixel_mut(x, y)[0] = m;
            }
        }
        (image, mask)
    }

    /// Ring camera at azimuth `azimuth_deg` (0 looks down −Z from +Z).
    pub fn ring_camera(&self, azimuth_deg: f64) -> Result<CameraPose, SceneIoError> {
        let (az, el) = (azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        let c = Vector3::from(self.sphere_center);
        let eye = c + self.camera_distance
            * Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
        CameraPose::look_at(eye, c, Vector3::y(), self.focal(), self.width, self.height)
    }
}

/// Renders the scene from `n_views` evenly spaced ring cameras. The seed
/// only matters when azimuth jitter is enabled.
pub fn make_synthetic_scene(spec: &SyntheticSpec, seed: u64) -> Result<SceneDataset, SceneIoError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..spec.n_views)
        .map(|i| {
            let mut az = 360.0 * i as f64 / spec.n_views as f64;
            if spec.azimuth_jitter_deg > 0.0 {
                az += rng.gen_range(-spec.azimuth_jitter_deg..=spec.azimuth_jitter_deg);
            }
            let camera = spec.ring_camera(az)?;
            let (image, mask) = spec.render_view(&camera);
            Ok(Frame {
                camera,
                image,
                mask: Some(mask),
                image_path: None,
                mask_path: None,
            })
        })
        .collect::<Result<Vec<_>, SceneIoError>>()?;
    let (bbox_min, bbox_max) = spec.bbox();
    let half_diag = 0.5
        * (0..3)
            .map(|k| (bbox_max[k] - bbox_min[k]).powi(2))
            .sum::<f64>()
            .sqrt();
    let near = (spec.camera_distance - half_diag).max(0.05 * spec.camera_distance);
    Ok(SceneDataset {
        frames,
        bbox_min,
        bbox_max,
        downsample_factor: 1,
        bounds: Some(RayBounds {
            near,
            far: spec.camera_distance + half_diag,
        }),
    })
}
