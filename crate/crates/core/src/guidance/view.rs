use nalgebra::Vector3;

use super::GuidanceError;
use crate::image::Image;
use crate::scene_io::CameraPose;

pub const VIEW_WORDS: [&str; 4] = ["front view", "side view", "back view", "overhead view"];

/// Reference directions for naming views. `forward` points from `center`
/// toward where a frontal camera sits.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewFrame {
    pub center: Vector3<f64>,
    pub forward: Vector3<f64>,
    pub up: Vector3<f64>,
}

impl ViewFrame {
    /// Builds a frame, making `forward` orthogonal to `up`.
    pub fn new(
        center: Vector3<f64>,
        forward: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, GuidanceError> {
        let up = up
            .try_normalize(1e-12)
            .ok_or_else(|| GuidanceError::InvalidConfig("view frame up vector is zero".into()))?;
        let forward = (forward - up * forward.dot(&up))
            .try_normalize(1e-9)
            .ok_or_else(|| {
                GuidanceError::InvalidConfig("scene forward is parallel to up".into())
            })?;
        Ok(Self {
            center,
            forward,
            up,
        })
    }

    /// Frontal direction opposite the mean optical axis of `cameras`, so a
    /// typical training camera sits in front.
    pub fn from_cameras(
        cameras: &[CameraPose],
        center: Vector3<f64>,
    ) -> Result<Self, GuidanceError> {
        let up = Vector3::y();
        let horizontal = |v: Vector3<f64>| v - up * v.dot(&up);
        let axis = horizontal(cameras.iter().map(CameraPose::optical_axis).sum());
        let forward = if axis.norm() > 1e-6 * cameras.len() as f64 {
            -axis
        } else {
            // cameras on a full ring cancel out; fall back to the first one
            cameras
                .first()
                .map(|c| horizontal(c.center() - center))
                .ok_or_else(|| {
                    GuidanceError::InvalidConfig("no cameras to derive a view frame".into())
                })?
        };
        Self::new(center, forward, up)
    }

    /// Azimuth and elevation of `point` in degrees.
    pub fn angles(&self, point: &Vector3<f64>) -> (f64, f64) {
        let v = point - self.center;
        let n = v.norm();
        if n == 0.0 {
            return (0.0, 0.0);
        }
        let right = self.up.cross(&self.forward);
        let elevation = (v.dot(&self.up) / n).clamp(-1.0, 1.0).asin().to_degrees();
        let azimuth = v.dot(&right).atan2(v.dot(&self.forward)).to_degrees();
        (azimuth, elevation)
    }
}

/// Names a view by the camera's position relative to the frame.
pub fn geometric_view_word(camera: &CameraPose, frame: &ViewFrame) -> &'static str {
    view_word_for_angles(frame.angles(&camera.center()))
}

pub fn view_word_for_angles((azimuth, elevation): (f64, f64)) -> &'static str {
    let az = azimuth.abs();
    if elevation > 60.0 {
        VIEW_WORDS[3]
    } else if az < 45.0 {
        VIEW_WORDS[0]
    } else if az <= 135.0 {
        VIEW_WORDS[1]
    } else {
        VIEW_WORDS[2]
    }
}

/// External image-to-word matcher.
pub trait ViewClassifier: Send + Sync {
    fn classify(&self, image: &Image, candidates: &[&str]) -> Result<String, GuidanceError>;
}

/// Asks `classifier` when given, falling back to the geometric rule if it
/// fails.
pub fn assign_view_word(
    camera: &CameraPose,
    frame: &ViewFrame,
    classifier: Option<(&dyn ViewClassifier, &Image)>,
) -> String {
    if let Some((c, image)) = classifier {
        match c.classify(image, &VIEW_WORDS) {
            Ok(word) => return word,
            Err(e) => log::warn!("view classifier failed ({e}); using camera geometry"),
        }
    }
    geometric_view_word(camera, frame).to_string()
}
