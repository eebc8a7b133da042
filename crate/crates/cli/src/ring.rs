use nalgebra::Vector3;
use nerfedit_core::scene_io::{CameraPose, SceneDataset, SceneIoError};

/// `n` cameras on a horizontal ring around the scene center at the mean
/// training-camera distance, all looking at the center.
pub fn turntable(
    dataset: &SceneDataset,
    n: usize,
    width: u32,
    height: u32,
    elevation_deg: Option<f64>,
) -> Result<Vec<CameraPose>, SceneIoError> {
    let (center, radius) = dataset.camera_ring();
    let first = dataset
        .frames
        .first()
        .ok_or_else(|| SceneIoError::Degenerate("dataset has no frames".into()))?;
    let elevation = elevation_deg.map(f64::to_radians).unwrap_or_else(|| {
        let sum: f64 = dataset
            .frames
            .iter()
            .map(|f| {
                let v = f.camera.center() - center;
                (v.y / v.norm()).clamp(-1.0, 1.0).asin()
            })
            .sum();
        sum / dataset.frames.len() as f64
    });
    // keep the training field of view at the new width
    let focal = first.camera.fx * width as f64 / first.camera.width as f64;
    (0..n)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / n as f64;
            let offset = Vector3::new(
                elevation.cos() * az.sin(),
                elevation.sin(),
                elevation.cos() * az.cos(),
            );
            CameraPose::look_at(
                center + radius * offset,
                center,
                Vector3::y(),
                focal,
                width,
                height,
            )
        })
        .collect()
}
