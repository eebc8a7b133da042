use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image_io::{box_downsample, load_mask, load_rgb, save_png};
use super::{CameraPose, SceneIoError};
use crate::image::Image;
use crate::render::RayBounds;

/// On-disk description of a capture. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub frames: Vec<ManifestFrame>,
    pub bbox: ManifestBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    /// Row-major camera-to-world matrix.
    pub transform_matrix: [[f64; 4]; 4],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub camera: CameraPose,
    pub image: Image,
    /// Binary foreground mask, one channel.
    pub mask: Option<Image>,
    pub image_path: Option<PathBuf>,
    pub mask_path: Option<PathBuf>,
}

/// Decoded views, immutable once loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub frames: Vec<Frame>,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub downsample_factor: u32,
    /// Capture-provided ray bounds; otherwise derived from the box.
    pub bounds: Option<RayBounds>,
}

impl SceneDataset {
    pub fn ray_bounds(&self) -> RayBounds {
        self.bounds
            .unwrap_or_else(|| RayBounds::from_bbox(self.bbox_min, self.bbox_max))
    }

    pub fn image_size(&self) -> Option<(u32, u32)> {
        self.frames
            .first()
            .map(|f| (f.camera.width, f.camera.height))
    }

    pub fn cameras(&self) -> Vec<CameraPose> {
        self.frames.iter().map(|f| f.camera.clone()).collect()
    }

    pub fn has_masks(&self) -> bool {
        self.frames.iter().all(|f| f.mask.is_some())
    }

    /// Centroid of the camera centers and their mean distance to the box center.
    pub fn camera_ring(&self) -> (Vector3<f64>, f64) {
        let center = Vector3::from(self.bbox_min).lerp(&Vector3::from(self.bbox_max), 0.5);
        let n = self.frames.len().max(1) as f64;
        let radius = self
            .frames
            .iter()
            .map(|f| (f.camera.center() - center).norm())
            .sum::<f64>()
            / n;
        (center, radius)
    }

    /// Checks the invariants a training run relies on.
    pub fn validate(&self, require_masks: bool) -> Result<(), SceneIoError> {
        let Some((w, h)) = self.image_size() else {
            return Err(SceneIoError::Manifest("dataset has no frames".into()));
        };
        for (i, f) in self.frames.iter().enumerate() {
            f.camera.validate()?;
            let path = f
                .image_path
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("frame {i}")));
            let check = |img: &Image| {
                if img.width as u32 != w || img.height as u32 != h {
                    Err(SceneIoError::DimensionMismatch {
                        path: path.clone(),
                        expected_width: w,
                        expected_height: h,
                        width: img.width as u32,
                        height: img.height as u32,
                    })
                } else {
                    Ok(())
                }
            };
            check(&f.image)?;
            if (f.camera.width, f.camera.height) != (w, h) {
                return Err(SceneIoError::Manifest(format!(
                    "frame {i} camera size differs"
                )));
            }
            match &f.mask {
                Some(m) => check(m)?,
                None if require_masks => {
                    return Err(SceneIoError::Manifest(format!("frame {i} has no mask")));
                }
                None => {}
            }
        }
        for k in 0..3 {
            if !(self.bbox_min[k] < self.bbox_max[k]) {
                return Err(SceneIoError::Manifest(format!(
                    "degenerate bbox on axis {k}"
                )));
            }
        }
        Ok(())
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_manifest(path: &Path) -> Result<Manifest, SceneIoError> {
    let text = fs::read_to_string(path).map_err(|e| SceneIoError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| SceneIoError::Manifest(format!("{}: {}", e.path(), e.inner())))
}

/// Loads a manifest, decoding every image and mask and downsampling them by
/// `downsample_factor`.
pub fn load_dataset(
    manifest_path: &Path,
    downsample_factor: u32,
) -> Result<SceneDataset, SceneIoError> {
    if downsample_factor == 0 {
        return Err(SceneIoError::Manifest(
            "downsample factor must be at least 1".into(),
        ));
    }
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let frames = manifest
        .frames
        .par_iter()
        .map(|mf| load_frame(base, mf, downsample_factor))
        .collect::<Result<Vec<_>, _>>()?;
    let bounds = match (manifest.near, manifest.far) {
        (Some(near), Some(far)) if near < far => Some(RayBounds { near, far }),
        (None, None) => None,
        _ => {
            return Err(SceneIoError::Manifest(
                "near and far must both be given with near < far".into(),
            ))
        }
    };
    let dataset = SceneDataset {
        frames,
        bbox_min: manifest.bbox.min,
        bbox_max: manifest.bbox.max,
        downsample_factor,
        bounds,
    };
    dataset.validate(false)?;
    Ok(dataset)
}

fn load_frame(base: &Path, mf: &ManifestFrame, factor: u32) -> Result<Frame, SceneIoError> {
    let image_path = resolve(base, &mf.image);
    let full = load_rgb(&image_path)?;
    let (w, h) = (full.width as u32, full.height as u32);
    let mask_path = mf.mask.as_deref().map(|m| resolve(base, m));
    let mask = match &mask_path {
        Some(p) => {
            let m = load_mask(p)?;
            if (m.width as u32, m.height as u32) != (w, h) {
                return Err(SceneIoError::DimensionMismatch {
                    path: p.clone(),
                    expected_width: w,
                    expected_height: h,
                    width: m.width as u32,
                    height: m.height as u32,
                });
            }
            // re-binarize after averaging so masks stay in {0, 1}
            let mut m = box_downsample(&m, factor);
            m.data
                .iter_mut()
                .for_each(|v| *v = if *v >= 0.5 { 1.0 } else { 0.0 });
            Some(m)
        }
        None => None,
    };
    let camera = CameraPose::from_c2w(&mf.transform_matrix, [mf.fx, mf.fy, mf.cx, mf.cy], w, h)?
        .downsampled(factor);
    Ok(Frame {
        camera,
        image: box_downsample(&full, factor),
        mask,
        image_path: Some(image_path),
        mask_path,
    })
}

/// Writes every frame as PNG next to a `transforms.json` manifest and
/// returns the manifest path. Reloading it with factor 1 reproduces the
/// dataset up to 8-bit quantization.
pub fn save_dataset(dataset: &SceneDataset, dir: &Path) -> Result<PathBuf, SceneIoError> {
    fs::create_dir_all(dir).map_err(|e| SceneIoError::io(dir, e))?;
    let mut frames = Vec::with_capacity(dataset.frames.len());
    for (i, f) in dataset.frames.iter().enumerate() {
        let image = format!("frame_{i:03}.png");
        save_png(&dir.join(&image), &f.image)?;
        let mask = match &f.mask {
            Some(m) => {
                let name = format!("mask_{i:03}.png");
                save_png(&dir.join(&name), m)?;
                Some(name)
            }
            None => None,
        };
        let c = &f.camera;
        frames.push(ManifestFrame {
            image,
            mask,
            transform_matrix: c.to_c2w(),
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
        });
    }
    let manifest = Manifest {
        frames,
        bbox: ManifestBox {
            min: dataset.bbox_min,
            max: dataset.bbox_max,
        },
        near: dataset.bounds.map(|b| b.near),
        far: dataset.bounds.map(|b| b.far),
    };
    let path = dir.join("transforms.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| SceneIoError::io(&path, e))?;
    Ok(path)
}
