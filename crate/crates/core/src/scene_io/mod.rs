//! Camera poses, dataset manifests, image files, the procedural test scene
//! and run configuration.

mod camera;
mod config;
mod dataset;
mod image_io;
mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use camera::{orthonormalize, CameraPose, ORTHONORMAL_REPAIR_TOLERANCE};
pub use config::{
    parse_config, parse_config_str, DatasetSource, FieldOptions, ProviderConfig, ProviderSelection,
    RenderOptions, RunConfig,
};
pub use dataset::{
    load_dataset, save_dataset, Frame, Manifest, ManifestBox, ManifestFrame, SceneDataset,
};
pub use image_io::{box_downsample, load_mask, load_rgb, save_npy, save_png};
pub use synthetic::{make_synthetic_scene, SyntheticSpec};

#[derive(Debug, Error)]
pub enum SceneIoError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("rotation is not orthonormal: {0}")]
    Rotation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {message}")]
    Image { path: PathBuf, message: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{path}: expected {expected_width}x{expected_height}, found {width}x{height}")]
    DimensionMismatch {
        path: PathBuf,
        expected_width: u32,
        expected_height: u32,
        width: u32,
        height: u32,
    },
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("degenerate scene: {0}")]
    Degenerate(String),
}

impl SceneIoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
