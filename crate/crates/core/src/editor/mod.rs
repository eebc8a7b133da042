//! Optimization: Adam, reconstruction of a foreground-aware field and
//! guided editing with background preservation.

mod adam;
mod edit;
mod losses;
mod reconstruct;

use std::path::PathBuf;

use thiserror::Error;

use crate::field::FieldError;
use crate::guidance::GuidanceError;
use crate::render::RenderError;
use crate::scene_io::SceneIoError;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use edit::{
    edit_scene, load_resume_state, resume_state_path, save_resume_state, EditConfig, EditOutcome,
    EditRun, EditScene, LogRecord, ResumeState,
};
pub use losses::{
    background_preservation_loss, bce, reconstruction_losses, reconstruction_pixel_grad,
    ReconstructionLosses,
};
pub use reconstruct::{
    train_reconstruction, Reconstruction, ReconstructionConfig, TrainingObserver, TrainingRays,
};

#[derive(Debug, Error)]
pub enum EditorError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient at iteration {iteration} in the {term} term (parameter {index})")]
    NonFiniteGradient {
        iteration: usize,
        term: String,
        index: usize,
    },
    #[error("training diverged at iteration {iteration} in the {term} term{}", checkpoint_note(.checkpoint))]
    Diverged {
        iteration: usize,
        term: String,
        checkpoint: Option<PathBuf>,
    },
    #[error("guidance failed at iteration {iteration}{}: {source}", checkpoint_note(.checkpoint))]
    Guidance {
        iteration: usize,
        #[source]
        source: GuidanceError,
        checkpoint: Option<PathBuf>,
    },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Dataset(#[from] SceneIoError),
    #[error(transparent)]
    Setup(#[from] GuidanceError),
}

fn checkpoint_note(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!("; last state saved to {}", p.display()),
        None => String::new(),
    }
}

impl EditorError {
    /// Module where the failure originated.
    pub fn module(&self) -> &'static str {
        match self {
            EditorError::Render(_) => "renderer",
            EditorError::Field(_) => "scene-field",
            EditorError::Dataset(_) => "scene-io",
            EditorError::Guidance { .. } | EditorError::Setup(_) => "guidance",
            _ => "editor",
        }
    }
}

/// Seed for one training iteration, independent of earlier iterations so
/// resumed runs draw the same batches.
pub fn iteration_seed(seed: u64, iteration: u64) -> u64 {
    crate::render::ray_seed(seed ^ 0x6a09_e667_f3bc_c909, iteration as usize)
}
