use thiserror::Error;

use crate::editor::EditorError;
use crate::field::FieldError;
use crate::guidance::GuidanceError;
use crate::render::RenderError;
use crate::scene_io::SceneIoError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    SceneIo(#[from] SceneIoError),
    #[error(transparent)]
    Editor(#[from] EditorError),
}

impl Error {
    /// Name of the module the failure came from.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Field(_) => "scene-field",
            Error::Render(_) => "renderer",
            Error::Guidance(_) => "guidance",
            Error::SceneIo(_) => "scene-io",
            Error::Editor(e) => e.module(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
