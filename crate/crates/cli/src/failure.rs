use std::fmt::Display;

use nerfedit_core::editor::EditorError;
use nerfedit_core::field::FieldError;
use nerfedit_core::guidance::GuidanceError;
use nerfedit_core::render::RenderError;
use nerfedit_core::scene_io::SceneIoError;

/// A runtime failure and the module it came from.
#[derive(Debug)]
pub struct Failure {
    pub module: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(module: &'static str, message: impl Display) -> Self {
        Self {
            module,
            message: message.to_string(),
        }
    }
}

impl From<nerfedit_core::Error> for Failure {
    fn from(e: nerfedit_core::Error) -> Self {
        Self::new(e.module(), &e)
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                nerfedit_core::Error::from(e).into()
            }
        }
    )*};
}

from_core!(
    FieldError,
    RenderError,
    GuidanceError,
    SceneIoError,
    EditorError
);
