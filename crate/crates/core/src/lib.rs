//! Foreground-aware neural radiance fields and diffusion-guided editing.
//!
//! A [`field::FieldParameters`] maps points and view directions to density,
//! color and an editing probability. [`render`] composites it along camera
//! rays in full, foreground-only or background-only mode, and [`editor`]
//! fits it to captures and then edits it under score-distillation guidance
//! from a [`guidance::GuidanceProvider`].

pub mod editor;
mod error;
pub mod field;
pub mod guidance;
pub mod image;
pub mod real;
pub mod render;
pub mod scene_io;

pub use error::{Error, Result};
pub use field::{FieldConfig, FieldParameters, FieldResponse, Gradients, HashGridConfig};
pub use image::Image;
pub use real::Real;
pub use render::{Ray, RenderMode, RenderOutput, RenderSettings};
pub use scene_io::{CameraPose, RunConfig, SceneDataset};
