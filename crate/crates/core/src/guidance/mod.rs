//! Prompt assembly, view words, the noise schedule and score-distillation
//! gradients against pluggable noise predictors.

mod oracle;
mod prompt;
mod remote;
mod schedule;
mod sds;
mod view;

use thiserror::Error;

pub use oracle::{
    make_target_oracle, PerfectPredictor, TargetOracle, ViewTarget, ViewTargetOracle,
};
pub use prompt::{assemble_prompt, PromptBundle, Stage, ENVIRONMENT_SLOT, SUBJECT_SLOT};
pub use remote::{
    decode_image, encode_image, RemoteOptions, RemoteProvider, DEFAULT_GUIDANCE_SCALE,
    PROTOCOL_VERSION,
};
pub use schedule::DiffusionSchedule;
pub use sds::{
    implied_noise, sds_gradient, GuidanceProvider, NoiseRequest, SdsConfig, SdsSample, ViewContext,
    Weighting,
};
pub use view::{
    assign_view_word, geometric_view_word, view_word_for_angles, ViewClassifier, ViewFrame,
    VIEW_WORDS,
};

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("invalid guidance configuration: {0}")]
    InvalidConfig(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol version mismatch: expected {expected}, service reported {got}")]
    ProtocolVersion { expected: u64, got: String },
    #[error("malformed service response: {0}")]
    Protocol(String),
    #[error("service error {code}: {message}")]
    Service { code: String, message: String },
    #[error("noise prediction has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        expected: [usize; 3],
        got: [usize; 3],
    },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("provider needs the view context of each request")]
    MissingContext,
}
