use serde::{Deserialize, Serialize};

use super::GuidanceError;

pub const SUBJECT_SLOT: &str = "[subject]";
pub const ENVIRONMENT_SLOT: &str = "[environment]";

/// Which part of the scene an editing iteration renders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Local,
    Global,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Local => "local",
            Stage::Global => "global",
        }
    }
}

/// Parts of an editing prompt. `subject_token` is an opaque learned word
/// standing for a reference subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptBundle {
    pub subject_token: Option<String>,
    pub class_word: String,
    pub subject_modifiers: String,
    pub environment: String,
    pub template: String,
}

impl Default for PromptBundle {
    fn default() -> Self {
        Self {
            subject_token: None,
            class_word: "sphere".into(),
            subject_modifiers: "red".into(),
            environment: "on a wooden floor".into(),
            template: format!("{SUBJECT_SLOT} {ENVIRONMENT_SLOT}"),
        }
    }
}

impl PromptBundle {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if self.class_word.trim().is_empty() {
            return Err(GuidanceError::InvalidPrompt(
                "class_word must not be empty".into(),
            ));
        }
        for slot in [SUBJECT_SLOT, ENVIRONMENT_SLOT] {
            let n = self.template.matches(slot).count();
            if n != 1 {
                return Err(GuidanceError::InvalidPrompt(format!(
                    "template must contain {slot} exactly once, found {n}"
                )));
            }
        }
        if let Some(tok) = &self.subject_token {
            if tok.trim().is_empty() {
                return Err(GuidanceError::InvalidPrompt(
                    "subject_token must not be blank".into(),
                ));
            }
        }
        Ok(())
    }

    fn subject(&self, with_token: bool) -> String {
        let token = self.subject_token.as_deref().filter(|_| with_token);
        let words = [
            Some("a"),
            token,
            Some(self.subject_modifiers.as_str()),
            Some(self.class_word.as_str()),
        ];
        join_words(words.into_iter().flatten())
    }
}

fn join_words<'a>(words: impl Iterator<Item = &'a str>) -> String {
    words
        .flat_map(str::split_whitespace)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Builds the prompt for one stage.
///
/// Local prompts describe the subject alone and, for image-driven edits,
/// drop the subject token so the class word alone constrains the shape.
/// Global prompts fill the full template and keep the token.
pub fn assemble_prompt(
    bundle: &PromptBundle,
    stage: Stage,
    image_driven: bool,
    view_word: Option<&str>,
) -> String {
    let mut prompt = match stage {
        Stage::Local => bundle.subject(false),
        Stage::Global => {
            let filled = bundle
                .template
                .replace(SUBJECT_SLOT, &bundle.subject(image_driven))
                .replace(ENVIRONMENT_SLOT, &bundle.environment);
            join_words(std::iter::once(filled.as_str()))
        }
    };
    if let Some(view) = view_word.map(str::trim).filter(|v| !v.is_empty()) {
        prompt.push_str(", ");
        prompt.push_str(view);
    }
    prompt
}
