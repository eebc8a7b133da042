use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{load_dataset, make_synthetic_scene, SceneDataset, SceneIoError, SyntheticSpec};
use crate::editor::{EditConfig, ReconstructionConfig};
use crate::field::{FieldConfig, HashGridConfig};
use crate::guidance::{PromptBundle, RemoteOptions, SdsConfig, DEFAULT_GUIDANCE_SCALE};
use crate::render::{RenderSettings, DEFAULT_SHARPNESS};

/// Everything a run needs. Absent keys take their defaults; unknown keys
/// are errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub reconstruction: ReconstructionConfig,
    pub edit: EditConfig,
    pub grid: HashGridConfig,
    pub field: FieldOptions,
    pub render: RenderOptions,
    pub prompt: PromptBundle,
    pub guidance: SdsConfig,
    pub provider: ProviderConfig,
    pub dataset: DatasetSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldOptions {
    pub hidden_width: usize,
    pub geo_features: usize,
    pub edit_view_dependent: bool,
}

impl Default for FieldOptions {
    fn default() -> Self {
        let d = FieldConfig::default();
        Self {
            hidden_width: d.hidden_width,
            geo_features: d.geo_features,
            edit_view_dependent: d.edit_view_dependent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub stratified: bool,
    pub sharpness: f64,
    pub min_transmittance: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            stratified: true,
            sharpness: DEFAULT_SHARPNESS,
            min_transmittance: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    /// `oracle:<target.png>` or `remote:<url>`; the command line may override it.
    pub selection: Option<String>,
    pub timeout_secs: f64,
    pub guidance_scale: f64,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            selection: None,
            timeout_secs: 60.0,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            max_in_flight: 4,
        }
    }
}

impl ProviderConfig {
    pub fn remote_options(&self) -> RemoteOptions {
        RemoteOptions {
            timeout: Duration::from_secs_f64(self.timeout_secs.max(0.001)),
            guidance_scale: self.guidance_scale,
            max_in_flight: self.max_in_flight,
        }
    }
}

/// Captured manifest, or the procedural scene when none is given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSource {
    pub manifest: Option<PathBuf>,
    pub downsample_factor: Option<u32>,
    pub synthetic: SyntheticSpec,
}

impl DatasetSource {
    /// The manifest's dataset, or the procedural scene when no manifest is set.
    pub fn load(&self, seed: u64) -> Result<SceneDataset, SceneIoError> {
        match &self.manifest {
            Some(path) => load_dataset(path, self.downsample_factor.unwrap_or(1)),
            None => make_synthetic_scene(&self.synthetic, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProviderSelection {
    /// Target oracle pulling renders toward an image file.
    Oracle(PathBuf),
    Remote(String),
}

impl FromStr for ProviderSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some(("oracle", path)) if !path.is_empty() => Ok(Self::Oracle(PathBuf::from(path))),
            Some(("remote", url)) if !url.is_empty() => Ok(Self::Remote(url.to_string())),
            _ => Err(format!(
                "expected oracle:<target.png> or remote:<url>, got {s:?}"
            )),
        }
    }
}

impl RunConfig {
    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            grid: self.grid.clone(),
            hidden_width: self.field.hidden_width,
            geo_features: self.field.geo_features,
            edit_view_dependent: self.field.edit_view_dependent,
        }
    }

    /// Shared render settings; each loop sets its own sample count.
    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            n_samples: self.reconstruction.n_samples,
            stratified: self.render.stratified,
            sharpness: self.render.sharpness,
            min_transmittance: self.render.min_transmittance,
        }
    }

    pub fn provider_selection(&self) -> Result<Option<ProviderSelection>, SceneIoError> {
        self.provider
            .selection
            .as_deref()
            .map(|s| {
                s.parse().map_err(|message| SceneIoError::Config {
                    key: "provider.selection".into(),
                    message,
                })
            })
            .transpose()
    }

    pub fn validate(&self) -> Result<(), SceneIoError> {
        let err = |key: &str, e: &dyn std::fmt::Display| SceneIoError::Config {
            key: key.into(),
            message: e.to_string(),
        };
        self.field_config()
            .validate()
            .map_err(|e| err("grid", &e))?;
        self.reconstruction
            .validate()
            .map_err(|e| err("reconstruction", &e))?;
        self.edit.validate().map_err(|e| err("edit", &e))?;
        self.prompt.validate().map_err(|e| err("prompt", &e))?;
        self.guidance.validate().map_err(|e| err("guidance", &e))?;
        if !(self.render.sharpness > 0.0) {
            return Err(err("render.sharpness", &"must be positive"));
        }
        if !(0.0..1.0).contains(&self.render.min_transmittance) {
            return Err(err("render.min_transmittance", &"must lie in [0, 1)"));
        }
        if self.provider.max_in_flight == 0 {
            return Err(err("provider.max_in_flight", &"must be at least 1"));
        }
        if self.dataset.downsample_factor == Some(0) {
            return Err(err("dataset.downsample_factor", &"must be at least 1"));
        }
        self.provider_selection()?;
        Ok(())
    }
}

/// Parses a configuration document, reporting the path to any bad key.
pub fn parse_config_str(text: &str) -> Result<RunConfig, SceneIoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        SceneIoError::Config {
            key: if key == "." { "<root>".into() } else { key },
            message: e.into_inner().to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, SceneIoError> {
    let text = fs::read_to_string(path).map_err(|e| SceneIoError::io(path, e))?;
    parse_config_str(&text)
}
