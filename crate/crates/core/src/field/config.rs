use serde::{Deserialize, Serialize};

use super::FieldError;

/// Multiresolution hash-grid layout and the world-space box it covers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashGridConfig {
    pub levels: u32,
    pub base_resolution: u32,
    pub growth_factor: f64,
    pub table_size: u32,
    pub features_per_entry: u32,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            base_resolution: 16,
            growth_factor: 1.5,
            table_size: 1 << 14,
            features_per_entry: 2,
            bbox_min: [-1.5; 3],
            bbox_max: [1.5; 3],
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: String| Err(FieldError::InvalidConfig(m));
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if self.base_resolution == 0 {
            return bad("base_resolution must be at least 1".into());
        }
        if !(self.growth_factor > 1.0) || !self.growth_factor.is_finite() {
            return bad(format!(
                "growth_factor must exceed 1, got {}",
                self.growth_factor
            ));
        }
        if self.table_size == 0 || !self.table_size.is_power_of_two() {
            return bad(format!(
                "table_size must be a power of two, got {}",
                self.table_size
            ));
        }
        if self.features_per_entry == 0 {
            return bad("features_per_entry must be at least 1".into());
        }
        for k in 0..3 {
            if !(self.bbox_min[k] < self.bbox_max[k]) {
                return bad(format!(
                    "degenerate bbox on axis {k}: {} .. {}",
                    self.bbox_min[k], self.bbox_max[k]
                ));
            }
        }
        Ok(())
    }

    /// Cells per axis at `level`.
    pub fn resolution(&self, level: u32) -> u32 {
        (self.base_resolution as f64 * self.growth_factor.powi(level as i32)).floor() as u32
    }

    /// Length of the concatenated feature vector.
    pub fn encoding_dim(&self) -> usize {
        (self.levels * self.features_per_entry) as usize
    }

    /// Whether `level` fits its full vertex lattice in the table (no hashing).
    pub fn is_dense(&self, level: u32) -> bool {
        let side = self.resolution(level) as u64 + 1;
        side * side * side <= self.table_size as u64
    }
}

/// Hidden width of the editing-probability head. Fixed by the architecture.
pub const EDIT_HIDDEN: usize = 64;

/// Number of direction-encoding features (real spherical harmonics up to band 3).
pub const SH_FEATURES: usize = 16;

/// Full architecture: the hash grid plus the widths of the three MLPs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    /// Hidden width of the density MLP and the color head.
    pub hidden_width: usize,
    /// Geometry features emitted next to the raw density.
    pub geo_features: usize,
    /// When false the editing probability depends on position only.
    pub edit_view_dependent: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            hidden_width: 64,
            geo_features: 15,
            edit_view_dependent: true,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        self.grid.validate()?;
        if self.hidden_width == 0 {
            return Err(FieldError::InvalidConfig(
                "hidden_width must be positive".into(),
            ));
        }
        if self.geo_features == 0 {
            return Err(FieldError::InvalidConfig(
                "geo_features must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_input_dim(&self) -> usize {
        self.geo_features + SH_FEATURES
    }

    pub fn edit_input_dim(&self) -> usize {
        if self.edit_view_dependent {
            self.head_input_dim()
        } else {
            self.geo_features
        }
    }
}
