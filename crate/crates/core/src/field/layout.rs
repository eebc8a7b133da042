use super::config::{FieldConfig, EDIT_HIDDEN};

/// A named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of every tensor inside the flat parameter vector.
///
/// Dense weights are stored `[out, in]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub grid_levels: Vec<usize>,
    pub density_w0: usize,
    pub density_b0: usize,
    pub density_w1: usize,
    pub density_b1: usize,
    pub color_w0: usize,
    pub color_b0: usize,
    pub color_w1: usize,
    pub color_b1: usize,
    pub edit_w0: usize,
    pub edit_b0: usize,
    pub edit_w1: usize,
    pub edit_b1: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(config: &FieldConfig) -> Self {
        let grid = &config.grid;
        let enc = grid.encoding_dim();
        let h = config.hidden_width;
        let g = config.geo_features;
        let head_in = config.head_input_dim();
        let edit_in = config.edit_input_dim();

        let mut tensors = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, dims: Vec<usize>| {
            let info = TensorInfo { name, dims, offset };
            offset += info.len();
            let at = info.offset;
            tensors.push(info);
            at
        };

        let grid_levels = (0..grid.levels)
            .map(|l| {
                push(
                    format!("grid.level{l}"),
                    vec![grid.table_size as usize, grid.features_per_entry as usize],
                )
            })
            .collect();
        let density_w0 = push("density.w0".into(), vec![h, enc]);
        let density_b0 = push("density.b0".into(), vec![h]);
        let density_w1 = push("density.w1".into(), vec![1 + g, h]);
        let density_b1 = push("density.b1".into(), vec![1 + g]);
        let color_w0 = push("color.w0".into(), vec![h, head_in]);
        let color_b0 = push("color.b0".into(), vec![h]);
        let color_w1 = push("color.w1".into(), vec![3, h]);
        let color_b1 = push("color.b1".into(), vec![3]);
        let edit_w0 = push("edit.w0".into(), vec![EDIT_HIDDEN, edit_in]);
        let edit_b0 = push("edit.b0".into(), vec![EDIT_HIDDEN]);
        let edit_w1 = push("edit.w1".into(), vec![1, EDIT_HIDDEN]);
        let edit_b1 = push("edit.b1".into(), vec![1]);
        let total = offset;

        Self {
            tensors,
            grid_levels,
            density_w0,
            density_b0,
            density_w1,
            density_b1,
            color_w0,
            color_b0,
            color_w1,
            color_b1,
            edit_w0,
            edit_b0,
            edit_w1,
            edit_b1,
            total,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Range covering the grid tables.
    pub fn grid_range(&self) -> std::ops::Range<usize> {
        0..self.density_w0
    }

    /// Range covering every editing-probability head tensor.
    pub fn edit_head_range(&self) -> std::ops::Range<usize> {
        self.edit_w0..self.total
    }
}
