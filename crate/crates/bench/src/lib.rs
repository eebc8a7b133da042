//! Shared fixtures for the criterion benchmarks.

use nerfedit_core::field::{FieldConfig, FieldParameters};
use nerfedit_core::render::Ray;

/// Default-architecture field with a fixed seed.
pub fn default_field() -> FieldParameters<f32> {
    FieldParameters::init(FieldConfig::default(), 7).expect("default config is valid")
}

/// `n` rays fanning out from a point in front of the box toward its center.
pub fn fan_of_rays(n: usize) -> Vec<Ray> {
    (0..n)
        .map(|i| {
            let a = (i as f64 / n.max(1) as f64 - 0.5) * 0.6;
            let d = [a.sin(), 0.1 * a.cos(), -a.cos()];
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ray {
                origin: [0.0, 0.0, 3.0],
                direction: d.map(|v| v / norm),
                near: 1.0,
                far: 5.0,
            }
        })
        .collect()
}
