use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam update. Returns the index of the first non-finite gradient
/// without touching `params` or `state`.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), usize> {
    assert_eq!(
        params.len(),
        grads.len(),
        "parameter and gradient lengths differ"
    );
    assert_eq!(
        params.len(),
        state.len(),
        "parameter and moment lengths differ"
    );
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(i);
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
    let (step_size, inv_sqrt_c2, eps) = (T::lit(lr / c1), T::lit(1.0 / c2.sqrt()), T::lit(eps));
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        *p -= step_size * *m / (v.sqrt() * inv_sqrt_c2 + eps);
    }
    Ok(())
}
