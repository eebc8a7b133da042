//! Multiresolution hash encoding with trilinear interpolation.

use crate::real::Real;

use super::config::HashGridConfig;
use super::FieldParameters;

const PRIME_Y: u32 = 2_654_435_761;
const PRIME_Z: u32 = 805_459_861;

/// Table row for lattice vertex `(ix, iy, iz)` at a level of `res` cells per axis.
#[inline(always)]
pub fn vertex_index(config: &HashGridConfig, level: u32, res: u32, v: [u32; 3]) -> usize {
    if config.is_dense(level) {
        let side = (res + 1) as usize;
        v[0] as usize + side * (v[1] as usize + side * v[2] as usize)
    } else {
        let h = v[0] ^ v[1].wrapping_mul(PRIME_Y) ^ v[2].wrapping_mul(PRIME_Z);
        (h & (config.table_size - 1)) as usize
    }
}

/// Position mapped into the unit cube of the grid, clamped to the box.
#[inline(always)]
pub fn normalize_position<T: Real>(config: &HashGridConfig, p: [T; 3]) -> [T; 3] {
    let mut u = [T::zero(); 3];
    for k in 0..3 {
        let lo = T::lit(config.bbox_min[k]);
        let hi = T::lit(config.bbox_max[k]);
        u[k] = ((p[k] - lo) / (hi - lo)).max(T::zero()).min(T::one());
    }
    u
}

/// Whether `p` lay outside the box and was clamped.
pub fn is_clamped(config: &HashGridConfig, p: [f64; 3]) -> bool {
    (0..3).any(|k| p[k] < config.bbox_min[k] || p[k] > config.bbox_max[k])
}

/// The eight interpolation corners of `u` (unit-cube coordinates) at `level`.
#[inline(always)]
pub fn level_corners<T: Real>(
    config: &HashGridConfig,
    level: u32,
    u: [T; 3],
) -> ([usize; 8], [T; 8]) {
    let res = config.resolution(level);
    let max_cell = T::lit((res - 1) as f64);
    let mut base = [0u32; 3];
    let mut frac = [T::zero(); 3];
    for k in 0..3 {
        let x = u[k] * T::lit(res as f64);
        let cell = x.floor().min(max_cell);
        base[k] = cell.to_u32().unwrap_or(0);
        frac[k] = x - cell;
    }
    let mut idx = [0usize; 8];
    let mut w = [T::zero(); 8];
    for c in 0..8 {
        let mut v = base;
        let mut weight = T::one();
        for k in 0..3 {
            if (c >> k) & 1 == 1 {
                v[k] += 1;
                weight *= frac[k];
            } else {
                weight *= T::one() - frac[k];
            }
        }
        idx[c] = vertex_index(config, level, res, v);
        w[c] = weight;
    }
    (idx, w)
}

/// Interpolated features of `p` at every level, concatenated level-major.
pub fn encode_position<T: Real>(params: &FieldParameters<T>, p: [T; 3], out: &mut [T]) {
    let grid = &params.config().grid;
    let f = grid.features_per_entry as usize;
    debug_assert_eq!(out.len(), grid.encoding_dim());
    let u = normalize_position(grid, p);
    let data = params.as_slice();
    for level in 0..grid.levels {
        let table = params.layout().grid_levels[level as usize];
        let (idx, w) = level_corners(grid, level, u);
        let dst = &mut out[level as usize * f..(level as usize + 1) * f];
        dst.iter_mut().for_each(|v| *v = T::zero());
        for c in 0..8 {
            let row = &data[table + idx[c] * f..table + (idx[c] + 1) * f];
            for k in 0..f {
                dst[k] += w[c] * row[k];
            }
        }
    }
}

/// Scatters `d_enc` back into the table gradients.
pub fn encode_backward<T: Real>(
    params: &FieldParameters<T>,
    p: [T; 3],
    d_enc: &[T],
    grads: &mut [T],
) {
    let grid = &params.config().grid;
    let f = grid.features_per_entry as usize;
    let u = normalize_position(grid, p);
    for level in 0..grid.levels {
        let table = params.layout().grid_levels[level as usize];
        let src = &d_enc[level as usize * f..(level as usize + 1) * f];
        if src.iter().all(|v| *v == T::zero()) {
            continue;
        }
        let (idx, w) = level_corners(grid, level, u);
        for c in 0..8 {
            let row = &mut grads[table + idx[c] * f..table + (idx[c] + 1) * f];
            for k in 0..f {
                row[k] += w[c] * src[k];
            }
        }
    }
}
