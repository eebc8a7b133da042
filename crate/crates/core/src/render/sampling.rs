use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Ray;

/// Sample distances along a ray and the interval each one represents.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    pub positions: Vec<f64>,
    pub deltas: Vec<f64>,
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the jitter of ray `index` under a render-wide `seed`.
pub fn ray_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

/// `n_samples` distances in `[near, far]`, one per equal-width bin: the bin
/// midpoint, or a uniform jitter inside the bin when `stratified`. Each
/// sample owns the span between the midpoints to its neighbours, so the
/// intervals partition `[near, far]`.
pub fn sample_along_ray(ray: &Ray, n_samples: usize, stratified: bool, seed: u64) -> RaySamples {
    let mut out = RaySamples::default();
    fill_samples(ray, n_samples, stratified, seed, &mut out);
    out
}

pub(crate) fn fill_samples(
    ray: &Ray,
    n_samples: usize,
    stratified: bool,
    seed: u64,
    out: &mut RaySamples,
) {
    assert!(n_samples >= 2, "need at least two samples per ray");
    let (near, far) = (ray.near, ray.far);
    let width = (far - near) / n_samples as f64;
    out.positions.clear();
    out.deltas.clear();
    if stratified {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..n_samples {
            let u: f64 = rng.gen();
            out.positions.push(near + (i as f64 + u) * width);
        }
    } else {
        for i in 0..n_samples {
            out.positions.push(near + (i as f64 + 0.5) * width);
        }
    }
    let k = &out.positions;
    for i in 0..n_samples {
        let lo = if i == 0 {
            near
        } else {
            0.5 * (k[i - 1] + k[i])
        };
        let hi = if i + 1 == n_samples {
            far
        } else {
            0.5 * (k[i] + k[i + 1])
        };
        out.deltas.push(hi - lo);
    }
}
