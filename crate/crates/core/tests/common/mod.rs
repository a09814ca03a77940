#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vibeseg_core::{GridSpec, LabelMap, Mask};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn grid(shape: [usize; 3], spacing: [f64; 3]) -> GridSpec {
    GridSpec::from_spacing(shape, spacing).unwrap()
}

pub fn random_mask(g: &GridSpec, density: f64, r: &mut impl Rng) -> Mask {
    Mask::from_fn(g.clone(), |_| r.random_bool(density))
}

pub fn random_labels(g: &GridSpec, classes: u32, density: f64, r: &mut impl Rng) -> LabelMap {
    LabelMap::from_fn(g.clone(), |_| if r.random_bool(density) { r.random_range(1..=classes) } else { 0 })
}

pub fn coords(shape: [usize; 3], li: usize) -> [usize; 3] {
    [li % shape[0], (li / shape[0]) % shape[1], li / (shape[0] * shape[1])]
}
