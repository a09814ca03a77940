use rayon::prelude::*;

use super::grid::{Affine, GridSpec};
use super::{Volume, VolumeKind, Voxel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Trilinear,
}

impl Interpolation {
    pub fn check_for(self, kind: VolumeKind) -> Result<()> {
        if kind == VolumeKind::Labelmap && self == Interpolation::Trilinear {
            return Err(Error::invalid("labelmaps can only be resampled with nearest-neighbour"));
        }
        Ok(())
    }
}

/// Indices this close to an integer are snapped to it, so resampling onto
/// a coincident grid reproduces the source exactly.
const SNAP: f64 = 1e-6;

#[inline]
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < SNAP {
        r
    } else {
        x
    }
}

/// Point sampling of a volume at continuous voxel indices.
///
/// A voxel covers `[i - 0.5, i + 0.5)`; anything outside `[-0.5, n - 0.5)`
/// on any axis is out of bounds.
pub struct Sampler<'a, T> {
    vol: &'a Volume<T>,
}

impl<'a, T: Voxel> Sampler<'a, T> {
    pub fn new(vol: &'a Volume<T>) -> Self {
        Self { vol }
    }

    #[inline]
    pub fn contains(&self, idx: [f64; 3]) -> bool {
        let shape = self.vol.shape();
        (0..3).all(|a| {
            let x = snap(idx[a]);
            x >= -0.5 && x < shape[a] as f64 - 0.5
        })
    }

    #[inline]
    pub fn nearest(&self, idx: [f64; 3]) -> Option<T> {
        let shape = self.vol.shape();
        let mut p = [0usize; 3];
        for a in 0..3 {
            let r = (snap(idx[a]) + 0.5).floor();
            if r < 0.0 || r >= shape[a] as f64 {
                return None;
            }
            p[a] = r as usize;
        }
        Some(self.vol.get(p))
    }

    #[inline]
    pub fn trilinear(&self, idx: [f64; 3]) -> Option<f64> {
        if !self.contains(idx) {
            return None;
        }
        let shape = self.vol.shape();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let x = snap(idx[a]).clamp(0.0, (shape[a] - 1) as f64);
            let f = x.floor();
            lo[a] = f as usize;
            hi[a] = (lo[a] + 1).min(shape[a] - 1);
            t[a] = x - f;
        }
        let g = |i: usize, j: usize, k: usize| self.vol.get([i, j, k]).to_f64();
        let mut acc = 0.0;
        for c in 0..8 {
            let (ix, wx) = if c & 1 == 0 { (lo[0], 1.0 - t[0]) } else { (hi[0], t[0]) };
            let (iy, wy) = if c & 2 == 0 { (lo[1], 1.0 - t[1]) } else { (hi[1], t[1]) };
            let (iz, wz) = if c & 4 == 0 { (lo[2], 1.0 - t[2]) } else { (hi[2], t[2]) };
            let w = wx * wy * wz;
            if w != 0.0 {
                acc += w * g(ix, iy, iz);
            }
        }
        Some(acc)
    }

    pub fn sample(&self, idx: [f64; 3], mode: Interpolation) -> Option<T> {
        match mode {
            Interpolation::Nearest => self.nearest(idx),
            Interpolation::Trilinear => self.trilinear(idx).map(T::from_f64),
        }
    }
}

/// Resamples `v` onto `target`, sampling at each target voxel's world
/// position. Voxels falling outside the source are 0.
pub fn resample<T: Voxel>(v: &Volume<T>, target: &GridSpec, mode: Interpolation) -> Result<Volume<T>> {
    mode.check_for(T::KIND)?;
    if v.grid() == target {
        return Ok(v.clone());
    }
    let inv = v
        .affine()
        .inverse()
        .ok_or_else(|| Error::invalid("source affine is singular"))?;
    let map: Affine = inv.compose(target.affine());
    let sampler = Sampler::new(v);
    let [nx, ny, _] = target.shape();
    let mut data = vec![T::default(); target.len()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                let idx = map.apply([i as f64, j as f64, k as f64]);
                if let Some(x) = sampler.sample(idx, mode) {
                    slab[i + nx * j] = x;
                }
            }
        }
    });
    Volume::new(target.clone(), data)
}
