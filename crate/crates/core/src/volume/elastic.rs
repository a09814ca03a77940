//! Random elastic deformation for training-data augmentation.
//!
//! Gaussian displacements are drawn on a coarse control lattice spanning the
//! volume, upsampled trilinearly to every voxel, and applied by backward
//! warping: `out(x) = in(x + d(x))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::grid::GridSpec;
use super::resample::{Interpolation, Sampler};
use super::{Volume, Voxel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ElasticParams {
    /// Control-point spacing in mm.
    pub control_spacing: f64,
    /// Standard deviation of each displacement component at a control point, mm.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self { control_spacing: 32.0, sigma: 4.0, seed: 0 }
    }
}

impl ElasticParams {
    fn validate(&self) -> Result<()> {
        if !(self.control_spacing > 0.0) || !self.control_spacing.is_finite() {
            return Err(Error::invalid(format!("control_spacing must be > 0, got {}", self.control_spacing)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Displacement vectors (mm, along the voxel axes) on a control lattice.
#[derive(Debug, Clone)]
pub struct DisplacementField {
    shape: [usize; 3],
    ctrl: [usize; 3],
    values: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn sample(grid: &GridSpec, params: &ElasticParams) -> Result<Self> {
        params.validate()?;
        let shape = grid.shape();
        let spacing = grid.spacing();
        let mut ctrl = [0usize; 3];
        for a in 0..3 {
            let extent = (shape[a] - 1) as f64 * spacing[a];
            ctrl[a] = ((extent / params.control_spacing).ceil() as usize + 1).max(2);
        }
        let n: usize = ctrl.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let values = if params.sigma == 0.0 {
            vec![[0.0; 3]; n]
        } else {
            let normal = Normal::new(0.0, params.sigma).expect("sigma validated finite and positive");
            (0..n)
                .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)])
                .collect()
        };
        Ok(Self { shape, ctrl, values })
    }

    pub fn control_shape(&self) -> [usize; 3] {
        self.ctrl
    }

    pub fn control_values(&self) -> &[[f64; 3]] {
        &self.values
    }

    /// Displacement at voxel `idx`, trilinearly interpolated from the lattice.
    pub fn at(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut lo = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let pos = if self.shape[a] > 1 {
                idx[a] as f64 * (self.ctrl[a] - 1) as f64 / (self.shape[a] - 1) as f64
            } else {
                0.0
            };
            let f = pos.floor().min((self.ctrl[a] - 2) as f64);
            lo[a] = f as usize;
            t[a] = pos - f;
        }
        let mut out = [0.0; 3];
        for c in 0..8 {
            let ox = c & 1;
            let oy = (c >> 1) & 1;
            let oz = (c >> 2) & 1;
            let w = (if ox == 0 { 1.0 - t[0] } else { t[0] })
                * (if oy == 0 { 1.0 - t[1] } else { t[1] })
                * (if oz == 0 { 1.0 - t[2] } else { t[2] });
            let li = (lo[0] + ox) + self.ctrl[0] * ((lo[1] + oy) + self.ctrl[1] * (lo[2] + oz));
            for (o, v) in out.iter_mut().zip(self.values[li]) {
                *o += w * v;
            }
        }
        out
    }
}

/// Warps `v` by a random smooth displacement field. Deterministic for a given
/// seed, grid and parameters; `sigma = 0` returns the input unchanged.
pub fn elastic_deform<T: Voxel>(v: &Volume<T>, params: &ElasticParams, mode: Interpolation) -> Result<Volume<T>> {
    params.validate()?;
    mode.check_for(T::KIND)?;
    if params.sigma == 0.0 {
        return Ok(v.clone());
    }
    let field = DisplacementField::sample(v.grid(), params)?;
    let spacing = v.spacing();
    let [nx, ny, _] = v.shape();
    let sampler = Sampler::new(v);
    let mut data = vec![T::default(); v.len()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                let d = field.at([i, j, k]);
                let src = [
                    i as f64 + d[0] / spacing[0],
                    j as f64 + d[1] / spacing[1],
                    k as f64 + d[2] / spacing[2],
                ];
                if let Some(x) = sampler.sample(src, mode) {
                    slab[i + nx * j] = x;
                }
            }
        }
    });
    v.with_data(data)
}
