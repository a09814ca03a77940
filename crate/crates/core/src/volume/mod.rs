//! Volume data model: a dense 3D grid of voxels with a voxel-to-world affine.
//!
//! Data are stored with the first index varying fastest, matching the on-disk
//! NIfTI layout: `linear = i + nx * (j + ny * k)`. World coordinates follow
//! the NIfTI RAS+ convention (+x right, +y anterior, +z superior), in mm.

mod elastic;
mod grid;
pub mod nifti;
mod orient;
mod resample;

pub use elastic::{elastic_deform, DisplacementField, ElasticParams};
pub use grid::{Affine, GridSpec};
pub use nifti::{read_image, read_labels, read_mask, read_nifti, read_volume, write_volume, NiftiRead};
pub use orient::{reorient, AxisDirection, Orientation};
pub use resample::{resample, Interpolation, Sampler};

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Whether voxel values are continuous intensities or integer class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Image,
    Labelmap,
}

/// Element type of a [`Volume`].
pub trait Voxel: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    const KIND: VolumeKind;

    fn to_f64(self) -> f64;
    /// Converts a decoded file value. Label types round and saturate.
    fn from_f64(v: f64) -> Self;
    fn is_foreground(self) -> bool;
}

impl Voxel for f32 {
    const KIND: VolumeKind = VolumeKind::Image;

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn is_foreground(self) -> bool {
        self != 0.0
    }
}

impl Voxel for u32 {
    const KIND: VolumeKind = VolumeKind::Labelmap;

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, u32::MAX as f64) as u32
    }
    #[inline]
    fn is_foreground(self) -> bool {
        self != 0
    }
}

impl Voxel for bool {
    const KIND: VolumeKind = VolumeKind::Labelmap;

    #[inline]
    fn to_f64(self) -> f64 {
        if self {
            1.0
        } else {
            0.0
        }
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v != 0.0
    }
    #[inline]
    fn is_foreground(self) -> bool {
        self
    }
}

/// A 3D grid of voxels together with its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    grid: GridSpec,
    data: Vec<T>,
}

pub type Image = Volume<f32>;
pub type LabelMap = Volume<u32>;
pub type Mask = Volume<bool>;

impl<T: Voxel> Volume<T> {
    pub fn new(grid: GridSpec, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "data has {} elements, grid {:?} needs {}",
                data.len(),
                grid.shape(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: GridSpec, value: T) -> Self {
        let data = vec![value; grid.len()];
        Self { grid, data }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::filled(grid, T::default())
    }

    /// Builds a volume by evaluating `f` at every voxel index.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut([usize; 3]) -> T) -> Self {
        let [nx, ny, nz] = grid.shape();
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f([i, j, k]));
                }
            }
        }
        Self { grid, data }
    }

    pub fn kind(&self) -> VolumeKind {
        T::KIND
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn shape(&self) -> [usize; 3] {
        self.grid.shape()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing()
    }

    pub fn affine(&self) -> &Affine {
        self.grid.affine()
    }

    pub fn orientation(&self) -> Orientation {
        Orientation::from_affine(self.grid.affine())
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> T {
        self.data[self.grid.linear_index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 3], value: T) {
        let li = self.grid.linear_index(idx);
        self.data[li] = value;
    }

    /// Same geometry, new data.
    pub fn with_data<U: Voxel>(&self, data: Vec<U>) -> Result<Volume<U>> {
        Volume::new(self.grid.clone(), data)
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Replaces the geometry, keeping the voxel array.
    pub fn with_grid(self, grid: GridSpec) -> Result<Self> {
        Volume::new(grid, self.data)
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_foreground()).count()
    }

    /// World-space centroid of all foreground voxels, `None` when empty.
    pub fn foreground_centroid(&self) -> Option<[f64; 3]> {
        let [nx, ny, _] = self.shape();
        let mut sum = [0.0f64; 3];
        let mut n = 0usize;
        for (li, v) in self.data.iter().enumerate() {
            if v.is_foreground() {
                let i = li % nx;
                let j = (li / nx) % ny;
                let k = li / (nx * ny);
                sum[0] += i as f64;
                sum[1] += j as f64;
                sum[2] += k as f64;
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        let c = [sum[0] / n as f64, sum[1] / n as f64, sum[2] / n as f64];
        Some(self.grid.index_to_world(c))
    }

    /// Errors unless `other` lies on the same grid (shape and affine).
    pub fn ensure_same_grid<U: Voxel>(&self, other: &Volume<U>, what: &str) -> Result<()> {
        self.grid.ensure_same(other.grid(), what)
    }
}

impl Volume<u32> {
    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Voxel count per label value (including 0).
    pub fn histogram(&self) -> std::collections::BTreeMap<u32, u64> {
        let max = self.max_label() as usize;
        if max <= 1 << 20 {
            let mut counts = vec![0u64; max + 1];
            for &v in &self.data {
                counts[v as usize] += 1;
            }
            counts
                .into_iter()
                .enumerate()
                .filter(|(_, n)| *n > 0)
                .map(|(l, n)| (l as u32, n))
                .collect()
        } else {
            let mut counts = std::collections::BTreeMap::new();
            for &v in &self.data {
                *counts.entry(v).or_insert(0) += 1;
            }
            counts
        }
    }

    /// Voxel count and world-space centroid of every nonzero label.
    pub fn label_centroids(&self) -> std::collections::BTreeMap<u32, (u64, [f64; 3])> {
        let [nx, ny, _] = self.shape();
        let mut acc: std::collections::BTreeMap<u32, (u64, [f64; 3])> = std::collections::BTreeMap::new();
        for (li, &v) in self.data.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let e = acc.entry(v).or_insert((0, [0.0; 3]));
            e.0 += 1;
            e.1[0] += (li % nx) as f64;
            e.1[1] += ((li / nx) % ny) as f64;
            e.1[2] += (li / (nx * ny)) as f64;
        }
        for (n, c) in acc.values_mut() {
            let idx = c.map(|s| s / *n as f64);
            *c = self.grid.index_to_world(idx);
        }
        acc
    }

    /// Binary mask of voxels equal to `label`.
    pub fn mask_of(&self, label: u32) -> Mask {
        self.map(|v| v == label)
    }
}

impl Volume<bool> {
    pub fn to_labels(&self, label: u32) -> LabelMap {
        self.map(|v| if v { label } else { 0 })
    }
}

/// A volume read from disk whose element kind is decided by its contents.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Image(Image),
    Labels(LabelMap),
}

impl AnyVolume {
    pub fn kind(&self) -> VolumeKind {
        match self {
            AnyVolume::Image(_) => VolumeKind::Image,
            AnyVolume::Labels(_) => VolumeKind::Labelmap,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        match self {
            AnyVolume::Image(v) => v.grid(),
            AnyVolume::Labels(v) => v.grid(),
        }
    }

    pub fn into_image(self) -> Image {
        match self {
            AnyVolume::Image(v) => v,
            AnyVolume::Labels(v) => v.map(|x| x as f32),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_data_length() {
        let g = GridSpec::from_spacing([2, 2, 2], [1.0; 3]).unwrap();
        assert!(Volume::new(g.clone(), vec![0u32; 7]).is_err());
        assert!(Volume::new(g, vec![0u32; 8]).is_ok());
    }

    #[test]
    fn linear_layout_is_x_fastest() {
        let g = GridSpec::from_spacing([3, 4, 5], [1.0; 3]).unwrap();
        let v = Volume::from_fn(g, |[i, j, k]| (i + 10 * j + 100 * k) as u32);
        assert_eq!(v.data()[1], 1);
        assert_eq!(v.data()[3], 10);
        assert_eq!(v.data()[12], 100);
        assert_eq!(v.get([2, 3, 4]), 432);
    }

    #[test]
    fn centroid_in_world_space() {
        let g = GridSpec::from_spacing([4, 4, 4], [2.0, 2.0, 3.0]).unwrap();
        let mut m = Mask::zeros(g);
        m.set([1, 1, 1], true);
        m.set([3, 1, 1], true);
        let c = m.foreground_centroid().unwrap();
        assert_eq!(c, [4.0, 2.0, 3.0]);
    }
}
