//! Sliding-window tiling and memory-bounded fusion of per-patch class scores.
//!
//! Tiles are visited with the through-plane (third) axis outermost. The score
//! accumulator is a ring of `chunk_depth` slices; a slice is turned into
//! labels as soon as no later tile can touch it, then its storage is reused.

mod oracle;
pub mod protocol;

pub use oracle::{MockOracle, Patch, PatchOracle};
pub use protocol::SubprocessOracle;

use half::f16;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridSpec, Image, LabelMap};

pub const DEFAULT_PATCH: [usize; 3] = [224, 224, 64];
pub const DEFAULT_OVERLAP: f64 = 0.5;
/// Kernel weights are clamped to at least this fraction of the peak so that
/// tile corners still count under 16-bit accumulation.
pub const KERNEL_FLOOR: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Uniform,
    /// Separable Gaussian with sigma = patch / 8 per axis, peak 1.
    #[default]
    Gaussian,
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Kernel::Uniform),
            "gaussian" => Ok(Kernel::Gaussian),
            _ => Err(Error::invalid(format!("unknown kernel {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub volume_shape: [usize; 3],
    pub patch_shape: [usize; 3],
    pub overlap: f64,
    pub step: [usize; 3],
    /// Tile offsets, third axis outermost, then second, then first.
    pub origins: Vec<[usize; 3]>,
    pub kernel: Kernel,
}

fn axis_origins(n: usize, patch: usize, step: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..).map(|t| t * step).take_while(|&o| o + patch < n).collect();
    out.push(n - patch);
    out.dedup();
    out
}

/// Regular grid of tile origins covering the volume; the last origin on each
/// axis is pulled back so the tile ends at the boundary.
pub fn plan_tiles(volume_shape: [usize; 3], patch_shape: [usize; 3], overlap: f64) -> Result<TilePlan> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    for a in 0..3 {
        if patch_shape[a] == 0 || patch_shape[a] > volume_shape[a] {
            return Err(Error::invalid(format!(
                "patch {patch_shape:?} does not fit volume {volume_shape:?}; pad the volume first"
            )));
        }
    }
    let step = patch_shape.map(|p| ((p as f64 * (1.0 - overlap)).ceil() as usize).max(1));
    let per_axis: Vec<Vec<usize>> = (0..3).map(|a| axis_origins(volume_shape[a], patch_shape[a], step[a])).collect();
    let mut origins = Vec::new();
    for &z in &per_axis[2] {
        for &y in &per_axis[1] {
            for &x in &per_axis[0] {
                origins.push([x, y, z]);
            }
        }
    }
    Ok(TilePlan { volume_shape, patch_shape, overlap, step, origins, kernel: Kernel::default() })
}

impl TilePlan {
    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn patch_len(&self) -> usize {
        self.patch_shape.iter().product()
    }

    /// Per-voxel weights of one patch, first axis fastest.
    pub fn kernel_weights(&self) -> Vec<f32> {
        let [px, py, pz] = self.patch_shape;
        match self.kernel {
            Kernel::Uniform => vec![1.0; px * py * pz],
            Kernel::Gaussian => {
                let axis = |n: usize| -> Vec<f64> {
                    let sigma = n as f64 / 8.0;
                    let c = (n as f64 - 1.0) / 2.0;
                    (0..n).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
                };
                let (wx, wy, wz) = (axis(px), axis(py), axis(pz));
                let peak = [&wx, &wy, &wz].map(|a| a.iter().copied().fold(0.0, f64::max)).iter().product::<f64>();
                let mut w = Vec::with_capacity(px * py * pz);
                for z in &wz {
                    for y in &wy {
                        for x in &wx {
                            w.push(((x * y * z / peak) as f32).max(KERNEL_FLOOR));
                        }
                    }
                }
                w
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F16,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F16 => 2,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f16" | "16" => Ok(Precision::F16),
            _ => Err(Error::invalid(format!("unknown precision {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Upper bound on accumulator bytes.
    pub memory_budget: usize,
    pub precision: Precision,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { memory_budget: 2 << 30, precision: Precision::F32 }
    }
}

impl FusionConfig {
    /// A budget large enough that the whole volume is one chunk.
    pub fn unbounded(precision: Precision) -> Self {
        Self { memory_budget: usize::MAX, precision }
    }

    /// Number of slices the accumulator holds for `num_classes` classes.
    pub fn chunk_depth(&self, plan: &TilePlan, num_classes: usize) -> Result<usize> {
        let [nx, ny, nz] = plan.volume_shape;
        let per_slice = (num_classes + 1) * nx * ny * self.precision.bytes();
        let depth = (self.memory_budget / per_slice).min(nz);
        if depth < plan.patch_shape[2] {
            return Err(Error::invalid(format!(
                "memory budget of {} bytes holds {depth} slices; at least {} are needed ({} bytes)",
                self.memory_budget,
                plan.patch_shape[2],
                per_slice * plan.patch_shape[2]
            )));
        }
        Ok(depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionStats {
    pub tiles: usize,
    pub num_classes: usize,
    pub chunk_depth: usize,
    /// Bytes actually allocated for scores and weight sums.
    pub peak_accumulator_bytes: usize,
}

trait Accum: Copy + Default + Send + Sync {
    fn add(self, x: f32) -> Self;
    fn value(self) -> f32;
}

impl Accum for f32 {
    #[inline]
    fn add(self, x: f32) -> Self {
        self + x
    }
    #[inline]
    fn value(self) -> f32 {
        self
    }
}

impl Accum for f16 {
    #[inline]
    fn add(self, x: f32) -> Self {
        f16::from_f32(self.to_f32() + x)
    }
    #[inline]
    fn value(self) -> f32 {
        self.to_f32()
    }
}

/// Channel-major ring buffer: `num_classes` score planes then one weight plane.
struct Ring<A> {
    data: Vec<A>,
    area: usize,
    depth: usize,
}

impl<A: Accum> Ring<A> {
    fn slot(&self, channel: usize, z: usize) -> usize {
        (channel * self.depth + z % self.depth) * self.area
    }
}

pub fn fuse(plan: &TilePlan, image: &Image, oracle: &dyn PatchOracle, cfg: &FusionConfig) -> Result<(LabelMap, FusionStats)> {
    fuse_with_aux(plan, image, None, oracle, cfg)
}

/// As [`fuse`], also passing a second channel (e.g. a region localizer) to
/// the oracle.
pub fn fuse_with_aux(
    plan: &TilePlan,
    image: &Image,
    aux: Option<&Image>,
    oracle: &dyn PatchOracle,
    cfg: &FusionConfig,
) -> Result<(LabelMap, FusionStats)> {
    if image.shape() != plan.volume_shape {
        return Err(Error::GridMismatch(format!(
            "plan is for {:?} but image is {:?}",
            plan.volume_shape,
            image.shape()
        )));
    }
    if let Some(a) = aux {
        image.ensure_same_grid(a, "auxiliary channel")?;
    }
    if oracle.num_classes() < 2 {
        return Err(Error::Oracle(format!("oracle reports {} classes; need at least 2", oracle.num_classes())));
    }
    match cfg.precision {
        Precision::F32 => run::<f32>(plan, image, aux, oracle, cfg),
        Precision::F16 => run::<f16>(plan, image, aux, oracle, cfg),
    }
}

fn extract(v: &Image, origin: [usize; 3], shape: [usize; 3]) -> Vec<f32> {
    let [nx, ny, _] = v.shape();
    let d = v.data();
    let mut out = Vec::with_capacity(shape.iter().product());
    for k in 0..shape[2] {
        for j in 0..shape[1] {
            let row = origin[0] + nx * (origin[1] + j + ny * (origin[2] + k));
            out.extend_from_slice(&d[row..row + shape[0]]);
        }
    }
    out
}

fn run<A: Accum>(
    plan: &TilePlan,
    image: &Image,
    aux: Option<&Image>,
    oracle: &dyn PatchOracle,
    cfg: &FusionConfig,
) -> Result<(LabelMap, FusionStats)> {
    let c = oracle.num_classes();
    let depth = cfg.chunk_depth(plan, c)?;
    let [nx, ny, nz] = plan.volume_shape;
    let area = nx * ny;
    let mut ring = Ring { data: vec![A::default(); (c + 1) * depth * area], area, depth };
    let stats = FusionStats {
        tiles: plan.origins.len(),
        num_classes: c,
        chunk_depth: depth,
        peak_accumulator_bytes: ring.data.len() * std::mem::size_of::<A>(),
    };
    let kernel = plan.kernel_weights();
    let ps = plan.patch_shape;
    let mut labels = vec![0u32; nx * ny * nz];
    let mut done = 0usize;

    let finalize = |ring: &mut Ring<A>, labels: &mut [u32], z: usize| -> Result<()> {
        let wbase = ring.slot(c, z);
        for p in 0..area {
            let w = ring.data[wbase + p].value();
            if w <= 0.0 {
                return Err(Error::Oracle(format!("voxel {p} of slice {z} received no weight")));
            }
            let mut best = 0;
            let mut best_score = f32::NEG_INFINITY;
            for ch in 0..c {
                let s = ring.data[ring.slot(ch, z) + p].value() / w;
                if s > best_score {
                    best = ch;
                    best_score = s;
                }
            }
            labels[z * area + p] = best as u32;
        }
        for ch in 0..=c {
            let b = ring.slot(ch, z);
            ring.data[b..b + area].fill(A::default());
        }
        Ok(())
    };

    // tiles sharing a through-plane origin are evaluated together
    let mut start = 0;
    let batch = rayon::current_num_threads().max(1);
    while start < plan.origins.len() {
        let oz = plan.origins[start][2];
        let end = start + plan.origins[start..].iter().take_while(|o| o[2] == oz).count();
        while done < oz {
            finalize(&mut ring, &mut labels, done)?;
            done += 1;
        }
        for group in plan.origins[start..end].chunks(batch) {
            let scores: Vec<Result<Vec<f32>>> = group
                .par_iter()
                .map(|&origin| {
                    let data = extract(image, origin, ps);
                    let aux_data = aux.map(|a| extract(a, origin, ps));
                    let patch = Patch { origin, shape: ps, data: &data, aux: aux_data.as_deref() };
                    let s = oracle.evaluate(&patch)?;
                    if s.len() != c * data.len() {
                        return Err(Error::Oracle(format!(
                            "oracle returned {} scores, expected {}",
                            s.len(),
                            c * data.len()
                        )));
                    }
                    Ok(s)
                })
                .collect();
            for (origin, s) in group.iter().zip(scores) {
                let s = s?;
                accumulate(&mut ring, origin, ps, nx, &kernel, &s, c);
            }
        }
        start = end;
    }
    while done < nz {
        finalize(&mut ring, &mut labels, done)?;
        done += 1;
    }
    let out = LabelMap::new(image.grid().clone(), labels)?;
    Ok((out, stats))
}

fn accumulate<A: Accum>(ring: &mut Ring<A>, origin: &[usize; 3], ps: [usize; 3], nx: usize, kernel: &[f32], s: &[f32], c: usize) {
    let n = kernel.len();
    for k in 0..ps[2] {
        let z = origin[2] + k;
        for j in 0..ps[1] {
            let row = origin[0] + nx * (origin[1] + j);
            let l0 = ps[0] * (j + ps[1] * k);
            for ch in 0..c {
                let b = ring.slot(ch, z) + row;
                let src = &s[ch * n + l0..ch * n + l0 + ps[0]];
                for (i, (&w, &v)) in kernel[l0..l0 + ps[0]].iter().zip(src).enumerate() {
                    ring.data[b + i] = ring.data[b + i].add(w * v);
                }
            }
            let b = ring.slot(c, z) + row;
            for (i, &w) in kernel[l0..l0 + ps[0]].iter().enumerate() {
                ring.data[b + i] = ring.data[b + i].add(w);
            }
        }
    }
}

/// Pads `image` (and `aux`) with zeros up to at least `patch` per axis,
/// plans, fuses and crops back to the input grid.
pub fn infer(
    image: &Image,
    aux: Option<&Image>,
    oracle: &dyn PatchOracle,
    patch: [usize; 3],
    overlap: f64,
    kernel: Kernel,
    cfg: &FusionConfig,
) -> Result<(LabelMap, FusionStats)> {
    let shape = image.shape();
    let padded_shape = [0, 1, 2].map(|a| shape[a].max(patch[a]));
    let plan = plan_tiles(padded_shape, patch, overlap)?.with_kernel(kernel);
    if padded_shape == shape {
        return fuse_with_aux(&plan, image, aux, oracle, cfg);
    }
    let pgrid = GridSpec::new(padded_shape, *image.affine())?;
    let pad = |v: &Image| Image::from_fn(pgrid.clone(), |p| if (0..3).all(|a| p[a] < shape[a]) { v.get(p) } else { 0.0 });
    if let Some(a) = aux {
        image.ensure_same_grid(a, "auxiliary channel")?;
    }
    let padded_aux = aux.map(pad);
    let (labels, stats) = fuse_with_aux(&plan, &pad(image), padded_aux.as_ref(), oracle, cfg)?;
    let out = LabelMap::from_fn(image.grid().clone(), |p| labels.get(p));
    Ok((out, stats))
}
