//! Fusion of overlapping axial stacks into one volume.
//!
//! Every stack is sampled onto a common output grid. Where stacks overlap
//! along the superior-inferior axis, each one is weighted by a linear ramp
//! that is 0 at its own edge slice and 1 where the overlap ends inside it.
//! Images are blended with normalised weights; labelmaps take the value of
//! the heaviest stack.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Affine, GridSpec, Interpolation, Sampler, Volume, VolumeKind, Voxel};

/// Overlap means differing by more than this fraction raise a warning.
pub const MEAN_DISCREPANCY_WARN: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct Stitched<T> {
    pub volume: Volume<T>,
    pub warnings: Vec<String>,
}

struct Placed<'a, T> {
    sampler: Sampler<'a, T>,
    /// Output index -> stack index.
    map: Affine,
    /// Slice-centre extent along the output SI axis, in output index units.
    lo: f64,
    hi: f64,
    /// Where the low/high overlap ends inside this stack, if there is one.
    lo_ramp_end: Option<f64>,
    hi_ramp_end: Option<f64>,
}

impl<T: Voxel> Placed<'_, T> {
    fn weight(&self, u: f64) -> f64 {
        let mut w: f64 = 1.0;
        if let Some(end) = self.lo_ramp_end {
            w = w.min(if end > self.lo { ((u - self.lo) / (end - self.lo)).clamp(0.0, 1.0) } else { 0.0 });
        }
        if let Some(end) = self.hi_ramp_end {
            w = w.min(if end < self.hi { ((self.hi - u) / (self.hi - end)).clamp(0.0, 1.0) } else { 0.0 });
        }
        w
    }
}

fn output_grid<T: Voxel>(stacks: &[Volume<T>], reference_spacing: Option<[f64; 3]>) -> Result<GridSpec> {
    let dir: Matrix3<f64> = stacks[0].grid().direction();
    let inv = dir.try_inverse().ok_or_else(|| Error::invalid("first stack has a singular direction"))?;
    let spacing = match reference_spacing {
        Some(s) => {
            if s.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::invalid(format!("reference spacing must be positive, got {s:?}")));
            }
            s
        }
        None => {
            let mut s = [f64::INFINITY; 3];
            for st in stacks {
                let m = inv * st.grid().direction();
                for (a, sa) in s.iter_mut().enumerate() {
                    let b = (0..3).max_by(|&x, &y| m[(a, x)].abs().total_cmp(&m[(a, y)].abs())).unwrap();
                    *sa = sa.min(st.spacing()[b]);
                }
            }
            s
        }
    };
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for st in stacks {
        let n = st.shape();
        for c in 0..8 {
            let idx = [0, 1, 2].map(|a| if c >> a & 1 == 0 { -0.5 } else { n[a] as f64 - 0.5 });
            let q = inv * Vector3::from(st.grid().index_to_world(idx));
            for a in 0..3 {
                lo[a] = lo[a].min(q[a]);
                hi[a] = hi[a].max(q[a]);
            }
        }
    }
    let mut shape = [0usize; 3];
    let mut origin_q = Vector3::zeros();
    for a in 0..3 {
        shape[a] = (((hi[a] - lo[a]) / spacing[a]).round() as usize).max(1);
        origin_q[a] = lo[a] + 0.5 * spacing[a];
    }
    let origin = dir * origin_q;
    let mut m = Matrix4::identity();
    for a in 0..3 {
        for r in 0..3 {
            m[(r, a)] = dir[(r, a)] * spacing[a];
        }
        m[(a, 3)] = origin[a];
    }
    GridSpec::new(shape, Affine(m))
}

/// Stitches `stacks` onto their joint bounding box.
///
/// `reference_spacing` defaults to the finest spacing found along each
/// output axis. The output axes follow the first stack's orientation.
pub fn stitch<T: Voxel>(stacks: &[Volume<T>], reference_spacing: Option<[f64; 3]>) -> Result<Stitched<T>> {
    if stacks.is_empty() {
        return Err(Error::invalid("stitch needs at least one stack"));
    }
    let grid = output_grid(stacks, reference_spacing)?;
    let (si, _) = grid.si_axis();
    let out_inv = grid.affine().inverse().expect("output grid is invertible");
    let mut placed: Vec<Placed<T>> = Vec::with_capacity(stacks.len());
    for st in stacks {
        let inv = st.affine().inverse().ok_or_else(|| Error::invalid("stack affine is singular"))?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in st.grid().corner_centres() {
            let u = out_inv.apply(c)[si];
            lo = lo.min(u);
            hi = hi.max(u);
        }
        placed.push(Placed {
            sampler: Sampler::new(st),
            map: inv.compose(grid.affine()),
            lo,
            hi,
            lo_ramp_end: None,
            hi_ramp_end: None,
        });
    }

    // Overlap ramps and gap check along the SI axis.
    const EPS: f64 = 1e-6;
    for i in 0..placed.len() {
        let (lo, hi) = (placed[i].lo, placed[i].hi);
        let mut lo_end: Option<f64> = None;
        let mut hi_end: Option<f64> = None;
        for (j, o) in placed.iter().enumerate() {
            if j == i {
                continue;
            }
            if o.lo < lo - EPS && o.hi >= lo - EPS {
                let e = o.hi.min(hi);
                lo_end = Some(lo_end.map_or(e, |x: f64| x.max(e)));
            }
            if o.hi > hi + EPS && o.lo <= hi + EPS {
                let e = o.lo.max(lo);
                hi_end = Some(hi_end.map_or(e, |x: f64| x.min(e)));
            }
        }
        placed[i].lo_ramp_end = lo_end;
        placed[i].hi_ramp_end = hi_end;
    }
    let mut order: Vec<usize> = (0..placed.len()).collect();
    order.sort_by(|&a, &b| placed[a].lo.total_cmp(&placed[b].lo));
    let mut reach = placed[order[0]].hi;
    for &i in &order[1..] {
        // adjacent stacks are one slice apart; one missing slice is tolerated
        if placed[i].lo - reach > 2.0 + EPS {
            return Err(Error::invalid(format!(
                "stacks leave a gap of {:.1} slices along the superior-inferior axis",
                placed[i].lo - reach - 1.0
            )));
        }
        reach = reach.max(placed[i].hi);
    }

    let is_label = T::KIND == VolumeKind::Labelmap;
    let mode = if is_label { Interpolation::Nearest } else { Interpolation::Trilinear };
    let [nx, ny, _] = grid.shape();
    let mut data = vec![T::default(); grid.len()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        let mut contrib: Vec<(f64, f64, f64, T)> = Vec::with_capacity(placed.len());
        for j in 0..ny {
            for i in 0..nx {
                let idx = [i as f64, j as f64, k as f64];
                let u = idx[si];
                contrib.clear();
                for p in &placed {
                    if let Some(v) = p.sampler.sample(p.map.apply(idx), mode) {
                        contrib.push((p.weight(u), p.lo, p.hi, v));
                    }
                }
                if contrib.is_empty() {
                    continue;
                }
                if contrib.iter().all(|c| c.0 == 0.0) {
                    contrib.iter_mut().for_each(|c| c.0 = 1.0);
                }
                // geometric keys first so the result ignores input order
                contrib.sort_by(|a, b| {
                    b.0.total_cmp(&a.0)
                        .then(a.1.total_cmp(&b.1))
                        .then(a.2.total_cmp(&b.2))
                        .then(a.3.to_f64().total_cmp(&b.3.to_f64()))
                });
                slab[i + nx * j] = if is_label || contrib.len() == 1 {
                    contrib[0].3
                } else {
                    let base = contrib[0].3.to_f64();
                    let wsum: f64 = contrib.iter().map(|c| c.0).sum();
                    let delta: f64 = contrib[1..].iter().map(|c| c.0 * (c.3.to_f64() - base)).sum();
                    T::from_f64(base + delta / wsum)
                };
            }
        }
    });
    let volume = Volume::new(grid, data)?;

    let mut warnings = Vec::new();
    if !is_label {
        for a in 0..placed.len() {
            for b in a + 1..placed.len() {
                if let Some(w) = overlap_discrepancy(&volume, &placed[a], &placed[b], si, mode) {
                    warnings.push(format!("stacks {a} and {b}: {w}"));
                }
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Stitched { volume, warnings })
}

fn overlap_discrepancy<T: Voxel>(
    out: &Volume<T>,
    a: &Placed<T>,
    b: &Placed<T>,
    si: usize,
    mode: Interpolation,
) -> Option<String> {
    let lo = a.lo.max(b.lo);
    let hi = a.hi.min(b.hi);
    if hi < lo {
        return None;
    }
    let shape = out.shape();
    let (mut sa, mut sb, mut n) = (0.0, 0.0, 0u64);
    let k0 = lo.ceil().max(0.0) as usize;
    let k1 = (hi.floor() as usize).min(shape[si] - 1);
    let (u, v) = match si {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for s in k0..=k1 {
        for p in 0..shape[u] {
            for q in 0..shape[v] {
                let mut idx = [0.0; 3];
                idx[si] = s as f64;
                idx[u] = p as f64;
                idx[v] = q as f64;
                if let (Some(x), Some(y)) =
                    (a.sampler.sample(a.map.apply(idx), mode), b.sampler.sample(b.map.apply(idx), mode))
                {
                    sa += x.to_f64();
                    sb += y.to_f64();
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return None;
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let scale = ma.abs().max(mb.abs());
    (scale > 0.0 && (ma - mb).abs() > MEAN_DISCREPANCY_WARN * scale)
        .then(|| format!("overlap means differ by more than 20% ({ma:.3} vs {mb:.3})"))
}
