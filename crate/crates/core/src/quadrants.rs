//! Coarse body-region localizer: a 4 mm isotropic 96³ window around the
//! body, split into axial bands with all but the top band halved left/right.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::postproc::{largest_component, Connectivity};
use crate::stats::quantile_f32;
use crate::volume::{resample, Image, Interpolation, LabelMap, Mask, Volume, VolumeKind, Voxel};

pub const ISO_SPACING: f64 = 4.0;
pub const ISO_SIZE: usize = 96;
/// One unsplit band plus five split bands gives eleven regions.
pub const DEFAULT_BANDS: usize = 6;

/// Resamples to 4 mm isotropic and crops or pads to 96³ around the
/// foreground centroid.
pub fn to_iso4<T: Voxel>(v: &Volume<T>) -> Result<Volume<T>> {
    let mode = match T::KIND {
        VolumeKind::Image => Interpolation::Trilinear,
        VolumeKind::Labelmap => Interpolation::Nearest,
    };
    let iso_grid = v.grid().with_spacing([ISO_SPACING; 3])?;
    let iso = resample(v, &iso_grid, mode)?;
    let c = iso.foreground_centroid().ok_or_else(|| Error::Degenerate("volume has no foreground".into()))?;
    let ci = iso_grid.world_to_index(c);
    let half = (ISO_SIZE as f64 - 1.0) / 2.0;
    let start = ci.map(|x| (x - half).round() as i64);
    let out_grid = iso_grid.subgrid(start, [ISO_SIZE; 3])?;
    let src = iso.shape();
    let out = Volume::from_fn(out_grid, |[i, j, k]| {
        let p = [i as i64 + start[0], j as i64 + start[1], k as i64 + start[2]];
        if (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < src[a]) {
            iso.get([p[0] as usize, p[1] as usize, p[2] as usize])
        } else {
            T::default()
        }
    });
    Ok(out)
}

/// Thresholds at `threshold_fraction` of the 99th percentile, keeps the
/// largest 26-connected component and fills enclosed holes slice by slice.
pub fn body_mask(inphase_iso4: &Image, threshold_fraction: f64) -> Result<Mask> {
    if inphase_iso4.is_empty() {
        return Err(Error::invalid("image is empty"));
    }
    let thr = (threshold_fraction * quantile_f32(inphase_iso4.data(), 0.99)) as f32;
    let raw = inphase_iso4.map(|v| v > thr);
    if raw.foreground_count() == 0 {
        return Err(Error::Degenerate(format!("no voxel exceeds the body threshold {thr}")));
    }
    let mut m = largest_component(&raw, Connectivity::TwentySix);
    fill_holes_axial(&mut m);
    Ok(m)
}

/// Fills background regions of each axial slice not reachable from the
/// slice border (4-connected).
fn fill_holes_axial(m: &mut Mask) {
    let (si, _) = m.grid().si_axis();
    let (ua, va) = match si {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let shape = m.shape();
    let (nu, nv) = (shape[ua], shape[va]);
    let mut seen = vec![false; nu * nv];
    let mut queue = VecDeque::new();
    for s in 0..shape[si] {
        let idx = |u: usize, v: usize| {
            let mut p = [0; 3];
            p[si] = s;
            p[ua] = u;
            p[va] = v;
            p
        };
        seen.iter_mut().for_each(|x| *x = false);
        for u in 0..nu {
            for v in 0..nv {
                if (u == 0 || v == 0 || u == nu - 1 || v == nv - 1) && !m.get(idx(u, v)) {
                    seen[u + nu * v] = true;
                    queue.push_back((u, v));
                }
            }
        }
        while let Some((u, v)) = queue.pop_front() {
            let mut visit = |a: usize, b: usize| {
                if !seen[a + nu * b] && !m.get(idx(a, b)) {
                    seen[a + nu * b] = true;
                    queue.push_back((a, b));
                }
            };
            if u > 0 {
                visit(u - 1, v);
            }
            if u + 1 < nu {
                visit(u + 1, v);
            }
            if v > 0 {
                visit(u, v - 1);
            }
            if v + 1 < nv {
                visit(u, v + 1);
            }
        }
        for u in 0..nu {
            for v in 0..nv {
                if !seen[u + nu * v] {
                    m.set(idx(u, v), true);
                }
            }
        }
    }
}

/// Splits the body into `bands` equal-height axial bands. The top band is
/// label 1; band `b >= 1` is label `2b` on the patient's left and `2b + 1`
/// on the right of the mid-sagittal plane through the body centroid.
///
/// Voxels whose centre lies exactly on that plane count as left.
pub fn compute_quadrants(body: &Mask, bands: usize) -> Result<LabelMap> {
    if bands < 2 {
        return Err(Error::invalid(format!("need at least 2 bands, got {bands}")));
    }
    let grid = body.grid();
    let (si, superior_up) = grid.si_axis();
    let (lr, right_up) = grid.lr_axis();
    let [nx, ny, _] = grid.shape();
    let mut count = 0u64;
    let mut lr_sum = 0u64;
    let (mut smin, mut smax) = (usize::MAX, 0usize);
    for (li, &b) in body.data().iter().enumerate() {
        if b {
            let c = [li % nx, (li / nx) % ny, li / (nx * ny)];
            count += 1;
            lr_sum += c[lr] as u64;
            smin = smin.min(c[si]);
            smax = smax.max(c[si]);
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("body mask is empty".into()));
    }
    // work in slice units measured from the superior edge of the body
    let height = (smax - smin + 1) as f64;
    let band_h = height / bands as f64;
    let out = LabelMap::from_fn(grid.clone(), |p| {
        if !body.get(p) {
            return 0;
        }
        let from_top = if superior_up { smax as f64 + 0.5 - p[si] as f64 } else { p[si] as f64 - smin as f64 + 0.5 };
        let band = ((from_top / band_h).floor() as usize).min(bands - 1);
        if band == 0 {
            return 1;
        }
        // exact integer comparison of index against the centroid
        let pos = p[lr] as u64 * count;
        let right = if right_up { pos > lr_sum } else { pos < lr_sum };
        2 * band as u32 + right as u32
    });
    Ok(out)
}

/// The full localizer: iso grid, body mask, quadrants.
pub fn quadrants_from_inphase(inphase: &Image, threshold_fraction: f64, bands: usize) -> Result<LabelMap> {
    let iso = to_iso4(inphase)?;
    let body = body_mask(&iso, threshold_fraction)?;
    compute_quadrants(&body, bands)
}

/// Label of the partner region under a sagittal mirror.
pub fn mirrored_label(label: u32) -> u32 {
    if label <= 1 {
        label
    } else {
        label ^ 1
    }
}
