//! Pseudo-CT remapping of water-only MR images.
//!
//! Muscle signal is scaled down and background/lung are pushed strongly
//! negative so that a model trained on CT sees a familiar contrast.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::postproc::{label_regions, Connectivity};
use crate::stats::quantile_f32;
use crate::volume::{Image, LabelMap};

pub const MUSCLE_SCALE: f32 = 0.8;
pub const AIR_OFFSET: f32 = 600.0;
pub const BACKGROUND: u32 = 1;
pub const LUNG: u32 = 2;

/// Low-intensity masks covering more than this fraction are rejected.
const MAX_LOW_FRACTION: f64 = 0.95;
/// Warn when more than this fraction of body voxels ends up below −600.
const BELOW_AIR_WARN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackgroundParams {
    pub threshold_fraction: f64,
    /// Minimum interior component volume kept as lung, mm³.
    pub min_volume: f64,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self { threshold_fraction: 0.1, min_volume: 1000.0 }
    }
}

/// Labels background (1) and lung (2) in an in-phase image.
///
/// Voxels below `threshold_fraction` times the 99th percentile form the
/// low-intensity mask. Its 26-connected components touching the volume
/// border are background; interior components of at least `min_volume` mm³
/// are lung.
pub fn find_background_and_lung(inphase: &Image, threshold_fraction: f64, min_volume: f64) -> Result<LabelMap> {
    if inphase.is_empty() {
        return Err(Error::invalid("in-phase image is empty"));
    }
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(Error::invalid(format!("threshold fraction must lie in (0, 1), got {threshold_fraction}")));
    }
    let p99 = quantile_f32(inphase.data(), 0.99);
    let thr = (threshold_fraction * p99) as f32;
    let data = inphase.data();
    let low = data.iter().filter(|&&v| v < thr).count();
    if low as f64 > MAX_LOW_FRACTION * data.len() as f64 {
        return Err(Error::Degenerate(format!(
            "threshold {thr} selects {:.1}% of voxels",
            100.0 * low as f64 / data.len() as f64
        )));
    }
    let comps = label_regions(inphase.grid(), Connectivity::TwentySix, |li| (data[li] < thr) as u32);
    let [nx, ny, nz] = inphase.shape();
    let on_border = |s: &crate::postproc::ComponentStats| {
        let b = s.bbox;
        b[0] == 0 || b[1] == 0 || b[2] == 0 || b[3] == nx - 1 || b[4] == ny - 1 || b[5] == nz - 1
    };
    let mut class = vec![0u32; comps.stats.len() + 1];
    for s in &comps.stats {
        class[s.component_id as usize] = if on_border(s) {
            BACKGROUND
        } else if s.volume >= min_volume {
            LUNG
        } else {
            0
        };
    }
    let out = comps.ids.iter().map(|&c| class[c as usize]).collect();
    inphase.with_data(out)
}

/// `water · 0.8` inside the muscle mask, then `− 600` inside the
/// background/lung mask. All other voxels are copied unchanged.
pub fn make_pseudo_ct(water: &Image, muscle_mask: &LabelMap, bglung_mask: &LabelMap) -> Result<Image> {
    water.ensure_same_grid(muscle_mask, "muscle mask")?;
    water.ensure_same_grid(bglung_mask, "background/lung mask")?;
    let mut out = water.data().to_vec();
    out.par_iter_mut()
        .zip(muscle_mask.data().par_iter().zip(bglung_mask.data().par_iter()))
        .for_each(|(v, (&m, &b))| {
            if m != 0 {
                *v *= MUSCLE_SCALE;
            }
            if b != 0 {
                *v -= AIR_OFFSET;
            }
        });
    let body = bglung_mask.data().iter().filter(|&&b| b != BACKGROUND).count();
    let below = out
        .iter()
        .zip(bglung_mask.data())
        .filter(|(&v, &b)| b != BACKGROUND && v < -AIR_OFFSET)
        .count();
    if body > 0 && below as f64 > BELOW_AIR_WARN * body as f64 {
        log::warn!(
            "{:.1}% of non-background voxels fall below -{AIR_OFFSET}; intensities may not suit this image",
            100.0 * below as f64 / body as f64
        );
    }
    water.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridSpec;

    fn body(lungs: bool) -> Image {
        let g = GridSpec::from_spacing([40, 40, 30], [2.0; 3]).unwrap();
        Image::from_fn(g, |[i, j, k]| {
            let inside = (4..36).contains(&i) && (4..36).contains(&j) && (3..27).contains(&k);
            let lung = lungs && (8..16).contains(&j) && (8..20).contains(&k) && ((8..16).contains(&i) || (24..32).contains(&i));
            if inside && !lung {
                500.0
            } else {
                5.0
            }
        })
    }

    #[test]
    fn body_without_lungs() {
        let m = find_background_and_lung(&body(false), 0.1, 1000.0).unwrap();
        assert_eq!(m.get([0, 0, 0]), BACKGROUND);
        assert_eq!(m.get([20, 20, 15]), 0);
        assert!(!m.data().contains(&LUNG));
    }

    #[test]
    fn interior_blobs_are_lung() {
        let m = find_background_and_lung(&body(true), 0.1, 1000.0).unwrap();
        assert_eq!(m.get([10, 10, 10]), LUNG);
        assert_eq!(m.get([28, 10, 10]), LUNG);
        // each blob is 8*8*12 voxels of 8 mm³
        let too_big = find_background_and_lung(&body(true), 0.1, 8.0 * 8.0 * 12.0 * 8.0 + 1.0).unwrap();
        assert!(!too_big.data().contains(&LUNG));
    }

    #[test]
    fn all_bright_gives_empty_mask() {
        let g = GridSpec::from_spacing([5, 5, 5], [1.0; 3]).unwrap();
        let m = find_background_and_lung(&Image::filled(g, 100.0), 0.1, 0.0).unwrap();
        assert!(m.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn degenerate_threshold_rejected() {
        let g = GridSpec::from_spacing([10, 10, 10], [1.0; 3]).unwrap();
        // 3% bright voxels put the 99th percentile at 100
        let v = Image::from_fn(g, |[_, j, k]| if k == 0 && j < 3 { 100.0 } else { 0.0 });
        assert!(find_background_and_lung(&v, 0.1, 0.0).is_err());
    }

    #[test]
    fn closed_form() {
        let g = GridSpec::from_spacing([3, 1, 1], [1.0; 3]).unwrap();
        let w = Image::new(g.clone(), vec![1000.0, 50.0, 7.0]).unwrap();
        let m = LabelMap::new(g.clone(), vec![1, 0, 1]).unwrap();
        let b = LabelMap::new(g.clone(), vec![0, 1, 2]).unwrap();
        let out = make_pseudo_ct(&w, &m, &b).unwrap();
        assert_eq!(out.data(), &[800.0, -550.0, 7.0 * 0.8 - 600.0]);
        let z = LabelMap::zeros(g);
        assert_eq!(make_pseudo_ct(&w, &z, &z).unwrap(), w);
    }

    #[test]
    fn grid_mismatch() {
        let w = Image::zeros(GridSpec::from_spacing([3, 1, 1], [1.0; 3]).unwrap());
        let m = LabelMap::zeros(GridSpec::from_spacing([3, 1, 1], [2.0; 3]).unwrap());
        assert!(matches!(make_pseudo_ct(&w, &m, &m), Err(Error::GridMismatch(_))));
    }
}
