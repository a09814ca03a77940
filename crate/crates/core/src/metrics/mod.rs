//! Overlap and surface-distance metrics, per-class reports and bootstrap
//! confidence intervals.

mod bootstrap;
mod report;
mod surface;

pub use bootstrap::{bootstrap_ci, BootstrapCI, DEFAULT_ITERATIONS, DEFAULT_LEVEL, METHOD as BOOTSTRAP_METHOD};
pub use report::{summarize, Aggregate, ClassSummary, EvalSummary};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::schema::LabelSchema;
use crate::stats::{mean, std_dev};
use crate::volume::{LabelMap, Mask};
use surface::{directed_sum, surface_voxels, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    RefEmpty,
    PredEmpty,
    BothEmpty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u32,
    pub name: String,
    pub dice: Option<f64>,
    pub assd: Option<f64>,
    pub pred_volume: f64,
    pub ref_volume: f64,
    pub status: Status,
}

/// Metrics of one prediction/reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    /// Mean Dice over classes that are not absent from both volumes.
    pub macro_dice: Option<f64>,
    pub macro_dice_sd: Option<f64>,
}

fn dice_from_counts(inter: u64, a: u64, b: u64) -> Option<f64> {
    if a + b == 0 {
        None
    } else {
        Some(2.0 * inter as f64 / (a + b) as f64)
    }
}

/// `2|A∩B| / (|A| + |B|)`; `None` when both masks are empty.
pub fn dice(pred: &Mask, reference: &Mask) -> Result<Option<f64>> {
    pred.ensure_same_grid(reference, "dice")?;
    let (mut inter, mut a, mut b) = (0u64, 0u64, 0u64);
    for (&p, &r) in pred.data().iter().zip(reference.data()) {
        a += p as u64;
        b += r as u64;
        inter += (p && r) as u64;
    }
    Ok(dice_from_counts(inter, a, b))
}

fn full_box(shape: [usize; 3]) -> BBox {
    ([0; 3], shape.map(|n| n - 1))
}

fn assd_inner(
    shape: [usize; 3],
    spacing: [f64; 3],
    a: (&(impl Fn(usize) -> bool + Sync), BBox),
    b: (&(impl Fn(usize) -> bool + Sync), BBox),
) -> f64 {
    let sa = surface_voxels(shape, a.1, a.0);
    let sb = surface_voxels(shape, b.1, b.0);
    let total = directed_sum(&sa, &sb, spacing) + directed_sum(&sb, &sa, spacing);
    total / (sa.len() + sb.len()) as f64
}

/// Average symmetric surface distance in mm: all nearest-surface distances
/// in both directions summed and divided by the total surface voxel count.
/// `None` when either mask is empty.
pub fn assd(pred: &Mask, reference: &Mask, spacing: [f64; 3]) -> Result<Option<f64>> {
    pred.ensure_same_grid(reference, "assd")?;
    if pred.foreground_count() == 0 || reference.foreground_count() == 0 {
        return Ok(None);
    }
    let (p, r) = (pred.data(), reference.data());
    let shape = pred.shape();
    let pa = |li: usize| p[li];
    let ra = |li: usize| r[li];
    Ok(Some(assd_inner(shape, spacing, (&pa, full_box(shape)), (&ra, full_box(shape)))))
}

#[derive(Clone, Copy)]
struct Tally {
    count: u64,
    lo: [usize; 3],
    hi: [usize; 3],
}

impl Default for Tally {
    fn default() -> Self {
        Self { count: 0, lo: [usize::MAX; 3], hi: [0; 3] }
    }
}

impl Tally {
    fn add(&mut self, p: [usize; 3]) {
        self.count += 1;
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(p[a]);
            self.hi[a] = self.hi[a].max(p[a]);
        }
    }
}

/// One entry per schema class, binarising both volumes per class.
pub fn per_class_report(pred: &LabelMap, reference: &LabelMap, schema: &LabelSchema) -> Result<ClassReport> {
    pred.ensure_same_grid(reference, "evaluation")?;
    let size = schema.max_id() as usize + 1;
    let mut tp = vec![Tally::default(); size];
    let mut tr = vec![Tally::default(); size];
    let mut inter = vec![0u64; size];
    let shape = pred.shape();
    let [nx, ny, _] = shape;
    for (li, (&p, &r)) in pred.data().iter().zip(reference.data()).enumerate() {
        if p == 0 && r == 0 {
            continue;
        }
        let c = [li % nx, (li / nx) % ny, li / (nx * ny)];
        if (p as usize) < size && p != 0 {
            tp[p as usize].add(c);
        }
        if (r as usize) < size && r != 0 {
            tr[r as usize].add(c);
            if p == r {
                inter[r as usize] += 1;
            }
        }
    }
    let voxel = pred.grid().voxel_volume();
    let spacing = pred.spacing();
    let (pd, rd) = (pred.data(), reference.data());
    let classes: Vec<ClassMetrics> = schema
        .classes
        .par_iter()
        .map(|c| {
            let id = c.id as usize;
            let (a, b) = (tp[id], tr[id]);
            let status = match (a.count > 0, b.count > 0) {
                (true, true) => Status::Ok,
                (true, false) => Status::RefEmpty,
                (false, true) => Status::PredEmpty,
                (false, false) => Status::BothEmpty,
            };
            let assd = (status == Status::Ok).then(|| {
                let pa = |li: usize| pd[li] == c.id;
                let ra = |li: usize| rd[li] == c.id;
                assd_inner(shape, spacing, (&pa, (a.lo, a.hi)), (&ra, (b.lo, b.hi)))
            });
            ClassMetrics {
                class_id: c.id,
                name: c.name.clone(),
                dice: dice_from_counts(inter[id], a.count, b.count),
                assd,
                pred_volume: a.count as f64 * voxel,
                ref_volume: b.count as f64 * voxel,
                status,
            }
        })
        .collect();
    let scores: Vec<f64> = classes.iter().filter_map(|c| c.dice).collect();
    let (macro_dice, macro_dice_sd) =
        if scores.is_empty() { (None, None) } else { (Some(mean(&scores)), Some(std_dev(&scores))) };
    Ok(ClassReport { classes, macro_dice, macro_dice_sd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::builtin_schema;
    use crate::volume::GridSpec;

    fn g(n: usize) -> GridSpec {
        GridSpec::from_spacing([n, n, n], [1.0; 3]).unwrap()
    }

    #[test]
    fn dice_conventions() {
        let a = Mask::from_fn(g(6), |[i, _, _]| i < 3);
        let e = Mask::zeros(g(6));
        assert_eq!(dice(&a, &a).unwrap(), Some(1.0));
        assert_eq!(dice(&a, &e).unwrap(), Some(0.0));
        assert_eq!(dice(&e, &e).unwrap(), None);
        let b = Mask::from_fn(g(6), |[i, _, _]| i < 1);
        assert_eq!(dice(&a, &b).unwrap(), Some(2.0 * 36.0 / 144.0));
    }

    #[test]
    fn assd_shifted_cube() {
        let a = Mask::from_fn(g(8), |[i, j, k]| (1..6).contains(&i) && (1..6).contains(&j) && (1..6).contains(&k));
        let b = Mask::from_fn(g(8), |[i, j, k]| (2..7).contains(&i) && (1..6).contains(&j) && (1..6).contains(&k));
        assert_eq!(assd(&a, &a, [1.0; 3]).unwrap(), Some(0.0));
        let d1 = assd(&a, &b, [1.0; 3]).unwrap().unwrap();
        // outer x faces (2 x 25) and the inner 3x3 of the buried x faces (2 x 9) sit 1 mm away
        assert!((d1 - 68.0 / 196.0).abs() < 1e-12, "{d1}");
        let d2 = assd(&a, &b, [2.0; 3]).unwrap().unwrap();
        assert_eq!(d2, 2.0 * d1);
        assert_eq!(assd(&a, &Mask::zeros(g(8)), [1.0; 3]).unwrap(), None);
    }

    #[test]
    fn report_statuses() {
        let s = builtin_schema();
        let r = LabelMap::from_fn(g(10), |[i, _, _]| if i < 4 { 5 } else if i < 7 { 6 } else { 0 });
        let p = LabelMap::from_fn(g(10), |[i, _, _]| if i < 4 { 5 } else if i == 9 { 7 } else { 0 });
        let rep = per_class_report(&p, &r, &s).unwrap();
        let m = |id: u32| rep.classes.iter().find(|c| c.class_id == id).unwrap().clone();
        assert_eq!(m(5).dice, Some(1.0));
        assert_eq!(m(5).assd, Some(0.0));
        assert_eq!(m(6).status, Status::PredEmpty);
        assert_eq!(m(6).dice, Some(0.0));
        assert_eq!(m(7).status, Status::RefEmpty);
        assert_eq!(m(8).status, Status::BothEmpty);
        assert_eq!(m(8).dice, None);
        assert!((rep.macro_dice.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let same = per_class_report(&r, &r, &s).unwrap();
        assert_eq!(same.macro_dice, Some(1.0));
    }
}
