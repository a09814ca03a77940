//! Vertebra instance labels by counting connected vertebral bodies from the
//! top of the field of view, with heuristics that flag likely merges and
//! missing levels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postproc::{connected_components, Connectivity};
use crate::schema::{builtin_schema, VertebraLevel};
use crate::stats::median;
use crate::volume::{LabelMap, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpineParams {
    pub start_level: VertebraLevel,
    /// Bodies smaller than this (mm³) are ignored.
    pub min_volume: f64,
    pub merge_factor: f64,
    pub gap_factor: f64,
}

impl Default for SpineParams {
    fn default() -> Self {
        Self { start_level: VertebraLevel::C3, min_volume: 500.0, merge_factor: 1.8, gap_factor: 1.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedLevel {
    pub level: VertebraLevel,
    pub instance_id: u32,
    /// Source component in the body mask (pieces of a split share it).
    pub component_id: u32,
    pub voxel_count: u64,
    pub volume: f64,
    pub centroid: [f64; 3],
    pub si_extent_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    MergedSuspect,
    GapSuspect,
    CountOverflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub level: Option<VertebraLevel>,
    pub location: [f64; 3],
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpineReport {
    pub assigned_levels: Vec<AssignedLevel>,
    pub anomalies: Vec<Anomaly>,
}

impl SpineReport {
    pub fn count(&self, kind: AnomalyKind) -> usize {
        self.anomalies.iter().filter(|a| a.kind == kind).count()
    }
}

struct Unit {
    component_id: u32,
    /// Inclusive slice range along the SI axis.
    slices: (usize, usize),
    count: u64,
    sum: [f64; 3],
}

/// Assigns consecutive levels from `params.start_level` to body components
/// ordered superior to inferior.
///
/// With an IVD mask, a component is cut at the centroid slice of every disc
/// whose slice lies strictly inside the component's SI extent; the cut slice
/// joins the superior piece.
pub fn instance_label(body: &Mask, ivd: Option<&Mask>, params: &SpineParams) -> Result<(LabelMap, SpineReport)> {
    if body.foreground_count() == 0 {
        return Err(Error::Degenerate("vertebra body mask is empty".into()));
    }
    if let Some(m) = ivd {
        body.ensure_same_grid(m, "IVD mask")?;
    }
    let grid = body.grid();
    let (si, superior_up) = grid.si_axis();
    let (comp_ids, stats) = connected_components(body, Connectivity::TwentySix);
    let keep: Vec<bool> = std::iter::once(false).chain(stats.iter().map(|s| s.volume >= params.min_volume)).collect();

    let mut cuts: Vec<usize> = Vec::new();
    if let Some(m) = ivd {
        let (_, discs) = connected_components(m, Connectivity::TwentySix);
        for d in discs {
            let idx = grid.world_to_index(d.centroid);
            cuts.push(idx[si].round().max(0.0) as usize);
        }
    }

    // per kept component: sorted interior cut slices
    let mut comp_cuts: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for s in stats.iter().filter(|s| keep[s.component_id as usize]) {
        let (a, b) = (s.bbox[si], s.bbox[si + 3]);
        let mut c: Vec<usize> = cuts.iter().copied().filter(|&p| p > a && p < b).collect();
        c.sort_unstable();
        c.dedup();
        comp_cuts.insert(s.component_id, c);
    }
    // piece index of a slice within its component
    let piece_of = |cid: u32, slice: usize| -> usize {
        let c = &comp_cuts[&cid];
        if superior_up {
            // cut slice belongs to the piece above it
            c.iter().filter(|&&p| p <= slice).count()
        } else {
            c.iter().filter(|&&p| p < slice).count()
        }
    };

    let [nx, ny, _] = grid.shape();
    let mut units: BTreeMap<(u32, usize), Unit> = BTreeMap::new();
    for (li, &cid) in comp_ids.data().iter().enumerate() {
        if cid == 0 || !keep[cid as usize] {
            continue;
        }
        let p = [li % nx, (li / nx) % ny, li / (nx * ny)];
        let u = units.entry((cid, piece_of(cid, p[si]))).or_insert(Unit {
            component_id: cid,
            slices: (usize::MAX, 0),
            count: 0,
            sum: [0.0; 3],
        });
        u.count += 1;
        u.slices = (u.slices.0.min(p[si]), u.slices.1.max(p[si]));
        for a in 0..3 {
            u.sum[a] += p[a] as f64;
        }
    }

    let mut ordered: Vec<((u32, usize), [f64; 3])> = units
        .iter()
        .map(|(&k, u)| (k, grid.index_to_world(u.sum.map(|s| s / u.count as f64))))
        .collect();
    // superior first; ties by component then piece for determinism
    ordered.sort_by(|a, b| b.1[2].total_cmp(&a.1[2]).then(a.0.cmp(&b.0)));

    let ids = builtin_schema();
    let mut report = SpineReport::default();
    let mut unit_label: BTreeMap<(u32, usize), u32> = BTreeMap::new();
    let sp = grid.spacing()[si];
    let vox = grid.voxel_volume();
    for (n, (key, centroid)) in ordered.iter().enumerate() {
        let u = &units[key];
        match VertebraLevel::from_ordinal(params.start_level.ordinal() + n) {
            Some(level) => {
                let id = ids.instance_id(level).expect("built-in catalog has every level");
                unit_label.insert(*key, id);
                report.assigned_levels.push(AssignedLevel {
                    level,
                    instance_id: id,
                    component_id: u.component_id,
                    voxel_count: u.count,
                    volume: u.count as f64 * vox,
                    centroid: *centroid,
                    si_extent_mm: (u.slices.1 - u.slices.0 + 1) as f64 * sp,
                });
            }
            None => {
                unit_label.insert(*key, 0);
                report.anomalies.push(Anomaly {
                    kind: AnomalyKind::CountOverflow,
                    level: None,
                    location: *centroid,
                    detail: format!("component {} lies below L5 in the count", u.component_id),
                });
            }
        }
    }

    let mut out = vec![0u32; grid.len()];
    for (li, &cid) in comp_ids.data().iter().enumerate() {
        if cid != 0 && keep[cid as usize] {
            let p = [li % nx, (li / nx) % ny, li / (nx * ny)];
            out[li] = unit_label[&(cid, piece_of(cid, p[si]))];
        }
    }
    Ok((body.with_data(out)?, report))
}

/// Flags assigned levels whose SI extent exceeds `merge_factor` times the
/// median, and consecutive levels whose centroid spacing exceeds
/// `gap_factor` times the median spacing. Earlier merge/gap flags are
/// replaced; overflow flags are kept.
pub fn detect_anomalies(instances: &LabelMap, report: &SpineReport, params: &SpineParams) -> SpineReport {
    let grid = instances.grid();
    let (si, _) = grid.si_axis();
    let sp = grid.spacing()[si];
    let [nx, ny, _] = grid.shape();
    let mut ranges: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (li, &v) in instances.data().iter().enumerate() {
        if v != 0 {
            let p = [li % nx, (li / nx) % ny, li / (nx * ny)];
            let r = ranges.entry(v).or_insert((usize::MAX, 0));
            *r = (r.0.min(p[si]), r.1.max(p[si]));
        }
    }
    let centroids = instances.label_centroids();
    let mut levels: Vec<AssignedLevel> = report.assigned_levels.clone();
    for l in levels.iter_mut() {
        if let (Some(r), Some((n, c))) = (ranges.get(&l.instance_id), centroids.get(&l.instance_id)) {
            l.si_extent_mm = (r.1 - r.0 + 1) as f64 * sp;
            l.centroid = *c;
            l.voxel_count = *n;
            l.volume = *n as f64 * grid.voxel_volume();
        }
    }
    levels.sort_by_key(|l| l.level);

    let mut anomalies: Vec<Anomaly> =
        report.anomalies.iter().filter(|a| a.kind == AnomalyKind::CountOverflow).cloned().collect();
    if levels.len() >= 2 {
        let extents: Vec<f64> = levels.iter().map(|l| l.si_extent_mm).collect();
        let med = median(&extents);
        for l in &levels {
            if l.si_extent_mm > params.merge_factor * med {
                anomalies.push(Anomaly {
                    kind: AnomalyKind::MergedSuspect,
                    level: Some(l.level),
                    location: l.centroid,
                    detail: format!("extent {:.1} mm vs median {:.1} mm", l.si_extent_mm, med),
                });
            }
        }
        let dist = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
        let gaps: Vec<f64> = levels.windows(2).map(|w| dist(&w[0].centroid, &w[1].centroid)).collect();
        let med = median(&gaps);
        for (w, &g) in levels.windows(2).zip(&gaps) {
            if g > params.gap_factor * med {
                let mid = [0, 1, 2].map(|i| 0.5 * (w[0].centroid[i] + w[1].centroid[i]));
                anomalies.push(Anomaly {
                    kind: AnomalyKind::GapSuspect,
                    level: Some(w[1].level),
                    location: mid,
                    detail: format!("centroid spacing {g:.1} mm vs median {med:.1} mm above {}", w[1].level),
                });
            }
        }
    }
    SpineReport { assigned_levels: levels, anomalies }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridSpec;

    /// Stacked 6x6x`h` blobs separated by 2 empty slices, top blob first.
    fn stack(heights: &[usize]) -> Mask {
        let nz: usize = heights.iter().map(|h| h + 2).sum::<usize>() + 2;
        let g = GridSpec::from_spacing([8, 8, nz], [2.0, 2.0, 3.0]).unwrap();
        let mut m = Mask::zeros(g);
        let mut top = nz - 2;
        for &h in heights {
            for k in top - h..top {
                for j in 1..7 {
                    for i in 1..7 {
                        m.set([i, j, k], true);
                    }
                }
            }
            top -= h + 2;
        }
        m
    }

    #[test]
    fn twenty_two_levels() {
        let m = stack(&[4; 22]);
        let (lab, rep) = instance_label(&m, None, &SpineParams::default()).unwrap();
        let names: Vec<String> = rep.assigned_levels.iter().map(|l| l.level.to_string()).collect();
        assert_eq!(names.first().unwrap(), "C3");
        assert_eq!(names.last().unwrap(), "L5");
        assert_eq!(names.len(), 22);
        for w in rep.assigned_levels.windows(2) {
            assert!(w[0].centroid[2] > w[1].centroid[2]);
            assert!(w[0].instance_id < w[1].instance_id);
        }
        assert_eq!(lab.foreground_count(), m.foreground_count());
        let d = detect_anomalies(&lab, &rep, &SpineParams::default());
        assert!(d.anomalies.is_empty());
    }

    #[test]
    fn overflow_and_start_level() {
        let m = stack(&[4; 3]);
        let p = SpineParams { start_level: "L4".parse().unwrap(), ..Default::default() };
        let (lab, rep) = instance_label(&m, None, &p).unwrap();
        assert_eq!(rep.assigned_levels.len(), 2);
        assert_eq!(rep.count(AnomalyKind::CountOverflow), 1);
        assert!(lab.foreground_count() < m.foreground_count());
    }

    #[test]
    fn small_bodies_ignored() {
        // 6*6*1 voxels of 12 mm³ = 432 mm³ < 500 mm³
        let m = stack(&[4, 1, 4]);
        let (lab, rep) = instance_label(&m, None, &SpineParams::default()).unwrap();
        assert_eq!(rep.assigned_levels.len(), 2);
        assert_eq!(lab.foreground_count(), 2 * 144);
    }

    #[test]
    fn ivd_splits_fused_blob() {
        let m = stack(&[10]);
        let g = m.grid().clone();
        // fused blob covers slices 2..=11; disc centred on slice 7
        let ivd = Mask::from_fn(g, |[i, j, k]| k == 7 && (2..6).contains(&i) && (2..6).contains(&j));
        let (lab, rep) = instance_label(&m, Some(&ivd), &SpineParams::default()).unwrap();
        assert_eq!(rep.assigned_levels.len(), 2);
        let c3 = rep.assigned_levels[0].instance_id;
        let c4 = rep.assigned_levels[1].instance_id;
        assert_eq!(lab.get([3, 3, 7]), c3);
        assert_eq!(lab.get([3, 3, 6]), c4);
        assert_eq!(rep.assigned_levels[0].voxel_count, 5 * 36);
    }

    #[test]
    fn merged_and_gap_flags() {
        let mut h = vec![4; 21];
        h[10] = 10;
        let m = stack(&h);
        let (lab, rep) = instance_label(&m, None, &SpineParams::default()).unwrap();
        let d = detect_anomalies(&lab, &rep, &SpineParams::default());
        assert_eq!(d.count(AnomalyKind::MergedSuspect), 1);
        assert_eq!(d.count(AnomalyKind::GapSuspect), 0);

        let mut m = stack(&[4; 22]);
        let g = m.grid().clone();
        let nz = g.shape()[2];
        // clear the 11th blob from the top
        let top = nz - 2 - 10 * 6;
        for k in top - 4..top {
            for j in 0..8 {
                for i in 0..8 {
                    m.set([i, j, k], false);
                }
            }
        }
        let (lab, rep) = instance_label(&m, None, &SpineParams::default()).unwrap();
        let d = detect_anomalies(&lab, &rep, &SpineParams::default());
        assert_eq!(d.count(AnomalyKind::GapSuspect), 1);
        assert_eq!(d.count(AnomalyKind::MergedSuspect), 0);
    }
}
