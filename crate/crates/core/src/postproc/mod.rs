//! Connectivity clean-up of predicted labelmaps and priority merging of
//! per-class masks.

mod components;

pub use components::{
    connected_components, label_components, label_regions, largest_component, ComponentStats, Components,
    Connectivity,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::LabelSchema;
use crate::volume::{LabelMap, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    BelowMinVolume,
    NotLargest,
}

impl RemovalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RemovalReason::BelowMinVolume => "below_min_volume",
            RemovalReason::NotLargest => "not_largest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub stats: ComponentStats,
    /// `None` when the component was kept.
    pub removed: Option<RemovalReason>,
}

/// Applies the per-class component rules and reports every component.
///
/// Classes unknown to the schema are left untouched.
pub fn filter_components_detailed(
    labels: &LabelMap,
    schema: &LabelSchema,
    conn: Connectivity,
) -> (LabelMap, Vec<FilterOutcome>) {
    let lookup = schema.lookup();
    let (ids, stats) = label_components(labels, conn);
    let mut seen_single: BTreeSet<u32> = BTreeSet::new();
    let mut drop = vec![false; stats.len() + 1];
    let mut outcomes = Vec::with_capacity(stats.len());
    // stats are sorted by size, so the first component of a class is its largest
    for s in stats {
        let rule = lookup.get(s.class_id as usize).copied().flatten();
        let removed = rule.and_then(|c| {
            if s.volume < c.min_component_volume {
                Some(RemovalReason::BelowMinVolume)
            } else if c.single_component && !seen_single.insert(c.id) {
                Some(RemovalReason::NotLargest)
            } else {
                None
            }
        });
        drop[s.component_id as usize] = removed.is_some();
        outcomes.push(FilterOutcome { stats: s, removed });
    }
    let out = if drop.iter().any(|&d| d) {
        let mut data = labels.data().to_vec();
        for (v, &c) in data.iter_mut().zip(ids.data()) {
            if drop[c as usize] {
                *v = 0;
            }
        }
        labels.with_data(data).expect("same grid")
    } else {
        labels.clone()
    };
    (out, outcomes)
}

/// Removes components below each class's minimum volume and, for
/// single-component classes, every component but the largest.
pub fn filter_small_components(labels: &LabelMap, schema: &LabelSchema, conn: Connectivity) -> LabelMap {
    filter_components_detailed(labels, schema, conn).0
}

fn rank(schema: &LabelSchema, class_id: u32) -> Result<(i32, u32)> {
    let c = schema
        .class(class_id)
        .ok_or_else(|| Error::invalid(format!("class {class_id} is not in catalog {}", schema.name)))?;
    Ok((c.merge_priority, class_id))
}

/// Merges binary masks into one labelmap; a voxel goes to the covering
/// class with the lowest priority rank (ties to the lower class id).
pub fn merge_with_priority(masks: &[(u32, &Mask)], schema: &LabelSchema) -> Result<LabelMap> {
    let Some((_, first)) = masks.first() else {
        return Err(Error::invalid("merge needs at least one mask"));
    };
    let mut seen = BTreeSet::new();
    let mut ranked = Vec::with_capacity(masks.len());
    for &(id, m) in masks {
        if !seen.insert(id) {
            return Err(Error::invalid(format!("class {id} appears twice in the merge input")));
        }
        first.ensure_same_grid(m, "merge input")?;
        ranked.push((rank(schema, id)?, id, m));
    }
    ranked.sort_by_key(|r| r.0);
    let mut out = vec![0u32; first.len()];
    for (_, id, m) in ranked {
        for (o, &b) in out.iter_mut().zip(m.data()) {
            if b && *o == 0 {
                *o = id;
            }
        }
    }
    first.with_data(out)
}

/// Priority merge of several labelmaps: each voxel takes the
/// highest-priority class claimed by any input.
pub fn merge_labelmaps_with_priority(maps: &[&LabelMap], schema: &LabelSchema) -> Result<LabelMap> {
    let Some(first) = maps.first() else {
        return Err(Error::invalid("merge needs at least one labelmap"));
    };
    for m in &maps[1..] {
        first.ensure_same_grid(*m, "merge input")?;
    }
    let max = maps.iter().map(|m| m.max_label()).max().unwrap_or(0) as usize;
    let mut key = vec![(i32::MAX, u32::MAX); max + 1];
    for (id, k) in key.iter_mut().enumerate().skip(1) {
        if let Some(c) = schema.class(id as u32) {
            *k = (c.merge_priority, id as u32);
        }
    }
    for m in maps {
        for (id, _) in m.histogram() {
            if id != 0 && key[id as usize].0 == i32::MAX {
                return Err(Error::invalid(format!("class {id} is not in catalog {}", schema.name)));
            }
        }
    }
    let mut out = first.data().to_vec();
    for m in &maps[1..] {
        for (o, &v) in out.iter_mut().zip(m.data()) {
            if v != 0 && (*o == 0 || key[v as usize] < key[*o as usize]) {
                *o = v;
            }
        }
    }
    first.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::builtin_schema;
    use crate::volume::GridSpec;

    fn grid() -> GridSpec {
        GridSpec::from_spacing([30, 30, 30], [1.0; 3]).unwrap()
    }

    #[test]
    fn speck_removed_blob_kept() {
        let s = builtin_schema();
        let liver = s.by_name("liver").unwrap().id;
        // 10 mL blob plus a one-voxel speck at 1 mm spacing
        let l = LabelMap::from_fn(grid(), |[i, j, k]| {
            if i < 20 && j < 20 && k < 25 || (i == 28 && j == 28 && k == 28) {
                liver
            } else {
                0
            }
        });
        let (out, rep) = filter_components_detailed(&l, &s, Connectivity::TwentySix);
        assert_eq!(out.get([28, 28, 28]), 0);
        assert_eq!(out.get([0, 0, 0]), liver);
        assert_eq!(rep.iter().filter(|r| r.removed.is_some()).count(), 1);
    }

    #[test]
    fn single_component_keeps_one_of_equal_blobs() {
        let mut s = builtin_schema();
        let liver = s.by_name("liver").unwrap().id;
        s.classes.iter_mut().for_each(|c| c.min_component_volume = 0.0);
        let l = LabelMap::from_fn(grid(), |[i, _, _]| if i < 5 || i > 24 { liver } else { 0 });
        let out = filter_small_components(&l, &s, Connectivity::Six);
        assert_eq!(out.get([0, 0, 0]), liver);
        assert_eq!(out.get([29, 0, 0]), 0);
    }

    #[test]
    fn no_rules_is_identity() {
        let mut s = builtin_schema();
        s.classes.iter_mut().for_each(|c| {
            c.min_component_volume = 0.0;
            c.single_component = false;
        });
        let l = LabelMap::from_fn(grid(), |[i, j, k]| ((i * 7 + j * 3 + k) % 5) as u32 * 3);
        assert_eq!(filter_small_components(&l, &s, Connectivity::Six), l);
    }

    #[test]
    fn vessel_beats_organ() {
        let s = builtin_schema();
        let aorta = s.by_name("aorta").unwrap().id;
        let liver = s.by_name("liver").unwrap().id;
        let a = Mask::from_fn(grid(), |[i, _, _]| i < 10);
        let b = Mask::from_fn(grid(), |[i, _, _]| i >= 5 && i < 20);
        for order in [[(liver, &b), (aorta, &a)], [(aorta, &a), (liver, &b)]] {
            let out = merge_with_priority(&order, &s).unwrap();
            assert_eq!(out.get([7, 0, 0]), aorta);
            assert_eq!(out.get([12, 0, 0]), liver);
            assert_eq!(out.get([25, 0, 0]), 0);
        }
        assert!(merge_with_priority(&[(aorta, &a), (aorta, &b)], &s).is_err());
        assert!(merge_with_priority(&[(999, &a)], &s).is_err());
    }

    #[test]
    fn labelmap_merge_matches_mask_merge() {
        let s = builtin_schema();
        let aorta = s.by_name("aorta").unwrap().id;
        let liver = s.by_name("liver").unwrap().id;
        let a = LabelMap::from_fn(grid(), |[i, _, _]| if i < 10 { liver } else { 0 });
        let b = LabelMap::from_fn(grid(), |[i, _, _]| if i >= 5 && i < 20 { aorta } else { 0 });
        let m = merge_labelmaps_with_priority(&[&a, &b], &s).unwrap();
        let ma = a.mask_of(liver);
        let mb = b.mask_of(aorta);
        assert_eq!(m, merge_with_priority(&[(liver, &ma), (aorta, &mb)], &s).unwrap());
    }
}
