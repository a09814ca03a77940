use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Group, LabelSchema};
use crate::volume::LabelMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownId {
    pub id: u32,
    pub voxel_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVolume {
    pub class_id: u32,
    pub name: String,
    pub voxel_count: u64,
    pub volume_mm3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub unknown_ids: Vec<UnknownId>,
    /// Every schema class, including absent ones with zero counts.
    pub classes: Vec<ClassVolume>,
    /// Groups with classes in the schema but no voxels in the volume.
    pub empty_groups: Vec<Group>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.unknown_ids.is_empty()
    }
}

pub fn validate_labels(labels: &LabelMap, schema: &LabelSchema) -> ValidationReport {
    let hist = labels.histogram();
    let voxel = labels.grid().voxel_volume();
    let unknown_ids = hist
        .iter()
        .filter(|(&id, _)| id != 0 && !schema.contains(id))
        .map(|(&id, &n)| UnknownId { id, voxel_count: n })
        .collect();
    let classes: Vec<ClassVolume> = schema
        .classes
        .iter()
        .map(|c| {
            let n = hist.get(&c.id).copied().unwrap_or(0);
            ClassVolume { class_id: c.id, name: c.name.clone(), voxel_count: n, volume_mm3: n as f64 * voxel }
        })
        .collect();
    let all: BTreeSet<Group> = schema.classes.iter().map(|c| c.group).collect();
    let filled: BTreeSet<Group> = schema
        .classes
        .iter()
        .zip(&classes)
        .filter(|(_, v)| v.voxel_count > 0)
        .map(|(c, _)| c.group)
        .collect();
    ValidationReport { unknown_ids, classes, empty_groups: all.difference(&filled).copied().collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::builtin_schema;
    use crate::volume::GridSpec;

    #[test]
    fn unknown_id_found_once() {
        let g = GridSpec::from_spacing([4, 4, 4], [1.4, 1.4, 3.0]).unwrap();
        let mut v = LabelMap::filled(g, 5);
        let s = builtin_schema();
        assert!(validate_labels(&v, &s).is_clean());
        v.set([1, 2, 3], 9999);
        let r = validate_labels(&v, &s);
        assert_eq!(r.unknown_ids, vec![UnknownId { id: 9999, voxel_count: 1 }]);
        let c5 = r.classes.iter().find(|c| c.class_id == 5).unwrap();
        assert_eq!(c5.voxel_count, 63);
        assert_eq!(c5.volume_mm3, 63.0 * v.grid().voxel_volume());
        assert!(r.empty_groups.contains(&Group::Vessel));
        assert!(!r.empty_groups.contains(&s.class(5).unwrap().group));
    }
}
