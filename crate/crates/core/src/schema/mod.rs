//! Label catalogs: the 71-class torso schema, the 22-level vertebra instance
//! schema, and the CT catalog used as a mapping source.
//!
//! Catalogs are plain JSON documents so they can be versioned, diffed and
//! overridden; the built-in ones are compiled in from `data/`.

mod laterality;
mod mapping;
mod validate;

pub use laterality::{laterality_check, laterality_statuses, LateralityFlag, LateralityStatus};
pub use mapping::{apply_id_remap, map_labels, map_total_ct, parse_id_remap, DroppedId, MappingReport};
pub use validate::{validate_labels, ClassVolume, UnknownId, ValidationReport};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const VIBE_CATALOG: &str = include_str!("../../data/vibe_catalog_v1.json");
const TOTAL_CT_CATALOG: &str = include_str!("../../data/total_ct_v2.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Organ,
    Muscle,
    Vessel,
    Bone,
    Digestion,
    Lung,
    Spine,
    BodyComposition,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chirality {
    None,
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: u32,
    pub name: String,
    pub group: Group,
    pub chirality: Chirality,
    /// The mirrored class for left/right structures.
    #[serde(rename = "partner")]
    pub partner_id: Option<u32>,
    /// Keep only the largest connected component during clean-up.
    pub single_component: bool,
    /// Components smaller than this are removed during clean-up.
    #[serde(rename = "min_volume_mm3")]
    pub min_component_volume: f64,
    /// Merge rank; lower numbers claim contested voxels first.
    #[serde(rename = "priority")]
    pub merge_priority: i32,
}

/// A vertebra level from C3 down to L5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertebraLevel(u8);

impl VertebraLevel {
    pub const COUNT: usize = 22;
    pub const C3: VertebraLevel = VertebraLevel(0);
    pub const L5: VertebraLevel = VertebraLevel(21);

    /// Position in the superior-to-inferior order, 0 for C3.
    pub fn ordinal(self) -> usize {
        self.0 as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Self> {
        (i < Self::COUNT).then_some(VertebraLevel(i as u8))
    }

    pub fn all() -> impl Iterator<Item = VertebraLevel> {
        (0..Self::COUNT as u8).map(VertebraLevel)
    }

    pub fn next(self) -> Option<Self> {
        Self::from_ordinal(self.ordinal() + 1)
    }
}

impl fmt::Display for VertebraLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = self.0;
        match i {
            0..=4 => write!(f, "C{}", i + 3),
            5..=16 => write!(f, "T{}", i - 4),
            _ => write!(f, "L{}", i - 16),
        }
    }
}

impl FromStr for VertebraLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_uppercase();
        let bad = || Error::invalid(format!("vertebra level {s:?} is outside C3-L5"));
        let (region, num) = s.split_at(1.min(s.len()));
        let n: u8 = num.parse().map_err(|_| bad())?;
        let ord = match (region, n) {
            ("C", 3..=7) => n - 3,
            ("T", 1..=12) => n + 4,
            ("L", 1..=5) => n + 16,
            _ => return Err(bad()),
        };
        Ok(VertebraLevel(ord))
    }
}

impl Serialize for VertebraLevel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VertebraLevel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceClassDef {
    pub id: u32,
    pub level: VertebraLevel,
}

/// A versioned label catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub name: String,
    pub version: String,
    pub classes: Vec<ClassDef>,
    #[serde(default)]
    pub instances: Vec<InstanceClassDef>,
}

impl LabelSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: LabelSchema = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Checks id uniqueness, partner symmetry and rule ranges.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeMap::new();
        for c in &self.classes {
            if c.id == 0 {
                return Err(Error::Schema(format!("class {:?} uses reserved id 0", c.name)));
            }
            if ids.insert(c.id, c).is_some() {
                return Err(Error::Schema(format!("duplicate class id {}", c.id)));
            }
            if !(c.min_component_volume >= 0.0) {
                return Err(Error::Schema(format!("class {} has negative min volume", c.id)));
            }
        }
        let mut names = BTreeSet::new();
        for c in &self.classes {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate class name {:?}", c.name)));
            }
            let expect = match c.chirality {
                Chirality::None => {
                    if c.partner_id.is_some() {
                        return Err(Error::Schema(format!("class {} has a partner but no chirality", c.id)));
                    }
                    continue;
                }
                Chirality::Left => Chirality::Right,
                Chirality::Right => Chirality::Left,
            };
            let p = c
                .partner_id
                .and_then(|p| ids.get(&p))
                .ok_or_else(|| Error::Schema(format!("class {} ({}) lacks a mirrored partner", c.id, c.name)))?;
            if p.chirality != expect || p.partner_id != Some(c.id) {
                return Err(Error::Schema(format!("classes {} and {} are not mirrored partners", c.id, p.id)));
            }
        }
        if !self.instances.is_empty() {
            if self.instances.len() != VertebraLevel::COUNT {
                return Err(Error::Schema(format!(
                    "instance catalog has {} levels, expected {}",
                    self.instances.len(),
                    VertebraLevel::COUNT
                )));
            }
            for (i, inst) in self.instances.iter().enumerate() {
                if inst.level.ordinal() != i {
                    return Err(Error::Schema("instance levels must run C3..L5 in order".into()));
                }
                if inst.id == 0 || (i > 0 && inst.id <= self.instances[i - 1].id) {
                    return Err(Error::Schema("instance ids must be positive and increasing".into()));
                }
            }
        }
        Ok(())
    }

    pub fn class(&self, id: u32) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn by_name(&self, name: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.class(id).is_some()
    }

    pub fn max_id(&self) -> u32 {
        self.classes.iter().map(|c| c.id).max().unwrap_or(0)
    }

    /// Dense id-indexed lookup table (index 0 and gaps are `None`).
    pub fn lookup(&self) -> Vec<Option<&ClassDef>> {
        let mut t = vec![None; self.max_id() as usize + 1];
        for c in &self.classes {
            t[c.id as usize] = Some(c);
        }
        t
    }

    /// Left/right partner pairs as (left id, right id).
    pub fn chirality_pairs(&self) -> Vec<(u32, u32)> {
        self.classes
            .iter()
            .filter(|c| c.chirality == Chirality::Left)
            .filter_map(|c| c.partner_id.map(|p| (c.id, p)))
            .collect()
    }

    pub fn instance_id(&self, level: VertebraLevel) -> Option<u32> {
        self.instances.iter().find(|i| i.level == level).map(|i| i.id)
    }

    /// Human-readable differences against another catalog, keyed by id.
    pub fn diff(&self, other: &LabelSchema) -> Vec<String> {
        let mut out = Vec::new();
        if self.name != other.name || self.version != other.version {
            out.push(format!(
                "catalog {} {} -> {} {}",
                self.name, self.version, other.name, other.version
            ));
        }
        let a: BTreeMap<u32, &ClassDef> = self.classes.iter().map(|c| (c.id, c)).collect();
        let b: BTreeMap<u32, &ClassDef> = other.classes.iter().map(|c| (c.id, c)).collect();
        for (id, ca) in &a {
            match b.get(id) {
                None => out.push(format!("- {id} {}", ca.name)),
                Some(cb) if cb != ca => {
                    let ja = serde_json::to_string(ca).unwrap_or_default();
                    let jb = serde_json::to_string(cb).unwrap_or_default();
                    out.push(format!("~ {id} {ja} -> {jb}"));
                }
                _ => {}
            }
        }
        for (id, cb) in &b {
            if !a.contains_key(id) {
                out.push(format!("+ {id} {}", cb.name));
            }
        }
        if self.instances != other.instances {
            out.push("instance catalog differs".into());
        }
        out
    }
}

/// The 71-class torso catalog with the 22-level vertebra instance catalog.
pub fn builtin_schema() -> LabelSchema {
    LabelSchema::from_json(VIBE_CATALOG).expect("built-in catalog is valid")
}

/// The CT catalog whose label volumes [`map_total_ct`] converts.
pub fn total_ct_schema() -> LabelSchema {
    LabelSchema::from_json(TOTAL_CT_CATALOG).expect("built-in CT catalog is valid")
}
