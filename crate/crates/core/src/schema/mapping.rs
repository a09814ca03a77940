use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LabelSchema;
use crate::error::{Error, Result};
use crate::volume::LabelMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedId {
    pub id: u32,
    pub name: Option<String>,
    pub reason: String,
}

/// What happened to every nonzero source id seen in a volume.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingReport {
    pub mapped: Vec<(u32, u32)>,
    pub dropped: Vec<DroppedId>,
    pub warnings: Vec<String>,
}

impl MappingReport {
    pub fn is_empty(&self) -> bool {
        self.mapped.is_empty() && self.dropped.is_empty() && self.warnings.is_empty()
    }
}

const REASON_RIBS: &str = "Missing; Not reproduced due to time constrains";
const REASON_FOV: &str = "Missing; Outside FOV";
const REASON_CYST: &str = "Out of scope for this work";

enum Rule {
    To(&'static str),
    Drop(&'static str),
    ByName,
}

fn rule_for(name: &str) -> Rule {
    match name {
        "small_bowel" | "colon" => Rule::To("intestine"),
        "brain" | "skull" => Rule::Drop(REASON_FOV),
        n if n.starts_with("kidney_cyst") => Rule::Drop(REASON_CYST),
        n if n.starts_with("rib_") => Rule::Drop(REASON_RIBS),
        n if n.starts_with("vertebrae_") => Rule::To("vertebra_body"),
        _ => Rule::ByName,
    }
}

/// Relabels `labels` from the `source` catalog's ids to `target`'s.
///
/// Classes are matched by name, except for the merges and omissions that
/// distinguish the torso catalog from the CT catalog. Ids unknown to the
/// source become 0 and are listed as dropped.
pub fn map_labels(labels: &LabelMap, source: &LabelSchema, target: &LabelSchema) -> (LabelMap, MappingReport) {
    let mut report = MappingReport::default();
    let present = labels.histogram();
    let mut table: BTreeMap<u32, u32> = BTreeMap::new();
    let mut vertebra_warned = false;
    for (&id, _) in present.iter().filter(|(&id, _)| id != 0) {
        let Some(class) = source.class(id) else {
            report.dropped.push(DroppedId { id, name: None, reason: "unknown id".into() });
            table.insert(id, 0);
            continue;
        };
        let to = match rule_for(&class.name) {
            Rule::Drop(reason) => {
                report.dropped.push(DroppedId { id, name: Some(class.name.clone()), reason: reason.into() });
                table.insert(id, 0);
                continue;
            }
            Rule::To(name) if target.by_name(name).is_some() => {
                if name == "vertebra_body" && !vertebra_warned {
                    report.warnings.push(
                        "per-level vertebra labels were merged into vertebra_body; \
                         the body/posterior-element split cannot be derived by relabeling"
                            .into(),
                    );
                    vertebra_warned = true;
                }
                target.by_name(name)
            }
            _ => target.by_name(&class.name),
        };
        match to {
            Some(t) => {
                report.mapped.push((id, t.id));
                table.insert(id, t.id);
            }
            None => {
                report.dropped.push(DroppedId {
                    id,
                    name: Some(class.name.clone()),
                    reason: format!("no counterpart in catalog {}", target.name),
                });
                table.insert(id, 0);
            }
        }
    }
    let out = if table.iter().all(|(a, b)| a == b) {
        labels.clone()
    } else {
        labels.map(|v| if v == 0 { 0 } else { table[&v] })
    };
    (out, report)
}

/// Converts a CT-catalog label volume to the built-in torso catalog.
pub fn map_total_ct(labels: &LabelMap, ct_catalog: &LabelSchema) -> (LabelMap, MappingReport) {
    map_labels(labels, ct_catalog, &super::builtin_schema())
}

/// Parses an id remap file: one `from to` or `from,to` pair per line,
/// `#` comments and blank lines ignored.
pub fn parse_id_remap(text: &str) -> Result<BTreeMap<u32, u32>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let bad = || Error::invalid(format!("remap line {}: expected two ids, got {line:?}", n + 1));
        if parts.len() != 2 {
            return Err(bad());
        }
        let a: u32 = parts[0].parse().map_err(|_| bad())?;
        let b: u32 = parts[1].parse().map_err(|_| bad())?;
        if map.insert(a, b).is_some() {
            return Err(Error::invalid(format!("remap line {}: id {a} listed twice", n + 1)));
        }
    }
    Ok(map)
}

/// Applies an explicit id table; ids missing from the table are kept.
pub fn apply_id_remap(labels: &LabelMap, map: &BTreeMap<u32, u32>) -> LabelMap {
    labels.map(|v| map.get(&v).copied().unwrap_or(v))
}
