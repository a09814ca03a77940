use serde::{Deserialize, Serialize};

use super::LabelSchema;
use crate::error::{Error, Result};
use crate::volume::LabelMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LateralityStatus {
    Ok,
    /// Left class on the right side and right class on the left side.
    Swapped,
    /// Both classes on the same side of the plane.
    SameSide,
    /// A centroid lies within one voxel of the mid-sagittal plane.
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateralityFlag {
    pub left_id: u32,
    pub right_id: u32,
    pub left_name: String,
    pub right_name: String,
    pub status: LateralityStatus,
    /// Signed distance to the plane, positive toward the patient's right.
    pub left_offset_mm: f64,
    pub right_offset_mm: f64,
}

/// Side assessment for every chirality pair with both classes present.
pub fn laterality_statuses(labels: &LabelMap, schema: &LabelSchema) -> Result<Vec<LateralityFlag>> {
    let cents = labels.label_centroids();
    let total: u64 = cents.values().map(|(n, _)| n).sum();
    if total == 0 {
        return Err(Error::Degenerate("laterality check needs a nonempty foreground".into()));
    }
    let mut mid = [0.0; 3];
    for (n, c) in cents.values() {
        for a in 0..3 {
            mid[a] += c[a] * *n as f64;
        }
    }
    let mid = mid.map(|s| s / total as f64);

    let grid = labels.grid();
    let (axis, positive) = grid.lr_axis();
    let dir = grid.direction();
    let sign = if positive { 1.0 } else { -1.0 };
    let normal = [dir[(0, axis)] * sign, dir[(1, axis)] * sign, dir[(2, axis)] * sign];
    let tol = grid.spacing()[axis];
    let offset = |p: &[f64; 3]| (0..3).map(|a| (p[a] - mid[a]) * normal[a]).sum::<f64>();

    let mut out = Vec::new();
    for (l, r) in schema.chirality_pairs() {
        let (Some((_, cl)), Some((_, cr))) = (cents.get(&l), cents.get(&r)) else {
            continue;
        };
        let (dl, dr) = (offset(cl), offset(cr));
        let status = if dl.abs() < tol || dr.abs() < tol {
            LateralityStatus::Indeterminate
        } else {
            match (dl < 0.0, dr > 0.0) {
                (true, true) => LateralityStatus::Ok,
                (false, false) => LateralityStatus::Swapped,
                _ => LateralityStatus::SameSide,
            }
        };
        let name = |id: u32| schema.class(id).map(|c| c.name.clone()).unwrap_or_default();
        out.push(LateralityFlag {
            left_id: l,
            right_id: r,
            left_name: name(l),
            right_name: name(r),
            status,
            left_offset_mm: dl,
            right_offset_mm: dr,
        });
    }
    Ok(out)
}

/// Chirality pairs whose classes are not on their anatomical sides.
pub fn laterality_check(labels: &LabelMap, schema: &LabelSchema) -> Result<Vec<LateralityFlag>> {
    Ok(laterality_statuses(labels, schema)?
        .into_iter()
        .filter(|f| f.status != LateralityStatus::Ok)
        .collect())
}
