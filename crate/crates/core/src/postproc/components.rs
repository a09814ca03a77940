use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridSpec, LabelMap, Mask, Volume};

/// Voxel neighbourhood: faces (6), faces + edges (18), or the full cube (26).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    pub fn value(self) -> u8 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    fn max_taxicab(self) -> i32 {
        match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        }
    }

    /// All neighbour offsets.
    pub fn offsets(self) -> Vec<[i32; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1i32 {
            for dy in -1..=1i32 {
                for dx in -1..=1i32 {
                    let t = dx.abs() + dy.abs() + dz.abs();
                    if t > 0 && t <= self.max_taxicab() {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Offsets to neighbours that precede a voxel in x-fastest scan order.
    fn backward_offsets(self) -> Vec<[i32; 3]> {
        self.offsets()
            .into_iter()
            .filter(|&[dx, dy, dz]| dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0))))
            .collect()
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::invalid(format!("connectivity must be 6, 18 or 26, got {v}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub component_id: u32,
    pub class_id: u32,
    pub voxel_count: u64,
    /// mm³
    pub volume: f64,
    /// World coordinates, mm.
    pub centroid: [f64; 3],
    /// Inclusive voxel bounds: min i, j, k then max i, j, k.
    pub bbox: [usize; 6],
    /// Linear index of the component's first voxel in scan order.
    pub first_index: usize,
}

/// Component ids per voxel (0 outside every region) plus per-component stats.
#[derive(Debug, Clone)]
pub struct Components {
    pub ids: Vec<u32>,
    pub stats: Vec<ComponentStats>,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let ra = find(parent, a);
    let rb = find(parent, b);
    // the smaller provisional id was created first, i.e. by the earlier voxel
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Labels maximal connected regions of voxels sharing the same nonzero key.
///
/// Components are numbered 1..K by descending voxel count, ties broken by
/// the smaller linear index of the first voxel. `key` returns 0 for
/// background.
pub fn label_regions(grid: &GridSpec, conn: Connectivity, key: impl Fn(usize) -> u32) -> Components {
    let [nx, ny, nz] = grid.shape();
    let n = grid.len();
    let offsets: Vec<([i32; 3], isize)> = conn
        .backward_offsets()
        .into_iter()
        .map(|o| (o, o[0] as isize + nx as isize * (o[1] as isize + ny as isize * o[2] as isize)))
        .collect();

    let mut prov = vec![0u32; n];
    // index 0 is unused so that provisional ids start at 1
    let mut parent: Vec<u32> = vec![0];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let li = i + nx * (j + ny * k);
                let kv = key(li);
                if kv == 0 {
                    continue;
                }
                let mut label = 0u32;
                for &([dx, dy, dz], d) in &offsets {
                    let (x, y, z) = (i as i32 + dx, j as i32 + dy, k as i32 + dz);
                    if x < 0 || y < 0 || z < 0 || x >= nx as i32 || y >= ny as i32 {
                        continue;
                    }
                    let lj = (li as isize + d) as usize;
                    let p = prov[lj];
                    if p == 0 || key(lj) != kv {
                        continue;
                    }
                    label = if label == 0 || label == p { p } else { union(&mut parent, label, p) };
                }
                if label == 0 {
                    label = parent.len() as u32;
                    parent.push(label);
                }
                prov[li] = label;
            }
        }
    }

    // Resolve roots and gather stats per root.
    struct Acc {
        class_id: u32,
        count: u64,
        sum: [f64; 3],
        bbox: [usize; 6],
        first: usize,
    }
    let mut root_slot = vec![u32::MAX; parent.len()];
    let mut accs: Vec<Acc> = Vec::new();
    for li in 0..n {
        let p = prov[li];
        if p == 0 {
            continue;
        }
        let r = find(&mut parent, p);
        let slot = if root_slot[r as usize] == u32::MAX {
            root_slot[r as usize] = accs.len() as u32;
            accs.push(Acc { class_id: key(li), count: 0, sum: [0.0; 3], bbox: [usize::MAX, usize::MAX, usize::MAX, 0, 0, 0], first: li });
            accs.len() - 1
        } else {
            root_slot[r as usize] as usize
        };
        let c = [li % nx, (li / nx) % ny, li / (nx * ny)];
        let a = &mut accs[slot];
        a.count += 1;
        for ax in 0..3 {
            a.sum[ax] += c[ax] as f64;
            a.bbox[ax] = a.bbox[ax].min(c[ax]);
            a.bbox[ax + 3] = a.bbox[ax + 3].max(c[ax]);
        }
        prov[li] = slot as u32 + 1;
    }

    // accs are already in order of first voxel; a stable sort by count keeps that tie-break
    let mut order: Vec<usize> = (0..accs.len()).collect();
    order.sort_by(|&a, &b| accs[b].count.cmp(&accs[a].count));
    let mut rank = vec![0u32; accs.len()];
    for (r, &s) in order.iter().enumerate() {
        rank[s] = r as u32 + 1;
    }
    for v in prov.iter_mut() {
        if *v != 0 {
            *v = rank[*v as usize - 1];
        }
    }
    let voxel = grid.voxel_volume();
    let stats = order
        .iter()
        .enumerate()
        .map(|(r, &s)| {
            let a = &accs[s];
            let idx = a.sum.map(|x| x / a.count as f64);
            ComponentStats {
                component_id: r as u32 + 1,
                class_id: a.class_id,
                voxel_count: a.count,
                volume: a.count as f64 * voxel,
                centroid: grid.index_to_world(idx),
                bbox: a.bbox,
                first_index: a.first,
            }
        })
        .collect();
    Components { ids: prov, stats }
}

/// Connected components of a binary mask, labelled 1..K.
pub fn connected_components(mask: &Mask, conn: Connectivity) -> (LabelMap, Vec<ComponentStats>) {
    let data = mask.data();
    let c = label_regions(mask.grid(), conn, |li| data[li] as u32);
    (Volume::new(mask.grid().clone(), c.ids).expect("same grid"), c.stats)
}

/// Connected components of every class of a labelmap at once; components
/// never span two classes.
pub fn label_components(labels: &LabelMap, conn: Connectivity) -> (LabelMap, Vec<ComponentStats>) {
    let data = labels.data();
    let c = label_regions(labels.grid(), conn, |li| data[li]);
    (Volume::new(labels.grid().clone(), c.ids).expect("same grid"), c.stats)
}

/// Largest component of a mask (ties to the earliest), empty when none.
pub fn largest_component(mask: &Mask, conn: Connectivity) -> Mask {
    let (ids, _) = connected_components(mask, conn);
    ids.map(|v| v == 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::from_spacing([n, n, n], [1.0; 3]).unwrap()
    }

    #[test]
    fn offsets_counts() {
        assert_eq!(Connectivity::Six.offsets().len(), 6);
        assert_eq!(Connectivity::Eighteen.offsets().len(), 18);
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
        assert_eq!(Connectivity::TwentySix.backward_offsets().len(), 13);
        assert!(Connectivity::try_from(8).is_err());
    }

    #[test]
    fn two_cubes() {
        let m = Mask::from_fn(grid(8), |[i, j, k]| (i < 2 && j < 2 && k < 2) || (i > 4 && j > 4 && k > 4));
        let (ids, stats) = connected_components(&m, Connectivity::Six);
        assert_eq!(stats.len(), 2);
        assert_eq!(stats[0].voxel_count, 27);
        assert_eq!(stats[1].voxel_count, 8);
        assert_eq!(ids.get([6, 6, 6]), 1);
        assert_eq!(ids.get([0, 0, 0]), 2);
        assert_eq!(stats[1].bbox, [0, 0, 0, 1, 1, 1]);
        assert_eq!(stats[1].centroid, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn diagonal_touch() {
        let m = Mask::from_fn(grid(3), |[i, j, k]| (i, j, k) == (0, 0, 0) || (i, j, k) == (1, 1, 1));
        assert_eq!(connected_components(&m, Connectivity::TwentySix).1.len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Eighteen).1.len(), 2);
        assert_eq!(connected_components(&m, Connectivity::Six).1.len(), 2);
        let e = Mask::from_fn(grid(3), |[i, j, k]| (i, j, k) == (0, 0, 0) || (i, j, k) == (1, 1, 0));
        assert_eq!(connected_components(&e, Connectivity::Eighteen).1.len(), 1);
        assert_eq!(connected_components(&e, Connectivity::Six).1.len(), 2);
    }

    #[test]
    fn u_shape_merges() {
        // two arms joined at the far end: needs a union during the scan
        let m = Mask::from_fn(grid(5), |[i, j, k]| k == 0 && (i == 0 || i == 4 || j == 4));
        let (_, s) = connected_components(&m, Connectivity::Six);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].voxel_count, 13);
        assert_eq!(s[0].first_index, 0);
    }

    #[test]
    fn ties_follow_first_voxel() {
        let m = Mask::from_fn(grid(6), |[i, _, k]| k == 0 && (i == 1 || i == 4));
        let (ids, s) = connected_components(&m, Connectivity::Six);
        assert_eq!(s[0].voxel_count, s[1].voxel_count);
        assert_eq!(ids.get([1, 0, 0]), 1);
        assert_eq!(ids.get([4, 0, 0]), 2);
    }

    #[test]
    fn labels_split_by_class() {
        let l = LabelMap::from_fn(grid(4), |[i, _, _]| if i < 2 { 3 } else { 5 });
        let (_, s) = label_components(&l, Connectivity::TwentySix);
        assert_eq!(s.len(), 2);
        let mut classes: Vec<u32> = s.iter().map(|c| c.class_id).collect();
        classes.sort();
        assert_eq!(classes, vec![3, 5]);
    }

    #[test]
    fn empty_mask() {
        let (ids, s) = connected_components(&Mask::zeros(grid(3)), Connectivity::Six);
        assert!(s.is_empty());
        assert!(ids.data().iter().all(|&v| v == 0));
    }
}
