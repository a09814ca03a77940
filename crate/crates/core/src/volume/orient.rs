use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix4;

use super::grid::{Affine, GridSpec};
use super::{Volume, Voxel};
use crate::error::{Error, Result};

/// Anatomical direction an index axis points toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AxisDirection {
    R,
    L,
    A,
    P,
    S,
    I,
}

impl AxisDirection {
    /// World axis (0=x, 1=y, 2=z) and whether this points along its positive end.
    pub fn world_axis(self) -> (usize, bool) {
        match self {
            Self::R => (0, true),
            Self::L => (0, false),
            Self::A => (1, true),
            Self::P => (1, false),
            Self::S => (2, true),
            Self::I => (2, false),
        }
    }

    fn from_world(axis: usize, positive: bool) -> Self {
        match (axis, positive) {
            (0, true) => Self::R,
            (0, false) => Self::L,
            (1, true) => Self::A,
            (1, false) => Self::P,
            (2, true) => Self::S,
            _ => Self::I,
        }
    }

    fn letter(self) -> char {
        match self {
            Self::R => 'R',
            Self::L => 'L',
            Self::A => 'A',
            Self::P => 'P',
            Self::S => 'S',
            Self::I => 'I',
        }
    }
}

/// Three-letter axis code, e.g. `RAS` or `LPS`: letter `n` names the
/// direction voxel index `n` increases toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Orientation(pub [AxisDirection; 3]);

impl Orientation {
    /// Closest axis code for an affine, assigning the strongest
    /// axis–world alignments first so the three letters stay distinct.
    pub fn from_affine(affine: &Affine) -> Self {
        let lin = affine.linear();
        let mut used_row = [false; 3];
        let mut used_col = [false; 3];
        let mut out = [AxisDirection::R; 3];
        for _ in 0..3 {
            let mut best = (0, 0, -1.0f64);
            for r in 0..3 {
                for c in 0..3 {
                    if used_row[r] || used_col[c] {
                        continue;
                    }
                    let v = lin[(r, c)].abs() / lin.column(c).norm();
                    if v > best.2 {
                        best = (r, c, v);
                    }
                }
            }
            let (r, c, _) = best;
            used_row[r] = true;
            used_col[c] = true;
            out[c] = AxisDirection::from_world(r, lin[(r, c)] > 0.0);
        }
        Orientation(out)
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<char> = s.trim().chars().map(|c| c.to_ascii_uppercase()).collect();
        if letters.len() != 3 {
            return Err(Error::InvalidOrientation(s.to_string()));
        }
        let mut out = [AxisDirection::R; 3];
        let mut seen = [false; 3];
        for (n, c) in letters.iter().enumerate() {
            let d = match c {
                'R' => AxisDirection::R,
                'L' => AxisDirection::L,
                'A' => AxisDirection::A,
                'P' => AxisDirection::P,
                'S' => AxisDirection::S,
                'I' => AxisDirection::I,
                _ => return Err(Error::InvalidOrientation(s.to_string())),
            };
            let (w, _) = d.world_axis();
            if seen[w] {
                return Err(Error::InvalidOrientation(s.to_string()));
            }
            seen[w] = true;
            out[n] = d;
        }
        Ok(Orientation(out))
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.0 {
            write!(f, "{}", d.letter())?;
        }
        Ok(())
    }
}

/// Permutes and flips voxel axes so the volume has orientation `target`,
/// keeping every voxel at the same world position.
pub fn reorient<T: Voxel>(v: &Volume<T>, target: Orientation) -> Result<Volume<T>> {
    let current = v.orientation();
    if current == target {
        return Ok(v.clone());
    }
    let old_shape = v.shape();
    // new axis n reads old axis perm[n], reversed when flip[n]
    let mut perm = [0usize; 3];
    let mut flip = [false; 3];
    for (n, t) in target.0.iter().enumerate() {
        let (tw, tpos) = t.world_axis();
        let old = current
            .0
            .iter()
            .position(|d| d.world_axis().0 == tw)
            .expect("orientation codes cover all three world axes");
        perm[n] = old;
        flip[n] = current.0[old].world_axis().1 != tpos;
    }
    let new_shape = [old_shape[perm[0]], old_shape[perm[1]], old_shape[perm[2]]];

    // new index -> old index as a homogeneous matrix
    let mut t = Matrix4::zeros();
    t[(3, 3)] = 1.0;
    for n in 0..3 {
        let o = perm[n];
        if flip[n] {
            t[(o, n)] = -1.0;
            t[(o, 3)] = (old_shape[o] - 1) as f64;
        } else {
            t[(o, n)] = 1.0;
        }
    }
    let new_affine = Affine(v.affine().0 * t);
    let grid = GridSpec::new(new_shape, new_affine)?;

    let src = v.data();
    let old_grid = v.grid();
    let mut data = Vec::with_capacity(src.len());
    let mut old = [0usize; 3];
    for k in 0..new_shape[2] {
        for j in 0..new_shape[1] {
            for i in 0..new_shape[0] {
                for (n, idx) in [i, j, k].into_iter().enumerate() {
                    let o = perm[n];
                    old[o] = if flip[n] { old_shape[o] - 1 - idx } else { idx };
                }
                data.push(src[old_grid.linear_index(old)]);
            }
        }
    }
    Volume::new(grid, data)
}
