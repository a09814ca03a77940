use std::str::FromStr;

use crate::error::{Error, Result};

/// One patch handed to an oracle. Data are first-axis fastest.
#[derive(Debug, Clone, Copy)]
pub struct Patch<'a> {
    /// Offset of the patch in the full volume.
    pub origin: [usize; 3],
    pub shape: [usize; 3],
    pub data: &'a [f32],
    pub aux: Option<&'a [f32]>,
}

/// Per-patch class scorer standing in for a segmentation network.
pub trait PatchOracle: Sync {
    fn num_classes(&self) -> usize;

    /// Scores laid out class-major: `num_classes` planes of `data.len()`.
    fn evaluate(&self, patch: &Patch) -> Result<Vec<f32>>;
}

/// Deterministic oracles for tests and dry runs.
#[derive(Debug, Clone, PartialEq)]
pub enum MockOracle {
    /// One-hot class `c` everywhere.
    Constant(u32),
    /// Class 1 where intensity exceeds the threshold, else class 0.
    Threshold(f32),
    /// Parity of the global voxel index sum.
    Checkerboard,
    /// Intensity rounded to the nearest class in `0..k`.
    Quantize(usize),
    /// Pseudo-random scores keyed by seed, tile origin, voxel and class.
    Noise { classes: usize, seed: u64 },
}

fn one_hot(classes: usize, n: usize, label: impl Fn(usize) -> usize) -> Vec<f32> {
    let mut out = vec![0.0; classes * n];
    for l in 0..n {
        out[label(l) * n + l] = 1.0;
    }
    out
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl PatchOracle for MockOracle {
    fn num_classes(&self) -> usize {
        match *self {
            MockOracle::Constant(c) => (c as usize + 1).max(2),
            MockOracle::Threshold(_) | MockOracle::Checkerboard => 2,
            MockOracle::Quantize(k) => k,
            MockOracle::Noise { classes, .. } => classes,
        }
    }

    fn evaluate(&self, p: &Patch) -> Result<Vec<f32>> {
        let n = p.data.len();
        let c = self.num_classes();
        let [sx, sy, _] = p.shape;
        let global = |l: usize| [p.origin[0] + l % sx, p.origin[1] + (l / sx) % sy, p.origin[2] + l / (sx * sy)];
        Ok(match *self {
            MockOracle::Constant(k) => one_hot(c, n, |_| k as usize),
            MockOracle::Threshold(t) => one_hot(c, n, |l| (p.data[l] > t) as usize),
            MockOracle::Checkerboard => one_hot(c, n, |l| global(l).iter().sum::<usize>() % 2),
            MockOracle::Quantize(k) => one_hot(c, n, |l| (p.data[l].round().max(0.0) as usize).min(k - 1)),
            MockOracle::Noise { seed, .. } => {
                let tile = splitmix(seed ^ splitmix((p.origin[0] | p.origin[1] << 20 | p.origin[2] << 40) as u64));
                let mut out = Vec::with_capacity(c * n);
                for ch in 0..c {
                    for l in 0..n {
                        let g = global(l);
                        let key = (g[0] as u64) | (g[1] as u64) << 20 | (g[2] as u64) << 40;
                        let h = splitmix(tile ^ splitmix(key ^ (ch as u64) << 60));
                        out.push((h >> 40) as f32 / (1u64 << 24) as f32);
                    }
                }
                out
            }
        })
    }
}

impl FromStr for MockOracle {
    type Err = Error;

    /// `constant:C`, `threshold:T`, `checkerboard`, `quantize:K`, `noise:K:SEED`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::invalid(format!("cannot parse mock oracle {s:?}"));
        let num = |i: usize| parts.get(i).ok_or_else(bad).and_then(|p| p.parse::<f64>().map_err(|_| bad()));
        let oracle = match (parts[0], parts.len()) {
            ("constant", 2) => MockOracle::Constant(num(1)? as u32),
            ("threshold", 2) => MockOracle::Threshold(num(1)? as f32),
            ("checkerboard", 1) => MockOracle::Checkerboard,
            ("quantize", 2) => MockOracle::Quantize(num(1)? as usize),
            ("noise", 3) => MockOracle::Noise { classes: num(1)? as usize, seed: num(2)? as u64 },
            _ => return Err(bad()),
        };
        if oracle.num_classes() < 2 {
            return Err(Error::invalid(format!("mock oracle {s:?} needs at least 2 classes")));
        }
        Ok(oracle)
    }
}
