//! Surface extraction and exact Euclidean distance transforms for ASSD.

/// Inclusive voxel bounding box `[min; max]`.
pub(crate) type BBox = ([usize; 3], [usize; 3]);

/// Foreground voxels with at least one 6-neighbour outside the mask; the
/// volume border counts as outside. Only voxels inside `bbox` are visited.
pub(crate) fn surface_voxels(shape: [usize; 3], bbox: BBox, inside: &impl Fn(usize) -> bool) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = shape;
    let mut out = Vec::new();
    let (lo, hi) = bbox;
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                let li = i + nx * (j + ny * k);
                if !inside(li) {
                    continue;
                }
                let edge = i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
                if edge
                    || !inside(li - 1)
                    || !inside(li + 1)
                    || !inside(li - nx)
                    || !inside(li + nx)
                    || !inside(li - nx * ny)
                    || !inside(li + nx * ny)
                {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

pub(crate) fn bbox_of(points: &[[usize; 3]]) -> Option<BBox> {
    let first = points.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Some((lo, hi))
}

/// One-dimensional squared distance transform of sampled function `f`
/// with sample spacing `h` (lower envelope of parabolas). Infinite samples
/// are not features.
fn edt_1d(f: &[f64], h: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        let xq = q as f64 * h;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let xp = p as f64 * h;
                    let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = q as f64 * h;
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let d = x - v[k] as f64 * h;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (mm²) from every voxel of a box of `shape` to
/// the nearest feature voxel. `features` are box-local coordinates.
pub(crate) fn squared_edt(shape: [usize; 3], spacing: [f64; 3], features: &[[usize; 3]]) -> Vec<f64> {
    let [nx, ny, nz] = shape;
    let mut d = vec![f64::INFINITY; nx * ny * nz];
    for p in features {
        d[p[0] + nx * (p[1] + ny * p[2])] = 0.0;
    }
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut res = vec![0.0; longest];
    for axis in 0..3 {
        let n = shape[axis];
        let stride = [1, nx, nx * ny][axis];
        let (oa, ob) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..shape[ob] {
            for a in 0..shape[oa] {
                let mut base = [0usize; 3];
                base[oa] = a;
                base[ob] = b;
                let start = base[0] + nx * (base[1] + ny * base[2]);
                for q in 0..n {
                    line[q] = d[start + q * stride];
                }
                edt_1d(&line[..n], spacing[axis], &mut res[..n], &mut v, &mut z);
                for q in 0..n {
                    d[start + q * stride] = res[q];
                }
            }
        }
    }
    d
}

/// Sum over `from` of the distance (mm) to the nearest voxel of `to`,
/// computed exactly on the joint bounding box.
pub(crate) fn directed_sum(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    let (lo, hi) = {
        let (a0, a1) = bbox_of(from).expect("nonempty surface");
        let (b0, b1) = bbox_of(to).expect("nonempty surface");
        ([0, 1, 2].map(|i| a0[i].min(b0[i])), [0, 1, 2].map(|i| a1[i].max(b1[i])))
    };
    let shape = [0, 1, 2].map(|i| hi[i] - lo[i] + 1);
    let local = |p: &[usize; 3]| [p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]];
    let feats: Vec<[usize; 3]> = to.iter().map(local).collect();
    let d = squared_edt(shape, spacing, &feats);
    from.iter()
        .map(|p| {
            let q = local(p);
            d[q[0] + shape[0] * (q[1] + shape[1] * q[2])].sqrt()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edt_matches_brute_force() {
        let shape = [7, 5, 4];
        let sp = [1.4, 1.4, 3.0];
        let feats = vec![[0, 0, 0], [6, 4, 3], [3, 2, 1]];
        let d = squared_edt(shape, sp, &feats);
        for k in 0..4 {
            for j in 0..5 {
                for i in 0..7 {
                    let brute = feats
                        .iter()
                        .map(|f| {
                            let dx = (i as f64 - f[0] as f64) * sp[0];
                            let dy = (j as f64 - f[1] as f64) * sp[1];
                            let dz = (k as f64 - f[2] as f64) * sp[2];
                            dx * dx + dy * dy + dz * dz
                        })
                        .fold(f64::INFINITY, f64::min);
                    let got = d[i + 7 * (j + 5 * k)];
                    assert!((got - brute).abs() < 1e-9, "{i},{j},{k}: {got} vs {brute}");
                }
            }
        }
    }

    #[test]
    fn surface_of_cube() {
        let shape = [5, 5, 5];
        let inside = |li: usize| {
            let (i, j, k) = (li % 5, (li / 5) % 5, li / 25);
            (1..4).contains(&i) && (1..4).contains(&j) && (1..4).contains(&k)
        };
        let s = surface_voxels(shape, ([0; 3], [4; 3]), &inside);
        assert_eq!(s.len(), 26);
        let full = |_: usize| true;
        assert_eq!(surface_voxels([3, 3, 3], ([0; 3], [2; 3]), &full).len(), 26);
    }
}
