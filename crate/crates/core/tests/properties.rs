mod common;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use vibeseg_core::metrics::{assd, bootstrap_ci, dice};
use vibeseg_core::postproc::{connected_components, filter_small_components, merge_with_priority, Connectivity};
use vibeseg_core::pseudoct::make_pseudo_ct;
use vibeseg_core::quadrants::{compute_quadrants, mirrored_label};
use vibeseg_core::schema::{
    builtin_schema, laterality_statuses, map_labels, map_total_ct, total_ct_schema, LateralityStatus,
};
use vibeseg_core::stitch::stitch;
use vibeseg_core::tiler::{fuse, plan_tiles, FusionConfig, MockOracle, Precision};
use vibeseg_core::vertebrae::{instance_label, SpineParams};
use vibeseg_core::volume::{elastic_deform, reorient, resample, ElasticParams, Interpolation, Orientation};
use vibeseg_core::{GridSpec, Image, LabelMap, Mask};

use common::{coords, grid, random_labels, random_mask, rng};

const CODES: [&str; 8] = ["RAS", "LPS", "PIR", "SLA", "ILP", "ASR", "LAI", "RSP"];

fn bfs_partition(m: &Mask, conn: Connectivity) -> Vec<u32> {
    let shape = m.shape();
    let reach = match conn {
        Connectivity::Six => 1,
        Connectivity::Eighteen => 2,
        Connectivity::TwentySix => 3,
    };
    let offs: Vec<[i64; 3]> = (-1..=1)
        .flat_map(|a| (-1..=1).flat_map(move |b| (-1..=1).map(move |c| [a, b, c])))
        .filter(|o| {
            let n = o.iter().filter(|&&x| x != 0).count();
            n > 0 && n <= reach
        })
        .collect();
    let mut ids = vec![0u32; m.len()];
    let mut next = 0;
    for start in 0..m.len() {
        if !m.data()[start] || ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        let mut q = VecDeque::from([start]);
        while let Some(li) = q.pop_front() {
            let p = coords(shape, li);
            for o in &offs {
                let n = [0, 1, 2].map(|a| p[a] as i64 + o[a]);
                if (0..3).any(|a| n[a] < 0 || n[a] >= shape[a] as i64) {
                    continue;
                }
                let nl = n[0] as usize + shape[0] * (n[1] as usize + shape[1] * n[2] as usize);
                if m.data()[nl] && ids[nl] == 0 {
                    ids[nl] = next;
                    q.push_back(nl);
                }
            }
        }
    }
    ids
}

fn same_partition(a: &[u32], b: &[u32]) -> bool {
    let mut fwd = BTreeMap::new();
    let mut back = BTreeMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        (x == 0) == (y == 0) && *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x
    })
}

fn flip_x<T: vibeseg_core::Voxel>(v: &vibeseg_core::Volume<T>) -> vibeseg_core::Volume<T> {
    let nx = v.shape()[0];
    vibeseg_core::Volume::from_fn(v.grid().clone(), |[i, j, k]| v.get([nx - 1 - i, j, k]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reorient_preserves_values_and_inverts(seed in any::<u64>(), a in 0..8usize, b in 0..8usize) {
        let mut r = rng(seed);
        let g = grid([5, 4, 3], [1.4, 2.0, 3.0]);
        let v = Image::from_fn(g, |_| r.random_range(-5.0..5.0f32));
        let out = reorient(&v, CODES[a].parse().unwrap()).unwrap();
        let mut x: Vec<u32> = v.data().iter().map(|f| f.to_bits()).collect();
        let mut y: Vec<u32> = out.data().iter().map(|f| f.to_bits()).collect();
        x.sort_unstable();
        y.sort_unstable();
        prop_assert_eq!(x, y);
        let home: Orientation = "RAS".parse().unwrap();
        let back = reorient(&reorient(&out, CODES[b].parse().unwrap()).unwrap(), home).unwrap();
        prop_assert_eq!(back.data(), v.data());
        prop_assert!(back.grid().approx_eq(v.grid(), 1e-9));
    }

    #[test]
    fn nearest_resample_adds_only_zero(seed in any::<u64>(), s in 0.5..3.0f64, o in -4.0..4.0f64) {
        let mut r = rng(seed);
        let g = grid([8, 7, 6], [1.5, 1.5, 2.0]);
        let v = random_labels(&g, 9, 0.4, &mut r);
        let target = GridSpec::with_origin([9, 9, 9], [s, s * 1.1, s * 0.9], [o, -o, o * 0.5]).unwrap();
        let out = resample(&v, &target, Interpolation::Nearest).unwrap();
        let src: BTreeSet<u32> = v.data().iter().copied().chain([0]).collect();
        prop_assert!(out.data().iter().all(|x| src.contains(x)));
    }

    #[test]
    fn zero_sigma_elastic_is_identity(seed in any::<u64>(), cs in 4.0..40.0f64) {
        let mut r = rng(seed);
        let v = Image::from_fn(grid([6, 5, 4], [1.0, 1.2, 3.0]), |_| r.random::<f32>());
        let out = elastic_deform(&v, &ElasticParams { control_spacing: cs, sigma: 0.0, seed }, Interpolation::Trilinear).unwrap();
        prop_assert_eq!(out, v);
    }

    #[test]
    fn components_partition_matches_flood_fill(seed in any::<u64>(), d in 0.1..0.9f64, c in 0..3usize) {
        let conn = [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix][c];
        let m = random_mask(&grid([9, 8, 7], [1.0; 3]), d, &mut rng(seed));
        let (ids, stats) = connected_components(&m, conn);
        prop_assert!(same_partition(ids.data(), &bfs_partition(&m, conn)));
        let total: u64 = stats.iter().map(|s| s.voxel_count).sum();
        prop_assert_eq!(total as usize, m.foreground_count());
        prop_assert!(stats.windows(2).all(|w| w[0].voxel_count >= w[1].voxel_count));
    }

    #[test]
    fn filtering_never_adds_voxels(seed in any::<u64>()) {
        let labels = random_labels(&grid([12, 12, 10], [2.0; 3]), 30, 0.5, &mut rng(seed));
        let out = filter_small_components(&labels, &builtin_schema(), Connectivity::TwentySix);
        prop_assert!(out.data().iter().zip(labels.data()).all(|(&o, &i)| o == 0 || o == i));
    }

    #[test]
    fn merge_is_first_claimant_and_order_free(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = builtin_schema();
        let g = grid([10, 9, 8], [1.0; 3]);
        let mut ids: Vec<u32> = s.classes.iter().map(|c| c.id).collect();
        ids.shuffle(&mut r);
        ids.truncate(5);
        let masks: Vec<Mask> = ids.iter().map(|_| random_mask(&g, 0.3, &mut r)).collect();
        let mut input: Vec<(u32, &Mask)> = ids.iter().copied().zip(masks.iter()).collect();
        let out = merge_with_priority(&input, &s).unwrap();
        for li in 0..g.len() {
            let want = input
                .iter()
                .filter(|(_, m)| m.data()[li])
                .map(|(id, _)| (s.class(*id).unwrap().merge_priority, *id))
                .min()
                .map_or(0, |(_, id)| id);
            prop_assert_eq!(out.data()[li], want);
        }
        input.shuffle(&mut r);
        prop_assert_eq!(merge_with_priority(&input, &s).unwrap(), out);
    }

    #[test]
    fn pseudo_ct_closed_form(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = grid([7, 6, 5], [1.0; 3]);
        let water = Image::from_fn(g.clone(), |_| r.random_range(-50.0..3000.0f32));
        let muscle = random_labels(&g, 1, 0.3, &mut r);
        let bg = LabelMap::from_fn(g, |_| if r.random_bool(0.3) { r.random_range(1..=2) } else { 0 });
        let out = make_pseudo_ct(&water, &muscle, &bg).unwrap();
        for li in 0..out.len() {
            let mut v = water.data()[li];
            if muscle.data()[li] != 0 {
                v *= 0.8;
            }
            if bg.data()[li] != 0 {
                v -= 600.0;
            }
            prop_assert_eq!(out.data()[li].to_bits(), v.to_bits());
        }
    }

    #[test]
    fn quadrants_partition_and_mirror(seed in any::<u64>(), bands in 2..8usize) {
        let mut r = rng(seed);
        let g = grid([16, 8, 20], [4.0; 3]);
        let body = Mask::from_fn(g, |[i, j, k]| {
            (2..14).contains(&i) && j < 7 && (1..19).contains(&k) && !(i < 4 && k < 3) || r.random_bool(0.05)
        });
        let q = compute_quadrants(&body, bands).unwrap();
        prop_assert!(q.data().iter().zip(body.data()).all(|(&l, &b)| (l != 0) == b));
        prop_assert!(q.max_label() <= 2 * bands as u32 - 1);
        let mq = compute_quadrants(&flip_x(&body), bands).unwrap();
        let count = body.foreground_count() as u64;
        let lr_sum: u64 = body.data().iter().enumerate().filter(|(_, &b)| b).map(|(li, _)| (li % 16) as u64).sum();
        for li in 0..q.len() {
            let [i, j, k] = coords([16, 8, 20], li);
            if body.data()[li] && i as u64 * count != lr_sum {
                prop_assert_eq!(mq.get([15 - i, j, k]), mirrored_label(q.data()[li]));
            }
        }
    }

    #[test]
    fn dice_and_assd_symmetry(seed in any::<u64>(), d in 0.05..0.6f64, shift in 0..3usize) {
        let mut r = rng(seed);
        let g = grid([12, 11, 10], [1.4, 1.4, 3.0]);
        let inner = |r: &mut rand_chacha::ChaCha8Rng| Mask::from_fn(g.clone(), |[i, j, k]| i < 8 && j < 8 && k < 7 && r.random_bool(d));
        let (a, b) = (inner(&mut r), inner(&mut r));
        prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        prop_assert_eq!(assd(&a, &b, g.spacing()).unwrap(), assd(&b, &a, g.spacing()).unwrap());
        if a.foreground_count() > 0 {
            prop_assert_eq!(dice(&a, &a).unwrap(), Some(1.0));
            prop_assert_eq!(assd(&a, &a, g.spacing()).unwrap(), Some(0.0));
        }
        let mv = |m: &Mask| Mask::from_fn(g.clone(), |[i, j, k]| i >= shift && j >= shift && k >= shift && m.get([i - shift, j - shift, k - shift]));
        prop_assert_eq!(dice(&mv(&a), &mv(&b)).unwrap(), dice(&a, &b).unwrap());
    }

    #[test]
    fn bootstrap_interval_brackets_mean(seed in any::<u64>(), n in 1..40usize) {
        let mut r = rng(seed);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let ci = bootstrap_ci(&v, 400, 0.95, seed).unwrap();
        prop_assert!(ci.lo <= ci.mean && ci.mean <= ci.hi);
    }

    #[test]
    fn tile_plan_covers_volume(
        sx in 0..200usize, sy in 0..200usize, sz in 0..100usize, overlap in 0.0..0.95f64,
    ) {
        let patch = [224, 224, 64];
        let shape = [224 + sx, 224 + sy, 64 + sz];
        let plan = plan_tiles(shape, patch, overlap).unwrap();
        for a in 0..3 {
            let mut covered = vec![false; shape[a]];
            let starts: BTreeSet<usize> = plan.origins.iter().map(|o| o[a]).collect();
            for s in starts {
                prop_assert!(s + patch[a] <= shape[a]);
                covered[s..s + patch[a]].iter_mut().for_each(|c| *c = true);
            }
            prop_assert!(covered.iter().all(|&c| c));
        }
        prop_assert!(plan.origins.windows(2).all(|w| w[0][2] <= w[1][2]));
    }

    #[test]
    fn chunked_fusion_equals_unchunked(seed in any::<u64>(), extra in 0..12usize, f16 in any::<bool>()) {
        let mut r = rng(seed);
        let v = Image::from_fn(grid([14, 12, 30], [1.0; 3]), |_| r.random::<f32>());
        let plan = plan_tiles(v.shape(), [8, 6, 6], 0.4).unwrap();
        let precision = if f16 { Precision::F16 } else { Precision::F32 };
        let oracle = MockOracle::Noise { classes: 3, seed };
        let (full, _) = fuse(&plan, &v, &oracle, &FusionConfig::unbounded(precision)).unwrap();
        let budget = 4 * 14 * 12 * precision.bytes() * (6 + extra);
        let (chunked, stats) = fuse(&plan, &v, &oracle, &FusionConfig { memory_budget: budget, precision }).unwrap();
        prop_assert!(stats.peak_accumulator_bytes <= budget);
        prop_assert_eq!(full, chunked);
    }

    #[test]
    fn stitch_is_order_free(seed in any::<u64>(), o1 in 1..8usize, o2 in 1..8usize) {
        let mut r = rng(seed);
        let g = grid([5, 4, 40], [1.4, 1.4, 3.0]);
        let v = Image::from_fn(g.clone(), |_| r.random_range(0.0..100.0f32));
        let mut cut = |z0: usize, z1: usize| {
            Image::from_fn(g.subgrid([0, 0, z0 as i64], [5, 4, z1 - z0]).unwrap(), |[i, j, k]| v.get([i, j, k + z0]) + r.random_range(0.0..1.0f32))
        };
        let mut stacks = vec![cut(0, 14 + o1), cut(14, 28 + o2), cut(28, 40)];
        let a = stitch(&stacks, None).unwrap().volume;
        stacks.shuffle(&mut r);
        let b = stitch(&stacks, None).unwrap().volume;
        prop_assert_eq!(&a, &b);
        prop_assert!(a.grid().approx_eq(&g, 1e-9));
        let flat: Vec<Image> = stacks.iter().map(|s| Image::filled(s.grid().clone(), 7.5)).collect();
        let c = stitch(&flat, None).unwrap().volume;
        prop_assert!(c.data().iter().all(|&x| (x - 7.5).abs() < 1e-5));
    }

    #[test]
    fn catalog_mapping_stays_in_catalog(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ct = total_ct_schema();
        let vibe = builtin_schema();
        let g = grid([8, 8, 8], [1.0; 3]);
        let ct_ids: Vec<u32> = ct.classes.iter().map(|c| c.id).chain([0, 999]).collect();
        let labels = LabelMap::from_fn(g.clone(), |_| ct_ids[r.random_range(0..ct_ids.len())]);
        let (mapped, _) = map_total_ct(&labels, &ct);
        prop_assert!(mapped.data().iter().all(|&id| id == 0 || vibe.contains(id)));
        let own = LabelMap::from_fn(g, |_| if r.random_bool(0.5) { vibe.classes[r.random_range(0..vibe.classes.len())].id } else { 0 });
        prop_assert_eq!(map_labels(&own, &vibe, &vibe).0, own);
    }

    #[test]
    fn laterality_mirror_complements(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = builtin_schema();
        let mut pairs = s.chirality_pairs();
        pairs.shuffle(&mut r);
        pairs.truncate(r.random_range(1..8));
        let g = grid([30, 20, 40], [1.5; 3]);
        let mut lab = LabelMap::zeros(g);
        for (n, &(left, right)) in pairs.iter().enumerate() {
            let (lo_side, hi_side) = if r.random_bool(0.5) { (left, right) } else { (right, left) };
            for k in 0..4 {
                for j in 0..3 {
                    for i in 0..4 {
                        lab.set([2 + i, 2 + j, n * 5 + k], lo_side);
                        lab.set([24 + i, 2 + j, n * 5 + k], hi_side);
                    }
                }
            }
        }
        let a = laterality_statuses(&lab, &s).unwrap();
        let b = laterality_statuses(&flip_x(&lab), &s).unwrap();
        prop_assert_eq!(a.len(), pairs.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!((x.left_id, x.right_id), (y.left_id, y.right_id));
            let want = match x.status {
                LateralityStatus::Ok => LateralityStatus::Swapped,
                LateralityStatus::Swapped => LateralityStatus::Ok,
                other => other,
            };
            prop_assert_eq!(y.status, want);
        }
    }

    #[test]
    fn vertebra_levels_follow_geometry(seed in any::<u64>(), n in 2..12usize, shift in 0..6usize) {
        let mut r = rng(seed);
        let heights: Vec<usize> = (0..n).map(|_| r.random_range(3..5)).collect();
        let jitter: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let build = |off: usize| {
            let g = grid([16, 16, 6 * n + 12], [2.0, 2.0, 3.0]);
            let mut m = Mask::zeros(g);
            let mut z = 2 + off;
            for b in 0..n {
                for k in z..z + heights[b] {
                    for j in 5..10 {
                        for i in (4 + jitter[b])..(9 + jitter[b]) {
                            m.set([i, j, k], true);
                        }
                    }
                }
                z += heights[b] + 2;
            }
            m
        };
        let params = SpineParams { min_volume: 0.0, ..SpineParams::default() };
        let m0 = build(0);
        let (l0, rep0) = instance_label(&m0, None, &params).unwrap();
        let (_, rep1) = instance_label(&build(shift), None, &params).unwrap();
        let lv0: Vec<_> = rep0.assigned_levels.iter().map(|a| (a.level, a.voxel_count)).collect();
        let lv1: Vec<_> = rep1.assigned_levels.iter().map(|a| (a.level, a.voxel_count)).collect();
        prop_assert_eq!(lv0, lv1);
        prop_assert!(rep0.assigned_levels.windows(2).all(|w| w[0].instance_id < w[1].instance_id && w[0].centroid[2] > w[1].centroid[2]));
        prop_assert!(l0.data().iter().zip(m0.data()).all(|(&l, &b)| (l != 0) == b));
    }
}
