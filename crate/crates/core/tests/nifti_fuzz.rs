mod common;

use rand::Rng;
use vibeseg_core::volume::{read_nifti, write_volume, Affine};
use vibeseg_core::{AnyVolume, GridSpec, Image, LabelMap};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(1.0)
}

fn random_grid(r: &mut impl Rng) -> GridSpec {
    let shape = [r.random_range(1..12), r.random_range(1..12), r.random_range(1..10)];
    let spacing = [r.random_range(0.3..4.0), r.random_range(0.3..4.0), r.random_range(0.5..6.0)];
    let (a, b) = (r.random_range(-3.1..3.1f64), r.random_range(-1.5..1.5f64));
    // rotation about z then x, columns scaled by spacing
    let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let rx = [[1.0, 0.0, 0.0], [0.0, b.cos(), -b.sin()], [0.0, b.sin(), b.cos()]];
    let mut rows = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            let m: f64 = (0..3).map(|k| rx[i][k] * rz[k][j]).sum();
            rows[i][j] = m * spacing[j];
        }
        rows[i][3] = r.random_range(-300.0..300.0);
    }
    rows[3][3] = 1.0;
    GridSpec::new(shape, Affine::from_rows(rows)).unwrap()
}

#[test]
fn hundred_random_volumes_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(2024);
    for n in 0..100 {
        let g = random_grid(&mut r);
        let path = dir.path().join(if n % 2 == 0 { format!("v{n}.nii.gz") } else { format!("v{n}.nii") });
        let back = if n % 3 == 0 {
            let top = [1u32, 200, 60_000, 5_000_000][n % 4];
            let v = LabelMap::from_fn(g.clone(), |_| r.random_range(0..=top));
            write_volume(&v, &path).unwrap();
            let got = read_nifti(&path).unwrap().volume;
            let AnyVolume::Labels(l) = got else { panic!("volume {n} did not decode as labels") };
            assert_eq!(l.data(), v.data(), "volume {n}");
            l.grid().clone()
        } else {
            let v = Image::from_fn(g.clone(), |_| {
                let e = r.random_range(-20..20);
                r.random_range(-1.0..1.0f32) * 2f32.powi(e)
            });
            write_volume(&v, &path).unwrap();
            let AnyVolume::Image(i) = read_nifti(&path).unwrap().volume else { panic!("volume {n} lost its kind") };
            let same = i.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "volume {n} data differ");
            i.grid().clone()
        };
        assert_eq!(back.shape(), g.shape());
        let (ra, rb) = (back.affine().rows(), g.affine().rows());
        for i in 0..4 {
            for j in 0..4 {
                assert!(close(ra[i][j], rb[i][j]), "volume {n} affine [{i}][{j}]: {} vs {}", ra[i][j], rb[i][j]);
            }
        }
        for (a, b) in back.spacing().iter().zip(g.spacing()) {
            assert!(close(*a, b));
        }
    }
}

#[test]
fn label_values_preserved() {
    let dir = tempfile::tempdir().unwrap();
    let g = common::grid([4, 4, 4], [1.0; 3]);
    let v = LabelMap::from_fn(g, |[i, j, _]| [0, 1, 5][(i + j) % 3]);
    let p = dir.path().join("l.nii.gz");
    write_volume(&v, &p).unwrap();
    let AnyVolume::Labels(l) = read_nifti(&p).unwrap().volume else { panic!() };
    assert_eq!(l.histogram().keys().copied().collect::<Vec<_>>(), vec![0, 1, 5]);
    assert_eq!(l, v);
}
