use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn grid_scan_p1(img: &Image, e_ref: f64) -> f64 {
    let n = img.data().len() as f64;
    let objective = |a: f64| {
        let m = img.data().iter().map(|&v| apply_curve(v, &[a])).sum::<f64>() / n;
        (m - e_ref) * (m - e_ref)
    };
    let mut best = (-1.0, f64::INFINITY);
    for i in 0..=2000 {
        let a = -1.0 + i as f64 * 1e-3;
        let o = objective(a);
        if o < best.1 {
            best = (a, o);
        }
    }
    best.0
}

#[test]
fn curve_examples() {
    assert_eq!(apply_curve(0.37, &[0.0; 5]), 0.37);
    for a in [[-1.0, 0.3], [0.7, -0.2]] {
        assert_eq!(apply_curve(0.0, &a), 0.0);
        assert_eq!(apply_curve(1.0, &a), 1.0);
    }
    assert_eq!(apply_curve(0.5, &[-1.0]), 0.75);
}

#[test]
fn curve_gradients_match_finite_differences() {
    let a = [-0.8, 0.3, -0.5, 0.9, -0.1];
    let mut g = [0.0; 5];
    for v in [0.05, 0.3, 0.77] {
        let u = apply_curve_grad(v, &a, &mut g);
        assert_eq!(u, apply_curve(v, &a));
        let h = 1e-6;
        for p in 0..5 {
            let mut ap = a;
            ap[p] += h;
            let mut am = a;
            am[p] -= h;
            let fd = (apply_curve(v, &ap) - apply_curve(v, &am)) / (2.0 * h);
            assert!((fd - g[p]).abs() < 1e-8, "p={p}: {fd} vs {}", g[p]);
        }
        let fd = (apply_curve(v + 1e-6, &a) - apply_curve(v - 1e-6, &a)) / 2e-6;
        assert!((fd - curve_dv(v, &a)).abs() < 1e-8);
    }
}

proptest! {
    #[test]
    fn curve_stays_in_unit_interval(v in 0.0f64..=1.0, a in prop::collection::vec(-1.0f64..=1.0, 1..6)) {
        let u = apply_curve(v, &a);
        prop_assert!((0.0..=1.0).contains(&u));
    }

    #[test]
    fn single_order_curve_is_monotone(v in 0.0f64..1.0, dv in 0.0f64..0.5, a in -1.0f64..=0.0) {
        let w = (v + dv).min(1.0);
        prop_assert!(apply_curve(w, &[a]) >= apply_curve(v, &[a]));
        prop_assert!(1.0 + a * (2.0 * v - 1.0) >= 0.0);
    }
}

#[test]
fn fit_alpha_worked_examples() {
    let img = Image::filled(4, 4, 1, 0.25);
    let f = fit_alpha(&img, 0.5, 1).unwrap();
    assert_eq!(f.a, vec![-1.0]);
    assert!(!f.degenerate);
    let f = fit_alpha(&img, 0.3, 1).unwrap();
    assert!((f.a[0] + 0.05 / 0.1875).abs() < 1e-12);
    assert!((f.a[0] - grid_scan_p1(&img, 0.3)).abs() <= 1e-3);
    let f = fit_alpha(&img, 0.25, 1).unwrap();
    assert_eq!(f.a, vec![0.0]);
}

#[test]
fn fit_alpha_at_target_stays_at_origin() {
    let img = Image::filled(3, 3, 3, 0.4);
    let f = fit_alpha(&img, 0.4, 5).unwrap();
    assert!(f.a.iter().all(|&a| a == 0.0));
}

#[test]
fn fit_alpha_degenerate_and_invalid() {
    for v in [0.0, 1.0] {
        let f = fit_alpha(&Image::filled(2, 2, 3, v), 0.5, 3).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.a, vec![0.0; 3]);
    }
    let img = Image::filled(2, 2, 1, 0.3);
    assert!(fit_alpha(&img, 0.0, 1).is_err());
    assert!(fit_alpha(&img, 1.0, 1).is_err());
    assert!(fit_alpha(&img, 0.5, 0).is_err());
}

#[test]
fn fit_alpha_p1_matches_grid_scan_on_random_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let scale = rng.random_range(0.05..1.0);
        let img = Image::from_fn(8, 8, 3, |_, _, _| rng.random::<f64>() * scale);
        let e = rng.random_range(0.1..0.9);
        let f = fit_alpha(&img, e, 1).unwrap();
        assert!((f.a[0] - grid_scan_p1(&img, e)).abs() <= 1e-3 + 1e-12);
    }
}

#[test]
fn fit_alpha_higher_order_reaches_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = Image::from_fn(16, 16, 3, |_, _, _| 0.05 + 0.25 * rng.random::<f64>());
    let f = fit_alpha(&img, 0.5, 5).unwrap();
    assert!((f.mean - 0.5).abs() < FIT_TOL, "mean {}", f.mean);
    assert!(f.a.iter().all(|a| a.abs() <= 1.0));
    let n = img.data().len() as f64;
    let m = img.data().iter().map(|&v| apply_curve(v, &f.a)).sum::<f64>() / n;
    assert!((m - f.mean).abs() < 1e-12);
}

fn two_blobs(rng: &mut ChaCha8Rng, per: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut pts = Vec::new();
    for centre in [0.4, -0.4] {
        for _ in 0..per {
            pts.push((0..p).map(|_| centre + rng.random_range(-0.01..0.01)).collect());
        }
    }
    let mean = |s: &[Vec<f64>]| -> Vec<f64> { (0..p).map(|j| s.iter().map(|x| x[j]).sum::<f64>() / s.len() as f64).collect() };
    let (a, b) = (mean(&pts[..per]), mean(&pts[per..]));
    (pts, a, b)
}

#[test]
fn kmeans_recovers_blob_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (pts, ma, mb) = two_blobs(&mut rng, 40, 5);
    let km = kmeans(&pts, 2, &mut crate::rng::stream(0, "t")).unwrap();
    for m in [&ma, &mb] {
        assert!(km
            .centroids
            .iter()
            .any(|c| c.iter().zip(m.iter()).all(|(x, y)| (x - y).abs() < 1e-3)));
    }
    for w in km.inertia_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn kmeans_single_cluster_is_centroid() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
    let km = kmeans(&pts, 1, &mut crate::rng::stream(1, "t")).unwrap();
    for j in 0..3 {
        let m = pts.iter().map(|p| p[j]).sum::<f64>() / 30.0;
        assert!((km.centroids[0][j] - m).abs() < 1e-12);
    }
}

#[test]
fn kmeans_lloyd_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let km = kmeans(&pts, 7, &mut crate::rng::stream(2, "t")).unwrap();
    for (j, c) in km.centroids.iter().enumerate() {
        let members: Vec<&Vec<f64>> = pts.iter().zip(&km.assignments).filter(|(_, &a)| a == j).map(|(p, _)| p).collect();
        assert!(!members.is_empty());
        for d in 0..4 {
            let m = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            assert!((c[d] - m).abs() < 1e-6);
        }
    }
    for w in km.inertia_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn kmeans_identical_points_yield_duplicates() {
    let pts = vec![vec![0.2, -0.3]; 8];
    let km = kmeans(&pts, 3, &mut crate::rng::stream(3, "t")).unwrap();
    assert!(km.centroids.iter().all(|c| c.iter().zip(&pts[0]).all(|(a, b)| (a - b).abs() < 1e-12)));
    assert!(matches!(kmeans(&pts, 9, &mut crate::rng::stream(3, "t")), Err(Error::CorpusTooSmall { points: 8, k: 9 })));
}

#[test]
fn dictionary_validation() {
    let d = Dictionary::from_atoms(2, 2, &[0.1, -0.2, 0.5, 0.5], 3, "x").unwrap();
    assert_eq!(d.atom(0), vec![0.0, 0.0]);
    assert_eq!(d.atom_count(), 3);
    assert!(Dictionary::from_raw(1, 2, vec![0.1, 0.0, 0.2, 0.2], 0, String::new()).is_err());
    assert!(Dictionary::from_raw(1, 2, vec![0.0, 0.0, f32::NAN, 0.2], 0, String::new()).is_err());
    assert!(Dictionary::from_atoms(2, 2, &[0.1], 0, "").is_err());
    assert!(d.check_compatible(Some(3)).is_ok());
    assert!(d.check_compatible(None).is_ok());
    assert!(matches!(d.check_compatible(Some(31)), Err(Error::Incompatible(_))));
}

#[test]
fn dictionary_file_round_trip() {
    let d = Dictionary::from_atoms(3, 2, &[0.1, -0.2, 0.5, 0.5, -0.33, 0.01], 42, "corpus ä").unwrap();
    let bytes = d.to_bytes();
    assert_eq!(&bytes[..4], b"LLGD");
    let back = Dictionary::from_bytes(&bytes).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.to_bytes(), bytes);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Dictionary::from_bytes(&bad), Err(Error::DictFormat(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(Dictionary::from_bytes(&bad).is_err());
    // nonzero row 0
    let mut bad = bytes.clone();
    bad[16..20].copy_from_slice(&0.5f32.to_le_bytes());
    assert!(matches!(Dictionary::from_bytes(&bad), Err(Error::DictFormat(_))));
    assert!(Dictionary::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn build_from_identical_images_flags_duplicates() {
    let img = Image::filled(8, 8, 3, 0.2);
    let cfg = DictConfig { k: 2, order: 1, ..Default::default() };
    let b = build_dictionary_from_images(&[img], &cfg, "one").unwrap();
    assert_eq!(b.points.len(), 4);
    assert_eq!(b.dictionary.atom_count(), 3);
    assert_eq!(b.dictionary.atom(0), vec![0.0]);
}

#[test]
fn build_counts_points_and_rejects_small_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let imgs: Vec<Image> = (0..2)
        .map(|i| Image::from_fn(8, 8, 3, |_, _, _| 0.1 * (i + 1) as f64 + 0.1 * rng.random::<f64>()))
        .collect();
    let cfg = DictConfig { k: 2, order: 3, ..Default::default() };
    let b = build_dictionary_from_images(&imgs, &cfg, "two").unwrap();
    assert_eq!(b.points.len(), 8);
    assert!(b.assignments.iter().all(|&a| a < 2));
    let cfg = DictConfig { k: 9, ..cfg };
    assert!(matches!(build_dictionary_from_images(&imgs, &cfg, ""), Err(Error::CorpusTooSmall { points: 8, k: 9 })));
    assert!(DictConfig { k: 0, ..Default::default() }.validate().is_err());
    assert!(DictConfig { targets: vec![1.2], ..Default::default() }.validate().is_err());
}

#[test]
fn manifold_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = Dictionary::from_atoms(2, 2, &[0.1, -0.2, 0.5, 0.5], 0, "").unwrap();
    let pts = vec![vec![0.1, -0.2], vec![0.5, 0.5], vec![0.4, 0.6]];
    export_manifold_csv(&pts, &[0, 1, 1], &d, dir.path()).unwrap();
    let manifold = std::fs::read_to_string(dir.path().join("manifold.csv")).unwrap();
    assert_eq!(manifold.lines().count(), 4);
    assert_eq!(manifold.lines().next().unwrap(), "a1,a2,cluster");
    let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    let rows: Vec<&str> = curves.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 101);
    for r in rows.iter().take(101) {
        let f: Vec<f64> = r.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[1], f[2]);
    }
    assert!(export_manifold_csv(&pts, &[0], &d, dir.path()).is_err());
}
