use std::ops::Range;

use proptest::prelude::*;
use sscan_core::hsi::{
    add_gaussian_noise, load_cube, make_band_groups, patch_corners, save_cube, synthetic_scene, BandGroupingSpec,
    HsiCube, NoiseSpec, PatchSpec, SampleType,
};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

/// Groups placed by walking the spectrum one stride at a time, plus a tail
/// anchored at the last band when the walk stops short.
fn reference_groups(bands: usize, k: usize, o: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + k <= bands {
        out.push(start..start + k);
        start += k - o;
    }
    if out.last().is_none_or(|g| g.end < bands) {
        out.push(bands - k..bands);
    }
    out
}

fn cube_strategy() -> impl Strategy<Value = HsiCube> {
    (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(h, w, b)| {
        prop::collection::vec(-1e3f64..1e3, h * w * b).prop_map(move |d| HsiCube::new(h, w, b, d).unwrap())
    })
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn grouping_covers_with_fixed_overlap(k in 1usize..12, o_frac in 0.0f64..1.0, extra in 0usize..40) {
        let o = ((k as f64) * o_frac) as usize % k;
        let bands = k + extra;
        let g = make_band_groups(bands, BandGroupingSpec::new(k, o).unwrap()).unwrap();
        prop_assert_eq!(g.groups(), &reference_groups(bands, k, o)[..]);
        prop_assert!(g.groups().iter().all(|r| r.len() == k));
        prop_assert_eq!(g.groups()[0].start, 0);
        prop_assert_eq!(g.groups().last().unwrap().end, bands);
        for pair in g.groups()[..g.regular_count()].windows(2) {
            prop_assert_eq!(pair[0].end - pair[1].start, o);
        }
        let mut covered = vec![false; bands];
        for r in g.groups() {
            covered[r.clone()].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.into_iter().all(|c| c));
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn cube_file_round_trip_is_exact(cube in cube_strategy(), scaled in any::<bool>()) {
        let cube = if scaled { cube.normalize() } else { cube };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        save_cube(&cube, &path).unwrap();
        let back = load_cube(&path).unwrap();
        prop_assert_eq!(back.dims(), cube.dims());
        prop_assert_eq!(back.band_scale(), cube.band_scale());
        for (a, b) in back.data().iter().zip(cube.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn single_precision_round_trip_quantizes(cube in cube_strategy()) {
        let mut cube = cube;
        cube.set_sample_type(SampleType::F32);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsic");
        save_cube(&cube, &path).unwrap();
        let back = load_cube(&path).unwrap();
        for (a, b) in back.data().iter().zip(cube.data()) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn normalize_then_denormalize(cube in cube_strategy()) {
        let n = cube.normalize();
        prop_assert!(n.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let back = n.denormalize().unwrap();
        for (a, b) in back.data().iter().zip(cube.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{} vs {}", a, b);
        }
        let twice = n.normalize().denormalize().unwrap();
        for (a, b) in twice.data().iter().zip(cube.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn split_concatenates_back(cube in cube_strategy(), at in 1usize..6) {
        prop_assume!(at < cube.height());
        let (top, bottom) = cube.split_spatial(at).unwrap();
        prop_assert_eq!(top.height() + bottom.height(), cube.height());
        for b in 0..cube.bands() {
            let joined: Vec<f64> = top.band(b).iter().chain(bottom.band(b)).cloned().collect();
            prop_assert_eq!(&joined[..], cube.band(b));
        }
    }

    #[test]
    fn noise_is_seed_deterministic(cube in cube_strategy(), sigma in 0.0f64..100.0, seed in any::<u64>()) {
        let spec = NoiseSpec::new(sigma, seed);
        prop_assert_eq!(add_gaussian_noise(&cube, &spec).unwrap(), add_gaussian_noise(&cube, &spec).unwrap());
    }
}

#[test]
fn canonical_grouping_count() {
    let g = make_band_groups(191, BandGroupingSpec::new(4, 2).unwrap()).unwrap();
    assert_eq!(g.n_groups(), 95);
    assert_eq!(g.regular_count(), 94);
    assert_eq!(g.groups()[94], 187..191);
}

#[test]
fn invalid_grouping_rejected() {
    assert!(BandGroupingSpec::new(4, 4).is_err());
    assert!(BandGroupingSpec::new(0, 0).is_err());
    assert!(make_band_groups(3, BandGroupingSpec::new(4, 2).unwrap()).is_err());
}

#[test]
fn noise_has_requested_deviation() {
    let cube = HsiCube::new(200, 200, 191, vec![0.5; 200 * 200 * 191]).unwrap();
    let noisy = add_gaussian_noise(&cube, &NoiseSpec::new(25.0, 3)).unwrap();
    let n = noisy.data().len() as f64;
    let mean = noisy.data().iter().map(|v| v - 0.5).sum::<f64>() / n;
    let var = noisy.data().iter().map(|v| (v - 0.5 - mean).powi(2)).sum::<f64>() / n;
    let want = 25.0 / 255.0;
    assert!((var.sqrt() - want).abs() / want < 0.01, "std {}", var.sqrt());
    assert!(mean.abs() < 1e-3);
}

#[test]
fn full_size_cube_survives_round_trip() {
    let cube = HsiCube::from_fn(200, 200, 191, |y, x, b| ((y * 131 + x * 17 + b * 7) % 1009) as f64 / 1009.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.hsic");
    save_cube(&cube, &path).unwrap();
    let back = load_cube(&path).unwrap();
    let checksum = |c: &HsiCube, b: usize| c.band(b).iter().fold(0u64, |acc, v| acc.rotate_left(5) ^ v.to_bits());
    for b in 0..191 {
        assert_eq!(checksum(&back, b), checksum(&cube, b), "band {b}");
    }
}

#[test]
fn patch_corners_stay_in_bounds() {
    let spec = PatchSpec { patch_size: 32, count: 1000, seed: 5 };
    let corners = patch_corners(64, 64, &spec).unwrap();
    assert_eq!(corners.len(), 1000);
    assert!(corners.iter().all(|&(y, x)| y <= 32 && x <= 32));
    assert!(corners.iter().any(|&(y, _)| y == 0) && corners.iter().any(|&(y, _)| y == 32));
}

#[test]
fn synthetic_scene_is_normalized_and_seeded() {
    let a = synthetic_scene(24, 20, 6, 9).unwrap();
    assert_eq!(a, synthetic_scene(24, 20, 6, 9).unwrap());
    assert_ne!(a, synthetic_scene(24, 20, 6, 10).unwrap());
    for b in 0..6 {
        let (lo, hi) = a.band(b).iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }
}
