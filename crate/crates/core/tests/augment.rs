use std::collections::{BTreeSet, HashMap};

use ncssl::augment::{
    gaussian_noise, make_views, mixup, mixup_partners, random_shuffle, shuffle_in_place, swap_noise, swap_with_mask,
    zero_out, AugmentKind, AugmentationSpec, SubsetSplit, ViewSet,
};
use ncssl::rng;
use ncssl::tensor::{Tape, Tensor};
use ncssl::Error;
use proptest::prelude::*;
use rand::Rng;

/// Upper 1% points of the χ² distribution (scipy.stats.chi2.ppf(0.99, df)).
const CHI2_99_DF5: f64 = 15.086_272_469_388_99;
const CHI2_99_DF23: f64 = 41.638_398_118_858_476;

fn batch(seed: u64, b: usize, d: usize) -> Tensor<f64> {
    let mut r = rng::stream(seed, "batch");
    Tensor::from_fn(vec![b, d], |_| r.random_range(1.0..2.0))
}

#[test]
fn p_zero_is_identity() {
    let x = batch(1, 20, 7);
    let donors = batch(2, 30, 7);
    let mut r = rng::stream(0, "aug");
    assert_eq!(swap_noise(&x, 0.0, &donors, &mut r).unwrap(), x);
    assert_eq!(zero_out(&x, 0.0, &mut r), x);
    assert_eq!(gaussian_noise(&x, 0.0, 0.0, 1.0, &mut r).unwrap(), x);
}

#[test]
fn swap_with_explicit_mask() {
    let i = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let j = Tensor::new(vec![1, 3], vec![9.0, 8.0, 7.0]).unwrap();
    let out = swap_with_mask(&i, &[false, true, false], &j).unwrap();
    assert_eq!(out.data(), &[1.0, 8.0, 3.0]);
}

#[test]
fn swap_width_mismatch_is_schema_error() {
    let mut r = rng::stream(0, "aug");
    assert!(matches!(
        swap_noise(&batch(1, 4, 3), 0.5, &batch(2, 4, 5), &mut r),
        Err(Error::Schema(_))
    ));
}

#[test]
fn swap_replacement_fraction() {
    // Donor values live in a disjoint range, so replaced entries are visible.
    let x = Tensor::<f64>::zeros(vec![1000, 100]);
    let donors = Tensor::from_fn(vec![50, 100], |i| 1.0 + i as f64);
    let mut r = rng::stream(3, "aug");
    let out = swap_noise(&x, 0.3, &donors, &mut r).unwrap();
    let frac = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
    assert!((frac - 0.3).abs() < 0.01, "{frac}");
    // each replaced value comes from the same feature column of some donor
    for (idx, &v) in out.data().iter().enumerate() {
        if v != 0.0 {
            let donor_flat = v as usize - 1;
            assert_eq!(donor_flat % 100, idx % 100);
        }
    }
}

#[test]
fn zero_out_fraction_and_endpoints() {
    let x = batch(4, 1000, 100);
    let mut r = rng::stream(4, "aug");
    let out = zero_out(&x, 0.2, &mut r);
    let frac = out.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
    assert!((frac - 0.2).abs() < 0.01, "{frac}");
    assert!(zero_out(&x, 1.0, &mut r).data().iter().all(|&v| v == 0.0));
}

#[test]
fn gaussian_noise_moments() {
    let x = Tensor::<f64>::zeros(vec![1000, 100]);
    let mut r = rng::stream(5, "aug");
    let (mu, sigma2) = (0.5, 0.04);
    let out = gaussian_noise(&x, 1.0, mu, sigma2, &mut r).unwrap();
    let n = out.len() as f64;
    let mean = out.data().iter().sum::<f64>() / n;
    let var = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!((mean - mu).abs() < 0.02, "{mean}");
    assert!((var - sigma2).abs() < 0.05 * sigma2, "{var}");

    let masked = gaussian_noise(&x, 0.3, 1.0, 0.01, &mut r).unwrap();
    let frac = masked.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
    assert!((frac - 0.3).abs() < 0.01);
}

#[test]
fn gaussian_noise_degenerate_variance() {
    let x = batch(6, 10, 5);
    let mut r = rng::stream(6, "aug");
    let out = gaussian_noise(&x, 1.0, 0.0, 1e-30, &mut r).unwrap();
    assert!(out.max_abs_diff(&x) < 1e-12);
    assert!(matches!(
        gaussian_noise(&x, 1.0, 0.0, 0.0, &mut r),
        Err(Error::Config(_))
    ));
}

#[test]
fn shuffle_single_element_is_identity() {
    let x = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
    let mut r = rng::stream(0, "aug");
    assert_eq!(random_shuffle(&x, &mut r).unwrap(), x);
}

fn chi_square(counts: &HashMap<Vec<u8>, usize>, cells: usize, total: usize) -> f64 {
    let expect = total as f64 / cells as f64;
    assert_eq!(counts.len(), cells);
    counts.values().map(|&c| (c as f64 - expect).powi(2) / expect).sum()
}

#[test]
fn fisher_yates_uniform_on_three() {
    let mut r = rng::stream(7, "shuffle");
    let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
    for _ in 0..10_000 {
        let mut s = vec![0u8, 1, 2];
        shuffle_in_place(&mut s, &mut r);
        *counts.entry(s).or_default() += 1;
    }
    for &c in counts.values() {
        assert!((c as f64 / 1e4 - 1.0 / 6.0).abs() < 0.02);
    }
    assert!(chi_square(&counts, 6, 10_000) < CHI2_99_DF5);
}

#[test]
fn fisher_yates_uniform_on_four() {
    let mut r = rng::stream(8, "shuffle");
    let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
    for _ in 0..10_000 {
        let mut s = vec![0u8, 1, 2, 3];
        shuffle_in_place(&mut s, &mut r);
        *counts.entry(s).or_default() += 1;
    }
    assert!(chi_square(&counts, 24, 10_000) < CHI2_99_DF23);
}

#[test]
fn subsets_even_split() {
    let perm: Vec<usize> = (0..6).collect();
    let s = SubsetSplit::new(6, 2, 0.0, &perm).unwrap();
    assert_eq!(s.columns, vec![vec![0, 1, 2], vec![3, 4, 5]]);
}

#[test]
fn subsets_overlap_adds_one_column() {
    let perm: Vec<usize> = (0..6).collect();
    let s = SubsetSplit::new(6, 2, 1.0 / 3.0, &perm).unwrap();
    // Oracle: block width 3, round(3 · 1/3) = 1 extra column per view.
    assert_eq!(s.width(), 4);
    let a: BTreeSet<_> = s.columns[0].iter().copied().collect();
    let b: BTreeSet<_> = s.columns[1].iter().copied().collect();
    assert!(!a.is_disjoint(&b));
    let union: BTreeSet<_> = a.union(&b).copied().collect();
    assert_eq!(union, (0..6).collect());
}

#[test]
fn subsets_follow_permutation_and_validate() {
    let perm = vec![5, 3, 1, 0, 2, 4];
    let s = SubsetSplit::new(6, 3, 0.0, &perm).unwrap();
    assert_eq!(s.columns, vec![vec![5, 3], vec![1, 0], vec![2, 4]]);
    assert!(matches!(SubsetSplit::new(3, 4, 0.0, &[0, 1, 2]), Err(Error::Config(_))));
    assert!(matches!(SubsetSplit::new(3, 1, 0.0, &[0, 1, 2]), Err(Error::Config(_))));
    let x = batch(9, 4, 6);
    let views = s.views(&x).unwrap();
    assert_eq!(views[0].at(&[2, 1]), x.at(&[2, 3]));
}

#[test]
fn mixup_endpoints() {
    let tape = Tape::new();
    let y = tape.constant(batch(10, 6, 4));
    let mut r = rng::stream(0, "mix");
    let partners = mixup_partners(6, &mut r).unwrap();
    assert!(partners.iter().enumerate().all(|(i, &j)| i != j));
    assert_eq!(mixup(y, 1.0, &partners).unwrap().value(), y.value());
    let m = mixup(y, 0.0, &partners).unwrap().value();
    for (i, &j) in partners.iter().enumerate() {
        assert_eq!(m.row(i), y.value().row(j));
    }

    let pair = tape.constant(Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 2.0]).unwrap());
    let m = mixup(pair, 0.5, &[1, 0]).unwrap().value();
    assert_eq!(m.row(0), &[1.0, 1.0]);

    let single = tape.constant(Tensor::<f64>::ones(vec![1, 3]));
    assert!(matches!(mixup(single, 0.5, &[0]), Err(Error::BatchSize { .. })));
    assert!(matches!(mixup_partners(1, &mut r), Err(Error::BatchSize { .. })));
}

#[test]
fn views_have_expected_kinds() {
    let x = batch(11, 8, 6);
    let mut r = rng::stream(1, "views");
    for kind in AugmentKind::ALL {
        let spec = AugmentationSpec::new(kind);
        spec.validate().unwrap();
        let split = SubsetSplit::new(6, 2, 0.0, &(0..6).collect::<Vec<_>>()).unwrap();
        let views = make_views(&spec, &x, &x, Some(&split), &mut r).unwrap();
        match (kind, &views) {
            (AugmentKind::Subsets, ViewSet::Subsets(v)) => assert_eq!(v[0].shape(), &[8, 3]),
            (AugmentKind::Mixup, ViewSet::Mixup(v)) => assert!(v.iter().all(|t| *t == x)),
            (_, ViewSet::Input(v)) => {
                assert_eq!(v.len(), 2);
                assert_ne!(v[0], v[1]);
            }
            _ => panic!("unexpected view set for {kind:?}"),
        }
    }
    let mut bad = AugmentationSpec::new(AugmentKind::GaussianNoise);
    bad.sigma2 = 0.0;
    assert!(bad.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shuffle_preserves_multiset(b in 1usize..5, d in 1usize..12, seed in any::<u64>()) {
        let x = batch(seed, b, d);
        let mut r = rng::stream(seed, "shuf");
        let y = random_shuffle(&x, &mut r).unwrap();
        for i in 0..b {
            let mut a = x.row(i).to_vec();
            let mut c = y.row(i).to_vec();
            a.sort_by(f64::total_cmp);
            c.sort_by(f64::total_cmp);
            prop_assert_eq!(a, c);
        }
    }

    #[test]
    fn augmentations_reproducible(seed in any::<u64>(), p in 0.0f64..1.0) {
        let x = batch(seed, 6, 5);
        let run = |s| {
            let mut r = rng::stream(s, "aug");
            (
                swap_noise(&x, p, &x, &mut r).unwrap(),
                zero_out(&x, p, &mut r),
                gaussian_noise(&x, p, 0.1, 0.2, &mut r).unwrap(),
                random_shuffle(&x, &mut r).unwrap(),
                mixup_partners(6, &mut r).unwrap(),
            )
        };
        prop_assert_eq!(run(seed), run(seed));
    }

    #[test]
    fn subsets_cover_all_features(d in 2usize..60, k in 2usize..8, ov in 0.0f64..0.99, seed in any::<u64>()) {
        prop_assume!(k <= d);
        let mut perm: Vec<usize> = (0..d).collect();
        shuffle_in_place(&mut perm, &mut rng::stream(seed, "perm"));
        let s = SubsetSplit::new(d, k, ov, &perm).unwrap();
        prop_assert_eq!(s.columns.len(), k);
        let union: BTreeSet<usize> = s.columns.iter().flatten().copied().collect();
        prop_assert_eq!(union, (0..d).collect::<BTreeSet<_>>());
        prop_assert!(s.columns.iter().all(|c| c.len() == s.width()));
        prop_assert_eq!(SubsetSplit::new(d, k, ov, &perm).unwrap(), s);
    }
}
