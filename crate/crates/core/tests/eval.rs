use approx::assert_abs_diff_eq;
use ncssl::eval::*;
use ncssl::rng;
use ncssl::Error;
use proptest::prelude::*;
use rand::Rng;

fn random_set(seed: u64, n: usize, levels: u32) -> (Vec<f64>, Vec<u8>) {
    let mut r = rng::stream(seed, "scores");
    let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    // A coarse grid of values makes ties common.
    let scores = (0..n)
        .map(|i| (r.random_range(0..levels) as f64) / levels as f64 + 0.1 * labels[i] as f64)
        .collect();
    (scores, labels)
}

fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Every distinct score as threshold, smallest threshold among the best.
fn brute_best_f1(scores: &[f64], labels: &[u8]) -> (f64, f64) {
    let mut cands: Vec<f64> = scores.to_vec();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best = (-1.0, f64::NAN);
    for &t in &cands {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t && l == 1 {
                tp += 1.0;
            } else if s >= t {
                fp += 1.0;
            } else if l == 1 {
                fn_ += 1.0;
            }
        }
        let f1 = if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    best
}

#[test]
fn auroc_endpoints() {
    assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.8, 0.9, 0.1, 0.2], &[0, 0, 1, 1]).unwrap(), 0.0);
    assert_eq!(auroc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
}

#[test]
fn auroc_matches_pairwise_count() {
    for seed in 0..50 {
        let (s, l) = random_set(seed, 200, 40);
        assert_abs_diff_eq!(auroc(&s, &l).unwrap(), brute_auroc(&s, &l), epsilon = 1e-12);
    }
}

#[test]
fn single_class_and_mismatched_inputs_fail() {
    assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::Metric(_))));
    assert!(matches!(
        optimal_threshold_metrics(&[0.1, 0.2], &[0, 0], 0),
        Err(Error::Metric(_))
    ));
    assert!(matches!(auroc(&[0.1], &[0, 1]), Err(Error::Metric(_))));
    assert!(matches!(auroc(&[f64::NAN, 0.1], &[0, 1]), Err(Error::Metric(_))));
}

#[test]
fn separable_set_is_perfect() {
    let m = optimal_threshold_metrics(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 7).unwrap();
    assert_eq!((m.precision, m.recall, m.f1, m.auroc), (1.0, 1.0, 1.0, 1.0));
    assert!(m.threshold > 0.2 && m.threshold <= 0.8);
    assert_eq!(m.seed, 7);
}

#[test]
fn inverted_set_flags_everything() {
    let (a, n) = (7.0, 13.0);
    let mut scores: Vec<f64> = (0..7).map(|i| i as f64 * 0.01).collect();
    scores.extend((0..13).map(|i| 1.0 + i as f64));
    let mut labels = vec![1u8; 7];
    labels.extend(vec![0u8; 13]);
    let m = optimal_threshold_metrics(&scores, &labels, 0).unwrap();
    assert_abs_diff_eq!(m.f1, 2.0 * a / (a + n + a), epsilon = 1e-12);
    assert_eq!(m.threshold, 0.0);
    assert_eq!(m.recall, 1.0);
}

#[test]
fn threshold_sweep_matches_exhaustive_enumeration() {
    for seed in 0..50 {
        let (s, l) = random_set(seed + 100, 100, 25);
        let m = optimal_threshold_metrics(&s, &l, seed).unwrap();
        let (f1, t) = brute_best_f1(&s, &l);
        assert_abs_diff_eq!(m.f1, f1, epsilon = 1e-12);
        assert_eq!(m.threshold, t);
        let (p, r, f) = metrics_at(&s, &l, m.threshold);
        assert_eq!((p, r, f), (m.precision, m.recall, m.f1));
        if p + r > 0.0 {
            assert_abs_diff_eq!(m.f1, 2.0 * p * r / (p + r), epsilon = 1e-15);
        }
    }
}

#[test]
fn aggregation() {
    let rep = |f1: f64| MetricsReport {
        precision: f1,
        recall: f1,
        f1,
        auroc: f1,
        threshold: 0.0,
        seed: 0,
    };
    let a = aggregate_runs(&[rep(0.7), rep(0.9)]).unwrap();
    assert_abs_diff_eq!(a.f1.mean, 0.8, epsilon = 1e-15);
    assert_abs_diff_eq!(a.f1.std, 0.02f64.sqrt(), epsilon = 1e-15);
    let same = aggregate_runs(&[rep(0.5), rep(0.5), rep(0.5)]).unwrap();
    assert_eq!(same.auroc.std, 0.0);
    assert_eq!(aggregate_runs(&[rep(0.3)]).unwrap().f1.std, 0.0);
    assert!(matches!(aggregate_runs(&[]), Err(Error::Metric(_))));
}

#[test]
fn aggregation_matches_welford() {
    let mut r = rng::stream(3, "welford");
    let values: Vec<f64> = (0..10).map(|_| r.random::<f64>()).collect();
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for &x in &values {
        n += 1.0;
        let delta = x - mean;
        mean += delta / n;
        m2 += delta * (x - mean);
    }
    let got = MeanStd::of(&values).unwrap();
    assert_abs_diff_eq!(got.mean, mean, epsilon = 1e-12);
    assert_abs_diff_eq!(got.std, (m2 / (n - 1.0)).sqrt(), epsilon = 1e-12);
}

proptest! {
    #[test]
    fn auroc_invariant_under_increasing_maps(seed in any::<u64>()) {
        let (s, l) = random_set(seed, 60, 15);
        let mapped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + 2.0).collect();
        prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&mapped, &l).unwrap());
    }

    #[test]
    fn flipping_labels_complements_auroc(seed in any::<u64>()) {
        let mut r = rng::stream(seed, "distinct");
        let s: Vec<f64> = (0..40).map(|_| r.random::<f64>()).collect();
        let mut l: Vec<u8> = (0..40).map(|_| r.random_range(0..2)).collect();
        l[0] = 0;
        l[1] = 1;
        let flipped: Vec<u8> = l.iter().map(|v| 1 - v).collect();
        let a = auroc(&s, &l).unwrap();
        prop_assert!((auroc(&s, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn optimal_f1_dominates_every_threshold(seed in any::<u64>()) {
        let (s, l) = random_set(seed, 30, 10);
        let best = optimal_threshold_metrics(&s, &l, 0).unwrap().f1;
        for &t in &s {
            prop_assert!(metrics_at(&s, &l, t).2 <= best + 1e-15);
        }
    }
}
