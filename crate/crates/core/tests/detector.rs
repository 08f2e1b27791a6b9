use approx::assert_abs_diff_eq;
use ncssl::augment::{AugmentKind, AugmentationSpec};
use ncssl::detector::{write_scores, Detector};
use ncssl::encoders::{EncoderConfig, EncoderKind};
use ncssl::features::FeatureLayout;
use ncssl::rng;
use ncssl::ssl::{SslConfig, SslKind, SslModel};
use ncssl::tensor::Tensor;
use ncssl::Error;
use proptest::prelude::*;

fn random(seed: u64, n: usize, d: usize) -> Tensor<f64> {
    let mut r = rng::stream(seed, "reps");
    Tensor::from_fn(vec![n, d], |_| rng::normal(&mut r))
}

#[test]
fn center_examples() {
    let one = Tensor::<f64>::from_f64(vec![1, 3], &[1.0, -2.0, 0.5]).unwrap();
    assert_eq!(Detector::fit(&one).unwrap().center().unwrap(), &[1.0, -2.0, 0.5]);
    let two = Tensor::<f64>::from_f64(vec![2, 2], &[0.0, 0.0, 2.0, 2.0]).unwrap();
    assert_eq!(Detector::fit(&two).unwrap().center().unwrap(), &[1.0, 1.0]);
    let empty = Tensor::<f64>::zeros(vec![0, 2]);
    assert!(matches!(Detector::fit(&empty), Err(Error::Data(_))));
}

#[test]
fn center_matches_streaming_mean() {
    let x = random(1, 10_000, 6);
    let d = Detector::fit(&x).unwrap();
    let mut mean = [0.0; 6];
    for (k, row) in x.data().chunks(6).enumerate() {
        for j in 0..6 {
            mean[j] += (row[j] - mean[j]) / (k + 1) as f64;
        }
    }
    for j in 0..6 {
        assert_abs_diff_eq!(d.center().unwrap()[j], mean[j], epsilon = 1e-10);
    }
}

#[test]
fn scores() {
    let zero = Tensor::<f64>::from_f64(vec![1, 2], &[0.0, 0.0]).unwrap();
    let d = Detector::fit(&zero).unwrap();
    assert_eq!(d.score(&[3.0, 4.0]).unwrap(), 5.0);
    assert_eq!(d.score(&[0.0, 0.0]).unwrap(), 0.0);
    assert!(matches!(d.score(&[1.0]), Err(Error::Shape { .. })));
    assert!(matches!(Detector::unfitted().score(&[1.0]), Err(Error::State(_))));
    assert!(matches!(Detector::unfitted().score_batch(&zero), Err(Error::State(_))));
}

#[test]
fn batch_scores_match_single_scores() {
    let train = random(2, 100, 5);
    let test = random(3, 40, 5);
    let d = Detector::fit(&train).unwrap();
    let batch = d.score_batch(&test).unwrap();
    for (i, row) in test.data().chunks(5).enumerate() {
        assert!((batch[i] - d.score(row).unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn mean_squared_training_score_is_covariance_trace() {
    let x = random(4, 500, 7).map(|v| 3.0 * v + 1.0);
    let d = Detector::fit(&x).unwrap();
    let s = d.score_batch(&x).unwrap();
    let msq = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
    let c = d.center().unwrap();
    let trace: f64 = (0..7)
        .map(|j| x.data().chunks(7).map(|r| (r[j] - c[j]).powi(2)).sum::<f64>() / 500.0)
        .sum();
    assert_abs_diff_eq!(msq, trace, epsilon = 1e-8);
}

fn model(aug: AugmentKind) -> SslModel<f64> {
    let mut enc = EncoderConfig::new(EncoderKind::Mlp);
    enc.hidden = 8;
    let mut cfg = SslConfig::new(SslKind::Vicreg);
    cfg.embed_dim = 8;
    let mut spec = AugmentationSpec::new(aug);
    spec.k = 3;
    SslModel::new(&cfg, &enc, &spec, &FeatureLayout::numeric_only(9), 5).unwrap()
}

#[test]
fn detector_on_model_representations() {
    let x = random(5, 30, 9);
    let m = model(AugmentKind::SwapNoise);
    let d = Detector::fit_model(&m, &x).unwrap();
    let reps = m.represent(&x, 1000).unwrap();
    assert_eq!(d.center().unwrap().len(), 8);
    assert_eq!(d.score_inputs(&m, &x).unwrap(), d.score_batch(&reps).unwrap());
}

#[test]
fn subsets_representations_are_window_means() {
    let x = random(6, 12, 9);
    let m = model(AugmentKind::Subsets);
    let split = m.split.clone().unwrap();
    let reps = m.represent(&x, 5).unwrap();
    let mut manual = Tensor::zeros(vec![12, 8]);
    for cols in &split.columns {
        let mut single = m.clone();
        single.split = None;
        let r = single.represent(&x.select_cols(cols).unwrap(), 100).unwrap();
        for (a, b) in manual.data_mut().iter_mut().zip(r.data()) {
            *a += b / split.columns.len() as f64;
        }
    }
    assert!(reps.max_abs_diff(&manual) < 1e-12);
    assert_eq!(Detector::fit_model(&m, &x).unwrap().split, Some(split));
}

#[test]
fn score_dump() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.csv");
    write_scores(&path, &[0.5, 2.0], Some(&[0, 1])).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sample_id,score,label");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("1,") && lines[2].ends_with(",1"));
    write_scores(&path, &[0.5], None).unwrap();
    assert!(std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .ends_with(','));
    assert!(write_scores(&path, &[0.5], Some(&[0, 1])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scores_ignore_training_order(seed in any::<u64>()) {
        let x = random(seed, 40, 4);
        let mut perm: Vec<usize> = (0..40).collect();
        ncssl::augment::shuffle_in_place(&mut perm, &mut rng::stream(seed, "p"));
        let a = Detector::fit(&x).unwrap();
        let b = Detector::fit(&x.select_rows(&perm)).unwrap();
        let t = random(seed ^ 9, 5, 4);
        let (sa, sb) = (a.score_batch(&t).unwrap(), b.score_batch(&t).unwrap());
        for (u, v) in sa.iter().zip(&sb) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_score_only_at_center(seed in any::<u64>()) {
        let x = random(seed, 10, 3);
        let d = Detector::fit(&x).unwrap();
        let c: Vec<f64> = d.center().unwrap().to_vec();
        prop_assert_eq!(d.score(&c).unwrap(), 0.0);
        let moved: Vec<f64> = c.iter().map(|v| v + 1e-6).collect();
        prop_assert!(d.score(&moved).unwrap() > 0.0);
    }
}
