use ncssl::baselines::{AeConfig, AeModel, SvddConfig, SvddModel};
use ncssl::data::{protocol_split, synth_generate};
use ncssl::tensor::Tensor;
use ncssl::Error;

fn train_set() -> Tensor<f32> {
    let ds = synth_generate(400, 50, 12, 2.0, 7).unwrap();
    protocol_split(&ds, 0.5, 0).unwrap().train.cast()
}

#[test]
fn identity_autoencoder_has_zero_loss() {
    let d = 5;
    let config = AeConfig {
        hidden: vec![d],
        linear: true,
        lr: 1e-3,
    };
    let mut ae = AeModel::<f64>::new(&config, d, 0).unwrap();
    for name in ["ae.fc0", "ae.fc1"] {
        let w = ae.store.id(&format!("{name}.weight")).unwrap();
        ae.store.set(w, Tensor::eye(d)).unwrap();
        let b = ae.store.id(&format!("{name}.bias")).unwrap();
        ae.store.set(b, Tensor::zeros(vec![d])).unwrap();
    }
    let x = Tensor::from_fn(vec![4, d], |i| (i as f64 * 0.3).sin());
    assert!(ae.score(&x).unwrap().iter().all(|&s| s == 0.0));
    assert_eq!(ae.train_step(&x).unwrap(), 0.0);
}

#[test]
fn autoencoder_memorizes_one_point() {
    let mut ae = AeModel::<f32>::new(&AeConfig::default(), 12, 1).unwrap();
    assert_eq!(ae.latent_dim(), 64);
    let x = Tensor::from_fn(vec![1, 12], |i| (i as f32 * 0.7).cos() * 0.5 + 0.5);
    let before = ae.score(&x).unwrap()[0];
    ae.fit(&x, 400, 1).unwrap();
    let after = ae.score(&x).unwrap()[0];
    assert!(after < 1e-3 * before, "{before} -> {after}");
}

#[test]
fn autoencoder_training_reduces_loss() {
    let x = train_set();
    let mut ae = AeModel::<f32>::new(&AeConfig::default(), x.shape()[1], 2).unwrap();
    let initial = ae.score(&x).unwrap().iter().sum::<f64>() / x.shape()[0] as f64;
    ae.fit(&x, 30, 32).unwrap();
    let last = ae.score(&x).unwrap().iter().sum::<f64>() / x.shape()[0] as f64;
    assert!(last < 0.5 * initial, "{initial} -> {last}");
    assert!(matches!(ae.score(&Tensor::zeros(vec![2, 3])), Err(Error::Schema(_))));
}

#[test]
fn svdd_has_no_biases_and_a_fixed_center() {
    let x = train_set();
    let mut svdd = SvddModel::<f32>::new(&SvddConfig::default(), x.shape()[1], 3).unwrap();
    assert!(svdd.store.ids().all(|id| !svdd.store.name(id).contains("bias")));
    assert!(matches!(svdd.center(), Err(Error::State(_))));
    svdd.init_center(&x).unwrap();
    let c0 = svdd.center().unwrap().clone();
    assert!(!svdd.collapse_warning);
    let initial = svdd.score(&x).unwrap().iter().sum::<f64>() / x.shape()[0] as f64;
    let losses = svdd.fit(&x, 20, 32).unwrap();
    assert_eq!(losses.len(), 20);
    let last = svdd.score(&x).unwrap().iter().sum::<f64>() / x.shape()[0] as f64;
    assert!(last <= 0.5 * initial, "{initial} -> {last}");
    let c1 = svdd.center().unwrap();
    assert_eq!(
        c0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        c1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn svdd_score_is_squared_distance() {
    let mut svdd = SvddModel::<f64>::new(
        &SvddConfig {
            hidden: vec![3],
            lr: 1e-3,
        },
        3,
        0,
    )
    .unwrap();
    let w = svdd.store.id("svdd.fc0.weight").unwrap();
    svdd.store.set(w, Tensor::eye(3)).unwrap();
    let x = Tensor::from_f64(vec![2, 3], &[1.0, 2.0, 3.0, 3.0, 2.0, 1.0]).unwrap();
    svdd.init_center(&x).unwrap();
    let s = svdd.score(&x).unwrap();
    assert!((s[0] - 2.0).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12);
    let c = Tensor::from_f64(vec![1, 3], &[2.0, 2.0, 2.0]).unwrap();
    assert_eq!(svdd.score(&c).unwrap()[0], 0.0);
}

#[test]
fn svdd_warns_on_origin_center() {
    let mut svdd = SvddModel::<f64>::new(&SvddConfig::default(), 4, 0).unwrap();
    svdd.init_center(&Tensor::zeros(vec![5, 4])).unwrap();
    assert!(svdd.collapse_warning);
}
