use approx::assert_abs_diff_eq;
use ncssl::gradcheck::max_relative_error;
use ncssl::tensor::{concat, ElementwiseOp, ReduceOp, Tape, Tensor, Var};
use ncssl::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.5..2.0))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let b = random(rng, &[n, n]);
    let mut a = b.matmul(&b.transpose2().unwrap()).unwrap();
    for i in 0..n {
        a.data_mut()[i * n + i] += n as f64 * 0.1 + 0.5;
    }
    a
}

const H: f64 = 1e-5;

#[test]
fn add_and_relu_values() {
    let tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[3.0, 4.0]));
    assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
    let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
    let r = x.elementwise(ElementwiseOp::Relu, None).unwrap();
    assert_eq!(r.value().data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn broadcasting_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::<f64>::ones(vec![3, 4]));
    let row = tape.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
    let col = tape.constant(t(&[3, 1], &[10.0, 20.0, 30.0]));
    let s = a.add(row).unwrap().add(col).unwrap();
    assert_eq!(s.shape(), vec![3, 4]);
    assert_eq!(s.value().at(&[2, 3]), 1.0 + 4.0 + 30.0);
    let bad = tape.constant(Tensor::<f64>::ones(vec![2, 4]));
    assert!(matches!(a.add(bad), Err(Error::Shape { .. })));
}

#[test]
fn binary_op_without_operand_is_shape_error() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::<f64>::ones(vec![2]));
    assert!(matches!(
        a.elementwise(ElementwiseOp::Add, None),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn domain_errors() {
    let tape = Tape::new();
    let neg = tape.constant(t(&[2], &[1.0, -1.0]));
    assert!(matches!(neg.log(), Err(Error::Domain { .. })));
    assert!(matches!(neg.sqrt(), Err(Error::Domain { .. })));
    let zero = tape.constant(t(&[2], &[1.0, 0.0]));
    assert!(matches!(neg.div(zero), Err(Error::Domain { .. })));
    assert!(matches!(neg.powf(0.5), Err(Error::Domain { .. })));
}

#[test]
fn matmul_values_and_errors() {
    let tape = Tape::new();
    let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let i = tape.constant(Tensor::eye(2));
    assert_eq!(i.matmul(m).unwrap().value().data(), m.value().data());
    let v = tape.constant(t(&[2, 1], &[1.0, 1.0]));
    assert_eq!(m.matmul(v).unwrap().value().data(), &[3.0, 7.0]);
    let bad = tape.constant(Tensor::<f64>::ones(vec![3, 1]));
    assert!(matches!(m.matmul(bad), Err(Error::Shape { .. })));
}

#[test]
fn reductions() {
    let tape = Tape::new();
    let x = tape.param(t(&[3], &[2.0, 4.0, 6.0]));
    assert_eq!(x.reduce(ReduceOp::Mean, None).unwrap().value().item(), 4.0);
    let ones = tape.constant(t(&[3], &[1.0, 1.0, 1.0]));
    assert_eq!(ones.reduce(ReduceOp::Var, None).unwrap().value().item(), 0.0);
    assert_abs_diff_eq!(x.var(None, 1).unwrap().value().item(), 4.0);
    assert_abs_diff_eq!(x.var(None, 0).unwrap().value().item(), 8.0 / 3.0, epsilon = 1e-15);

    let m = tape.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    assert_eq!(m.sum(Some(0)).unwrap().value().data(), &[5.0, 7.0, 9.0]);
    assert_eq!(m.mean(Some(1)).unwrap().value().data(), &[2.0, 5.0]);
    assert!(matches!(m.sum(Some(2)), Err(Error::Shape { .. })));

    let s = m.reduce(ReduceOp::Sum, None).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(m.grad().unwrap().data(), &[1.0; 6]);
}

#[test]
fn cholesky_and_solve_values() {
    let l = ncssl::tensor::cholesky(&Tensor::<f64>::eye(3)).unwrap();
    assert_eq!(l, Tensor::eye(3));
    let l = ncssl::tensor::cholesky(&t(&[2, 2], &[4.0, 0.0, 0.0, 9.0])).unwrap();
    assert_eq!(l.data(), &[2.0, 0.0, 0.0, 3.0]);

    let b = t(&[2, 1], &[2.0, 3.0]);
    let x = ncssl::tensor::solve_lower(&Tensor::eye(2), &b).unwrap();
    assert_eq!(x, b);
    let x = ncssl::tensor::solve_lower(&t(&[2, 2], &[2.0, 0.0, 1.0, 1.0]), &b).unwrap();
    assert_eq!(x.data(), &[1.0, 2.0]);
}

#[test]
fn cholesky_failure_reports_pivot() {
    let a = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0]);
    match ncssl::tensor::cholesky(&a) {
        Err(Error::Decomposition { index, .. }) => assert_eq!(index, 2),
        other => panic!("expected decomposition error, got {other:?}"),
    }
    let sing = t(&[2, 2], &[1.0, 0.0, 1.0, 0.0]);
    assert!(matches!(
        ncssl::tensor::solve_lower(&sing, &Tensor::ones(vec![2, 1])),
        Err(Error::Singular { index: 1 })
    ));
}

#[test]
fn backward_semantics() {
    let tape = Tape::new();
    let x = tape.param(Tensor::<f64>::ones(vec![4]));
    let unused = tape.param(Tensor::<f64>::ones(vec![4]));
    let s = x.sum(None).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0; 4]);
    assert!(unused.grad().is_none());

    // repeated calls accumulate
    tape.backward(s).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0; 4]);
    tape.zero_grad();
    assert!(x.grad().is_none());

    // non-scalar loss
    assert!(matches!(tape.backward(x), Err(Error::Shape { .. })));

    // constants never get gradients
    let c = tape.constant(Tensor::<f64>::ones(vec![4]));
    let s = c.mul(x).unwrap().sum(None).unwrap();
    tape.backward(s).unwrap();
    assert!(c.grad().is_none());
}

#[test]
fn detach_blocks_gradient() {
    let tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let y = x.square();
    let s = y.detach().mul(y).unwrap().sum(None).unwrap();
    tape.backward(s).unwrap();
    // d/dx [c · x²] with c = x² held constant: 2x · x² = 2x³
    assert_eq!(x.grad().unwrap().data(), &[2.0, 16.0]);
}

#[test]
fn sum_of_independent_subgraphs_matches_separate_backwards() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a0 = random(&mut rng, &[3, 4]);
    let b0 = random(&mut rng, &[4, 2]);

    let joint = Tape::new();
    let (a, b) = (joint.param(a0.clone()), joint.param(b0.clone()));
    let la = a.exp().sum(None).unwrap();
    let lb = b.square().mean(None).unwrap();
    joint.backward(la.add(lb).unwrap()).unwrap();

    let sa = Tape::new();
    let a2 = sa.param(a0);
    sa.backward(a2.exp().sum(None).unwrap()).unwrap();
    let sb = Tape::new();
    let b2 = sb.param(b0);
    sb.backward(b2.square().mean(None).unwrap()).unwrap();

    assert_eq!(a.grad().unwrap(), a2.grad().unwrap());
    assert_eq!(b.grad().unwrap(), b2.grad().unwrap());
}

#[test]
fn grad_of_sum_mul_is_other_operand() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 5]);
    let b = random(&mut rng, &[3, 5]);
    let tape = Tape::new();
    let (va, vb) = (tape.param(a), tape.param(b.clone()));
    tape.backward(va.mul(vb).unwrap().sum(None).unwrap()).unwrap();
    assert_eq!(va.grad().unwrap(), b);

    let err = max_relative_error(&[random(&mut rng, &[3, 5]), b], H, |_, v| v[0].mul(v[1])?.sum(None)).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn matmul_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = [random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])];
    let err = max_relative_error(&inputs, H, |_, v| v[0].matmul(v[1])?.square().sum(None)).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn cholesky_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // A = sym(B) + c·I keeps every perturbation of B symmetric.
    let b = spd(&mut rng, 4);
    let err = max_relative_error(&[b], H, |tape, v| {
        let sym = v[0].add(v[0].t()?)?.scale(0.5);
        let a = sym.add(tape.constant(Tensor::eye(4)))?;
        a.cholesky()?.sum(None)
    })
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn triangular_solve_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut l = random(&mut rng, &[4, 4]);
    for i in 0..4 {
        for j in 0..4 {
            if j > i {
                l.data_mut()[i * 4 + j] = 0.0;
            } else if j == i {
                l.data_mut()[i * 4 + j] = 1.5 + l.data()[i * 4 + j].abs();
            }
        }
    }
    let b = random(&mut rng, &[4, 3]);
    let w = random(&mut rng, &[4, 3]);
    let err = max_relative_error(&[l, b], H, |tape, v| {
        v[0].solve_lower(v[1])?.mul(tape.constant(w.clone()))?.sum(None)
    })
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

/// Weighted sum so that every output entry gets a distinct cotangent.
fn wsum<'t>(tape: &'t Tape<f64>, v: Var<'t, f64>) -> ncssl::Result<Var<'t, f64>> {
    let w = Tensor::from_fn(v.shape(), |i| ((i * 7 % 11) as f64 - 5.0) / 5.0);
    v.mul(tape.constant(w))?.sum(None)
}

/// Each primitive against central differences on 20 random instances.
#[test]
fn every_primitive_passes_gradcheck() {
    type Case = (
        &'static str,
        Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>,
        Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> ncssl::Result<Var<'t, f64>>>,
    );
    let cases: Vec<Case> = vec![
        (
            "add_bcast",
            Box::new(|r| vec![random(r, &[3, 4]), random(r, &[1, 4])]),
            Box::new(|t, v| wsum(t, v[0].add(v[1])?)),
        ),
        (
            "sub_bcast",
            Box::new(|r| vec![random(r, &[3, 4]), random(r, &[3, 1])]),
            Box::new(|t, v| wsum(t, v[0].sub(v[1])?)),
        ),
        (
            "mul_bcast",
            Box::new(|r| vec![random(r, &[2, 3, 4]), random(r, &[4])]),
            Box::new(|t, v| wsum(t, v[0].mul(v[1])?)),
        ),
        (
            "div",
            Box::new(|r| vec![random(r, &[3, 4]), positive(r, &[3, 4])]),
            Box::new(|t, v| wsum(t, v[0].div(v[1])?)),
        ),
        (
            "sqrt",
            Box::new(|r| vec![positive(r, &[5])]),
            Box::new(|t, v| wsum(t, v[0].sqrt()?)),
        ),
        (
            "exp",
            Box::new(|r| vec![random(r, &[5])]),
            Box::new(|t, v| wsum(t, v[0].exp())),
        ),
        (
            "log",
            Box::new(|r| vec![positive(r, &[5])]),
            Box::new(|t, v| wsum(t, v[0].log()?)),
        ),
        (
            "pow",
            Box::new(|r| vec![positive(r, &[5])]),
            Box::new(|t, v| wsum(t, v[0].powf(1.7)?)),
        ),
        (
            "relu",
            Box::new(|r| vec![random(r, &[6])]),
            Box::new(|t, v| wsum(t, v[0].relu())),
        ),
        (
            "gelu",
            Box::new(|r| vec![random(r, &[6])]),
            Box::new(|t, v| wsum(t, v[0].gelu())),
        ),
        (
            "negate",
            Box::new(|r| vec![random(r, &[6])]),
            Box::new(|t, v| wsum(t, v[0].neg())),
        ),
        (
            "scale_shift",
            Box::new(|r| vec![random(r, &[6])]),
            Box::new(|t, v| wsum(t, v[0].scale(-1.3).add_scalar(0.2))),
        ),
        (
            "matmul",
            Box::new(|r| vec![random(r, &[3, 4]), random(r, &[4, 2])]),
            Box::new(|t, v| wsum(t, v[0].matmul(v[1])?)),
        ),
        (
            "bmm",
            Box::new(|r| vec![random(r, &[2, 3, 4]), random(r, &[2, 4, 2])]),
            Box::new(|t, v| wsum(t, v[0].bmm(v[1])?)),
        ),
        (
            "sum_axis",
            Box::new(|r| vec![random(r, &[3, 4, 2])]),
            Box::new(|t, v| wsum(t, v[0].sum(Some(1))?)),
        ),
        (
            "mean_axis",
            Box::new(|r| vec![random(r, &[3, 4])]),
            Box::new(|t, v| wsum(t, v[0].mean(Some(0))?)),
        ),
        (
            "var_axis",
            Box::new(|r| vec![random(r, &[5, 3])]),
            Box::new(|t, v| wsum(t, v[0].var(Some(0), 0)?)),
        ),
        (
            "var_ddof1",
            Box::new(|r| vec![random(r, &[5, 3])]),
            Box::new(|t, v| wsum(t, v[0].var(Some(1), 1)?)),
        ),
        (
            "reshape",
            Box::new(|r| vec![random(r, &[3, 4])]),
            Box::new(|t, v| wsum(t, v[0].reshape(vec![2, 6])?)),
        ),
        (
            "permute",
            Box::new(|r| vec![random(r, &[2, 3, 4])]),
            Box::new(|t, v| wsum(t, v[0].permute(&[2, 0, 1])?)),
        ),
        (
            "index_select",
            Box::new(|r| vec![random(r, &[4, 3])]),
            Box::new(|t, v| wsum(t, v[0].index_select(0, &[3, 1, 1, 0])?)),
        ),
        (
            "concat",
            Box::new(|r| vec![random(r, &[2, 3]), random(r, &[2, 2])]),
            Box::new(|t, v| wsum(t, concat(&[v[0], v[1]], 1)?)),
        ),
        (
            "softmax",
            Box::new(|r| vec![random(r, &[3, 5])]),
            Box::new(|t, v| wsum(t, v[0].softmax()?)),
        ),
        (
            "conv1xw",
            Box::new(|r| vec![random(r, &[2, 2, 1, 7]), random(r, &[3, 2, 1, 3])]),
            Box::new(|t, v| wsum(t, v[0].conv1xw(v[1])?)),
        ),
        (
            "maxpool",
            Box::new(|r| vec![random(r, &[2, 2, 1, 7])]),
            Box::new(|t, v| wsum(t, v[0].maxpool1xk(3)?)),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, gen, f) in &cases {
        for _ in 0..20 {
            let inputs = gen(&mut rng);
            let err = max_relative_error(&inputs, H, |t, v| f(t, v)).unwrap();
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }
}

#[test]
fn maxpool_shapes() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::ones(vec![1, 2, 1, 193]));
    assert_eq!(x.maxpool1xk(3).unwrap().shape(), vec![1, 2, 1, 64]);
    let x = tape.constant(Tensor::<f64>::full(vec![1, 1, 1, 30], 3.0));
    let y = x.maxpool1xk(4).unwrap();
    assert_eq!(y.shape(), vec![1, 1, 1, 7]);
    assert!(y.value().data().iter().all(|&v| v == 3.0));
    assert!(x.maxpool1xk(31).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cholesky_reconstructs(n in 1usize..=64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = spd(&mut rng, n);
        let l = ncssl::tensor::cholesky(&a).unwrap();
        let back = l.matmul(&l.transpose2().unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&a) < 1e-10);
        for i in 0..n {
            for j in i + 1..n {
                prop_assert_eq!(l.at(&[i, j]), 0.0);
            }
        }
    }

    #[test]
    fn solve_lower_satisfies_system(n in 1usize..=12, m in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = ncssl::tensor::cholesky(&spd(&mut rng, n)).unwrap();
        let b = random(&mut rng, &[n, m]);
        let x = ncssl::tensor::solve_lower(&l, &b).unwrap();
        prop_assert!(l.matmul(&x).unwrap().max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();
        let x = tape.constant(random(&mut rng, &[rows, cols]).map(|v| v * 20.0));
        let y = x.softmax().unwrap().value();
        for r in 0..rows {
            let s: f64 = y.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permute_roundtrip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();
        let x = tape.constant(random(&mut rng, &[2, 3, 4]));
        let y = x.permute(&[1, 2, 0]).unwrap().permute(&[2, 0, 1]).unwrap();
        prop_assert_eq!(&*y.value(), &*x.value());
    }
}
