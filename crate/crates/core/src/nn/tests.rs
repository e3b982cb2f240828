use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

const H: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Compares tape gradients of `f` with central differences for every input entry.
fn gradcheck(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    tape.backward_leaves(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|v| tape.grad(*v).unwrap().clone()).collect();
    let eval = |ins: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs);
        t.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= H;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[k].data()[e], num));
        }
    }
    worst
}

#[test]
fn linear_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let w = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
    let b = tape.constant(Tensor::scalar(5.0));
    let y = tape.linear(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[16.0]);

    let x = tape.constant(Tensor::from_rows(&[vec![1.5, -2.0], vec![0.25, 7.0]]).unwrap());
    let eye = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let zero = tape.constant(Tensor::zeros(1, 2));
    let y = tape.linear(x, eye, Some(zero)).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn linear_shape_error_lists_shapes() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(2, 3));
    let w = tape.constant(Tensor::zeros(4, 2));
    match tape.linear(x, w, None) {
        Err(Error::Shape(msg)) => assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn linear_weight_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ins = [random(&mut rng, 5, 3), random(&mut rng, 4, 3), random(&mut rng, 1, 4)];
    let err = gradcheck(&ins, |t, v| {
        let y = t.linear(v[0], v[1], Some(v[2])).unwrap();
        t.sum(y)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn swish_values() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![0.0, 50.0]]).unwrap());
    let y = tape.swish(x);
    assert_eq!(tape.value(y).data()[0], 0.0);
    assert!((tape.value(y).data()[1] / 50.0 - 1.0).abs() < 1e-9);
}

#[test]
fn swish_gradient_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = (0..100).map(|_| rng.gen_range(-6.0..6.0)).collect();
    let x = Tensor::from_vec(100, 1, data).unwrap();
    let err = gradcheck(&[x], |t, v| {
        let y = t.swish(v[0]);
        t.sum(y)
    });
    assert!(err < 1e-7, "{err}");
}

#[test]
fn leaky_relu_values() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![0.0, -1.0, 2.0]]).unwrap());
    let y = tape.leaky_relu(x, 0.2);
    assert_eq!(tape.value(y).data(), &[0.0, -0.2, 2.0]);
}

#[test]
fn backward_trivial_examples() {
    let store = ParameterStore::new();
    let x0 = Tensor::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap();
    let mut tape = Tape::new();
    let x = tape.input(x0.clone());
    let l = tape.sum(x);
    tape.backward(l, &store).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &Tensor::filled(2, 2, 1.0));

    let mut tape = Tape::new();
    let x = tape.input(x0.clone());
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq);
    tape.backward_leaves(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &x0.map(|v| 2.0 * v));
}

#[test]
fn backward_errors() {
    let store = ParameterStore::new();
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(2, 2));
    assert!(matches!(tape.backward(x, &store), Err(Error::Autodiff(_))));
    let l = tape.sum(x);
    tape.backward(l, &store).unwrap();
    assert!(matches!(tape.backward(l, &store), Err(Error::Autodiff(_))));
    tape.zero_grad();
    tape.backward(l, &store).unwrap();
}

#[test]
fn nan_guard() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::from_rows(&[vec![f64::NAN]]).unwrap());
    let l = tape.sum(x);
    assert!(tape.check_finite().is_err());
    assert!(matches!(tape.backward_leaves(l), Err(Error::NonFinite(_))));
}

#[test]
fn backward_visits_each_node_once() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::filled(3, 2, 0.5));
    let a = tape.swish(x);
    let b = tape.square(x);
    let c = tape.add(a, b).unwrap();
    let d = tape.mul(c, a).unwrap();
    let l = tape.sum(d);
    let stats = tape.backward_leaves(l).unwrap();
    assert_eq!(stats.visited, tape.len());
}

#[test]
fn parameters_are_memoized_and_receive_gradients() {
    let mut store = ParameterStore::new();
    let w = store.add("w", Tensor::from_rows(&[vec![2.0]]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let a = tape.param(w, store.values());
    let b = tape.param(w, store.values());
    assert_eq!(a, b);
    let p = tape.mul(a, b).unwrap();
    let l = tape.sum(p);
    let (g, _) = tape.backward(l, &store).unwrap();
    assert_eq!(g.get(w).data(), &[4.0]);
}

fn check_op(seed: u64, f: impl Fn(&mut Tape, &[Var]) -> Var, shapes: &[(usize, usize)]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ins: Vec<Tensor> = shapes.iter().map(|&(r, c)| random(&mut rng, r, c)).collect();
    let err = gradcheck(&ins, f);
    assert!(err < 1e-5, "seed {seed}: {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_ops_pass_gradcheck(seed in 0u64..10_000) {
        check_op(seed, |t, v| { let y = t.sigmoid(v[0]); t.sum(y) }, &[(3, 4)]);
        check_op(seed, |t, v| { let y = t.leaky_relu(v[0], 0.2); t.sum(y) }, &[(3, 4)]);
        check_op(seed, |t, v| { let y = t.abs(v[0]); t.sum(y) }, &[(3, 4)]);
        check_op(seed, |t, v| { let y = t.square(v[0]); t.mean(y) }, &[(3, 4)]);
        check_op(seed, |t, v| { let y = t.smooth_l1(v[0], 1.0); t.sum(y) }, &[(3, 4)]);
        check_op(seed, |t, v| { let y = t.scale(v[0], -1.7); let y = t.swish(y); t.sum(y) }, &[(3, 4)]);
    }

    #[test]
    fn binary_ops_pass_gradcheck(seed in 0u64..10_000) {
        check_op(seed, |t, v| { let y = t.add(v[0], v[1]).unwrap(); let y = t.square(y); t.sum(y) }, &[(2, 3), (2, 3)]);
        check_op(seed, |t, v| { let y = t.sub(v[0], v[1]).unwrap(); let y = t.square(y); t.sum(y) }, &[(2, 3), (2, 3)]);
        check_op(seed, |t, v| { let y = t.mul(v[0], v[1]).unwrap(); t.sum(y) }, &[(2, 3), (2, 3)]);
        check_op(seed, |t, v| { let y = t.mul_column(v[0], v[1]).unwrap(); let y = t.swish(y); t.sum(y) }, &[(4, 1), (4, 3)]);
        check_op(seed, |t, v| { let y = t.linear(v[0], v[1], None).unwrap(); let y = t.swish(y); t.sum(y) }, &[(4, 3), (2, 3)]);
        check_op(seed, |t, v| { let y = t.concat_cols(&[v[0], v[1]]).unwrap(); let y = t.square(y); let y = t.swish(y); t.sum(y) }, &[(3, 2), (3, 1)]);
    }

    #[test]
    fn index_ops_pass_gradcheck(seed in 0u64..10_000) {
        let idx: Arc<[usize]> = Arc::from(vec![2, 0, 2, 1, 3]);
        let i1 = idx.clone();
        check_op(seed, move |t, v| { let y = t.gather(v[0], i1.clone()).unwrap(); let y = t.swish(y); t.sum(y) }, &[(4, 3)]);
        let i2 = idx.clone();
        check_op(seed, move |t, v| { let y = t.scatter_add(v[0], i2.clone(), 4).unwrap(); let y = t.swish(y); t.sum(y) }, &[(5, 3)]);
        check_op(seed, |t, v| { let y = t.row_norm(v[0]); let y = t.swish(y); t.sum(y) }, &[(4, 3)]);
    }

    #[test]
    fn mlp_passes_gradcheck(seed in 0u64..10_000) {
        let spec = MlpSpec::uniform(&[3, 5, 2], Activation::Swish);
        let (store, mlp) = init_parameters(&spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random(&mut rng, 4, 3);
        let mut tape = Tape::new();
        let x = tape.constant(x0.clone());
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        let l = tape.sum(y);
        let (grads, _) = tape.backward(l, &store).unwrap();
        let loss_at = |s: &ParameterStore| {
            let mut t = Tape::new();
            let x = t.constant(x0.clone());
            let y = mlp.forward(&mut t, s, x).unwrap();
            let l = t.sum(y);
            t.value(l).item()
        };
        for id in store.ids() {
            for e in 0..store.value(id).len() {
                let mut p = store.clone();
                p.value_mut(id).data_mut()[e] += H;
                let mut m = store.clone();
                m.value_mut(id).data_mut()[e] -= H;
                let num = (loss_at(&p) - loss_at(&m)) / (2.0 * H);
                prop_assert!(rel_err(grads.get(id).data()[e], num) < 1e-5);
            }
        }
    }
}

#[test]
fn scatter_add_backward_is_gather() {
    let idx: Arc<[usize]> = Arc::from(vec![1, 1, 0]);
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(3, 1));
    let y = tape.scatter_add(x, idx, 2).unwrap();
    let w = tape.constant(Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap());
    let p = tape.mul(y, w).unwrap();
    let l = tape.sum(p);
    tape.backward_leaves(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[7.0, 7.0, 5.0]);
}

#[test]
fn adam_zero_gradient_is_noop() {
    let spec = MlpSpec::uniform(&[2, 3], Activation::Swish);
    let (mut store, _) = init_parameters(&spec, 3).unwrap();
    let before = store.values().to_vec();
    let g = Gradients::zeros_like(&store);
    adam_step(&mut store, &g, 0.1, &AdamConfig::default()).unwrap();
    assert_eq!(store.values(), &before[..]);
    assert_eq!(store.step(), 1);
}

#[test]
fn adam_descends_on_square() {
    let mut store = ParameterStore::new();
    let w = store.add("w", Tensor::scalar(1.0)).unwrap();
    let mut g = Gradients::zeros_like(&store);
    g.set(w, Tensor::scalar(2.0));
    adam_step(&mut store, &g, 0.1, &AdamConfig::default()).unwrap();
    assert!(store.value(w).item() < 1.0);
}

#[test]
fn adam_converges_on_quadratic() {
    // f(x, y) = (x - 1)^2 + 3 (y + 2)^2
    let mut store = ParameterStore::new();
    let p = store.add("p", Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
    let grad_at = |v: &[f64]| [2.0 * (v[0] - 1.0), 6.0 * (v[1] + 2.0)];
    for _ in 0..200 {
        let gv = grad_at(store.value(p).data());
        let mut g = Gradients::zeros_like(&store);
        g.set(p, Tensor::from_rows(&[gv.to_vec()]).unwrap());
        adam_step(&mut store, &g, 0.2, &AdamConfig::default()).unwrap();
    }
    let gv = grad_at(store.value(p).data());
    assert!(gv[0].hypot(gv[1]) < 1e-3, "{gv:?}");
}

#[test]
fn adam_rejects_nan_with_parameter_name() {
    let mut store = ParameterStore::new();
    let w = store.add("layer.weight", Tensor::scalar(1.0)).unwrap();
    let mut g = Gradients::zeros_like(&store);
    g.set(w, Tensor::scalar(f64::NAN));
    match adam_step(&mut store, &g, 0.1, &AdamConfig::default()) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("layer.weight")),
        other => panic!("{other:?}"),
    }
    assert_eq!(store.step(), 0);
    assert_eq!(store.value(w).item(), 1.0);
}

#[test]
fn ema_recurrence() {
    let mut store = ParameterStore::new();
    let w = store.add("w", Tensor::scalar(1.0)).unwrap();
    assert_eq!(store.ema(w).item(), 1.0);

    store.value_mut(w).data_mut()[0] = 3.0;
    ema_update(&mut store, 0.9);
    store.value_mut(w).data_mut()[0] = 5.0;
    ema_update(&mut store, 0.9);
    let expected = 0.9 * (0.9 * 1.0 + 0.1 * 3.0) + 0.1 * 5.0;
    assert!((store.ema(w).item() - expected).abs() < 1e-15);

    ema_update(&mut store, 0.0);
    assert_eq!(store.ema(w).item(), 5.0);
    store.value_mut(w).data_mut()[0] = -8.0;
    ema_update(&mut store, 1.0);
    assert_eq!(store.ema(w).item(), 5.0);
}

#[test]
fn init_is_deterministic_and_bounded() {
    let spec = MlpSpec::uniform(&[16, 32, 8], Activation::Swish);
    let (a, _) = init_parameters(&spec, 11).unwrap();
    let (b, _) = init_parameters(&spec, 11).unwrap();
    assert_eq!(a, b);
    let (c, _) = init_parameters(&spec, 12).unwrap();
    assert_ne!(a, c);
    for id in a.ids() {
        let fan_in = if a.name(id).starts_with("mlp.0") { 16.0 } else { 32.0 };
        let bound = 1.0 / f64::sqrt(fan_in);
        assert!(a.value(id).data().iter().all(|x| x.abs() <= bound));
    }
}

#[test]
fn embedding_draws_are_bounded_and_centered() {
    let mut init = Initializer::new(5);
    let t = init.embedding(1000, 100);
    let s3 = 3f64.sqrt();
    assert!(t.data().iter().all(|x| x.abs() <= s3));
    let n = t.len() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    // U(-a, a) has variance a^2 / 3 = 1
    assert!(mean.abs() < 3.0 / n.sqrt(), "{mean}");
}

#[test]
fn checkpoint_round_trip() {
    let spec = MlpSpec::uniform(&[3, 4, 2], Activation::Swish);
    let (mut store, _) = init_parameters(&spec, 9).unwrap();
    let mut g = Gradients::zeros_like(&store);
    for id in store.ids() {
        let [r, c] = store.value(id).shape();
        g.set(id, Tensor::filled(r, c, 0.3));
    }
    adam_step(&mut store, &g, 0.01, &AdamConfig::default()).unwrap();
    ema_update(&mut store, 0.5);
    let bytes = checkpoint::to_bytes(&store);
    assert_eq!(&bytes[..5], b"PAMN1");
    let back = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, store);
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::from_bytes(&bad).is_err());
}
