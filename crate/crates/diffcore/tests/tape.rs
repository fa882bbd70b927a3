use diffcore::{op_set, Adam, AdamConfig, ParamStore, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

#[test]
fn op_set_covers_required_primitives() {
    for name in [
        "add", "sub", "mul", "matmul", "conv2d", "upsample_nearest", "upsample_bilinear",
        "max_pool2d", "relu", "sigmoid", "exp", "log", "sin", "cos", "softmax", "l2_normalize",
        "concat", "slice", "broadcast", "sum", "mean",
    ] {
        assert!(op_set().contains(&name), "missing {name}");
    }
}

#[test]
fn relu_gradient_is_zero_in_flat_region() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[1], &[-1.0]));
    let g = tape.backward(x.relu().sum()).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[0.0]);
}

#[test]
fn softmax_at_uniform_logits_has_zero_gradient_against_uniform_upstream() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full([1, 5], 0.3));
    // sum(softmax) == 1, i.e. a uniform upstream gradient of ones.
    let g = tape.backward(x.softmax(1).unwrap().sum()).unwrap();
    for &v in g.wrt(x).unwrap().data() {
        assert!(v.abs() < 1e-15);
    }
}

#[test]
fn shape_error_names_both_shapes() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros([2, 3]));
    let b = tape.constant(Tensor::zeros([4, 5]));
    let err = a.matmul(b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    let err = a.add(b).unwrap_err();
    assert!(matches!(err, TensorError::Shape { .. }));
}

#[test]
fn second_backward_is_an_error() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]));
    let loss = x.square().sum();
    tape.backward(loss).unwrap();
    assert!(matches!(tape.backward(loss), Err(TensorError::TapeConsumed)));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(x.square()), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("enc/w", t(&[2], &[1.0, 2.0]));
    let b = store.add("head/w", t(&[2], &[3.0, 4.0]));
    store.set_trainable_prefix("enc/", false);
    let tape = Tape::new();
    let loss = tape
        .param(&store, a)
        .mul(tape.param(&store, b))
        .unwrap()
        .sum();
    let g = tape.backward(loss).unwrap();
    assert!(g.param(a).is_none());
    assert_eq!(g.param(b).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn repeated_binding_accumulates_into_one_gradient() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", t(&[1], &[3.0]));
    let tape = Tape::new();
    let p1 = tape.param(&store, a);
    let p2 = tape.param(&store, a);
    assert_eq!(p1.id(), p2.id());
    let g = tape.backward(p1.mul(p2).unwrap().sum()).unwrap();
    assert_eq!(g.param(a).unwrap().data(), &[6.0]);
}

/// Builds `sum(f(x)) + sum(g(x))` with the two sibling branches recorded in
/// either order.
fn sibling_grads(swap: bool) -> Vec<f64> {
    let tape = Tape::new();
    let x = tape.leaf(t(&[3], &[0.3, -1.2, 2.5]));
    fn branch_a<'t>(x: Var<'t, f64>) -> Var<'t, f64> {
        x.sin().mul(x).unwrap().sum()
    }
    fn branch_b<'t>(x: Var<'t, f64>) -> Var<'t, f64> {
        x.exp().sigmoid().sum()
    }
    let (first, second) = if swap {
        let b = branch_b(x);
        (branch_a(x), b)
    } else {
        let a = branch_a(x);
        (a, branch_b(x))
    };
    let loss = first.add(second).unwrap();
    tape.backward(loss).unwrap().wrt(x).unwrap().data().to_vec()
}

#[test]
fn gradient_accumulation_is_order_independent() {
    let a = sibling_grads(false);
    let b = sibling_grads(true);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn adam_zero_gradient_leaves_parameters_unchanged() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("p", t(&[3], &[1.0, -2.0, 0.5]));
    let mut adam = Adam::new(AdamConfig::default());
    for _ in 0..5 {
        let tape = Tape::new();
        let loss = tape.param(&store, p).scale(0.0).sum();
        let g = tape.backward(loss).unwrap();
        adam.step(&mut store, &g, 0.1).unwrap();
    }
    assert_eq!(store.value(p).data(), &[1.0, -2.0, 0.5]);
}

#[test]
fn adam_constant_gradient_update_tends_to_lr() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("p", t(&[1], &[0.0]));
    let mut adam = Adam::new(AdamConfig::default());
    let lr = 1e-3;
    let mut last = 0.0;
    for step in 0..3000 {
        let tape = Tape::new();
        // d loss / d p = 2.5 everywhere.
        let loss = tape.param(&store, p).scale(2.5).sum();
        let g = tape.backward(loss).unwrap();
        let before = store.value(p).item();
        adam.step(&mut store, &g, lr).unwrap();
        last = before - store.value(p).item();
        if step == 0 {
            // Bias correction makes even the first step exactly lr-sized.
            assert!((last - lr).abs() < 1e-9);
        }
    }
    assert!((last - lr).abs() < 1e-6 * lr.max(1.0));
}

/// Scalar Adam written independently of the tensor implementation.
fn reference_adam(x0: f64, target: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    let mut traj = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = 2.0 * (x - target);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        x -= lr * mh / (vh.sqrt() + eps);
        traj.push(x);
    }
    traj
}

#[test]
fn adam_minimises_a_quadratic_like_the_scalar_reference() {
    let target = 3.0;
    let lr = 1e-2;
    let reference = reference_adam(0.0, target, lr, 2000);
    let mut store = ParamStore::<f64>::new();
    let p = store.add("x", t(&[1], &[0.0]));
    let mut adam = Adam::new(AdamConfig::default());
    let mut best = f64::INFINITY;
    for (step, &r) in reference.iter().enumerate() {
        let tape = Tape::new();
        let x = tape.param(&store, p);
        let loss = x.add_scalar(-target).square().sum();
        let g = tape.backward(loss).unwrap();
        adam.step(&mut store, &g, lr).unwrap();
        let xv = store.value(p).item();
        assert!((xv - r).abs() < 1e-9, "step {step}: {xv} vs {r}");
        best = best.min((xv - target).abs());
    }
    let final_err = (store.value(p).item() - target).abs();
    assert!(final_err < 1e-3, "final error {final_err}, best {best}");
}

#[test]
fn adam_rejects_non_finite_gradient_and_names_parameter() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("layer/bias", t(&[1], &[0.0]));
    let q = store.add("layer/weight", t(&[1], &[1.0]));
    let mut adam = Adam::new(AdamConfig::default());
    let tape = Tape::new();
    let loss = tape
        .param(&store, p)
        .log()
        .add(tape.param(&store, q))
        .unwrap()
        .sum();
    let g = tape.backward(loss).unwrap();
    match adam.step(&mut store, &g, 0.1) {
        Err(TensorError::NonFiniteGradient(name)) => assert_eq!(name, "layer/bias"),
        other => panic!("{other:?}"),
    }
    // Step aborted as a whole.
    assert_eq!(store.value(q).item(), 1.0);
    assert_eq!(adam.steps(), 0);
}

#[test]
fn lr_zero_step_changes_nothing() {
    let mut store = ParamStore::<f32>::new();
    let p = store.add("p", Tensor::from_f64([4], &[0.1, 0.2, -0.3, 7.0]).unwrap());
    let before = store.value(p).clone();
    let mut adam = Adam::new(AdamConfig::default());
    let tape = Tape::new();
    let loss = tape.param(&store, p).square().sum();
    let g = tape.backward(loss).unwrap();
    adam.step(&mut store, &g, 0.0).unwrap();
    assert_eq!(**store.value(p), *before);
}

proptest! {
    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        values in proptest::collection::vec(proptest::num::f32::ANY, 1..64),
        manifest in "[ -~]{0,40}",
    ) {
        let mut store = ParamStore::<f32>::new();
        let n = values.len();
        store.add("a/b", Tensor::new(vec![n], values.clone()).unwrap());
        store.add("c", Tensor::new(vec![1, n], values.iter().map(|v| -v).collect()).unwrap());
        let mut buf = Vec::new();
        diffcore::checkpoint::write_checkpoint(&mut buf, &store, &manifest).unwrap();
        let archive = diffcore::checkpoint::read_checkpoint::<f32, _>(&buf[..]).unwrap();
        prop_assert_eq!(&archive.manifest, &manifest);
        let mut fresh = ParamStore::<f32>::new();
        fresh.add("a/b", Tensor::zeros([n]));
        fresh.add("c", Tensor::zeros([1, n]));
        archive.restore_into(&mut fresh).unwrap();
        for ((_, a), (_, b)) in store.iter().zip(fresh.iter()) {
            let ab: Vec<u32> = a.value.data().iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u32> = b.value.data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(ab, bb);
        }
    }
}

#[test]
fn checkpoint_file_round_trip_and_shape_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut store = ParamStore::<f64>::new();
    store.add("w", t(&[2, 2], &[1.0, 2.0, 3.0, 4.5e-300]));
    diffcore::checkpoint::save(&path, &store, "{\"k\":1}").unwrap();
    let archive = diffcore::checkpoint::load::<f64>(&path).unwrap();
    let (loaded, manifest) = archive.into_store();
    assert_eq!(manifest, "{\"k\":1}");
    assert_eq!(**loaded.value(loaded.id("w").unwrap()), **store.value(store.id("w").unwrap()));

    let archive = diffcore::checkpoint::load::<f64>(&path).unwrap();
    let mut wrong = ParamStore::<f64>::new();
    wrong.add("w", Tensor::zeros([4]));
    assert!(archive.restore_into(&mut wrong).is_err());
}
