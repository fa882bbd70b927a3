//! Finite-difference cases covering every differentiable primitive.

use diffcore::gradcheck::check_inputs;
use diffcore::{Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

type Op = Box<dyn for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>>;

pub struct Case {
    pub group: &'static str,
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    op: Op,
}

impl Case {
    /// Largest relative error between analytic and central-difference
    /// gradients over all inputs.
    pub fn max_rel_err(&self) -> f64 {
        check_inputs(&self.inputs, H, |_, v| weighted_sum((self.op)(v)?, 99))
            .unwrap_or_else(|e| panic!("{}: {e}", self.name))
            .max_rel_err()
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Reduce an op output to a scalar with fixed random weights so that every
/// output element contributes a distinct upstream gradient.
pub fn weighted_sum<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(y.shape(), |_| rng.random_range(-1.0..1.0));
    Ok(y.mul(y.tape().constant(w))?.sum())
}

/// Values kept away from the kinks of relu / abs.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn cases() -> Vec<Case> {
    let mut out = Vec::new();
    let mut add = |group, name, inputs: Vec<Tensor<f64>>, op: Op| out.push(Case { group, name, inputs, op });

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4, 3], 0.5, 2.0);
    let row = rand_tensor(&mut rng, &[3], 0.5, 2.0);
    let s = rand_tensor(&mut rng, &[1], 0.5, 2.0);
    let g = "binary";
    add(g, "add", vec![a.clone(), b.clone()], Box::new(|v| v[0].add(v[1])));
    add(g, "sub", vec![a.clone(), b.clone()], Box::new(|v| v[0].sub(v[1])));
    add(g, "mul", vec![a.clone(), b.clone()], Box::new(|v| v[0].mul(v[1])));
    add(g, "div", vec![a.clone(), b], Box::new(|v| v[0].div(v[1])));
    add(g, "add leading broadcast", vec![a.clone(), row.clone()], Box::new(|v| v[0].add(v[1])));
    add(g, "mul leading broadcast", vec![a.clone(), row.clone()], Box::new(|v| v[0].mul(v[1])));
    add(g, "sub broadcast lhs", vec![row, a.clone()], Box::new(|v| v[0].sub(v[1])));
    add(g, "mul scalar broadcast", vec![a.clone(), s.clone()], Box::new(|v| v[0].mul(v[1])));
    add(g, "div scalar broadcast", vec![a, s], Box::new(|v| v[0].div(v[1])));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[5, 4], -2.0, 2.0);
    let pos = rand_tensor(&mut rng, &[5, 4], 0.2, 3.0);
    let kinked = away_from_zero(&mut rng, &[5, 4]);
    let g = "unary";
    add(g, "relu", vec![kinked.clone()], Box::new(|v| Ok(v[0].relu())));
    add(g, "abs", vec![kinked], Box::new(|v| Ok(v[0].abs())));
    add(g, "sigmoid", vec![x.clone()], Box::new(|v| Ok(v[0].sigmoid())));
    add(g, "softplus", vec![x.clone()], Box::new(|v| Ok(v[0].softplus())));
    add(g, "exp", vec![x.clone()], Box::new(|v| Ok(v[0].exp())));
    add(g, "log", vec![pos.clone()], Box::new(|v| Ok(v[0].log())));
    add(g, "sqrt", vec![pos], Box::new(|v| Ok(v[0].sqrt())));
    add(g, "sin", vec![x.clone()], Box::new(|v| Ok(v[0].sin())));
    add(g, "cos", vec![x.clone()], Box::new(|v| Ok(v[0].cos())));
    add(g, "square", vec![x.clone()], Box::new(|v| Ok(v[0].square())));
    add(g, "scale", vec![x.clone()], Box::new(|v| Ok(v[0].scale(-2.5))));
    add(g, "add_scalar", vec![x.clone()], Box::new(|v| Ok(v[0].add_scalar(0.7))));
    add(g, "neg", vec![x], Box::new(|v| Ok(v[0].neg())));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let bias = rand_tensor(&mut rng, &[3], -1.0, 1.0);
    let g = "linalg";
    add(g, "matmul", vec![a.clone(), b.clone()], Box::new(|v| v[0].matmul(v[1])));
    add(g, "linear", vec![a, b, bias], Box::new(|v| v[0].linear(v[1], v[2])));
    let x = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let y = rand_tensor(&mut rng, &[2, 4, 5], -1.0, 1.0);
    let yt = rand_tensor(&mut rng, &[2, 5, 4], -1.0, 1.0);
    add(g, "bmm", vec![x.clone(), y], Box::new(|v| v[0].bmm(v[1], false)));
    add(g, "bmm transposed", vec![x, yt], Box::new(|v| v[0].bmm(v[1], true)));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[3, 4, 2], -1.0, 1.0);
    let y = rand_tensor(&mut rng, &[3, 1, 2], -1.0, 1.0);
    let g = "shape";
    add(g, "reshape", vec![x.clone()], Box::new(|v| v[0].reshape(&[6, 4])));
    add(g, "slice axis 1", vec![x.clone()], Box::new(|v| v[0].slice(1, 1, 2)));
    add(g, "slice axis 2", vec![x.clone()], Box::new(|v| v[0].slice(2, 1, 1)));
    add(g, "concat axis 1", vec![x.clone(), y], Box::new(|v| Var::concat(&[v[0], v[1], v[0]], 1)));
    add(g, "broadcast middle", vec![x.clone()], Box::new(|v| v[0].broadcast(1, 3)));
    add(g, "broadcast leading", vec![x.clone()], Box::new(|v| v[0].broadcast(0, 2)));
    add(g, "sum", vec![x.clone()], Box::new(|v| Ok(v[0].sum())));
    add(g, "mean", vec![x.clone()], Box::new(|v| Ok(v[0].mean())));
    add(g, "sum_axis", vec![x.clone()], Box::new(|v| v[0].sum_axis(1)));
    add(g, "mean_axis", vec![x], Box::new(|v| v[0].mean_axis(0)));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[3, 4, 5], -2.0, 2.0);
    let g = "normalisation";
    add(g, "softmax last", vec![x.clone()], Box::new(|v| v[0].softmax(2)));
    add(g, "softmax middle", vec![x.clone()], Box::new(|v| v[0].softmax(1)));
    add(g, "l2_normalize", vec![x], Box::new(|v| v[0].l2_normalize(1e-6)));

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[2, 3, 6, 6], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    let b = rand_tensor(&mut rng, &[4], -0.5, 0.5);
    let g = "image";
    add(g, "conv2d stride 1", vec![x.clone(), w.clone(), b.clone()], Box::new(|v| v[0].conv2d(v[1], Some(v[2]), 1, 1)));
    add(g, "conv2d stride 2", vec![x.clone(), w, b], Box::new(|v| v[0].conv2d(v[1], Some(v[2]), 2, 1)));
    let w1 = rand_tensor(&mut rng, &[2, 3, 1, 1], -0.5, 0.5);
    add(g, "conv2d 1x1 no bias", vec![x.clone(), w1], Box::new(|v| v[0].conv2d(v[1], None, 1, 0)));
    // Distinct values so the pooled maximum is unique.
    let mut vals: Vec<f64> = (0..2 * 3 * 6 * 6).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    let distinct = Tensor::new(vec![2, 3, 6, 6], vals).unwrap();
    add(g, "max_pool2d", vec![distinct], Box::new(|v| v[0].max_pool2d()));
    add(g, "avg_pool2d", vec![x.clone()], Box::new(|v| v[0].avg_pool2d()));
    add(g, "upsample_nearest", vec![x.clone()], Box::new(|v| v[0].upsample_nearest(2)));
    add(g, "upsample_bilinear", vec![x], Box::new(|v| v[0].upsample_bilinear(2)));
    out
}
