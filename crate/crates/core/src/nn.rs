//! Parameterized layers over the autodiff tape.

use diffcore::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// Uniform initialization in `[-a, a]` with `a = gain * sqrt(3 / fan_in)`,
/// i.e. variance `gain² / fan_in`.
pub fn init_uniform<T: Real>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor<T> {
    let a = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.random_range(-a..=a)))
}

pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init_uniform(&[fan_in, fan_out], fan_in, gain, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros([fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.linear(tape.param(store, self.w), tape.param(store, self.b))?)
    }
}

/// Pre-activation residual MLP block: `h + L₂(relu(L₁(relu(h))))`.
#[derive(Clone, Copy, Debug)]
pub struct ResBlock {
    pub l1: Linear,
    pub l2: Linear,
}

impl ResBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.l1"), width, width, RELU_GAIN, rng),
            // Small residual branches keep the stack near identity at init.
            l2: Linear::new(store, &format!("{name}.l2"), width, width, 0.5, rng),
        }
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.l1.forward(tape, store, h.relu())?.relu();
        Ok(h.add(self.l2.forward(tape, store, a)?)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        let w = store.add(format!("{name}.w"), init_uniform(&[c_out, c_in, k, k], fan_in, gain, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros([c_out]));
        Self {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        Ok(x.conv2d(w, Some(b), self.stride, self.pad)?)
    }
}
