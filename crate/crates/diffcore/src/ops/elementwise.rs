//! Elementwise unary and binary primitives.
//!
//! Binary ops accept identical shapes, a single-element operand (scalar
//! broadcast) or an operand whose shape equals the other's trailing
//! dimensions (leading-axis broadcast). Nothing else broadcasts.

use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if nb == 1 {
        return Ok(a.to_vec());
    }
    if na == 1 {
        return Ok(b.to_vec());
    }
    if b.len() < a.len() && a[a.len() - b.len()..] == *b {
        return Ok(a.to_vec());
    }
    if a.len() < b.len() && b[b.len() - a.len()..] == *a {
        return Ok(b.to_vec());
    }
    Err(shape_err(op, a, b))
}

fn binary<'t, T: Real>(
    op: &'static str,
    a: Var<'t, T>,
    b: Var<'t, T>,
    f: impl Fn(T, T) -> T,
    // Partial derivatives (d out / d a, d out / d b) at (a, b).
    df: impl Fn(T, T) -> (T, T) + Copy + 'static,
) -> Result<Var<'t, T>> {
    let av = a.value();
    let bv = b.value();
    let shape = broadcast_shape(op, av.shape(), bv.shape())?;
    let n: usize = shape.iter().product();
    let (pa, pb) = (av.numel(), bv.numel());
    let (ad, bd) = (av.data(), bv.data());
    let data: Vec<T> = if pa == n && pb == n {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else if pa == n {
        let mut out = Vec::with_capacity(n);
        for chunk in ad.chunks_exact(pb) {
            out.extend(chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)));
        }
        out
    } else if pb == n {
        let mut out = Vec::with_capacity(n);
        for chunk in bd.chunks_exact(pa) {
            out.extend(ad.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
        out
    } else {
        (0..n).map(|i| f(ad[i % pa], bd[i % pb])).collect()
    };
    let out = Tensor::new(shape, data)?;
    let (ia, ib) = (a.id(), b.id());
    Ok(a.tape().record(out, &[a, b], move |g, sink| {
        let (ad, bd) = (av.data(), bv.data());
        let gd = g.data();
        if let Some(slot) = sink.slot(ia) {
            accumulate(slot, gd, ad, bd, |x, y| df(x, y).0);
        }
        if let Some(slot) = sink.slot(ib) {
            accumulate(slot, gd, bd, ad, |y, x| df(x, y).1);
        }
    }))
}

/// `slot[i % len] += g[i] * d(own[i % len], other[i % other.len()])`, with
/// the common layouts (equal sizes, either side repeated along leading
/// axes) handled without per-element modulo.
fn accumulate<T: Real>(slot: &mut [T], g: &[T], own: &[T], other: &[T], d: impl Fn(T, T) -> T) {
    let (po, pt, n) = (own.len(), other.len(), g.len());
    if po == n && pt == n {
        for (((s, &gi), &x), &y) in slot.iter_mut().zip(g).zip(own).zip(other) {
            *s += gi * d(x, y);
        }
    } else if po == n {
        for ((sc, gc), oc) in slot.chunks_exact_mut(pt).zip(g.chunks_exact(pt)).zip(own.chunks_exact(pt)) {
            for (((s, &gi), &x), &y) in sc.iter_mut().zip(gc).zip(oc).zip(other) {
                *s += gi * d(x, y);
            }
        }
    } else if pt == n {
        for (gc, tc) in g.chunks_exact(po).zip(other.chunks_exact(po)) {
            for (((s, &gi), &x), &y) in slot.iter_mut().zip(gc).zip(own).zip(tc) {
                *s += gi * d(x, y);
            }
        }
    } else {
        for (i, &gi) in g.iter().enumerate() {
            slot[i % po] += gi * d(own[i % po], other[i % pt]);
        }
    }
}

/// Unary op whose derivative depends on the input only.
fn unary_x<'t, T: Real>(x: Var<'t, T>, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Var<'t, T> {
    let xv = x.value();
    let out = xv.map(f);
    let ix = x.id();
    x.tape().record(out, &[x], move |g, sink| {
        if let Some(slot) = sink.slot(ix) {
            for ((s, &gi), &xi) in slot.iter_mut().zip(g.data()).zip(xv.data()) {
                *s += gi * df(xi);
            }
        }
    })
}

/// Unary op whose derivative is expressed through its output.
fn unary_y<'t, T: Real>(x: Var<'t, T>, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Var<'t, T> {
    let out = x.value().map(f);
    let yv = Arc::new(out.clone());
    let ix = x.id();
    x.tape().record(out, &[x], move |g, sink| {
        if let Some(slot) = sink.slot(ix) {
            for ((s, &gi), &yi) in slot.iter_mut().zip(g.data()).zip(yv.data()) {
                *s += gi * df(yi);
            }
        }
    })
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("add", self, rhs, |a, b| a + b, |_, _| (T::one(), T::one()))
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("sub", self, rhs, |a, b| a - b, |_, _| (T::one(), -T::one()))
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("mul", self, rhs, |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        binary("div", self, rhs, |a, b| a / b, |a, b| (T::one() / b, -a / (b * b)))
    }

    pub fn scale(self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        let xv = self.value();
        let out = xv.map(|x| x * c);
        let ix = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                for (s, &gi) in slot.iter_mut().zip(g.data()) {
                    *s += gi * c;
                }
            }
        })
    }

    pub fn add_scalar(self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        unary_x(self, move |x| x + c, |_| T::one())
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-1.0)
    }

    pub fn relu(self) -> Var<'t, T> {
        unary_x(
            self,
            |x| if x > T::zero() { x } else { T::zero() },
            |x| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        unary_y(
            self,
            |x| T::one() / (T::one() + (-x).exp()),
            |y| y * (T::one() - y),
        )
    }

    /// `ln(1 + e^x)`, evaluated stably for large |x|.
    pub fn softplus(self) -> Var<'t, T> {
        unary_x(
            self,
            |x| {
                if x > T::from_f64(20.0) {
                    x
                } else {
                    x.exp().ln_1p()
                }
            },
            |x| T::one() / (T::one() + (-x).exp()),
        )
    }

    pub fn exp(self) -> Var<'t, T> {
        unary_y(self, |x| x.exp(), |y| y)
    }

    pub fn log(self) -> Var<'t, T> {
        unary_x(self, |x| x.ln(), |x| T::one() / x)
    }

    pub fn sin(self) -> Var<'t, T> {
        unary_x(self, |x| x.sin(), |x| x.cos())
    }

    pub fn cos(self) -> Var<'t, T> {
        unary_x(self, |x| x.cos(), |x| -x.sin())
    }

    pub fn square(self) -> Var<'t, T> {
        unary_x(self, |x| x * x, |x| x + x)
    }

    pub fn sqrt(self) -> Var<'t, T> {
        unary_y(self, |x| x.sqrt(), |y| T::from_f64(0.5) / y)
    }

    /// Subgradient 0 at the kink.
    pub fn abs(self) -> Var<'t, T> {
        unary_x(self, |x| x.abs(), |x| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }
}
