use crate::error::Result;
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Real> Var<'t, T> {
    /// Softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (outer, dim, inner) = xv.axis_split(axis, "softmax")?;
        let xd = xv.data();
        let mut y = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| (o * dim + d) * inner + i;
                let mut mx = T::neg_infinity();
                for d in 0..dim {
                    mx = mx.max(xd[at(d)]);
                }
                let mut z = T::zero();
                for d in 0..dim {
                    let e = (xd[at(d)] - mx).exp();
                    y[at(d)] = e;
                    z += e;
                }
                for d in 0..dim {
                    y[at(d)] /= z;
                }
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), y)?;
        let yv = out.clone();
        let ix = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                let (yd, gd) = (yv.data(), g.data());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |d: usize| (o * dim + d) * inner + i;
                        let mut dot = T::zero();
                        for d in 0..dim {
                            dot += gd[at(d)] * yd[at(d)];
                        }
                        for d in 0..dim {
                            slot[at(d)] += yd[at(d)] * (gd[at(d)] - dot);
                        }
                    }
                }
            }
        }))
    }

    /// `x / sqrt(|x|^2 + eps^2)` over the last axis; zero rows stay zero.
    pub fn l2_normalize(self, eps: f64) -> Result<Var<'t, T>> {
        let xv = self.value();
        let last = xv.ndim() - 1;
        let (outer, dim, _) = xv.axis_split(last, "l2_normalize")?;
        let eps2 = T::from_f64(eps * eps);
        let xd = xv.data();
        let mut y = vec![T::zero(); xd.len()];
        let mut inv = vec![T::zero(); outer];
        for o in 0..outer {
            let row = &xd[o * dim..(o + 1) * dim];
            let n2: T = row.iter().map(|&v| v * v).sum();
            let r = T::one() / (n2 + eps2).sqrt();
            inv[o] = r;
            for (dst, &v) in y[o * dim..(o + 1) * dim].iter_mut().zip(row) {
                *dst = v * r;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), y)?;
        let yv = out.clone();
        let ix = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                let (yd, gd) = (yv.data(), g.data());
                // d y / d x = r (I - y y^T) applied to g.
                for o in 0..outer {
                    let yr = &yd[o * dim..(o + 1) * dim];
                    let gr = &gd[o * dim..(o + 1) * dim];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((s, &yi), &gi) in slot[o * dim..(o + 1) * dim].iter_mut().zip(yr).zip(gr) {
                        *s += inv[o] * (gi - yi * dot);
                    }
                }
            }
        }))
    }
}
