//! Shape manipulation and reductions.

use crate::error::{invalid, shape_err, Result};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::{numel, Tensor};

impl<'t, T: Real> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let xv = self.value();
        if numel(shape) != xv.numel() {
            return Err(shape_err("reshape", xv.shape(), shape));
        }
        let out = Tensor::new(shape.to_vec(), xv.data().to_vec())?;
        let ix = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            sink.add(ix, g.data());
        }))
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (outer, dim, inner) = xv.axis_split(axis, "slice")?;
        if start + len > dim {
            return Err(invalid(
                "slice",
                format!("range {start}..{} exceeds axis {axis} of {:?}", start + len, xv.shape()),
            ));
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let out = Tensor::new(shape, data)?;
        let ix = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                let gd = g.data();
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    let src = &gd[o * len * inner..(o + 1) * len * inner];
                    for (s, &v) in slot[base..base + len * inner].iter_mut().zip(src) {
                        *s += v;
                    }
                }
            }
        }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base_shape = values[0].shape().to_vec();
        if axis >= base_shape.len() {
            return Err(invalid("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            if s.len() != base_shape.len()
                || s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(shape_err("concat", &base_shape, s));
            }
            total += s[axis];
        }
        let outer = numel(&base_shape[..axis]);
        let inner = numel(&base_shape[axis + 1..]);
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis] * inner).collect();
        let mut shape = base_shape.clone();
        shape[axis] = total;
        let row = total * inner;
        let mut data = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
        Ok(first.tape().record(out, parts, move |g, sink| {
            let gd = g.data();
            let mut offset = 0;
            for (&id, &w) in ids.iter().zip(&widths) {
                if let Some(slot) = sink.slot(id) {
                    for o in 0..outer {
                        let src = &gd[o * row + offset..o * row + offset + w];
                        for (s, &v) in slot[o * w..(o + 1) * w].iter_mut().zip(src) {
                            *s += v;
                        }
                    }
                }
                offset += w;
            }
        }))
    }

    /// Insert a new axis of extent `n` at position `axis`, repeating the
    /// input along it.
    pub fn broadcast(self, axis: usize, n: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let s = xv.shape();
        if axis > s.len() {
            return Err(invalid("broadcast", format!("axis {axis} out of range for {s:?}")));
        }
        let outer = numel(&s[..axis]);
        let inner = numel(&s[axis..]);
        let mut shape = s.to_vec();
        shape.insert(axis, n);
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let chunk = &xv.data()[o * inner..(o + 1) * inner];
            for _ in 0..n {
                data.extend_from_slice(chunk);
            }
        }
        let out = Tensor::new(shape, data)?;
        let ix = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                let gd = g.data();
                for o in 0..outer {
                    let dst = &mut slot[o * inner..(o + 1) * inner];
                    for r in 0..n {
                        let src = &gd[(o * n + r) * inner..(o * n + r + 1) * inner];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'t, T> {
        let xv = self.value();
        let out = Tensor::scalar(xv.sum());
        let ix = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            let gi = g.item();
            if let Some(slot) = sink.slot(ix) {
                for s in slot.iter_mut() {
                    *s += gi;
                }
            }
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (outer, dim, inner) = xv.axis_split(axis, "sum_axis")?;
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let mut data = vec![T::zero(); outer * inner];
        let xd = xv.data();
        for o in 0..outer {
            for d in 0..dim {
                let src = &xd[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                for (acc, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let out = Tensor::new(shape, data)?;
        let ix = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                let gd = g.data();
                for o in 0..outer {
                    let src = &gd[o * inner..(o + 1) * inner];
                    for d in 0..dim {
                        let dst = &mut slot[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                        for (s, &v) in dst.iter_mut().zip(src) {
                            *s += v;
                        }
                    }
                }
            }
        }))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let dim = *shape
            .get(axis)
            .ok_or_else(|| invalid("mean_axis", format!("axis {axis} out of range")))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / dim.max(1) as f64))
    }
}
