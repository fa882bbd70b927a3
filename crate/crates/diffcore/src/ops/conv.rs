//! Image-shaped ops on `[batch, channels, height, width]` tensors.

use crate::error::{invalid, shape_err, Result};
use crate::real::{gemm, Real};
use crate::tape::Var;
use crate::tensor::Tensor;

fn dims4(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *s {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(invalid(op, format!("expected [N, C, H, W], got {s:?}"))),
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn im2col<T: Real>(&self, img: &[T], col: &mut [T]) {
        let hw = self.ho * self.wo;
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut col[r * hw..(r + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            row.fill(T::zero());
                            continue;
                        }
                        let src = &img[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, d) in row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], img: &mut [T]) {
        let hw = self.ho * self.wo;
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let src = &col[r * hw..(r + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut img[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// 2-D cross-correlation with square kernels, zero padding, and an
    /// optional per-output-channel bias. `weight: [out, in, k, k]`.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let xv = self.value();
        let wv = weight.value();
        let (n, c, h, w) = dims4("conv2d", xv.shape())?;
        let (o, ci, k, k2) = dims4("conv2d", wv.shape())?;
        if ci != c || k != k2 || stride == 0 {
            return Err(shape_err("conv2d", xv.shape(), wv.shape()));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(invalid("conv2d", "kernel larger than padded input"));
        }
        let bv = match bias {
            Some(b) => {
                let bv = b.value();
                if bv.shape() != [o] {
                    return Err(shape_err("conv2d bias", wv.shape(), bv.shape()));
                }
                Some(bv)
            }
            None => None,
        };
        let g = ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        };
        let hw = g.ho * g.wo;
        let ck = c * k * k;
        let mut cols = vec![T::zero(); n * ck * hw];
        let mut out = Tensor::zeros([n, o, g.ho, g.wo]);
        for b in 0..n {
            let col = &mut cols[b * ck * hw..(b + 1) * ck * hw];
            g.im2col(&xv.data()[b * c * h * w..(b + 1) * c * h * w], col);
            let dst = &mut out.data_mut()[b * o * hw..(b + 1) * o * hw];
            if let Some(bv) = &bv {
                for (oc, chunk) in dst.chunks_exact_mut(hw).enumerate() {
                    chunk.fill(bv.data()[oc]);
                }
            }
            gemm(o, ck, hw, wv.data(), false, col, false, dst, true);
        }
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let (ix, iw, ib) = (self.id(), weight.id(), bias.map(|b| b.id()));
        Ok(self.tape().record(out, &parents, move |gr, sink| {
            let gd = gr.data();
            if let Some(dw) = sink.slot(iw) {
                for b in 0..n {
                    let gb = &gd[b * o * hw..(b + 1) * o * hw];
                    let col = &cols[b * ck * hw..(b + 1) * ck * hw];
                    gemm(o, hw, ck, gb, false, col, true, dw, true);
                }
            }
            if let Some(ib) = ib {
                if let Some(db) = sink.slot(ib) {
                    for b in 0..n {
                        for (oc, chunk) in gd[b * o * hw..(b + 1) * o * hw].chunks_exact(hw).enumerate()
                        {
                            db[oc] += chunk.iter().copied().sum::<T>();
                        }
                    }
                }
            }
            if let Some(dx) = sink.slot(ix) {
                let mut dcol = vec![T::zero(); ck * hw];
                for b in 0..n {
                    let gb = &gd[b * o * hw..(b + 1) * o * hw];
                    gemm(ck, o, hw, wv.data(), true, gb, false, &mut dcol, false);
                    g.col2im(&dcol, &mut dx[b * c * h * w..(b + 1) * c * h * w]);
                }
            }
        }))
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/cols are dropped).
    pub fn max_pool2d(self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = dims4("max_pool2d", xv.shape())?;
        let (ho, wo) = (h / 2, w / 2);
        let mut data = Vec::with_capacity(n * c * ho * wo);
        let mut arg = Vec::with_capacity(n * c * ho * wo);
        let xd = xv.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    data.push(xd[best]);
                    arg.push(best);
                }
            }
        }
        let out = Tensor::new([n, c, ho, wo], data)?;
        let ix = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                for (&a, &gi) in arg.iter().zip(g.data()) {
                    slot[a] += gi;
                }
            }
        }))
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2d(self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = dims4("avg_pool2d", xv.shape())?;
        let (ho, wo) = (h / 2, w / 2);
        let q = T::from_f64(0.25);
        let xd = xv.data();
        let mut data = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = base + 2 * oy * w + 2 * ox;
                    data.push((xd[i] + xd[i + 1] + xd[i + w] + xd[i + w + 1]) * q);
                }
            }
        }
        let out = Tensor::new([n, c, ho, wo], data)?;
        let ix = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                let gd = g.data();
                for plane in 0..n * c {
                    let base = plane * h * w;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gi = gd[(plane * ho + oy) * wo + ox] * q;
                            let i = base + 2 * oy * w + 2 * ox;
                            slot[i] += gi;
                            slot[i + 1] += gi;
                            slot[i + w] += gi;
                            slot[i + w + 1] += gi;
                        }
                    }
                }
            }
        }))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(self, factor: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = dims4("upsample_nearest", xv.shape())?;
        if factor == 0 {
            return Err(invalid("upsample_nearest", "factor must be >= 1"));
        }
        let (ho, wo) = (h * factor, w * factor);
        let xd = xv.data();
        let mut data = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            for oy in 0..ho {
                let row = &xd[(plane * h + oy / factor) * w..][..w];
                for ox in 0..wo {
                    data.push(row[ox / factor]);
                }
            }
        }
        let out = Tensor::new([n, c, ho, wo], data)?;
        let ix = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                let gd = g.data();
                for plane in 0..n * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            slot[(plane * h + oy / factor) * w + ox / factor] +=
                                gd[(plane * ho + oy) * wo + ox];
                        }
                    }
                }
            }
        }))
    }

    /// Bilinear upsampling by an integer factor (half-pixel centres, edge
    /// clamped).
    pub fn upsample_bilinear(self, factor: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = dims4("upsample_bilinear", xv.shape())?;
        if factor == 0 {
            return Err(invalid("upsample_bilinear", "factor must be >= 1"));
        }
        let (ho, wo) = (h * factor, w * factor);
        let taps = |o: usize, len: usize| -> (usize, usize, f64) {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        };
        let ytaps: Vec<_> = (0..ho).map(|o| taps(o, h)).collect();
        let xtaps: Vec<_> = (0..wo).map(|o| taps(o, w)).collect();
        let xd = xv.data();
        let mut data = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let p = &xd[plane * h * w..(plane + 1) * h * w];
            for &(y0, y1, fy) in &ytaps {
                for &(x0, x1, fx) in &xtaps {
                    let (fy, fx) = (T::from_f64(fy), T::from_f64(fx));
                    let top = p[y0 * w + x0] * (T::one() - fx) + p[y0 * w + x1] * fx;
                    let bot = p[y1 * w + x0] * (T::one() - fx) + p[y1 * w + x1] * fx;
                    data.push(top * (T::one() - fy) + bot * fy);
                }
            }
        }
        let out = Tensor::new([n, c, ho, wo], data)?;
        let ix = self.id();
        Ok(self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                let gd = g.data();
                for plane in 0..n * c {
                    let s = &mut slot[plane * h * w..(plane + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                            let gi = gd[(plane * ho + oy) * wo + ox];
                            let (fy, fx) = (T::from_f64(fy), T::from_f64(fx));
                            let one = T::one();
                            s[y0 * w + x0] += gi * (one - fy) * (one - fx);
                            s[y0 * w + x1] += gi * (one - fy) * fx;
                            s[y1 * w + x0] += gi * fy * (one - fx);
                            s[y1 * w + x1] += gi * fy * fx;
                        }
                    }
                }
            }
        }))
    }
}
