use crate::error::{shape_err, Result};
use crate::real::{gemm, Real};
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Real> Var<'t, T> {
    /// `[m, k] @ [k, n] -> [m, n]`.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let av = self.value();
        let bv = rhs.value();
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros([m, n]);
        gemm(m, k, n, av.data(), false, bv.data(), false, out.data_mut(), false);
        let (ia, ib) = (self.id(), rhs.id());
        Ok(self.tape().record(out, &[self, rhs], move |g, sink| {
            if let Some(da) = sink.slot(ia) {
                // dA = G @ B^T
                gemm(m, n, k, g.data(), false, bv.data(), true, da, true);
            }
            if let Some(db) = sink.slot(ib) {
                // dB = A^T @ G
                gemm(k, m, n, av.data(), true, g.data(), false, db, true);
            }
        }))
    }

    /// Fused affine map `x @ w + b` for `x: [n, k]`, `w: [k, m]`, `b: [m]`.
    pub fn linear(self, w: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
        let xv = self.value();
        let wv = w.value();
        let bv = b.value();
        let (sx, sw) = (xv.shape(), wv.shape());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(shape_err("linear", sx, sw));
        }
        let (n, k, m) = (sx[0], sx[1], sw[1]);
        if bv.shape() != [m] {
            return Err(shape_err("linear bias", sw, bv.shape()));
        }
        let mut out = Tensor::zeros([n, m]);
        {
            let od = out.data_mut();
            for row in od.chunks_exact_mut(m) {
                row.copy_from_slice(bv.data());
            }
            gemm(n, k, m, xv.data(), false, wv.data(), false, od, true);
        }
        let (ix, iw, ib) = (self.id(), w.id(), b.id());
        Ok(self.tape().record(out, &[self, w, b], move |g, sink| {
            if let Some(dx) = sink.slot(ix) {
                gemm(n, m, k, g.data(), false, wv.data(), true, dx, true);
            }
            if let Some(dw) = sink.slot(iw) {
                gemm(k, n, m, xv.data(), true, g.data(), false, dw, true);
            }
            if let Some(db) = sink.slot(ib) {
                for row in g.data().chunks_exact(m) {
                    for (d, &r) in db.iter_mut().zip(row) {
                        *d += r;
                    }
                }
            }
        }))
    }

    /// Batched product `[b, m, k] @ [b, k, n] -> [b, m, n]`; with
    /// `trans_rhs` the right operand is given as `[b, n, k]`.
    ///
    /// Written as direct loops: the intended use is many tiny matrices
    /// (attention over a handful of views), where GEMM setup dominates.
    pub fn bmm(self, rhs: Var<'t, T>, trans_rhs: bool) -> Result<Var<'t, T>> {
        let av = self.value();
        let bv = rhs.value();
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_rhs { sb[1] } else { sb[2] };
        let kb = if trans_rhs { sb[2] } else { sb[1] };
        if kb != k {
            return Err(shape_err("bmm", sa, sb));
        }
        let mut out = Tensor::zeros([batch, m, n]);
        {
            let (ad, bd, od) = (av.data(), bv.data(), out.data_mut());
            for bi in 0..batch {
                let a = &ad[bi * m * k..(bi + 1) * m * k];
                let b = &bd[bi * k * n..(bi + 1) * k * n];
                let o = &mut od[bi * m * n..(bi + 1) * m * n];
                for i in 0..m {
                    let ai = &a[i * k..(i + 1) * k];
                    let oi = &mut o[i * n..(i + 1) * n];
                    if trans_rhs {
                        for (j, oij) in oi.iter_mut().enumerate() {
                            *oij = dot(ai, &b[j * k..(j + 1) * k]);
                        }
                    } else {
                        for (l, &ail) in ai.iter().enumerate() {
                            axpy(oi, ail, &b[l * n..(l + 1) * n]);
                        }
                    }
                }
            }
        }
        let (ia, ib) = (self.id(), rhs.id());
        Ok(self.tape().record(out, &[self, rhs], move |g, sink| {
            let gd = g.data();
            if let Some(da) = sink.slot(ia) {
                let bd = bv.data();
                for bi in 0..batch {
                    let b = &bd[bi * k * n..(bi + 1) * k * n];
                    let gb = &gd[bi * m * n..(bi + 1) * m * n];
                    let dab = &mut da[bi * m * k..(bi + 1) * m * k];
                    for i in 0..m {
                        let gi = &gb[i * n..(i + 1) * n];
                        let di = &mut dab[i * k..(i + 1) * k];
                        if trans_rhs {
                            // dA[i,:] += Σ_j g[i,j] B[j,:]
                            for (j, &gij) in gi.iter().enumerate() {
                                axpy(di, gij, &b[j * k..(j + 1) * k]);
                            }
                        } else {
                            // dA[i,l] += g[i,:] · B[l,:]
                            for (l, d) in di.iter_mut().enumerate() {
                                *d += dot(gi, &b[l * n..(l + 1) * n]);
                            }
                        }
                    }
                }
            }
            if let Some(db) = sink.slot(ib) {
                let ad = av.data();
                for bi in 0..batch {
                    let a = &ad[bi * m * k..(bi + 1) * m * k];
                    let gb = &gd[bi * m * n..(bi + 1) * m * n];
                    let dbb = &mut db[bi * k * n..(bi + 1) * k * n];
                    for i in 0..m {
                        let ai = &a[i * k..(i + 1) * k];
                        let gi = &gb[i * n..(i + 1) * n];
                        if trans_rhs {
                            // dB[j,:] += g[i,j] A[i,:]
                            for (j, &gij) in gi.iter().enumerate() {
                                axpy(&mut dbb[j * k..(j + 1) * k], gij, ai);
                            }
                        } else {
                            // dB[l,:] += A[i,l] g[i,:]
                            for (l, &ail) in ai.iter().enumerate() {
                                axpy(&mut dbb[l * n..(l + 1) * n], ail, gi);
                            }
                        }
                    }
                }
            }
        }))
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
