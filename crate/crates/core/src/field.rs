//! Radiance field: positional encoding, single-view MLP, multi-view
//! combinator and multi-view MLP.

use std::fmt;
use std::str::FromStr;

use diffcore::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::geometry::Vec3;
use crate::nn::{init_uniform, Linear, ResBlock, RELU_GAIN};

/// `[sin(2⁰πx), cos(2⁰πx), …, sin(2^{ν−1}πx), cos(2^{ν−1}πx)]`, ordered
/// frequency-major, then sin before cos, then component.
pub fn pos_encode(x: [f64; 3], nu: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * nu);
    let mut freq = std::f64::consts::PI;
    for _ in 0..nu {
        out.extend(x.iter().map(|&c| (freq * c).sin()));
        out.extend(x.iter().map(|&c| (freq * c).cos()));
        freq *= 2.0;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combinator {
    /// View-direction-attended multi-head self-attention.
    Mha,
    /// Mean over views (ablation baseline).
    Avg,
}

impl FromStr for Combinator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mha" => Ok(Self::Mha),
            "avg" => Ok(Self::Avg),
            _ => Err(config(format!("unknown combinator `{s}` (expected mha or avg)"))),
        }
    }
}

impl fmt::Display for Combinator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mha => "mha",
            Self::Avg => "avg",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Width F₁ of the single- and multi-view MLPs.
    pub width: usize,
    pub heads: usize,
    /// Positional-encoding frequencies ν.
    pub n_freq: usize,
    pub combinator: Combinator,
    /// Multiplier on the softplus density head.
    pub density_scale: f64,
    /// Initial bias of the density head (negative starts nearly empty).
    pub density_bias: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            width: 256,
            heads: 4,
            n_freq: 6,
            combinator: Combinator::Mha,
            density_scale: 10.0,
            density_bias: -4.0,
        }
    }
}

pub const F1_BLOCKS: usize = 3;
pub const F2_BLOCKS: usize = 2;

impl FieldConfig {
    /// Per-head width of the padded `[feature ⊕ direction]` vector.
    pub fn head_dim(&self) -> usize {
        (self.width + 3).div_ceil(self.heads.max(1))
    }

    /// Feature dimensions `[start, start+len)` covered by head `h`.
    pub fn head_feature_range(&self, h: usize) -> (usize, usize) {
        let dh = self.head_dim();
        let start = (h * dh).min(self.width);
        (start, ((h + 1) * dh).min(self.width) - start)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 {
            return Err(config("field width and heads must be positive"));
        }
        if self.width % self.heads != 0 {
            return Err(config(format!("field width {} not divisible by {} heads", self.width, self.heads)));
        }
        // Every head needs at least one feature dimension, and the three
        // direction slots must land in the last head.
        if self.width <= (self.heads - 1) * self.head_dim() {
            return Err(config(format!("field width {} too small for {} heads", self.width, self.heads)));
        }
        if self.width % 2 != 0 {
            return Err(config("field width must be even"));
        }
        if !(self.density_scale > 0.0) {
            return Err(config("density_scale must be positive"));
        }
        Ok(())
    }

    pub fn encoded_dim(&self) -> usize {
        6 * self.n_freq
    }
}

#[derive(Clone, Debug)]
struct Attention {
    a_q: Vec<ParamId>,
    a_k: Vec<ParamId>,
    b_v: Vec<ParamId>,
    out: Linear,
    view_scale: ParamId,
}

/// Per-point logit decomposition of one head, each averaged over the
/// 3×3 (query row, key) pairs and already divided by √d_h.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeadLogits {
    pub feature: f64,
    pub view: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Field {
    pub config: FieldConfig,
    pub prefix: String,
    feat_in: Linear,
    pos_in: Linear,
    f1: Vec<ResBlock>,
    attention: Option<Attention>,
    f2: Vec<ResBlock>,
    sigma: Linear,
    c1: Linear,
    cd: ParamId,
    c2: Linear,
}

/// Per-point field inputs.
pub struct FieldInput<'a> {
    /// World positions.
    pub points: &'a [Vec3],
    /// Query view direction per point (unit, or zero for surface samples).
    pub dirs: &'a [Vec3],
    /// Forward axis of each source camera.
    pub source_dirs: &'a [Vec3; 3],
    /// Half-extent of the scene cube; positions are divided by it before encoding.
    pub aabb_scale: f64,
}

pub struct FieldOutput<'t, T> {
    /// `[P]`
    pub sigma: Var<'t, T>,
    /// `[P, 3]`
    pub rgb: Var<'t, T>,
}

fn dir_tensor<T: Real>(dirs: &[Vec3]) -> Tensor<T> {
    Tensor::from_fn([dirs.len(), 3], |i| T::from_f64(dirs[i / 3][i % 3]))
}

fn unit_or_zero(d: &Vec3) -> Vec3 {
    let n = d.norm();
    if n > 1e-12 {
        d / n
    } else {
        Vec3::zeros()
    }
}

impl Field {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &FieldConfig,
        feature_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.width;
        let p = |s: &str| format!("{prefix}.{s}");
        let feat_in = Linear::new(store, &p("f1.feat_in"), feature_dim, w, 1.0, rng);
        let pos_in = Linear::new(store, &p("f1.pos_in"), cfg.encoded_dim() + 3, w, 1.0, rng);
        let f1 = (0..F1_BLOCKS)
            .map(|i| ResBlock::new(store, &p(&format!("f1.block{i}")), w, rng))
            .collect();
        let attention = match cfg.combinator {
            Combinator::Avg => None,
            Combinator::Mha => {
                let mut a_q = Vec::new();
                let mut a_k = Vec::new();
                let mut b_v = Vec::new();
                let vw = w / cfg.heads;
                for h in 0..cfg.heads {
                    let (_, len) = cfg.head_feature_range(h);
                    a_q.push(store.add(p(&format!("attn.q{h}")), init_uniform(&[len, len], len, 1.0, rng)));
                    a_k.push(store.add(p(&format!("attn.k{h}")), init_uniform(&[len, len], len, 1.0, rng)));
                    b_v.push(store.add(p(&format!("attn.v{h}")), init_uniform(&[vw, vw], vw, 1.0, rng)));
                }
                let out = Linear::new(store, &p("attn.out"), w, w, 1.0, rng);
                let view_scale = store.add(p("attn.view_scale"), Tensor::full([1], T::one()));
                Some(Attention {
                    a_q,
                    a_k,
                    b_v,
                    out,
                    view_scale,
                })
            }
        };
        let f2 = (0..F2_BLOCKS)
            .map(|i| ResBlock::new(store, &p(&format!("f2.block{i}")), w, rng))
            .collect();
        let sigma = Linear::new(store, &p("f2.sigma"), w, 1, 1.0, rng);
        store.set_value(sigma.b, Tensor::full([1], T::from_f64(cfg.density_bias)))?;
        let c1 = Linear::new(store, &p("f2.color1"), w, w / 2, RELU_GAIN, rng);
        let cd = store.add(p("f2.color_dir"), init_uniform(&[3, w / 2], 3, 1.0, rng));
        let c2 = Linear::new(store, &p("f2.color2"), w / 2, 3, 1.0, rng);
        Ok(Self {
            config: cfg.clone(),
            prefix: prefix.to_string(),
            feat_in,
            pos_in,
            f1,
            attention,
            f2,
            sigma,
            c1,
            cd,
            c2,
        })
    }

    /// Parameter-name prefix of the multi-view MLP (the fine-tuned group).
    pub fn f2_prefix(&self) -> String {
        format!("{}.f2.", self.prefix)
    }

    pub fn view_scale_id(&self) -> Option<ParamId> {
        self.attention.as_ref().map(|a| a.view_scale)
    }

    /// Single-view MLP. `features: [P, 3, F]` → `V: [P, 3, F₁]`.
    pub fn f1_forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        features: Var<'t, T>,
        input: &FieldInput<'_>,
    ) -> Result<Var<'t, T>> {
        let p = input.points.len();
        let s = features.shape();
        if s.len() != 3 || s[0] != p || s[1] != 3 {
            return Err(Error::Arity {
                expected: 3,
                got: s.get(1).copied().unwrap_or(0),
            });
        }
        let w = self.config.width;
        let z = features.reshape(&[3 * p, s[2]])?;
        let hz = self.feat_in.forward(tape, store, z)?;
        let enc_dim = self.config.encoded_dim();
        let mut pd = Vec::with_capacity(p * (enc_dim + 3));
        for (x, d) in input.points.iter().zip(input.dirs) {
            let xn = [x[0] / input.aabb_scale, x[1] / input.aabb_scale, x[2] / input.aabb_scale];
            pd.extend(pos_encode(xn, self.config.n_freq).into_iter().map(T::from_f64));
            pd.extend(d.iter().map(|&c| T::from_f64(c)));
        }
        let pd = tape.constant(Tensor::new([p, enc_dim + 3], pd)?);
        let shared = self.pos_in.forward(tape, store, pd)?.broadcast(1, 3)?.reshape(&[3 * p, w])?;
        let mut h = hz.add(shared)?;
        for b in &self.f1 {
            h = b.forward(tape, store, h)?;
        }
        Ok(h.reshape(&[p, 3, w])?)
    }

    /// Combine the three per-view vectors `V: [P, 3, F₁]` into `[P, F₁]`.
    pub fn combine<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        v: Var<'t, T>,
        query_dirs: &[Vec3],
        source_dirs: &[Vec3],
    ) -> Result<Var<'t, T>> {
        Ok(self.combine_traced(tape, store, v, query_dirs, source_dirs, false)?.0)
    }

    /// As [`Field::combine`], optionally returning the per-point, per-head
    /// logit decomposition.
    pub fn combine_traced<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        v: Var<'t, T>,
        query_dirs: &[Vec3],
        source_dirs: &[Vec3],
        trace: bool,
    ) -> Result<(Var<'t, T>, Option<Vec<Vec<HeadLogits>>>)> {
        let s = v.shape();
        if s.len() != 3 || s[1] != 3 || source_dirs.len() != 3 {
            return Err(Error::Arity {
                expected: 3,
                got: if source_dirs.len() != 3 { source_dirs.len() } else { s.get(1).copied().unwrap_or(0) },
            });
        }
        let (p, w) = (s[0], s[2]);
        if query_dirs.len() != p {
            return Err(config(format!("{} query directions for {p} points", query_dirs.len())));
        }
        let Some(att) = &self.attention else {
            if trace {
                return Err(Error::Unsupported(
                    "attention trace requires the mha combinator".into(),
                ));
            }
            return Ok((v.mean_axis(1)?, None));
        };
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        let flat = v.reshape(&[3 * p, w])?;
        let vn = flat.l2_normalize(1e-8)?;

        // View part: (s·d_q)·(s·d_j) = s²(d_q·d_j), shared by all query rows.
        let dq: Vec<Vec3> = query_dirs.iter().map(unit_or_zero).collect();
        let dj: Vec<Vec3> = source_dirs.iter().map(unit_or_zero).collect();
        let dots = Tensor::from_fn([p, 3], |i| T::from_f64(dq[i / 3].dot(&dj[i % 3])));
        let s2 = tape.param(store, att.view_scale).square();
        let view = tape.constant(dots).mul(s2)?.broadcast(1, 3)?;

        let vw = w / heads;
        let mut outs = Vec::with_capacity(heads);
        let mut parts: Vec<(Var<'t, T>, bool)> = Vec::new();
        for h in 0..heads {
            let (start, len) = self.config.head_feature_range(h);
            let fh = vn.slice(1, start, len)?;
            let q = fh.matmul(tape.param(store, att.a_q[h]))?.reshape(&[p, 3, len])?;
            let k = fh.matmul(tape.param(store, att.a_k[h]))?.reshape(&[p, 3, len])?;
            let feat = q.bmm(k, true)?;
            let last = h + 1 == heads;
            let logits = if last { feat.add(view)? } else { feat }.scale(inv_sqrt);
            if trace {
                parts.push((feat, last));
            }
            let attn = logits.softmax(2)?;
            let vals = flat
                .slice(1, h * vw, vw)?
                .matmul(tape.param(store, att.b_v[h]))?
                .reshape(&[p, 3, vw])?;
            outs.push(attn.bmm(vals, false)?);
        }
        let cat = Var::concat(&outs, 2)?.mean_axis(1)?;
        let out = att.out.forward(tape, store, cat)?;

        let trace = trace.then(|| {
            let view_vals = view.value();
            let vd = view_vals.data();
            (0..p)
                .map(|pi| {
                    parts
                        .iter()
                        .map(|(feat, last)| {
                            let fv = feat.value();
                            let fd = &fv.data()[pi * 9..(pi + 1) * 9];
                            let fm = fd.iter().map(|x| x.as_f64()).sum::<f64>() / 9.0 * inv_sqrt;
                            let vm = if *last {
                                vd[pi * 9..(pi + 1) * 9].iter().map(|x| x.as_f64()).sum::<f64>() / 9.0 * inv_sqrt
                            } else {
                                0.0
                            };
                            HeadLogits {
                                feature: fm,
                                view: vm,
                                total: fm + vm,
                            }
                        })
                        .collect()
                })
                .collect()
        });
        Ok((out, trace))
    }

    /// Multi-view MLP: `V_multi: [P, F₁]` → (σ `[P]`, rgb `[P, 3]`).
    pub fn f2_forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        v_multi: Var<'t, T>,
        query_dirs: &[Vec3],
    ) -> Result<FieldOutput<'t, T>> {
        let p = query_dirs.len();
        let mut h = v_multi;
        for b in &self.f2 {
            h = b.forward(tape, store, h)?;
        }
        let r = h.relu();
        let sigma = self
            .sigma
            .forward(tape, store, r)?
            .softplus()
            .scale(self.config.density_scale)
            .reshape(&[p])?;
        let d = tape.constant(dir_tensor(query_dirs));
        let hid = self
            .c1
            .forward(tape, store, r)?
            .add(d.matmul(tape.param(store, self.cd))?)?
            .relu();
        let rgb = self.c2.forward(tape, store, hid)?.sigmoid();
        Ok(FieldOutput { sigma, rgb })
    }

    /// Full per-point pipeline from sampled features `[P, 3, F]`.
    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        features: Var<'t, T>,
        input: &FieldInput<'_>,
    ) -> Result<FieldOutput<'t, T>> {
        Ok(self.forward_traced(tape, store, features, input, false)?.0)
    }

    pub fn forward_traced<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        features: Var<'t, T>,
        input: &FieldInput<'_>,
        trace: bool,
    ) -> Result<(FieldOutput<'t, T>, Option<Vec<Vec<HeadLogits>>>)> {
        let v = self.f1_forward(tape, store, features, input)?;
        let (vm, tr) = self.combine_traced(tape, store, v, input.dirs, input.source_dirs, trace)?;
        Ok((self.f2_forward(tape, store, vm, input.dirs)?, tr))
    }
}
