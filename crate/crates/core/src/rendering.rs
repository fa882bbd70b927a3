//! Differentiable volume rendering with hierarchical sampling.

use diffcore::{ParamStore, Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::sample_features;
use crate::error::{config, Error, Result};
use crate::field::{Field, FieldInput, HeadLogits};
use crate::geometry::{Camera, Ray, Vec3};
use crate::imageio::RgbImage;
use crate::model::{Model, SourceViews};

pub const WHITE: [f64; 3] = [1.0, 1.0, 1.0];

/// Added to every coarse weight before inverse-CDF sampling.
pub const PDF_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub background: [f64; 3],
    /// Rays per no-grad chunk when rendering whole images.
    pub chunk: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            n_fine: 128,
            background: WHITE,
            chunk: 128,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_coarse < 2 {
            return Err(config("n_coarse must be at least 2"));
        }
        if self.chunk == 0 {
            return Err(config("chunk must be positive"));
        }
        Ok(())
    }
}

/// Stratified sampling: one uniform draw in each of `n` equal bins of
/// `[t_near, t_far]`.
pub fn coarse_sample(ray: &Ray, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let step = (ray.t_far - ray.t_near) / n as f64;
    (0..n)
        .map(|i| ray.t_near + (i as f64 + rng.random::<f64>()) * step)
        .collect()
}

/// Interval lengths `δ_i = t_{i+1} − t_i`, with `t_far − t_last` for the last.
pub fn deltas(t: &[f64], t_far: f64) -> Vec<f64> {
    (0..t.len())
        .map(|i| t.get(i + 1).copied().unwrap_or(t_far) - t[i])
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeResult {
    pub color: [f64; 3],
    pub weights: Vec<f64>,
    /// Σ w_i.
    pub opacity: f64,
}

/// Alpha compositing front to back over one ray.
pub fn composite(deltas: &[f64], sigma: &[f64], rgb: &[[f64; 3]], background: [f64; 3]) -> Result<CompositeResult> {
    if deltas.len() != sigma.len() || rgb.len() != sigma.len() {
        return Err(config("composite inputs differ in length"));
    }
    let mut weights = Vec::with_capacity(sigma.len());
    let mut color = [0.0; 3];
    let mut optical = 0.0f64;
    for (k, ((&s, &d), c)) in sigma.iter().zip(deltas).zip(rgb).enumerate() {
        if !s.is_finite() {
            return Err(Error::Numeric(format!("non-finite density {s} at sample {k}")));
        }
        let t = (-optical).exp();
        optical += s * d;
        let w = t - (-optical).exp();
        for ch in 0..3 {
            color[ch] += w * c[ch];
        }
        weights.push(w);
    }
    let opacity = 1.0 - (-optical).exp();
    for ch in 0..3 {
        color[ch] += (1.0 - opacity) * background[ch];
    }
    Ok(CompositeResult { color, weights, opacity })
}

/// Differentiable compositing over a ragged batch of rays.
///
/// `sigma: [P]` and `rgb: [P, 3]` hold the samples of all rays back to back;
/// ray `r` owns samples `offsets[r]..offsets[r+1]`. Rays without samples
/// return the background. Returns the `[R, 3]` colors and the per-sample
/// weights (detached).
pub fn composite_batch<'t, T: Real>(
    sigma: Var<'t, T>,
    rgb: Var<'t, T>,
    offsets: &[usize],
    deltas: &[f64],
    background: [f64; 3],
) -> Result<(Var<'t, T>, Vec<f64>)> {
    let p = *offsets.last().unwrap_or(&0);
    if sigma.shape() != [p] || rgb.shape() != [p, 3] || deltas.len() != p {
        return Err(config(format!(
            "composite batch: sigma {:?}, rgb {:?}, {} deltas for {p} samples",
            sigma.shape(),
            rgb.shape(),
            deltas.len()
        )));
    }
    let sv = sigma.value();
    let cv = rgb.value();
    let (sd, cd) = (sv.data(), cv.data());
    let n_rays = offsets.len() - 1;
    let mut weights = vec![0.0; p];
    // Transmittance after each sample, T_{k+1}.
    let mut t_after = vec![0.0; p];
    let mut out = Vec::with_capacity(n_rays * 3);
    for r in 0..n_rays {
        let (a, b) = (offsets[r], offsets[r + 1]);
        let mut color = [0.0; 3];
        let mut optical = 0.0f64;
        let mut t_prev = 1.0;
        for k in a..b {
            let s = sd[k].as_f64();
            if !s.is_finite() {
                return Err(Error::Numeric(format!("non-finite density {s} at sample {} of ray {r}", k - a)));
            }
            optical += s * deltas[k];
            let t_next = (-optical).exp();
            let w = t_prev - t_next;
            for ch in 0..3 {
                color[ch] += w * cd[k * 3 + ch].as_f64();
            }
            weights[k] = w;
            t_after[k] = t_next;
            t_prev = t_next;
        }
        for ch in 0..3 {
            out.push(T::from_f64(color[ch] + t_prev * background[ch]));
        }
    }
    let out = Tensor::new([n_rays, 3], out)?;
    let offsets = offsets.to_vec();
    let deltas = deltas.to_vec();
    let w_out = weights.clone();
    let (is, ic) = (sigma.id(), rgb.id());
    let color = sigma.tape().record(out, &[sigma, rgb], move |g, sink| {
        let gd = g.data();
        let cd = cv.data();
        if let Some(slot) = sink.slot(ic) {
            for r in 0..offsets.len() - 1 {
                for k in offsets[r]..offsets[r + 1] {
                    for ch in 0..3 {
                        slot[k * 3 + ch] += T::from_f64(weights[k]) * gd[r * 3 + ch];
                    }
                }
            }
        }
        if let Some(slot) = sink.slot(is) {
            for r in 0..offsets.len() - 1 {
                let gr = [gd[r * 3].as_f64(), gd[r * 3 + 1].as_f64(), gd[r * 3 + 2].as_f64()];
                let dot = |k: usize| -> f64 {
                    (0..3)
                        .map(|ch| (cd[k * 3 + ch].as_f64() - background[ch]) * gr[ch])
                        .sum()
                };
                // dC/dσ_k = δ_k [T_{k+1}(c_k − bg) − Σ_{i>k} w_i (c_i − bg)]
                let mut suffix = 0.0;
                for k in (offsets[r]..offsets[r + 1]).rev() {
                    let e = dot(k);
                    slot[k] += T::from_f64(deltas[k] * (t_after[k] * e - suffix));
                    suffix += weights[k] * e;
                }
            }
        }
    });
    Ok((color, w_out))
}

/// Inverse-CDF sampling of `n_fine` extra t-values from the piecewise
/// constant density ∝ `w_i + 1e-5` on the intervals `[t_i, t_{i+1})`
/// (the last ending at `t_far`); returns them merged with `t`, ascending.
pub fn fine_sample(t: &[f64], weights: &[f64], t_far: f64, n_fine: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = t.len();
    let mut merged = t.to_vec();
    if n == 0 || n_fine == 0 {
        return merged;
    }
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for &w in weights.iter().take(n) {
        acc += w.max(0.0) + PDF_FLOOR;
        cdf.push(acc);
    }
    for c in cdf.iter_mut() {
        *c /= acc;
    }
    cdf[n] = 1.0;
    for _ in 0..n_fine {
        let u: f64 = rng.random();
        // First bin whose upper CDF edge exceeds u.
        let i = cdf[1..].partition_point(|&c| c <= u).min(n - 1);
        let lo = t[i];
        let hi = if i + 1 < n { t[i + 1] } else { t_far };
        let span = cdf[i + 1] - cdf[i];
        let frac = if span > 0.0 { ((u - cdf[i]) / span).clamp(0.0, 1.0) } else { 0.0 };
        merged.push(lo + frac * (hi - lo));
    }
    merged.sort_by(f64::total_cmp);
    merged
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream for one ray, keyed by the pixel centre's
/// offset `(dx, dy)` from the principal point so the same ray gets the same
/// stream regardless of image size or scheduling.
pub fn ray_rng(seed: u64, stream: u64, dx: f64, dy: f64) -> ChaCha8Rng {
    let qx = (dx * 2.0).round() as i64 as u64;
    let qy = (dy * 2.0).round() as i64 as u64;
    let h = splitmix(splitmix(splitmix(splitmix(seed) ^ stream) ^ qx) ^ qy);
    ChaCha8Rng::seed_from_u64(h)
}

/// One field evaluation pass over fixed sample positions.
pub struct PassOutput<'t, T> {
    /// `[R, 3]`
    pub color: Var<'t, T>,
    pub weights: Vec<f64>,
    pub offsets: Vec<usize>,
    /// Per-sample head logits when requested.
    pub trace: Option<Vec<Vec<HeadLogits>>>,
}

/// Evaluate `field` at `t[r]` along each ray and composite. Rays given as
/// `None` (missing the scene box) must have no samples.
#[allow(clippy::too_many_arguments)]
pub fn render_pass<'t, T: Real>(
    field: &Field,
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    map: Var<'t, T>,
    views: &SourceViews,
    aabb_scale: f64,
    rays: &[Option<Ray>],
    t: &[Vec<f64>],
    background: [f64; 3],
    trace: bool,
) -> Result<PassOutput<'t, T>> {
    let mut offsets = Vec::with_capacity(rays.len() + 1);
    offsets.push(0);
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    let mut dts = Vec::new();
    for (ray, ts) in rays.iter().zip(t) {
        if let Some(ray) = ray {
            for &ti in ts {
                points.push(ray.at(ti));
                dirs.push(ray.direction);
            }
            dts.extend(deltas(ts, ray.t_far));
        } else if !ts.is_empty() {
            return Err(config("samples given for a ray that misses the scene"));
        }
        offsets.push(points.len());
    }
    if points.is_empty() {
        let bg = Tensor::from_fn([rays.len(), 3], |i| T::from_f64(background[i % 3]));
        return Ok(PassOutput {
            color: tape.constant(bg),
            weights: Vec::new(),
            offsets,
            trace: trace.then(Vec::new),
        });
    }
    let uv = views.project_all(&points);
    let features = sample_features(map, &uv, views.width(), views.height())?;
    let source_dirs = views.directions();
    let input = FieldInput {
        points: &points,
        dirs: &dirs,
        source_dirs: &source_dirs,
        aabb_scale,
    };
    let (out, tr) = field.forward_traced(tape, store, features, &input, trace)?;
    let (color, weights) = composite_batch(out.sigma, out.rgb, &offsets, &dts, background)?;
    Ok(PassOutput {
        color,
        weights,
        offsets,
        trace: tr,
    })
}

pub struct RaysOutput<'t, T> {
    pub coarse: Var<'t, T>,
    pub fine: PassOutput<'t, T>,
}

/// Coarse pass, importance resampling, fine pass. `rngs` holds one stream
/// per ray.
#[allow(clippy::too_many_arguments)]
pub fn render_rays<'t, T: Real>(
    model: &Model,
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    map: Var<'t, T>,
    views: &SourceViews,
    aabb_scale: f64,
    rays: &[Ray],
    rngs: &mut [ChaCha8Rng],
    settings: &RenderSettings,
    trace: bool,
) -> Result<RaysOutput<'t, T>> {
    let clipped: Vec<Option<Ray>> = rays.iter().map(|r| r.clip_to_aabb(aabb_scale)).collect();
    let t_coarse: Vec<Vec<f64>> = clipped
        .iter()
        .zip(rngs.iter_mut())
        .map(|(r, rng)| r.as_ref().map_or_else(Vec::new, |r| coarse_sample(r, settings.n_coarse, rng)))
        .collect();
    let coarse = render_pass(
        &model.coarse,
        tape,
        store,
        map,
        views,
        aabb_scale,
        &clipped,
        &t_coarse,
        settings.background,
        false,
    )?;
    let t_fine: Vec<Vec<f64>> = clipped
        .iter()
        .enumerate()
        .zip(rngs.iter_mut())
        .map(|((i, r), rng)| match r {
            Some(r) => {
                let w = &coarse.weights[coarse.offsets[i]..coarse.offsets[i + 1]];
                fine_sample(&t_coarse[i], w, r.t_far, settings.n_fine, rng)
            }
            None => Vec::new(),
        })
        .collect();
    let fine = render_pass(
        &model.fine,
        tape,
        store,
        map,
        views,
        aabb_scale,
        &clipped,
        &t_fine,
        settings.background,
        trace,
    )?;
    Ok(RaysOutput {
        coarse: coarse.color,
        fine,
    })
}

/// Per-head logit decomposition accumulated over a rendered image, each
/// sample weighted by its compositing weight.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageTrace {
    pub heads: Vec<HeadLogits>,
    pub weight: f64,
}

impl ImageTrace {
    fn accumulate(&mut self, weights: &[f64], per_sample: &[Vec<HeadLogits>]) {
        for (w, heads) in weights.iter().zip(per_sample) {
            if self.heads.len() < heads.len() {
                self.heads.resize(heads.len(), HeadLogits::default());
            }
            for (acc, h) in self.heads.iter_mut().zip(heads) {
                acc.feature += w * h.feature;
                acc.view += w * h.view;
                acc.total += w * h.total;
            }
            self.weight += w;
        }
    }

    /// Weighted means per head.
    pub fn means(&self) -> Vec<HeadLogits> {
        let z = if self.weight > 0.0 { self.weight } else { 1.0 };
        self.heads
            .iter()
            .map(|h| HeadLogits {
                feature: h.feature / z,
                view: h.view / z,
                total: h.total / z,
            })
            .collect()
    }
}

/// Render every pixel of `camera`. `map` is the detached feature map of
/// `views`.
#[allow(clippy::too_many_arguments)]
pub fn render_image<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    views: &SourceViews,
    map: &Tensor<T>,
    camera: &Camera,
    aabb_scale: f64,
    settings: &RenderSettings,
    seed: u64,
) -> Result<RgbImage> {
    Ok(render_image_impl(model, store, views, map, camera, aabb_scale, settings, seed, false)?.0)
}

/// As [`render_image`], also accumulating the attention decomposition.
#[allow(clippy::too_many_arguments)]
pub fn render_image_traced<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    views: &SourceViews,
    map: &Tensor<T>,
    camera: &Camera,
    aabb_scale: f64,
    settings: &RenderSettings,
    seed: u64,
) -> Result<(RgbImage, ImageTrace)> {
    render_image_impl(model, store, views, map, camera, aabb_scale, settings, seed, true)
}

#[allow(clippy::too_many_arguments)]
fn render_image_impl<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    views: &SourceViews,
    map: &Tensor<T>,
    camera: &Camera,
    aabb_scale: f64,
    settings: &RenderSettings,
    seed: u64,
    trace: bool,
) -> Result<(RgbImage, ImageTrace)> {
    // SAFETY: the closure only does ordinary float arithmetic; flushing
    // subnormals changes results below f32's normal range and nothing else.
    unsafe { no_denormals::no_denormals(|| render_image_chunks(model, store, views, map, camera, aabb_scale, settings, seed, trace)) }
}

#[allow(clippy::too_many_arguments)]
fn render_image_chunks<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    views: &SourceViews,
    map: &Tensor<T>,
    camera: &Camera,
    aabb_scale: f64,
    settings: &RenderSettings,
    seed: u64,
    trace: bool,
) -> Result<(RgbImage, ImageTrace)> {
    settings.validate()?;
    let (w, h) = (camera.width() as usize, camera.height() as usize);
    let k = &camera.intrinsics;
    let mut img = RgbImage::new(w, h);
    let mut acc = ImageTrace::default();
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|v| (0..w).map(move |u| (u, v))).collect();
    for chunk in pixels.chunks(settings.chunk) {
        let mut rays = Vec::with_capacity(chunk.len());
        let mut rngs = Vec::with_capacity(chunk.len());
        for &(u, v) in chunk {
            rays.push(camera.pixel_to_ray(u as f64, v as f64)?);
            rngs.push(ray_rng(seed, 0, u as f64 + 0.5 - k.cx, v as f64 + 0.5 - k.cy));
        }
        let tape = Tape::no_grad();
        let m = tape.constant(map.clone());
        let out = render_rays(model, &tape, store, m, views, aabb_scale, &rays, &mut rngs, settings, trace)?;
        let colors = out.fine.color.value();
        for (i, &(u, v)) in chunk.iter().enumerate() {
            let c = &colors.data()[i * 3..i * 3 + 3];
            img.set(u, v, [c[0].as_f64() as f32, c[1].as_f64() as f32, c[2].as_f64() as f32]);
        }
        if let Some(tr) = &out.fine.trace {
            acc.accumulate(&out.fine.weights, tr);
        }
    }
    Ok((img, acc))
}

/// Direction from `a` towards `b`, or zero if they coincide.
pub fn direction(a: &Vec3, b: &Vec3) -> Vec3 {
    let d = b - a;
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Vec3::zeros()
    }
}
