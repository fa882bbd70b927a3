//! Dual-resolution hourglass image encoder and pixel-aligned feature lookup.

use diffcore::{ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::imageio::RgbImage;
use crate::nn::{Conv, RELU_GAIN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Square input resolution in pixels.
    pub input_res: usize,
    /// Channel width of the hourglass stacks.
    pub base: usize,
    pub f_coarse: usize,
    pub f_fine: usize,
    /// Number of down/up levels per hourglass.
    pub depth: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_res: 256,
            base: 64,
            f_coarse: 128,
            f_fine: 128,
            depth: 3,
        }
    }
}

/// Feature grid size relative to the input.
pub const FEATURE_STRIDE: usize = 4;

impl EncoderConfig {
    pub fn feature_channels(&self) -> usize {
        self.f_coarse + self.f_fine
    }

    pub fn feature_res(&self) -> usize {
        self.input_res / FEATURE_STRIDE
    }

    pub fn validate(&self) -> Result<()> {
        if self.base == 0 || self.f_coarse == 0 || self.f_fine == 0 || self.depth == 0 {
            return Err(config("encoder widths and depth must be positive"));
        }
        // The coarse path runs at 1/8 resolution and halves `depth` more times.
        let unit = 8usize << self.depth;
        if self.input_res == 0 || self.input_res % unit != 0 {
            return Err(config(format!(
                "encoder input_res {} must be a multiple of {unit} for depth {}",
                self.input_res, self.depth
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Hourglass {
    skip: Vec<Conv>,
    down: Vec<Conv>,
    up: Vec<Conv>,
    bottom: Conv,
}

impl Hourglass {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize, depth: usize, rng: &mut impl Rng) -> Self {
        let mut conv = |n: String, rng: &mut _| Conv::new(store, &n, c, c, 3, 1, RELU_GAIN, rng);
        let mut skip = Vec::new();
        let mut down = Vec::new();
        let mut up = Vec::new();
        for l in 0..depth {
            skip.push(conv(format!("{name}.skip{l}"), rng));
            down.push(conv(format!("{name}.down{l}"), rng));
            up.push(conv(format!("{name}.up{l}"), rng));
        }
        let bottom = conv(format!("{name}.bottom"), rng);
        Self { skip, down, up, bottom }
    }

    fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>, level: usize) -> Result<Var<'t, T>> {
        let skip = self.skip[level].forward(tape, store, x)?.relu();
        let d = self.down[level].forward(tape, store, x.max_pool2d()?)?.relu();
        let inner = if level + 1 < self.skip.len() {
            self.forward(tape, store, d, level + 1)?
        } else {
            self.bottom.forward(tape, store, d)?.relu()
        };
        let u = self.up[level].forward(tape, store, inner)?.relu().upsample_nearest(2)?;
        Ok(skip.add(u)?)
    }
}

#[derive(Clone, Debug)]
struct Path {
    stem: [Conv; 2],
    hourglass: Hourglass,
    head: Conv,
}

impl Path {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &EncoderConfig, out: usize, rng: &mut impl Rng) -> Self {
        let b = cfg.base;
        Self {
            stem: [
                Conv::new(store, &format!("{name}.stem0"), 3, b, 3, 2, RELU_GAIN, rng),
                Conv::new(store, &format!("{name}.stem1"), b, b, 3, 2, RELU_GAIN, rng),
            ],
            hourglass: Hourglass::new(store, &format!("{name}.hg"), b, cfg.depth, rng),
            head: Conv::new(store, &format!("{name}.head"), b, out, 1, 1, 1.0, rng),
        }
    }

    fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x;
        for c in &self.stem {
            h = c.forward(tape, store, h)?.relu();
        }
        let h = self.hourglass.forward(tape, store, h, 0)?;
        self.head.forward(tape, store, h)
    }
}

/// One encoder shared by all input views. The fine path sees the full image,
/// the coarse path a 2× average-pooled copy; both end at a common grid of
/// `input_res / 4` cells and are concatenated channel-wise (coarse first).
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    fine: Path,
    coarse: Path,
}

impl Encoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            config: cfg.clone(),
            fine: Path::new(store, "encoder.fine", cfg, cfg.f_fine, rng),
            coarse: Path::new(store, "encoder.coarse", cfg, cfg.f_coarse, rng),
        })
    }

    /// `images: [N, 3, H, W]` with values in [0, 1] → `[N, F, H/4, W/4]`.
    pub fn encode<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, images: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = images.shape();
        let r = self.config.input_res;
        if s.len() != 4 || s[1] != 3 || s[2] != r || s[3] != r {
            return Err(config(format!("encoder expects [N, 3, {r}, {r}] input, got {s:?}")));
        }
        let x = images.scale(2.0).add_scalar(-1.0);
        let fine = self.fine.forward(tape, store, x)?;
        let coarse = self.coarse.forward(tape, store, x.avg_pool2d()?)?.upsample_bilinear(2)?;
        Ok(Var::concat(&[coarse, fine], 1)?)
    }
}

/// Stack images into an `[N, 3, H, W]` tensor.
pub fn images_to_tensor<T: Real>(images: &[&RgbImage]) -> Result<Tensor<T>> {
    let (w, h) = (images[0].width, images[0].height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.width != w || img.height != h {
            return Err(config("input views must share one resolution"));
        }
        data.extend(img.to_chw().into_iter().map(|v| T::from_f64(v as f64)));
    }
    Ok(Tensor::new([images.len(), 3, h, w], data)?)
}

const NO_TAP: u32 = u32::MAX;

/// Bilinear lookup of pixel-aligned features.
///
/// `map` is `[N, F, Hf, Wf]`; `uv` holds one continuous image-space
/// coordinate per (point, view) pair, point-major, so `uv.len() = P·N`.
/// Image coordinates are rescaled to the grid by `Wf / image_w`; cell `i`
/// is centred at grid coordinate `i`. Cells outside the grid read as zero,
/// so queries more than one cell outside the image return the zero vector.
/// Non-finite coordinates (points behind a camera) also read as zero.
/// Returns `[P, N, F]`.
pub fn sample_features<'t, T: Real>(
    map: Var<'t, T>,
    uv: &[[f64; 2]],
    image_w: usize,
    image_h: usize,
) -> Result<Var<'t, T>> {
    let mv = map.value();
    let s = mv.shape();
    if s.len() != 4 {
        return Err(config(format!("feature map must be 4-D, got {s:?}")));
    }
    let (n, f, hf, wf) = (s[0], s[1], s[2], s[3]);
    if uv.len() % n != 0 {
        return Err(config(format!("{} coordinates do not split over {n} views", uv.len())));
    }
    let p = uv.len() / n;
    let (sx, sy) = (wf as f64 / image_w as f64, hf as f64 / image_h as f64);

    // Channels-last copy so each tap reads one contiguous F-vector.
    let md = mv.data();
    let mut hwc = vec![T::zero(); md.len()];
    for v in 0..n {
        for c in 0..f {
            for cell in 0..hf * wf {
                hwc[(v * hf * wf + cell) * f + c] = md[(v * f + c) * hf * wf + cell];
            }
        }
    }

    let mut taps = vec![[(NO_TAP, T::zero()); 4]; uv.len()];
    for (q, (&[u, vv], tap)) in uv.iter().zip(taps.iter_mut()).enumerate() {
        if !u.is_finite() || !vv.is_finite() {
            continue;
        }
        let view = q % n;
        let gx = u * sx - 0.5;
        let gy = vv * sy - 0.5;
        let (x0, y0) = (gx.floor(), gy.floor());
        let (fx, fy) = (gx - x0, gy - y0);
        let corners = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1.0, y0, fx * (1.0 - fy)),
            (x0, y0 + 1.0, (1.0 - fx) * fy),
            (x0 + 1.0, y0 + 1.0, fx * fy),
        ];
        for (k, &(cx, cy, w)) in corners.iter().enumerate() {
            if cx >= 0.0 && cy >= 0.0 && cx < wf as f64 && cy < hf as f64 && w > 0.0 {
                let cell = view * hf * wf + cy as usize * wf + cx as usize;
                tap[k] = (cell as u32, T::from_f64(w));
            }
        }
    }

    let mut out = vec![T::zero(); uv.len() * f];
    for (q, tap) in taps.iter().enumerate() {
        let dst = &mut out[q * f..(q + 1) * f];
        for &(cell, w) in tap {
            if cell != NO_TAP {
                let src = &hwc[cell as usize * f..(cell as usize + 1) * f];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += w * v;
                }
            }
        }
    }
    let out = Tensor::new([p, n, f], out)?;
    let im = map.id();
    Ok(map.tape().record(out, &[map], move |g, sink| {
        let Some(slot) = sink.slot(im) else { return };
        let gd = g.data();
        let mut ghwc = vec![T::zero(); n * hf * wf * f];
        for (q, tap) in taps.iter().enumerate() {
            let src = &gd[q * f..(q + 1) * f];
            for &(cell, w) in tap {
                if cell != NO_TAP {
                    let dst = &mut ghwc[cell as usize * f..(cell as usize + 1) * f];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d += w * v;
                    }
                }
            }
        }
        for v in 0..n {
            for c in 0..f {
                for cell in 0..hf * wf {
                    slot[(v * f + c) * hf * wf + cell] += ghwc[(v * hf * wf + cell) * f + c];
                }
            }
        }
    }))
}
