//! Optimization loop: ray reconstruction plus surface supervision on both
//! networks, a two-phase batch schedule and per-scene fine-tuning of the
//! late MLP blocks.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use diffcore::{Adam, AdamConfig, ParamStore, Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{held_out_views, Dataset};
use crate::encoder::sample_features;
use crate::error::{config, Error, Result};
use crate::field::FieldInput;
use crate::geometry::{Ray, Vec3};
use crate::metrics::psnr_from_mse;
use crate::model::{Model, SourceViews, COARSE_PREFIX, FINE_PREFIX};
use crate::rendering::{render_rays, RenderSettings};
use crate::surface::{scene_delta, SurfaceBatch, SurfaceSampler};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_recon: f64,
    pub lambda_surface: f64,
    pub iterations: usize,
    /// Share of iterations run with the phase-1 batch sizes.
    pub phase1_fraction: f64,
    pub phase1_rays: usize,
    pub phase1_surface: usize,
    pub phase2_rays: usize,
    pub phase2_surface: usize,
    /// Multiplier applied to all four batch sizes.
    pub scale: f64,
    pub lr: f64,
    pub seed: u64,
    /// Every n-th lattice view is held out for validation.
    pub hold_out_every: usize,
    /// Share of rays restricted to pixels near the character.
    pub foreground_fraction: f64,
    /// Validation interval in iterations; 0 validates only at the end.
    pub val_every: usize,
    pub val_pixels: usize,
    /// Checkpoint interval in iterations; 0 writes only at the end.
    pub checkpoint_every: usize,
    /// Use the material's flat colour for surface samples without a texture.
    pub flat_fallback: bool,
    pub render: RenderSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_recon: 1.0,
            lambda_surface: 0.1,
            iterations: 20_000,
            phase1_fraction: 0.8,
            phase1_rays: 1000,
            phase1_surface: 3000,
            phase2_rays: 10_000,
            phase2_surface: 10_000,
            scale: 1.0,
            lr: 5e-4,
            seed: 0,
            hold_out_every: 10,
            foreground_fraction: 0.9,
            val_every: 500,
            val_pixels: 512,
            checkpoint_every: 1000,
            flat_fallback: true,
            render: RenderSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        if !(self.lambda_recon >= 0.0 && self.lambda_surface >= 0.0) {
            return Err(config("loss weights must be non-negative"));
        }
        if self.iterations == 0 {
            return Err(config("iterations must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.phase1_fraction) || !(0.0..=1.0).contains(&self.foreground_fraction) {
            return Err(config("phase1_fraction and foreground_fraction must lie in [0, 1]"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(config("scale must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config("lr must be non-negative"));
        }
        for it in [0, self.iterations - 1] {
            if self.n_ray(it) == 0 || self.n_surface(it) == 0 {
                return Err(config("per-iteration ray and surface counts must be at least 1"));
            }
        }
        Ok(())
    }

    fn scaled(&self, n: usize) -> usize {
        (n as f64 * self.scale).round() as usize
    }

    pub fn phase1_iterations(&self) -> usize {
        (self.iterations as f64 * self.phase1_fraction).round() as usize
    }

    pub fn n_ray(&self, iteration: usize) -> usize {
        if iteration < self.phase1_iterations() {
            self.scaled(self.phase1_rays)
        } else {
            self.scaled(self.phase2_rays)
        }
    }

    pub fn n_surface(&self, iteration: usize) -> usize {
        if iteration < self.phase1_iterations() {
            self.scaled(self.phase1_surface)
        } else {
            self.scaled(self.phase2_surface)
        }
    }

    /// Base rate, halved at 50% and again at 75% of training.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let f = iteration as f64 / self.iterations as f64;
        if f >= 0.75 {
            self.lr * 0.25
        } else if f >= 0.5 {
            self.lr * 0.5
        } else {
            self.lr
        }
    }
}

/// Loss terms of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub recon_c: f64,
    pub recon_f: f64,
    pub surf_c: f64,
    pub surf_f: f64,
    pub total: f64,
    pub lambda_recon: f64,
    pub lambda_surface: f64,
}

impl LossReport {
    /// `λ_recon (L_c + L_f) + λ_surface (S_c + S_f)` recomputed from the terms.
    pub fn weighted_sum(&self) -> f64 {
        self.lambda_recon * (self.recon_c + self.recon_f) + self.lambda_surface * (self.surf_c + self.surf_f)
    }

    /// Finite flags of `[recon_c, recon_f, surf_c, surf_f, total]`.
    pub fn finite(&self) -> [bool; 5] {
        [self.recon_c, self.recon_f, self.surf_c, self.surf_f, self.total].map(f64::is_finite)
    }

    pub fn all_finite(&self) -> bool {
        self.finite().iter().all(|&f| f)
    }
}

/// Per-network reconstruction loss: squared colour error summed over
/// channels, averaged over rays. All inputs are `[R, 3]`.
pub fn reconstruction_loss<'t, T: Real>(
    pred_c: Var<'t, T>,
    pred_f: Var<'t, T>,
    gt: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let s = gt.shape();
    if pred_c.shape() != s || pred_f.shape() != s || s.len() != 2 || s[1] != 3 {
        return Err(config(format!(
            "reconstruction batches must share an [R, 3] shape: {:?} {:?} {s:?}",
            pred_c.shape(),
            pred_f.shape()
        )));
    }
    let inv = 1.0 / s[0].max(1) as f64;
    let term = |p: Var<'t, T>| -> Result<Var<'t, T>> { Ok(p.sub(gt)?.square().sum().scale(inv)) };
    Ok((term(pred_c)?, term(pred_f)?))
}

/// `α̂ = 1 - exp(-σ̂ δ)`.
pub fn opacity<'t, T: Real>(sigma: Var<'t, T>, delta: f64) -> Var<'t, T> {
    sigma.scale(-delta).exp().neg().add_scalar(1.0)
}

/// One network's surface loss: `mean(‖ĉ - c‖² + |α̂ - α|)` with `rgb`
/// `[P, 3]` and `alpha` `[P]`.
pub fn surface_term<'t, T: Real>(rgb: Var<'t, T>, alpha: Var<'t, T>, batch: &SurfaceBatch) -> Result<Var<'t, T>> {
    let p = batch.samples.len();
    if rgb.shape() != [p, 3] || alpha.shape() != [p] {
        return Err(Error::Arity {
            expected: p,
            got: alpha.numel(),
        });
    }
    let tape = rgb.tape();
    let colors = tape.constant(Tensor::from_fn([p, 3], |i| {
        T::from_f64(batch.samples[i / 3].color[i % 3] as f64)
    }));
    let targets = tape.constant(Tensor::from_fn([p], |i| T::from_f64(batch.samples[i].alpha_target)));
    let inv = 1.0 / p.max(1) as f64;
    let color = rgb.sub(colors)?.square().sum();
    let alpha = alpha.sub(targets)?.abs().sum();
    Ok(color.add(alpha)?.scale(inv))
}

/// Surface loss for the coarse and fine networks from their `(rgb, α̂)`.
pub fn surface_loss<'t, T: Real>(
    coarse: (Var<'t, T>, Var<'t, T>),
    fine: (Var<'t, T>, Var<'t, T>),
    batch: &SurfaceBatch,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    Ok((
        surface_term(coarse.0, coarse.1, batch)?,
        surface_term(fine.0, fine.1, batch)?,
    ))
}

/// One training character with its precomputed sampling tables.
struct Scene<T> {
    dataset: Arc<Dataset>,
    views: SourceViews,
    sampler: Option<SurfaceSampler>,
    /// `(view, pixel)` pairs usable for ray supervision.
    all: Vec<(u32, u32)>,
    /// Subset of `all` whose 3×3 neighbourhood is not pure background.
    foreground: Vec<(u32, u32)>,
    /// Held-out `(view, pixel)` pairs scored during validation.
    validation: Vec<(u32, u32)>,
    /// Cached feature map when the encoder is frozen.
    frozen_map: Option<Tensor<T>>,
}

fn is_background(c: [f32; 3]) -> bool {
    c.iter().all(|&v| v > 0.999)
}

impl<T: Real> Scene<T> {
    fn new(dataset: Arc<Dataset>, cfg: &TrainConfig, need_mesh: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        let ci = dataset.concept.indices();
        let views = SourceViews::new(
            ci.map(|i| dataset.images[i].clone()),
            ci.map(|i| dataset.cameras[i].clone()),
        )?;
        let sampler = if need_mesh {
            Some(SurfaceSampler::new(Arc::new(dataset.load_mesh()?), cfg.flat_fallback)?)
        } else {
            None
        };
        let held: Vec<usize> = held_out_views(dataset.len(), cfg.hold_out_every)
            .into_iter()
            .filter(|i| !ci.contains(i))
            .collect();
        let (w, h) = (dataset.intrinsics.width as usize, dataset.intrinsics.height as usize);
        let mut all = Vec::new();
        let mut foreground = Vec::new();
        let mut held_pixels = Vec::new();
        for (vi, img) in dataset.images.iter().enumerate() {
            let pairs = (0..w * h).map(|p| (vi as u32, p as u32));
            if held.contains(&vi) {
                held_pixels.extend(pairs);
                continue;
            }
            all.extend(pairs);
            for y in 0..h {
                for x in 0..w {
                    let near = (y.saturating_sub(1)..(y + 2).min(h))
                        .flat_map(|yy| (x.saturating_sub(1)..(x + 2).min(w)).map(move |xx| (xx, yy)))
                        .any(|(xx, yy)| !is_background(img.get(xx, yy)));
                    if near {
                        foreground.push((vi as u32, (y * w + x) as u32));
                    }
                }
            }
        }
        if all.is_empty() {
            return Err(config("every view is held out; nothing left to train on"));
        }
        let validation = if held_pixels.is_empty() {
            Vec::new()
        } else {
            (0..cfg.val_pixels)
                .map(|_| held_pixels[rng.random_range(0..held_pixels.len())])
                .collect()
        };
        Ok(Self {
            dataset,
            views,
            sampler,
            all,
            foreground,
            validation,
            frozen_map: None,
        })
    }

    fn ray(&self, (view, pixel): (u32, u32)) -> Result<(Ray, [f32; 3])> {
        let w = self.dataset.intrinsics.width;
        let (u, v) = (pixel % w, pixel / w);
        let ray = self.dataset.cameras[view as usize].pixel_to_ray(u as f64, v as f64)?;
        Ok((ray, self.dataset.images[view as usize].get(u as usize, v as usize)))
    }

    fn pick(&self, fg_fraction: f64, rng: &mut ChaCha8Rng) -> (u32, u32) {
        if !self.foreground.is_empty() && rng.random::<f64>() < fg_fraction {
            self.foreground[rng.random_range(0..self.foreground.len())]
        } else {
            self.all[rng.random_range(0..self.all.len())]
        }
    }
}

/// What a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub reports: Vec<LossReport>,
    /// `(iteration, PSNR)` of every validation pass.
    pub validation: Vec<(usize, f64)>,
    pub checkpoint: Option<PathBuf>,
    pub seconds: f64,
}

impl TrainSummary {
    pub fn final_val_psnr(&self) -> Option<f64> {
        self.validation.last().map(|v| v.1)
    }
}

/// Optional run directory receiving the metrics CSV and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
}

impl RunOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    fn checkpoint_path(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(CHECKPOINT_FILE))
    }
}

struct MetricsLog {
    writer: Option<csv::Writer<std::fs::File>>,
    path: PathBuf,
}

impl MetricsLog {
    fn open(out: &RunOutput) -> Result<Self> {
        let Some(dir) = &out.dir else {
            return Ok(Self {
                writer: None,
                path: PathBuf::new(),
            });
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let fresh = std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer
                .write_record(METRICS_HEADER)
                .map_err(|e| Error::format(&path, e.to_string()))?;
        }
        Ok(Self {
            writer: Some(writer),
            path,
        })
    }

    fn row(&mut self, iteration: usize, r: &LossReport, val: Option<f64>, wall: f64) -> Result<()> {
        let Some(w) = &mut self.writer else { return Ok(()) };
        let rec = [
            iteration.to_string(),
            r.recon_c.to_string(),
            r.recon_f.to_string(),
            r.surf_c.to_string(),
            r.surf_f.to_string(),
            r.total.to_string(),
            val.map(|v| v.to_string()).unwrap_or_default(),
            format!("{wall:.3}"),
        ];
        w.write_record(&rec).map_err(|e| Error::format(&self.path, e.to_string()))?;
        w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub const METRICS_HEADER: [&str; 8] = [
    "iteration",
    "recon_coarse",
    "recon_fine",
    "surface_coarse",
    "surface_fine",
    "total",
    "val_psnr",
    "wall_s",
];

/// Parsed metrics row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub report: [f64; 5],
    pub val_psnr: Option<f64>,
    pub wall_s: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let bad = |what: &str| Error::format(path, format!("bad {what}"));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if rec.len() != METRICS_HEADER.len() {
            return Err(bad("column count"));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(METRICS_HEADER[i]));
        rows.push(MetricsRow {
            iteration: rec[0].parse().map_err(|_| bad("iteration"))?,
            report: [num(1)?, num(2)?, num(3)?, num(4)?, num(5)?],
            val_psnr: if rec[6].is_empty() { None } else { Some(num(6)?) },
            wall_s: num(7)?,
        });
    }
    Ok(rows)
}

fn encoder_frozen<T: Real>(store: &ParamStore<T>) -> bool {
    !store.iter().any(|(_, p)| p.trainable && p.name.starts_with("encoder."))
}

fn to_tensor<T: Real>(rows: &[[f32; 3]]) -> Tensor<T> {
    Tensor::from_fn([rows.len(), 3], |i| T::from_f64(rows[i / 3][i % 3] as f64))
}

/// Fine-network PSNR over the scene's held-out validation pixels.
fn validate_scene<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    scene: &Scene<T>,
    cfg: &TrainConfig,
) -> Result<Option<f64>> {
    if scene.validation.is_empty() {
        return Ok(None);
    }
    let map = model.encode_detached(store, &scene.views)?;
    let aabb = scene.dataset.intrinsics.aabb_scale;
    let mut sq = 0.0;
    for (k, chunk) in scene.validation.chunks(cfg.render.chunk).enumerate() {
        let mut rays = Vec::with_capacity(chunk.len());
        let mut gt = Vec::with_capacity(chunk.len());
        for &pair in chunk {
            let (r, c) = scene.ray(pair)?;
            rays.push(r);
            gt.push(c);
        }
        let mut rngs: Vec<ChaCha8Rng> = (0..chunk.len())
            .map(|i| ChaCha8Rng::seed_from_u64(cfg.seed ^ ((k * cfg.render.chunk + i) as u64).wrapping_mul(0x9E37_79B9)))
            .collect();
        let tape = Tape::no_grad();
        let m = tape.constant(map.clone());
        let out = render_rays(model, &tape, store, m, &scene.views, aabb, &rays, &mut rngs, &cfg.render, false)?;
        let v = out.fine.color.value();
        for (i, c) in gt.iter().enumerate() {
            for ch in 0..3 {
                let d = v.data()[i * 3 + ch].as_f64() - c[ch] as f64;
                sq += d * d;
            }
        }
    }
    Ok(Some(psnr_from_mse(sq / (3 * scene.validation.len()) as f64, 1.0)))
}

/// Mean validation PSNR over all scenes that have held-out views.
fn validate_all<T: Real>(model: &Model, store: &ParamStore<T>, scenes: &[Scene<T>], cfg: &TrainConfig) -> Result<Option<f64>> {
    let mut vals = Vec::new();
    for s in scenes {
        if let Some(v) = validate_scene(model, store, s, cfg)? {
            vals.push(v);
        }
    }
    Ok((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64))
}

/// Train every trainable parameter of `store` on `datasets`, one character
/// per iteration in round-robin order.
///
/// Subnormal floats are flushed to zero for the duration of the run; they
/// appear in the gradients of fully occluded samples and slow every kernel
/// they touch by an order of magnitude.
pub fn train<T: Real>(
    model: &Model,
    store: &mut ParamStore<T>,
    datasets: &[Arc<Dataset>],
    cfg: &TrainConfig,
    out: &RunOutput,
) -> Result<TrainSummary> {
    // SAFETY: the closure only does ordinary float arithmetic; flushing
    // subnormals changes results below f32's normal range and nothing else.
    unsafe { no_denormals::no_denormals(|| train_impl(model, store, datasets, cfg, out)) }
}

fn train_impl<T: Real>(
    model: &Model,
    store: &mut ParamStore<T>,
    datasets: &[Arc<Dataset>],
    cfg: &TrainConfig,
    out: &RunOutput,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(config("no training datasets"));
    }
    let res = model.config.encoder.input_res;
    for d in datasets {
        if d.intrinsics.width as usize != res || d.intrinsics.height as usize != res {
            return Err(config(format!(
                "dataset {} has {}x{} images but the encoder expects {res}x{res}",
                d.dir.display(),
                d.intrinsics.width,
                d.intrinsics.height
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let need_mesh = cfg.lambda_surface > 0.0;
    let mut scenes = datasets
        .iter()
        .map(|d| Scene::new(Arc::clone(d), cfg, need_mesh, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let frozen = encoder_frozen(store);
    if frozen {
        for s in &mut scenes {
            s.frozen_map = Some(model.encode_detached(store, &s.views)?);
        }
    }

    let mut log = MetricsLog::open(out)?;
    let mut adam = Adam::new(AdamConfig::default());
    let mut reports = Vec::with_capacity(cfg.iterations);
    let mut validation = Vec::new();
    let mut last_good = store.clone();
    let start = Instant::now();
    let mut checkpoint = None;

    for it in 0..cfg.iterations {
        let scene = &scenes[it % scenes.len()];
        let report = {
            let tape = Tape::new();
            let map = match &scene.frozen_map {
                Some(m) => tape.constant(m.clone()),
                None => model.encode(&tape, store, &scene.views)?,
            };
            let aabb = scene.dataset.intrinsics.aabb_scale;

            let n_ray = cfg.n_ray(it);
            let mut rays = Vec::with_capacity(n_ray);
            let mut gt = Vec::with_capacity(n_ray);
            let mut rngs = Vec::with_capacity(n_ray);
            for _ in 0..n_ray {
                let (r, c) = scene.ray(scene.pick(cfg.foreground_fraction, &mut rng))?;
                rays.push(r);
                gt.push(c);
                rngs.push(ChaCha8Rng::seed_from_u64(rng.random()));
            }
            let pred = render_rays(model, &tape, store, map, &scene.views, aabb, &rays, &mut rngs, &cfg.render, false)?;
            let gt = tape.constant(to_tensor(&gt));
            let (lc, lf) = reconstruction_loss(pred.coarse, pred.fine.color, gt)?;

            let (sc, sf) = match &scene.sampler {
                Some(sampler) => {
                    let delta = scene_delta(aabb, cfg.render.n_coarse, cfg.render.n_fine);
                    let batch = sampler.batch(cfg.n_surface(it), delta, &mut rng)?;
                    surface_losses(model, &tape, store, map, &scene.views, aabb, &batch)?
                }
                None => {
                    let zero = tape.constant(Tensor::scalar(T::zero()));
                    (zero, zero)
                }
            };
            let total = lc
                .add(lf)?
                .scale(cfg.lambda_recon)
                .add(sc.add(sf)?.scale(cfg.lambda_surface))?;
            let item = |v: Var<'_, T>| v.value().data()[0].as_f64();
            let report = LossReport {
                recon_c: item(lc),
                recon_f: item(lf),
                surf_c: item(sc),
                surf_f: item(sf),
                total: item(total),
                lambda_recon: cfg.lambda_recon,
                lambda_surface: cfg.lambda_surface,
            };
            if !report.all_finite() {
                halt(model, &last_good, out)?;
                return Err(Error::Numeric(format!("loss became non-finite at iteration {it}: {report:?}")));
            }
            let grads = tape.backward(total)?;
            last_good = store.clone();
            if let Err(e) = adam.step(store, &grads, cfg.lr_at(it)) {
                halt(model, &last_good, out)?;
                return Err(Error::Numeric(format!("iteration {it}: {e}")));
            }
            report
        };

        let done = it + 1;
        let val = if (cfg.val_every > 0 && done % cfg.val_every == 0) || done == cfg.iterations {
            let v = validate_all(model, store, &scenes, cfg)?;
            if let Some(v) = v {
                validation.push((done, v));
            }
            v
        } else {
            None
        };
        let wall = start.elapsed().as_secs_f64();
        log.row(done, &report, val, wall)?;
        if done % 50 == 0 || done == cfg.iterations {
            log::info!(
                "iter {done}/{} total {:.5} recon_f {:.5} surf_f {:.5}{} ({wall:.0}s)",
                cfg.iterations,
                report.total,
                report.recon_f,
                report.surf_f,
                val.map(|v| format!(" val {v:.2} dB")).unwrap_or_default()
            );
        }
        reports.push(report);
        if let Some(path) = out.checkpoint_path() {
            if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.iterations {
                model.save(store, &path)?;
                checkpoint = Some(path);
            }
        }
    }
    Ok(TrainSummary {
        reports,
        validation,
        checkpoint,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn halt<T: Real>(model: &Model, last_good: &ParamStore<T>, out: &RunOutput) -> Result<()> {
    if let Some(path) = out.checkpoint_path() {
        model.save(last_good, &path)?;
    }
    Ok(())
}

/// Query both networks at the surface samples with a zero view direction.
#[allow(clippy::too_many_arguments)]
fn surface_losses<'t, T: Real>(
    model: &Model,
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    map: Var<'t, T>,
    views: &SourceViews,
    aabb_scale: f64,
    batch: &SurfaceBatch,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let points: Vec<Vec3> = batch.samples.iter().map(|s| s.point).collect();
    let dirs: Vec<Vec3> = batch.samples.iter().map(|s| s.view_dir).collect();
    let uv = views.project_all(&points);
    let features = sample_features(map, &uv, views.width(), views.height())?;
    let source_dirs = views.directions();
    let input = FieldInput {
        points: &points,
        dirs: &dirs,
        source_dirs: &source_dirs,
        aabb_scale,
    };
    let c = model.coarse.forward(tape, store, features, &input)?;
    let f = model.fine.forward(tape, store, features, &input)?;
    surface_loss(
        (c.rgb, opacity(c.sigma, batch.delta)),
        (f.rgb, opacity(f.sigma, batch.delta)),
        batch,
    )
}

/// Parameter prefixes left trainable by [`finetune_scene`].
pub fn finetune_prefixes() -> [String; 2] {
    [format!("{COARSE_PREFIX}.f2."), format!("{FINE_PREFIX}.f2.")]
}

/// Freeze the encoder, single-view MLPs and combinators and optimize only
/// the multi-view MLPs of both networks on one character.
pub fn finetune_scene<T: Real>(
    model: &Model,
    store: &mut ParamStore<T>,
    dataset: Arc<Dataset>,
    cfg: &TrainConfig,
    out: &RunOutput,
) -> Result<TrainSummary> {
    store.set_all_trainable(false);
    for p in finetune_prefixes() {
        if store.set_trainable_prefix(&p, true) == 0 {
            return Err(config(format!("checkpoint has no parameters under `{p}`")));
        }
    }
    let result = train(model, store, &[dataset], cfg, out);
    store.set_all_trainable(true);
    result
}

/// Validation PSNR of a model on one dataset's held-out views, using the
/// same pixel selection as training.
pub fn validation_psnr<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    dataset: Arc<Dataset>,
    cfg: &TrainConfig,
) -> Result<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene = Scene::<T>::new(dataset, cfg, false, &mut rng)?;
    validate_scene(model, store, &scene, cfg)
}
