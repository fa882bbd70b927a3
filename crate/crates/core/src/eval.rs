//! Per-view quality reports binned by azimuth, and attention-logit sweeps
//! around a character.

use std::path::Path;

use diffcore::{ParamStore, Real};

use crate::dataset::Dataset;
use crate::error::{config, Error, Result};
use crate::field::{Combinator, HeadLogits};
use crate::geometry::{orbit_pose, Camera, Intrinsics};
use crate::metrics::{psnr, ssim};
use crate::model::{Model, SourceViews};
use crate::rendering::{render_image, render_image_traced, RenderSettings};

#[derive(Clone, Debug, PartialEq)]
pub struct ViewMetric {
    pub view: usize,
    pub azimuth_deg: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean metrics of the views whose azimuth falls in `[start, end)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AzimuthBin {
    pub start_deg: f64,
    pub end_deg: f64,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub views: Vec<ViewMetric>,
    pub bins: Vec<AzimuthBin>,
}

/// Half-open bins `[k·step, (k+1)·step)` covering `[0, 360)`; the last bin
/// is clipped at 360.
pub fn azimuth_bins(step_deg: f64) -> Result<Vec<(f64, f64)>> {
    if !(step_deg > 0.0 && step_deg <= 360.0) {
        return Err(config(format!("azimuth step {step_deg} must lie in (0, 360]")));
    }
    let n = (360.0 / step_deg).ceil() as usize;
    Ok((0..n)
        .map(|k| (k as f64 * step_deg, ((k + 1) as f64 * step_deg).min(360.0)))
        .collect())
}

fn bin_of(az: f64, step: f64, n: usize) -> usize {
    ((az.rem_euclid(360.0) / step).floor() as usize).min(n - 1)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl MetricReport {
    pub fn from_views(views: Vec<ViewMetric>, step_deg: f64) -> Result<Self> {
        let edges = azimuth_bins(step_deg)?;
        let bins = edges
            .iter()
            .enumerate()
            .map(|(b, &(start_deg, end_deg))| {
                let members: Vec<&ViewMetric> = views
                    .iter()
                    .filter(|v| bin_of(v.azimuth_deg, step_deg, edges.len()) == b)
                    .collect();
                AzimuthBin {
                    start_deg,
                    end_deg,
                    count: members.len(),
                    psnr: mean(members.iter().map(|v| v.psnr)),
                    ssim: mean(members.iter().map(|v| v.ssim)),
                }
            })
            .collect();
        Ok(Self { views, bins })
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.views.iter().map(|v| v.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.views.iter().map(|v| v.ssim))
    }

    /// Per-view rows: `view,azimuth_deg,psnr,ssim`.
    pub fn write_views_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let err = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["view", "azimuth_deg", "psnr", "ssim"]).map_err(err)?;
        for v in &self.views {
            w.write_record([v.view.to_string(), v.azimuth_deg.to_string(), v.psnr.to_string(), v.ssim.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Per-bin rows: `start_deg,end_deg,count,psnr,ssim` (empty bins hold NaN).
    pub fn write_bins_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let err = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["start_deg", "end_deg", "count", "psnr", "ssim"]).map_err(err)?;
        for b in &self.bins {
            w.write_record([
                b.start_deg.to_string(),
                b.end_deg.to_string(),
                b.count.to_string(),
                b.psnr.to_string(),
                b.ssim.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Rebuild a report from a per-view CSV.
    pub fn read_views_csv(path: &Path, step_deg: f64) -> Result<Self> {
        let rows = read_rows(path, 4)?;
        let views = rows
            .iter()
            .map(|r| -> Result<ViewMetric> {
                Ok(ViewMetric {
                    view: parse(path, &r[0])?,
                    azimuth_deg: parse(path, &r[1])?,
                    psnr: parse(path, &r[2])?,
                    ssim: parse(path, &r[3])?,
                })
            })
            .collect::<Result<_>>()?;
        Self::from_views(views, step_deg)
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    })
}

fn read_rows(path: &Path, columns: usize) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if rec.len() != columns {
            return Err(Error::format(path, format!("expected {columns} columns, got {}", rec.len())));
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn parse<V: std::str::FromStr>(path: &Path, s: &str) -> Result<V> {
    s.parse().map_err(|_| Error::format(path, format!("bad value `{s}`")))
}

/// Render each of `views` of `dataset` from its three concept-art inputs and
/// score it against the stored image.
#[allow(clippy::too_many_arguments)]
pub fn eval_sweep<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    dataset: &Dataset,
    views: &[usize],
    settings: &RenderSettings,
    azimuth_step: f64,
    seed: u64,
) -> Result<MetricReport> {
    if views.is_empty() {
        return Err(config("no views to evaluate"));
    }
    let sources = concept_views(dataset)?;
    let map = model.encode_detached(store, &sources)?;
    let aabb = dataset.intrinsics.aabb_scale;
    let mut rows = Vec::with_capacity(views.len());
    for &v in views {
        let cam = dataset
            .cameras
            .get(v)
            .ok_or_else(|| config(format!("view {v} out of range")))?;
        let img = render_image(model, store, &sources, &map, cam, aabb, settings, seed)?;
        let gt = &dataset.images[v];
        rows.push(ViewMetric {
            view: v,
            azimuth_deg: cam.pose.azimuth_deg(),
            psnr: psnr(&img, gt, 1.0)?,
            ssim: ssim(&img, gt)?,
        });
    }
    MetricReport::from_views(rows, azimuth_step)
}

/// The three concept-art images and cameras of a dataset.
pub fn concept_views(dataset: &Dataset) -> Result<SourceViews> {
    let ci = dataset.concept.indices();
    SourceViews::new(
        ci.map(|i| dataset.images[i].clone()),
        ci.map(|i| dataset.cameras[i].clone()),
    )
}

/// Weighted mean head logits of a render at one azimuth.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRow {
    pub azimuth_deg: f64,
    pub heads: Vec<HeadLogits>,
}

impl AttentionRow {
    /// Sum of the view parts over heads.
    pub fn view(&self) -> f64 {
        self.heads.iter().map(|h| h.view).sum()
    }

    pub fn feature(&self) -> f64 {
        self.heads.iter().map(|h| h.feature).sum()
    }

    pub fn total(&self) -> f64 {
        self.heads.iter().map(|h| h.total).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub rows: Vec<AttentionRow>,
}

impl AttentionTrace {
    /// Long format: `azimuth_deg,head,feature,view,total`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let err = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["azimuth_deg", "head", "feature", "view", "total"]).map_err(err)?;
        for r in &self.rows {
            for (h, l) in r.heads.iter().enumerate() {
                w.write_record([
                    r.azimuth_deg.to_string(),
                    h.to_string(),
                    l.feature.to_string(),
                    l.view.to_string(),
                    l.total.to_string(),
                ])
                .map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rows: Vec<AttentionRow> = Vec::new();
        for r in read_rows(path, 5)? {
            let az: f64 = parse(path, &r[0])?;
            let head: usize = parse(path, &r[1])?;
            let l = HeadLogits {
                feature: parse(path, &r[2])?,
                view: parse(path, &r[3])?,
                total: parse(path, &r[4])?,
            };
            match rows.last_mut() {
                Some(last) if last.azimuth_deg.to_bits() == az.to_bits() && head == last.heads.len() => {
                    last.heads.push(l)
                }
                _ if head == 0 => rows.push(AttentionRow {
                    azimuth_deg: az,
                    heads: vec![l],
                }),
                _ => return Err(Error::format(path, format!("head {head} out of order at azimuth {az}"))),
            }
        }
        Ok(Self { rows })
    }
}

/// Orbit cameras at `elevation_deg` for azimuths `0, step, …, 360`
/// (both ends included) rendered with the attention trace enabled.
#[allow(clippy::too_many_arguments)]
pub fn attention_sweep<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    views: &SourceViews,
    intrinsics: &Intrinsics,
    radius: f64,
    elevation_deg: f64,
    azimuth_step: f64,
    settings: &RenderSettings,
    seed: u64,
) -> Result<AttentionTrace> {
    if model.config.field.combinator != Combinator::Mha {
        return Err(Error::Unsupported(
            "attention analysis requires the mha combinator".into(),
        ));
    }
    if !(azimuth_step > 0.0 && azimuth_step <= 360.0) {
        return Err(config(format!("azimuth step {azimuth_step} must lie in (0, 360]")));
    }
    let map = model.encode_detached(store, views)?;
    let n = (360.0 / azimuth_step).round() as usize;
    let mut rows = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let az = (k as f64 * azimuth_step).min(360.0);
        let cam = Camera::new(intrinsics.clone(), orbit_pose(az, elevation_deg, radius))?;
        let (_, trace) = render_image_traced(
            model,
            store,
            views,
            &map,
            &cam,
            intrinsics.aabb_scale,
            settings,
            seed,
        )?;
        rows.push(AttentionRow {
            azimuth_deg: az,
            heads: trace.means(),
        });
    }
    Ok(AttentionTrace { rows })
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// `cos x + cos(x − 90°) + cos(x − 180°)` for the front/side/back sources.
pub fn source_alignment_curve(azimuth_deg: f64) -> f64 {
    [0.0f64, 90.0, 180.0]
        .iter()
        .map(|s| (azimuth_deg - s).to_radians().cos())
        .sum()
}
