//! Image quality metrics.

use crate::error::{config, Result};
use crate::imageio::RgbImage;

fn check_shapes(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(config(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n
}

/// `10·log10(peak² / MSE)`; `+∞` for identical inputs.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(psnr_from_mse(mse(&a.data, &b.data), peak))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the pixel values.
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable filter over the valid region: `h × w` → `(h−k+1) × (w−k+1)`.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (wo, ho) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        let row = &x[y * w..(y + 1) * w];
        for xo in 0..wo {
            tmp[y * wo + xo] = k.iter().zip(&row[xo..xo + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for xo in 0..wo {
            out[yo * wo + xo] = (0..n).map(|i| k[i] * tmp[(yo + i) * wo + xo]).sum();
        }
    }
    out
}

/// Mean SSIM of one channel plane.
pub fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, p: &SsimParams) -> f64 {
    let k = gaussian_kernel(p.window, p.sigma);
    let c1 = (p.k1 * p.range).powi(2);
    let c2 = (p.k2 * p.range).powi(2);
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u * v).collect() };
    let e_aa = filter_valid(&prod(a, a), w, h, &k);
    let e_bb = filter_valid(&prod(b, b), w, h, &k);
    let e_ab = filter_valid(&prod(a, b), w, h, &k);
    let n = mu_a.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    acc / n as f64
}

/// Mean local SSIM with a Gaussian window, averaged over the RGB channels.
pub fn ssim_with(a: &RgbImage, b: &RgbImage, p: &SsimParams) -> Result<f64> {
    check_shapes(a, b)?;
    if a.width < p.window || a.height < p.window {
        return Err(config(format!(
            "image {}x{} smaller than the {}-pixel SSIM window",
            a.width, a.height, p.window
        )));
    }
    let total: f64 = (0..3)
        .map(|c| ssim_plane(&a.channel(c), &b.channel(c), a.width, a.height, p))
        .sum();
    Ok(total / 3.0)
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}
