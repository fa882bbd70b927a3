//! Independent reference computations shared by the test targets.

use diffcore::gradcheck::check_params;
use diffcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use turnaround::geometry::{Ray, Vec3};
use turnaround::rendering::{coarse_sample, fine_sample, render_pass, PDF_FLOOR, WHITE};

pub fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((observed.len() - 1) as f64).unwrap().cdf(stat)
}

/// Histogram of fine samples over the coarse bins against the normalized
/// `w + floor` masses.
pub fn fine_histogram_p(weights: &[f64], seed: u64) -> f64 {
    let n = weights.len();
    let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let t_far = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = 100_000;
    let mut hist = vec![0.0; n];
    let per_call = 100;
    for _ in 0..draws / per_call {
        let out = fine_sample(&t, weights, t_far, per_call, &mut rng);
        // drop the coarse values themselves (one per integer)
        let mut seen = vec![false; n];
        for x in out {
            let b = (x.floor() as usize).min(n - 1);
            if x == b as f64 && !seen[b] {
                seen[b] = true;
                continue;
            }
            hist[b] += 1.0;
        }
    }
    let mass: Vec<f64> = weights.iter().map(|w| w + PDF_FLOOR).collect();
    let total: f64 = mass.iter().sum();
    let expected: Vec<f64> = mass.iter().map(|m| m / total * draws as f64).collect();
    chi_square_p(&hist, &expected)
}

/// Among all ways of rounding `k` quotas up, the one with the smallest
/// total deviation; ties keep the lexicographically first index set.
pub fn brute_force_allocation(areas: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = areas.iter().sum();
    let q: Vec<f64> = areas.iter().map(|a| n as f64 * a / total).collect();
    let floors: Vec<usize> = q.iter().map(|x| x.floor() as usize).collect();
    let k = n - floors.iter().sum::<usize>();
    let m = areas.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let counts: Vec<usize> = (0..m).map(|i| floors[i] + ((mask >> i) & 1) as usize).collect();
        let dev: f64 = counts.iter().zip(&q).map(|(&c, &x)| (c as f64 - x).abs()).sum();
        if best.as_ref().is_none_or(|(d, _)| dev < *d - 1e-12) {
            best = Some((dev, counts));
        }
    }
    best.unwrap().1
}

pub fn rand_dirs(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize())
        .collect()
}

/// `x · W + b` for row vector `x`.
pub fn affine(x: &[f64], w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<f64> {
    let (n, m) = (w.shape()[0], w.shape()[1]);
    (0..m)
        .map(|j| (0..n).map(|i| x[i] * w.at(&[i, j])).sum::<f64>() + b.map_or(0.0, |b| b.data()[j]))
        .collect()
}

/// Largest relative error of the analytic gradient of three rendered
/// pixels (coarse plus fine network) with respect to encoder weights.
pub fn pixel_to_encoder_rel_err(probes: usize) -> f64 {
    let (model, store) = super::tiny_model(16);
    let views = super::source_views(16);
    let cam = &views.cameras[0];
    let rays: Vec<Option<Ray>> = [(6.0, 7.0), (8.0, 8.0), (9.0, 5.0)]
        .iter()
        .map(|&(u, v)| cam.pixel_to_ray(u, v).unwrap().clip_to_aabb(1.05))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let t: Vec<Vec<f64>> = rays.iter().map(|r| coarse_sample(r.as_ref().unwrap(), 8, &mut rng)).collect();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.name.starts_with("encoder.")).map(|(id, _)| id).collect();
    let report = check_params(&store, &ids, 1e-5, probes, |tape, store| {
        let map = model.encode(tape, store, &views).expect("encode");
        let mut total = None;
        for fld in [&model.coarse, &model.fine] {
            let out = render_pass(fld, tape, store, map, &views, 1.05, &rays, &t, WHITE, false).expect("render");
            let s = out.color.sum();
            total = Some(match total {
                None => s,
                Some(a) => s.add(a)?,
            });
        }
        Ok(total.unwrap())
    })
    .unwrap();
    report.max_rel_err()
}
