//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-tensor comparison of analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over the
    /// probed coordinates, in the L2 norm.
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub probes: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }
}

/// Norm floor below which both gradients count as zero.
const FLOOR: f64 = 1e-10;

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(FLOOR)
}

/// Check gradients of a scalar function of plain tensor inputs.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("input{i}"), t.clone()))
        .collect();
    check_params(&store, &ids, h, usize::MAX, |tape, store| {
        let vars: Vec<_> = ids.iter().map(|&id| tape.param(store, id)).collect();
        f(tape, &vars)
    })
}

/// Check gradients with respect to the listed parameters of `store`.
/// At most `max_probes` evenly spaced coordinates per tensor are perturbed.
pub fn check_params<F>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    h: f64,
    max_probes: usize,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let loss = f(&tape, store)?;
    let grads = tape.backward(loss)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let t = Tape::no_grad();
        Ok(f(&t, s)?.value().item())
    };
    let mut work = store.clone();
    let mut entries = Vec::new();
    for &id in ids {
        let base = store.value(id).clone();
        let n = base.numel();
        let zeros = Tensor::zeros(base.shape().to_vec());
        let analytic = grads.param(id).unwrap_or(&zeros);
        let stride = n.div_ceil(max_probes.max(1)).max(1);
        let coords: Vec<usize> = (0..n).step_by(stride).collect();
        let mut a = Vec::with_capacity(coords.len());
        let mut num = Vec::with_capacity(coords.len());
        for &c in &coords {
            let mut plus = (*base).clone();
            plus.data_mut()[c] += h;
            work.set_value(id, plus)?;
            let fp = eval(&work)?;
            let mut minus = (*base).clone();
            minus.data_mut()[c] -= h;
            work.set_value(id, minus)?;
            let fm = eval(&work)?;
            num.push((fp - fm) / (2.0 * h));
            a.push(analytic.data()[c]);
        }
        work.set_value(id, (*base).clone())?;
        entries.push(GradCheck {
            name: store.get(id).name.clone(),
            rel_err: rel_err(&a, &num),
            analytic_norm: a.iter().map(|x| x * x).sum::<f64>().sqrt(),
            probes: coords.len(),
        });
    }
    Ok(GradCheckReport { entries })
}
