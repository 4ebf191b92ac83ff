//! Central finite-difference gradient checks against the reverse sweep.

use crate::error::Result;

use super::graph::{Graph, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradTolerance {
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for GradTolerance {
    fn default() -> Self {
        GradTolerance { step: 1e-5, rtol: 1e-4, atol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.mismatches.is_empty()
    }
}

fn eval<F>(loss_fn: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss_fn(&mut g, store)?;
    Ok(g.value(l)[0])
}

/// Compares every parameter gradient of `loss_fn` with a central difference.
/// `stride` > 1 checks only every `stride`-th scalar of each tensor.
pub fn check_gradients<F>(store: &mut ParamStore, loss_fn: F, tol: GradTolerance, stride: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    g.backward(loss, store)?;
    drop(g);
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, t)| t.grad_or_zeros()).collect();
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();

    let mut report = GradCheckReport::default();
    for (pid, name) in names.iter().enumerate() {
        let n = store.by_id(pid).numel();
        for idx in (0..n).step_by(stride.max(1)) {
            let orig = store.by_id(pid).data[idx];
            store.by_id_mut(pid).data[idx] = orig + tol.step;
            let up = eval(&loss_fn, store)?;
            store.by_id_mut(pid).data[idx] = orig - tol.step;
            let down = eval(&loss_fn, store)?;
            store.by_id_mut(pid).data[idx] = orig;
            let numeric = (up - down) / (2.0 * tol.step);
            let a = analytic[pid][idx];
            let err = (a - numeric).abs();
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(err);
            if err > tol.rtol * a.abs().max(numeric.abs()) + tol.atol {
                report.mismatches.push(Mismatch { param: name.clone(), index: idx, analytic: a, numeric });
            }
        }
    }
    Ok(report)
}
