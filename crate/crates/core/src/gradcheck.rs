//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Maximum relative error per parameter tensor,
    /// `|g_analytic - g_fd| / max(|g_analytic|, |g_fd|, FLOOR)`.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|&e| e < self.tol)
    }

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Central differences of an O(10) loss carry roundoff near `1e-10` at
/// step `1e-5`; entries whose gradient is below this floor are compared
/// absolutely.
const FLOOR: f64 = 1e-6;

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.shape() != (1, 1) {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with the given `step`.
///
/// `f` receives one [`Var`] per entry of `params`, in order, and must be
/// deterministic.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for (pi, &var) in vars.iter().enumerate() {
        let analytic = grads.wrt(var);
        let mut worst = 0.0f64;
        for k in 0..params[pi].len() {
            let x0 = params[pi].data()[k];
            work[pi].data_mut()[k] = x0 + step;
            let up = evaluate(&f, &work)?;
            work[pi].data_mut()[k] = x0 - step;
            let down = evaluate(&f, &work)?;
            work[pi].data_mut()[k] = x0;
            let fd = (up - down) / (2.0 * step);
            if !fd.is_finite() {
                return Err(Error::NonFinite("finite difference".into()));
            }
            let a = analytic.data()[k];
            let rel = (a - fd).abs() / fd.abs().max(a.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
        max_rel_error.push(worst);
    }
    Ok(GradCheckReport { max_rel_error, tol })
}
