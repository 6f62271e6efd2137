//! Central-difference verification of reverse-mode gradients.

use super::{Graph, Tensor, Var};

/// Denominator floor for the relative error, so that components whose true
/// gradient is ~0 are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst component.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub passed: bool,
    /// Set when a non-finite value was met; names where.
    pub failure: Option<String>,
}

impl GradCheckReport {
    fn failed(msg: String) -> Self {
        Self {
            max_rel_error: f64::INFINITY,
            worst_index: 0,
            analytic: vec![],
            numeric: vec![],
            passed: false,
            failure: Some(msg),
        }
    }
}

/// Relative error `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the reverse-mode gradient of the scalar function `f` at `x`
/// against central differences over every component of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> GradCheckReport
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Var<'g>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    grad_check_at(f, x, step, tol, &all)
}

/// Like [`grad_check`] but only perturbs the listed components.
pub fn grad_check_at<F>(f: F, x: &Tensor, step: f64, tol: f64, indices: &[usize]) -> GradCheckReport
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Var<'g>,
{
    let analytic_full = {
        let g = Graph::new();
        let xv = g.param(x.clone());
        let y = f(&g, xv);
        if y.value().numel() != 1 {
            return GradCheckReport::failed(format!("function output has shape {:?}", y.shape()));
        }
        if !y.item().is_finite() {
            return GradCheckReport::failed("non-finite value at the unperturbed point".into());
        }
        match g.backward(y) {
            Ok(grads) => grads.get(xv),
            Err(e) => return GradCheckReport::failed(e.to_string()),
        }
    };
    if !analytic_full.all_finite() {
        return GradCheckReport::failed("non-finite reverse-mode gradient".into());
    }

    let eval = |xp: Tensor| -> f64 {
        let g = Graph::new();
        let xv = g.constant(xp);
        f(&g, xv).item()
    };

    let mut analytic = Vec::with_capacity(indices.len());
    let mut numeric = Vec::with_capacity(indices.len());
    let mut max_rel = 0.0;
    let mut worst = indices.first().copied().unwrap_or(0);
    for &i in indices {
        let mut xp = x.clone();
        xp.data_mut()[i] += step;
        let fp = eval(xp);
        let mut xm = x.clone();
        xm.data_mut()[i] -= step;
        let fm = eval(xm);
        if !fp.is_finite() || !fm.is_finite() {
            return GradCheckReport::failed(format!("non-finite value perturbing component {i}"));
        }
        let n = (fp - fm) / (2.0 * step);
        let a = analytic_full.data()[i];
        let e = rel_error(a, n);
        if e > max_rel {
            max_rel = e;
            worst = i;
        }
        analytic.push(a);
        numeric.push(n);
    }
    GradCheckReport {
        max_rel_error: max_rel,
        worst_index: worst,
        analytic,
        numeric,
        passed: max_rel < tol,
        failure: None,
    }
}
