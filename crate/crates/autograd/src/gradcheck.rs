//! Central finite-difference checks against reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Perturbation size.
    pub eps: f64,
    /// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Upper bound on checked entries per tensor; 0 checks every entry.
    pub max_entries: usize,
}

impl GradCheckConfig {
    /// 64-bit check mode.
    pub fn f64_default() -> Self {
        Self {
            eps: 1e-6,
            floor: 1e-6,
            max_entries: 0,
        }
    }

    /// 32-bit check mode. Central differences at this step carry roughly
    /// 1e-4 absolute roundoff, so gradients below the floor are compared
    /// absolutely.
    pub fn f32_default() -> Self {
        Self {
            eps: 1e-2,
            floor: 1e-1,
            max_entries: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// False when any evaluation produced a non-finite value.
    pub finite: bool,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
            finite: true,
            worst: None,
        }
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.finite && self.checked > 0 && self.max_rel_error < tol
    }

    fn record(&mut self, tensor: &str, index: usize, analytic: f64, numeric: f64, floor: f64) {
        self.checked += 1;
        if !analytic.is_finite() || !numeric.is_finite() {
            self.finite = false;
            return;
        }
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
        self.max_abs_error = self.max_abs_error.max(abs);
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some(Mismatch {
                tensor: tensor.to_string(),
                index,
                analytic,
                numeric,
            });
        }
    }
}

fn entries(len: usize, max_entries: usize) -> Vec<usize> {
    if max_entries == 0 || len <= max_entries {
        return (0..len).collect();
    }
    let stride = len as f64 / max_entries as f64;
    (0..max_entries)
        .map(|i| ((i as f64 * stride) as usize).min(len - 1))
        .collect()
}

/// Checks `d f(x) / dx` for a scalar-valued `f`.
pub fn gradient_check<F, Fun>(f: Fun, x: &Tensor<F>, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Real,
    Fun: for<'g> Fn(&'g Graph<F>, Var<'g, F>) -> Result<Var<'g, F>>,
{
    let analytic = {
        let g = Graph::new();
        let xv = g.param(x.clone());
        let loss = f(&g, xv)?;
        let grads = g.backward(loss)?;
        grads.get_or_zeros(xv)
    };
    let eval = |t: Tensor<F>| -> Result<f64> {
        let g = Graph::new();
        let xv = g.constant(t);
        Ok(f(&g, xv)?.item().to_f64_lossy())
    };
    let mut report = GradCheckReport::new();
    let eps = F::lit(cfg.eps);
    for i in entries(x.len(), cfg.max_entries) {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * cfg.eps);
        report.record("x", i, analytic.data()[i].to_f64_lossy(), numeric, cfg.floor);
    }
    Ok(report)
}

/// Checks the gradient of a scalar loss with respect to every parameter in a store.
pub fn gradient_check_params<F, Fun>(
    f: Fun,
    params: &ParamStore<F>,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Real,
    Fun: for<'g> Fn(&'g Graph<F>, &Bound<'g, F>) -> Result<Var<'g, F>>,
{
    let analytic = {
        let g = Graph::new();
        let bound = params.bind(&g, |_| true);
        let loss = f(&g, &bound)?;
        bound.gradients(&g.backward(loss)?)
    };
    let eval = |p: &ParamStore<F>| -> Result<f64> {
        let g = Graph::new();
        let bound = p.bind(&g, |_| false);
        Ok(f(&g, &bound)?.item().to_f64_lossy())
    };
    let mut report = GradCheckReport::new();
    let eps = F::lit(cfg.eps);
    let mut work = params.clone();
    for (name, value) in params.iter() {
        let grad = analytic
            .get(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(value.shape()));
        for i in entries(value.len(), cfg.max_entries) {
            let orig = value.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.eps);
            report.record(name, i, grad.data()[i].to_f64_lossy(), numeric, cfg.floor);
        }
    }
    Ok(report)
}
