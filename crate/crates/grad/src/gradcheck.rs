//! Central finite-difference oracle for checking analytic gradients.
//!
//! Independent of the backward pass: it only ever evaluates the forward
//! function on perturbed constant inputs.

use crate::backward::{grad, GradMode};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::var::Var;

/// Worst-case comparison between analytic and numeric gradients.
#[derive(Clone, Copy, Debug)]
pub struct CheckReport {
    /// `max |a - n| / max(max|n|, floor)` over all inputs.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Numeric gradient of scalar `f` at `inputs[which]` by central differences.
pub fn numeric_grad<F>(f: &F, inputs: &[Tensor], which: usize, step: f64) -> Result<Tensor>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let base = &inputs[which];
    let mut out = vec![0.0; base.len()];
    for (k, o) in out.iter_mut().enumerate() {
        let eval = |delta: f64| -> Result<f64> {
            let mut data = base.to_vec();
            data[k] += delta;
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if i == which {
                        Var::constant(Tensor::new(base.shape().clone(), data.clone()).unwrap())
                    } else {
                        Var::constant(t.clone())
                    }
                })
                .collect();
            Ok(f(&vars)?.item())
        };
        *o = (eval(step)? - eval(-step)?) / (2.0 * step);
    }
    Tensor::new(base.shape().clone(), out)
}

/// Compares `grad(f)` against central differences for every input.
///
/// The relative error is normalised by the largest numeric gradient magnitude
/// of each input (floored at `1e-3`) so isolated near-zero entries do not
/// dominate.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], step: f64) -> Result<CheckReport>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::param).collect();
    let loss = f(&vars)?;
    let analytic = grad(&loss, &vars, GradMode::FirstOrder)?.values();
    let mut report = CheckReport { rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    for (i, a) in analytic.iter().enumerate() {
        let n = numeric_grad(&f, inputs, i, step)?;
        let scale = n.max_abs().max(1e-3);
        for (x, y) in a.data().iter().zip(n.data()) {
            let err = (x - y).abs();
            report.max_abs_err = report.max_abs_err.max(err);
            report.rel_err = report.rel_err.max(err / scale);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Checks second derivatives: the gradient of `<grad f(x), v>` computed by
/// double backward against central differences of the first-order gradient
/// along `v` (a Hessian-vector product), for input `which`.
pub fn check_hessian_vector<F>(
    f: F,
    inputs: &[Tensor],
    which: usize,
    direction: &Tensor,
    step: f64,
) -> Result<CheckReport>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    // analytic: d/dx <g(x), v>
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::param).collect();
    let loss = f(&vars)?;
    let g = grad(&loss, &vars[which..=which], GradMode::CreateGraph)?.grads.remove(0);
    let gv = g.mul(&Var::constant(direction.clone()))?.sum()?;
    let hv = grad(&gv, &vars[which..=which], GradMode::FirstOrder)?.grads.remove(0);

    // numeric: (g(x + h v) - g(x - h v)) / 2h, gradients taken first-order
    let first_grad = |sign: f64| -> Result<Tensor> {
        let shifted = inputs[which].zip_map(direction, |x, d| x + sign * step * d)?;
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| Var::param(if i == which { shifted.clone() } else { t.clone() }))
            .collect();
        let loss = f(&vars)?;
        Ok(grad(&loss, &vars[which..=which], GradMode::FirstOrder)?.grads[0].value().clone())
    };
    let plus = first_grad(1.0)?;
    let minus = first_grad(-1.0)?;
    let numeric = plus.zip_map(&minus, |a, b| (a - b) / (2.0 * step))?;
    let scale = numeric.max_abs().max(1e-3);
    let mut report = CheckReport { rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    for (x, y) in hv.value().data().iter().zip(numeric.data()) {
        let err = (x - y).abs();
        report.max_abs_err = report.max_abs_err.max(err);
        report.rel_err = report.rel_err.max(err / scale);
        report.checked += 1;
    }
    Ok(report)
}
