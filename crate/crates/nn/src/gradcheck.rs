//! Central finite-difference checks for graph gradients.

use crate::graph::{Graph, NodeId};
use crate::param::ParamSet;
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn weighted_sum(out: &Tensor, w: &Tensor) -> f64 {
    out.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

/// Compare analytic parameter gradients of `L = Σ weights ⊙ build(params)`
/// against central differences with step `h`. Every scalar of every
/// trainable tensor is perturbed.
pub fn check_params<F>(params: &mut ParamSet, weights: &Tensor, h: f64, floor: f64, build: F) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId, NnError>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let out = build(&mut g)?;
        g.backward(&[(out, weights)])?
    };
    let eval = |ps: &ParamSet| -> Result<f64, NnError> {
        let mut g = Graph::new(ps);
        let out = build(&mut g)?;
        Ok(weighted_sum(g.value(out), weights))
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    for t in 0..params.len() {
        if !params.tensors[t].requires_grad {
            continue;
        }
        for i in 0..params.tensors[t].len() {
            let orig = params.tensors[t].values[i];
            params.tensors[t].values[i] = orig + h;
            let plus = eval(params)?;
            params.tensors[t].values[i] = orig - h;
            let minus = eval(params)?;
            params.tensors[t].values[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.params[t].as_ref().map_or(0.0, |g| g[i]);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(relative_error(a, numeric, floor));
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        }
    }
    Ok(report)
}

/// Same check for the gradient with respect to an input tensor.
pub fn check_input<F>(params: &ParamSet, input: &Tensor, weights: &Tensor, h: f64, floor: f64, build: F) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph<'_>, NodeId) -> Result<NodeId, NnError>,
{
    let mut g = Graph::new(params);
    let x = g.input_with_grad(input.clone());
    let out = build(&mut g, x)?;
    g.backward(&[(out, weights)])?;
    let analytic = g.leaf_grad(x).cloned().unwrap_or_else(|| Tensor::zeros(input.rows, input.cols));
    let eval = |t: &Tensor| -> Result<f64, NnError> {
        let mut g = Graph::new(params);
        let x = g.input(t.clone());
        let out = build(&mut g, x)?;
        Ok(weighted_sum(g.value(out), weights))
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    let mut probe = input.clone();
    for i in 0..input.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(relative_error(analytic.data[i], numeric, floor));
        report.max_abs_err = report.max_abs_err.max((analytic.data[i] - numeric).abs());
    }
    Ok(report)
}
