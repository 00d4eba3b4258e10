use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative error with the `max(|a|, |b|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Where the worst disagreement was found.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub input: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    let v = g.value(root);
    if !v.is_scalar() {
        return Err(Error::Contract("grad_check function must return a scalar".into()));
    }
    if !v.item().is_finite() {
        return Err(Error::Numeric("non-finite function value".into()));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of the scalar program `f` against central
/// finite differences for every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Contract(format!("grad_check eps must be > 0, got {eps}")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;
    drop(g);

    let mut report = GradCheck {
        max_rel_error: 0.0,
        input: 0,
        coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if err > report.max_rel_error || report.coordinates_checked == 1 {
                report.max_rel_error = err;
                report.input = i;
                report.coordinate = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
