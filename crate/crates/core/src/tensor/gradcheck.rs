use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Max over coordinates of `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

fn eval<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let vars = params.iter().map(|p| g.constant(p.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&g, &vars)?.item();
    if !out.is_finite() {
        return Err(Error::Numerical(format!("objective evaluated to {out}")));
    }
    Ok(out)
}

/// Compares the analytic gradient of `f` at `params` against central
/// differences with step `h`, one coordinate at a time.
pub fn finite_diff_check<F>(f: F, params: &[Tensor<f64>], h: f64) -> Result<GradCheck>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let analytic: Vec<Tensor<f64>> = {
        let g = Graph::new();
        let vars = params.iter().map(|p| g.param(p)).collect::<Result<Vec<_>>>()?;
        let loss = f(&g, &vars)?;
        if !loss.item().is_finite() {
            return Err(Error::Numerical(format!("objective evaluated to {}", loss.item())));
        }
        g.backward(loss)?;
        vars.iter()
            .zip(params)
            .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.len() {
            let x = p.data()[j];
            work[pi].data_mut()[j] = x + h;
            let up = eval(&f, &work)?;
            work[pi].data_mut()[j] = x - h;
            let down = eval(&f, &work)?;
            work[pi].data_mut()[j] = x;
            let n = (up - down) / (2.0 * h);
            let a = analytic[pi].data()[j];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = pi;
                report.worst_index = j;
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    Ok(report)
}
