use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Check at most this many entries per parameter (evenly strided).
    pub max_entries: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            floor: 1e-8,
            max_entries: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Relative error `|a−b| / max(floor, |a|+|b|)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / floor.max(a.abs() + b.abs())
}

/// Compares reverse-mode gradients of `build` with central differences.
/// `build` receives fresh parameter handles and must return a scalar.
pub fn gradcheck<F>(params: &[Tensor<f64>], opts: GradcheckOptions, build: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |ps: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out)?;

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(vars[pi]).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; p.len()]);
        let stride = p.len().div_ceil(opts.max_entries.max(1)).max(1);
        for i in (0..p.len()).step_by(stride) {
            let orig = p.data()[i];
            work[pi].data_mut()[i] = orig + opts.eps;
            let plus = eval(&work);
            work[pi].data_mut()[i] = orig - opts.eps;
            let minus = eval(&work);
            work[pi].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[i];
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric, opts.floor));
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.checked += 1;
        }
    }
    Ok(report)
}
