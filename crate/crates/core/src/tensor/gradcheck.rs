use super::graph::{Graph, Var};
use super::value::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input index, flat entry)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::invalid("grad_check function must return a scalar"));
    }
    Ok((g, vars, out))
}

fn scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, _, out) = evaluate(f, inputs)?;
    Ok(g.value(out).item())
}

/// Max over all input entries of `|analytic − numeric| / max(1, |numeric|)`
/// with central differences of half-width `step`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let (g, vars, out) = evaluate(&f, inputs)?;
    if !g.value(out).is_finite() {
        return Err(Error::NonFinite("grad_check: loss at the base point".into()));
    }
    let grads = g.backward(out)?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let plus = scalar(&f, &probe)?;
            probe[i].data_mut()[j] = orig - step;
            let minus = scalar(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("grad_check: input {i} entry {j}")));
            }
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
