//! Central finite-difference gradient checking in 64-bit arithmetic.
//!
//! The numeric side only ever evaluates the function forward, so it is an
//! independent oracle for the recorded backward rules.

use super::tensor::{grad, Tensor};
use crate::error::Result;

/// Default perturbation for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Largest relative error found, per input.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_input: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// Relative error between an analytic and a numeric gradient, normalised by
/// the largest magnitude of either.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Central differences of a scalar-valued `f` at `inputs`.
pub fn numeric_gradients<F>(inputs: &[Tensor<f64>], f: &F, step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let base: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach).collect();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].numel()];
        for (k, gk) in g.iter_mut().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = base[i].to_vec();
                data[k] += delta;
                let mut args = base.clone();
                args[i] = Tensor::constant(data, base[i].shape());
                Ok(f(&args)?.item())
            };
            *gk = (eval(step)? - eval(-step)?) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Compares recorded gradients of `f` against central differences.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach_leaf).collect();
    let out = f(&leaves)?;
    let analytic = grad(&out, &leaves, false)?;
    let numeric = numeric_gradients(inputs, &f, step)?;
    let per_input = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n))
        .collect();
    Ok(GradCheckReport { per_input })
}
