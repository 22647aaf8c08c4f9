//! Central finite-difference gradient checker.
//!
//! Validates reverse-mode gradients against a two-sided difference quotient
//! computed purely from forward evaluations, so the two paths share no code.

use super::{Tape, Tensor, TensorError};

/// Outcome of a finite-difference sweep over a set of parameters.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Largest relative error seen across every parameter element.
    pub max_rel_err: f64,
    /// Name of the parameter holding the worst element.
    pub worst_param: String,
    /// Flat index of the worst element within that parameter.
    pub worst_index: usize,
    /// Reverse-mode gradient at the worst element.
    pub analytic: f64,
    /// Central-difference estimate at the worst element.
    pub numeric: f64,
    /// Total parameter elements checked.
    pub elements: usize,
}

impl FdReport {
    pub fn within(&self, rel_tol: f64) -> bool {
        self.max_rel_err <= rel_tol
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h` for every element of every named parameter.
///
/// `f` receives a fresh tape plus tracked clones of `params` (same order) and
/// must return a scalar loss. Relative error uses a denominator floored at
/// `scale_floor` so near-zero gradients are judged on an absolute scale.
pub fn check_gradients<F>(
    params: &[(&str, Tensor)],
    h: f64,
    scale_floor: f64,
    f: F,
) -> Result<FdReport, TensorError>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let tracked: Vec<Tensor> = values.iter().map(|t| tape.var(t)).collect();
        let loss = f(&mut tape, &tracked)?;
        if !loss.is_scalar() {
            return Err(TensorError::NonScalar {
                op: "check_gradients",
                shape: loss.shape().to_vec(),
            });
        }
        Ok(loss.item())
    };

    let mut tape = Tape::new();
    let base: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let tracked: Vec<Tensor> = base.iter().map(|t| tape.var(t)).collect();
    let loss = f(&mut tape, &tracked)?;
    if !loss.is_scalar() {
        return Err(TensorError::NonScalar {
            op: "check_gradients",
            shape: loss.shape().to_vec(),
        });
    }
    let grads = tape.backward(&loss)?;

    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        elements: 0,
    };
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let analytic = grads.wrt(&tracked[pi])?;
        for ei in 0..tensor.numel() {
            let x = tensor.data()[ei];
            let mut plus = base.clone();
            plus[pi] = tensor.with_element(ei, x + h);
            let mut minus = base.clone();
            minus[pi] = tensor.with_element(ei, x - h);
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic.data()[ei];
            let err = rel_err(a, numeric, scale_floor);
            report.elements += 1;
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = name.to_string();
                report.worst_index = ei;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
