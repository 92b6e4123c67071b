//! Central-difference verification of tape gradients.

use super::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub param: usize,
    /// Flat index of the entry with the largest relative error.
    pub worst_entry: usize,
    pub max_rel_error: f64,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the reverse-mode gradient of the scalar built by `forward` with
/// central differences of step `h`, entry by entry over every parameter.
pub fn grad_check<F>(forward: F, params: &[Matrix], h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Var,
{
    let analytic: Vec<Matrix> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = forward(&mut tape, &vars);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient check forward value {value} at the unperturbed point"
            )));
        }
        let grads = tape.backward(loss)?;
        vars.iter()
            .zip(params)
            .map(|(&v, p)| grads.wrt(v, p.shape()))
            .collect()
    };

    let eval = |point: &[Matrix], param: usize, entry: usize| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = point.iter().map(|p| tape.constant_ref(p)).collect();
        let loss = forward(&mut tape, &vars);
        let value = tape.value(loss).item();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite(format!(
                "gradient check forward value {value} while perturbing parameter {param} entry {entry}"
            )))
        }
    };

    let mut point: Vec<Matrix> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut check = ParamCheck {
            param: pi,
            worst_entry: 0,
            max_rel_error: 0.0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for e in 0..grad.len() {
            let original = point[pi].as_slice()[e];
            point[pi].as_mut_slice()[e] = original + h;
            let plus = eval(&point, pi, e)?;
            point[pi].as_mut_slice()[e] = original - h;
            let minus = eval(&point, pi, e)?;
            point[pi].as_mut_slice()[e] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.as_slice()[e];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error || e == 0 {
                check.worst_entry = e;
                check.max_rel_error = err;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance,
    })
}
