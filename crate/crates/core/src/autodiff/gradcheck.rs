use serde::Serialize;

use super::tape::{ParamId, ParamRef, Tape};
use crate::error::{Error, Result};
use crate::numerics::Vector;

pub const MIN_STEP: f64 = 1e-7;
pub const MAX_STEP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub param: usize,
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a relu changed branch inside ±step.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub per_param: Vec<ParamCheck>,
    pub checked: usize,
    pub excluded: usize,
}

impl GradcheckReport {
    /// Parameter blocks whose error exceeds `tol`.
    pub fn offenders(&self, tol: f64) -> Vec<usize> {
        self.per_param
            .iter()
            .filter(|p| p.max_relative_error > tol)
            .map(|p| p.param)
            .collect()
    }
}

/// Compares reverse-mode gradients of a scalar tape with central differences.
///
/// Uses the inputs of the most recent forward pass. The tape is left
/// evaluated at the unperturbed parameters.
pub fn gradcheck(tape: &mut Tape, params: &[ParamRef<'_>], step: f64) -> Result<GradcheckReport> {
    if !(MIN_STEP..=MAX_STEP).contains(&step) {
        return Err(Error::invalid(format!(
            "gradcheck step {step} outside [{MIN_STEP}, {MAX_STEP}]"
        )));
    }
    if !tape.is_evaluated() {
        return Err(Error::State(
            "gradcheck needs a prior forward pass to fix the inputs".into(),
        ));
    }
    let inputs: Vec<Vector> = tape.inputs().to_vec();
    let out_dim = tape.forward(params, &inputs)?.dim();
    if out_dim != 1 {
        return Err(Error::invalid(format!(
            "gradcheck needs a scalar output, got dimension {out_dim}"
        )));
    }
    let grads = tape.backward(&Vector::filled(1, 1.0))?;
    let base_pattern = tape.relu_pattern();

    let mut owned: Vec<Vec<f64>> = params.iter().map(|p| p.data.to_vec()).collect();
    let shapes: Vec<(usize, usize)> = params.iter().map(|p| (p.rows, p.cols)).collect();
    let mut per_param = Vec::with_capacity(params.len());

    for k in 0..owned.len() {
        let analytic = grads.param(ParamId(k)).to_vec();
        let mut check = ParamCheck {
            param: k,
            max_relative_error: 0.0,
            checked: 0,
            excluded: 0,
        };
        for j in 0..owned[k].len() {
            let original = owned[k][j];
            owned[k][j] = original + step;
            let (f_plus, pat_plus) = eval(tape, &owned, &shapes, &inputs)?;
            owned[k][j] = original - step;
            let (f_minus, pat_minus) = eval(tape, &owned, &shapes, &inputs)?;
            owned[k][j] = original;

            if pat_plus != base_pattern || pat_minus != base_pattern {
                check.excluded += 1;
                continue;
            }
            let numeric = (f_plus - f_minus) / (2.0 * step);
            if !numeric.is_finite() {
                return Err(Error::overflow(format!(
                    "finite difference of parameter {k} entry {j}"
                )));
            }
            let a = analytic[j];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            check.max_relative_error = check.max_relative_error.max(rel);
            check.checked += 1;
        }
        per_param.push(check);
    }

    tape.forward(params, &inputs)?;
    Ok(GradcheckReport {
        max_relative_error: per_param
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max),
        checked: per_param.iter().map(|p| p.checked).sum(),
        excluded: per_param.iter().map(|p| p.excluded).sum(),
        per_param,
    })
}

fn eval(
    tape: &mut Tape,
    owned: &[Vec<f64>],
    shapes: &[(usize, usize)],
    inputs: &[Vector],
) -> Result<(f64, Vec<bool>)> {
    let refs: Vec<ParamRef<'_>> = owned
        .iter()
        .zip(shapes)
        .map(|(d, &(rows, cols))| ParamRef {
            rows,
            cols,
            data: d,
        })
        .collect();
    let f = tape.forward(&refs, inputs)?[0];
    Ok((f, tape.relu_pattern()))
}
