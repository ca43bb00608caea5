//! Central finite-difference verification of tape gradients.
//!
//! The checker reruns an arbitrary scalar-valued forward pass with single
//! coordinates of the inputs perturbed by `+/- eps` and compares the slope
//! against the analytic gradient supplied by the caller.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relative error between an analytic and a numeric derivative. The floor in
/// the denominator keeps near-zero pairs from exploding the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (1e-8f64).max(analytic.abs() + numeric.abs())
}

/// One probed coordinate: which input tensor, which flat element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coord {
    pub input: usize,
    pub elem: usize,
}

/// Result of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate with the largest relative error, with its two derivatives.
    pub worst: Option<(Coord, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Compares `analytic` gradients of `f` against central differences at the
/// given coordinates. `f` must be a pure function of `inputs`.
pub fn check_gradients<F>(
    mut f: F,
    inputs: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    coords: &[Coord],
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if inputs.len() != analytic.len() {
        return Err(Error::LengthMismatch { left: inputs.len(), right: analytic.len() });
    }
    if coords.is_empty() {
        return Err(Error::EmptyInput { what: "gradient check coordinates" });
    }
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    for &c in coords {
        if c.input >= work.len() || c.elem >= work[c.input].len() {
            return Err(Error::ShapeMismatch {
                op: "check_gradients",
                detail: format!("coordinate {c:?} out of range"),
            });
        }
        let base = work[c.input].data()[c.elem];
        work[c.input].data_mut()[c.elem] = base + eps;
        let plus = f(&work)?;
        work[c.input].data_mut()[c.elem] = base - eps;
        let minus = f(&work)?;
        work[c.input].data_mut()[c.elem] = base;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[c.input].data()[c.elem];
        let err = relative_error(a, numeric);
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = err;
            report.worst = Some((c, a, numeric));
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Every coordinate of every input, for exhaustive sweeps on small graphs.
pub fn all_coords(inputs: &[Tensor]) -> Vec<Coord> {
    let mut out = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        for e in 0..t.len() {
            out.push(Coord { input: i, elem: e });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn relative_error_floor_handles_double_zero() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 0.0) < 1e-3);
    }

    #[test]
    fn quadratic_loss_passes_tight_tolerance() {
        // loss = sum(x * x); gradient is 2x exactly.
        let x = Tensor::new(vec![1, 3], vec![0.5, -1.25, 2.0]).unwrap();
        let analytic = Tensor::new(vec![1, 3], vec![1.0, -2.5, 4.0]).unwrap();
        let f = |ins: &[Tensor]| -> crate::error::Result<f64> {
            let mut tape = Tape::new();
            let v = tape.leaf(ins[0].clone());
            let sq = tape.mul(v, v)?;
            let loss = tape.sum_all(sq)?;
            tape.value(loss).item()
        };
        let coords = all_coords(std::slice::from_ref(&x));
        let report =
            check_gradients(f, &[x], std::slice::from_ref(&analytic), 1e-5, &coords).unwrap();
        assert!(report.passes(1e-8), "max err {}", report.max_rel_err);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        // Claim gradient of sum(x*x) is x instead of 2x.
        let wrong = x.clone();
        let f = |ins: &[Tensor]| -> crate::error::Result<f64> {
            let mut tape = Tape::new();
            let v = tape.leaf(ins[0].clone());
            let sq = tape.mul(v, v)?;
            let loss = tape.sum_all(sq)?;
            tape.value(loss).item()
        };
        let coords = all_coords(std::slice::from_ref(&x));
        let report =
            check_gradients(f, &[x], std::slice::from_ref(&wrong), 1e-5, &coords).unwrap();
        assert!(!report.passes(1e-3));
    }

    #[test]
    fn empty_coordinate_list_is_rejected() {
        let x = Tensor::scalar(1.0);
        let f = |_: &[Tensor]| Ok(0.0);
        let err = check_gradients(f, std::slice::from_ref(&x), std::slice::from_ref(&x), 1e-5, &[])
            .unwrap_err();
        assert_eq!(err.category(), "EmptyInput");
    }
}
