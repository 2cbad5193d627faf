use std::fmt;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference step used when none is given.
pub const DEFAULT_STEP: f64 = 1e-4;
/// Maximum relative error accepted when none is given.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Floor of the relative-error denominator.
const REL_ERR_FLOOR: f64 = 1e-8;

/// Worst disagreement found for one input tensor.
#[derive(Clone, Debug)]
pub struct InputReport {
    pub input: usize,
    pub max_rel_err: f64,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
    /// Set when the function errored or produced a non-finite value.
    pub failure: Option<String>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_rel_err() < self.tolerance
    }

    fn failed(tolerance: f64, why: String) -> Self {
        GradcheckReport { inputs: Vec::new(), tolerance, failure: Some(why) }
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(why) = &self.failure {
            return write!(f, "FAILED ({why})");
        }
        let verdict = if self.passed() { "ok" } else { "FAILED" };
        write!(f, "{verdict} max rel-err {:.3e} (tol {:.0e})", self.max_rel_err(), self.tolerance)?;
        if let Some(worst) =
            self.inputs.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).filter(|_| !self.passed())
        {
            write!(
                f,
                " at input {} element {}: tape {:.6e} vs finite difference {:.6e}",
                worst.input, worst.worst_element, worst.analytic, worst.numeric
            )?;
        }
        Ok(())
    }
}

/// Compares tape gradients of a scalar function against central finite
/// differences, element by element.
///
/// `f` receives a fresh tape and one leaf per input and must return a
/// one-element var. Relative error is |a − n| / max(|a|, |n|, 1e-8).
pub fn gradcheck<F>(f: F, inputs: &[Tensor], step: f64, tolerance: f64) -> GradcheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let evaluate = |values: &[Tensor], track: bool| -> std::result::Result<(Tape, Vec<Var>, Var), String> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone(), track)).collect();
        let out = f(&mut tape, &vars).map_err(|e| e.to_string())?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(format!("output has shape {:?}, expected a scalar", value.shape()));
        }
        if !value.item().is_finite() {
            return Err(format!("non-finite output {}", value.item()));
        }
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = match evaluate(inputs, true) {
        Ok(r) => r,
        Err(why) => return GradcheckReport::failed(tolerance, why),
    };
    if let Err(e) = tape.backward(out) {
        return GradcheckReport::failed(tolerance, e.to_string());
    }
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
    if let Some(i) = analytic.iter().position(|g| !g.all_finite()) {
        return GradcheckReport::failed(tolerance, format!("non-finite tape gradient for input {i}"));
    }

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (input, grad) in analytic.iter().enumerate() {
        let mut report = InputReport { input, max_rel_err: 0.0, worst_element: 0, analytic: 0.0, numeric: 0.0 };
        for element in 0..grad.len() {
            let original = work[input].data()[element];
            let mut probe = |x: f64| -> std::result::Result<f64, String> {
                work[input].data_mut()[element] = x;
                let (t, _, o) = evaluate(&work, false)?;
                Ok(t.value(o).item())
            };
            let plus = probe(original + step);
            let minus = probe(original - step);
            work[input].data_mut()[element] = original;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(why), _) | (_, Err(why)) => {
                    return GradcheckReport::failed(
                        tolerance,
                        format!("{why} when perturbing input {input} element {element}"),
                    )
                }
            };
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[element];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            if rel > report.max_rel_err || element == 0 {
                report = InputReport {
                    input,
                    max_rel_err: rel.max(report.max_rel_err),
                    worst_element: element,
                    analytic: a,
                    numeric,
                };
            }
        }
        reports.push(report);
    }
    GradcheckReport { inputs: reports, tolerance, failure: None }
}
