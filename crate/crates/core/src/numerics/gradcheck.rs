//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Magnitudes below this are compared absolutely rather than relatively.
/// Central differences at step 1e-5 carry ~1e-9 of rounding noise on a
/// composite objective, so the floor sits well above that.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct InputReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Entries whose ±step evaluations crossed a ReLU or max boundary; the
    /// difference quotient is meaningless there, so they are not scored.
    pub kink_crossings: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Entries compared, and entries skipped as kink crossings.
    pub checked: usize,
    pub kink_crossings: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Relative error `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compare reverse-mode gradients of a scalar function against central
/// differences with the given `step`. `function` must build its graph on the
/// tape it is handed, using the supplied input variables, and return the
/// scalar output. It is re-run once per perturbed entry, so it must be
/// deterministic.
pub fn grad_check<F>(function: F, inputs: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = function(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let signature = tape.branch_signature();

    let eval = |values: &[Tensor]| -> Result<(f64, bool)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.var(t.clone())).collect();
        let out = function(&mut tape, &vars)?;
        Ok((tape.value(out).item(), tape.branch_signature() == signature))
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[which].shape());
        let mut rep = InputReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            kink_crossings: 0,
        };
        for i in 0..inputs[which].len() {
            let orig = inputs[which].data()[i];
            work[which].data_mut()[i] = orig + step;
            let (plus, same_plus) = eval(&work)?;
            work[which].data_mut()[i] = orig - step;
            let (minus, same_minus) = eval(&work)?;
            work[which].data_mut()[i] = orig;
            if !(same_plus && same_minus) {
                rep.kink_crossings += 1;
                continue;
            }

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            let rel = relative_error(a, numeric);
            rep.max_abs_error = rep.max_abs_error.max((a - numeric).abs());
            if rel > rep.max_rel_error {
                rep.max_rel_error = rel;
                rep.worst_index = i;
                rep.analytic = a;
                rep.numeric = numeric;
            }
        }
        reports.push(rep);
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let kink_crossings = reports.iter().map(|r| r.kink_crossings).sum();
    Ok(GradCheckReport {
        inputs: reports,
        max_rel_error,
        tolerance,
        checked: inputs.iter().map(Tensor::len).sum(),
        kink_crossings,
    })
}
