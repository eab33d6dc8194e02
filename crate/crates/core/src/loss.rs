//! Classification loss combined with a signed closed-form regression term.
//!
//! `total = CE(logits, labels) − c · ‖V − ΘΘ⁺V‖ / ‖V‖`. With `c > 0` the
//! optimizer is pushed to make the domain descriptor `V` unrecoverable from
//! the features `Θ`; with `c < 0` it is pushed to make it recoverable.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NormStats};
use crate::error::{Error, Result};
use crate::numerics::{pinv_least_squares, ResidualLoss, Ridge, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub c: f64,
    /// Divide the residual by `‖V‖` (or `‖V‖²` when squared).
    pub normalize_residual: bool,
    pub square_residual: bool,
    pub ridge: Ridge,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            c: 0.0,
            normalize_residual: true,
            square_residual: false,
            ridge: Ridge::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() {
            return Err(Error::Config(format!("loss weight c must be finite, got {}", self.c)));
        }
        self.ridge.validate()
    }

    fn residual_loss(&self) -> ResidualLoss {
        if self.square_residual {
            ResidualLoss::SquaredNorm
        } else {
            ResidualLoss::Norm
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classification: f64,
    /// Normalized residual of regressing `V` on `Θ`. NaN when it was only
    /// monitored (`c = 0`) and the solve failed.
    pub regression_term: f64,
    pub total: f64,
}

fn normalizer(config: &LossConfig, target_norm: f64) -> Result<f64> {
    if !config.normalize_residual {
        return Ok(1.0);
    }
    if target_norm == 0.0 {
        return Err(Error::DegenerateDomain);
    }
    Ok(if config.square_residual {
        1.0 / (target_norm * target_norm)
    } else {
        1.0 / target_norm
    })
}

/// Record the objective on `tape` and return its output variable.
///
/// `features` is the `m×f` representation; `domains` the `m×d` descriptor,
/// which receives no gradient. When `c = 0` the regression term is computed
/// off-tape for monitoring only, so the total is exactly the cross-entropy.
pub fn arcdog_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    features: Var,
    domains: &Tensor,
    config: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    config.validate()?;
    let ce = tape.cross_entropy(logits, labels)?;
    let classification = tape.value(ce).item();
    let (m, f) = tape.value(features).dims2()?;
    if m < f {
        log::warn!("regression batch has {m} rows for {f} features; the closed-form fit is underdetermined");
    }

    if config.c == 0.0 {
        let regression_term = pinv_least_squares(tape.value(features), domains, config.ridge)
            .and_then(|r| {
                let raw = if config.square_residual {
                    r.residual_norm * r.residual_norm
                } else {
                    r.residual_norm
                };
                Ok(raw * normalizer(config, r.target_norm)?)
            })
            .unwrap_or(f64::NAN);
        return Ok((
            ce,
            LossBreakdown {
                classification,
                regression_term,
                total: classification,
            },
        ));
    }

    let (residual, result) = tape.least_squares(features, domains, config.ridge, config.residual_loss())?;
    let scale = normalizer(config, result.target_norm)?;
    let term = tape.scale(residual, scale)?;
    let weighted = tape.scale(term, config.c)?;
    let total = tape.sub(ce, weighted)?;
    let regression_term = tape.value(term).item();
    Ok((
        total,
        LossBreakdown {
            classification,
            regression_term,
            total: tape.value(total).item(),
        },
    ))
}

/// Z-scored climate variables `vars` of the given samples, stacked row-wise.
pub fn domain_matrix(dataset: &Dataset, indices: &[usize], stats: &NormStats, vars: Range<usize>) -> Result<Tensor> {
    if vars.end > stats.climate_mean.len() {
        return Err(Error::Data(format!(
            "climate variables {vars:?} exceed the {} available",
            stats.climate_mean.len()
        )));
    }
    let mut data = Vec::with_capacity(indices.len() * vars.len());
    for &i in indices {
        let s = dataset
            .samples
            .get(i)
            .ok_or_else(|| Error::Invalid(format!("sample index {i} out of range")))?;
        if s.climate.len() < vars.end {
            return Err(Error::Data(format!("sample {i} is missing climate variables")));
        }
        data.extend(vars.clone().map(|v| stats.standardize_climate(v, s.climate[v])));
    }
    Tensor::new(vec![indices.len(), vars.len()], data)
}
