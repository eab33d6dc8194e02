//! Closed-form least-squares regression of targets `V` (m×d) on features
//! `Θ` (m×f), and the gradient of the residual with respect to `Θ`.
//!
//! The coefficients solve `(ΘᵀΘ + εI) Φ = ΘᵀV` through a Cholesky factor of
//! the f×f normal matrix. The m×m projector `ΘΘ⁺` is never formed.

use serde::{Deserialize, Serialize};

use super::linalg::{gemm, Cholesky};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Diagonal loading applied to `ΘᵀΘ` before the solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// ε is used as given.
    Fixed(f64),
    /// ε = κ · trace(ΘᵀΘ) / f, with κ the stored value.
    TraceScaled(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::TraceScaled(1e-6)
    }
}

impl Ridge {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            Ridge::Fixed(v) | Ridge::TraceScaled(v) => v,
        };
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Invalid(format!("ridge must be finite and >= 0, got {v}")));
        }
        Ok(())
    }

    fn resolve(&self, gram: &[f64], f: usize) -> f64 {
        match *self {
            Ridge::Fixed(eps) => eps,
            Ridge::TraceScaled(kappa) => {
                let trace: f64 = (0..f).map(|i| gram[i * f + i]).sum();
                kappa * trace / f as f64
            }
        }
    }
}

/// Which scalar of the residual is differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualLoss {
    /// ‖V − ΘΦ‖_F
    #[default]
    Norm,
    /// ‖V − ΘΦ‖_F²
    SquaredNorm,
}

#[derive(Clone, Debug)]
pub struct LeastSquaresResult {
    /// f×d minimizing coefficients Φ.
    pub coefficients: Tensor,
    /// m×d fitted values ΘΦ.
    pub fitted: Tensor,
    pub residual_norm: f64,
    pub target_norm: f64,
    /// The ε actually placed on the diagonal.
    pub ridge: f64,
}

/// Everything the backward pass needs from a forward solve.
#[derive(Clone, Debug)]
struct ForwardRecord {
    m: usize,
    f: usize,
    d: usize,
    features: Vec<f64>,
    coefficients: Vec<f64>,
    residual: Vec<f64>,
    residual_norm: f64,
    chol: Cholesky,
}

/// Solve the ridge-regularized least-squares problem without recording.
pub fn pinv_least_squares(features: &Tensor, targets: &Tensor, ridge: Ridge) -> Result<LeastSquaresResult> {
    let (result, _) = solve(features, targets, ridge)?;
    Ok(result)
}

fn solve(features: &Tensor, targets: &Tensor, ridge: Ridge) -> Result<(LeastSquaresResult, ForwardRecord)> {
    ridge.validate()?;
    let (m, f) = features.dims2()?;
    let (m2, d) = targets.dims2()?;
    if m != m2 {
        return Err(Error::Shape {
            op: "pinv_least_squares",
            lhs: features.shape().to_vec(),
            rhs: targets.shape().to_vec(),
        });
    }
    if m == 0 || f == 0 || d == 0 {
        return Err(Error::Empty("least-squares operands"));
    }
    features.check_finite("least-squares features")?;
    targets.check_finite("least-squares targets")?;

    let theta = features.data();
    let v = targets.data();

    let mut gram = vec![0.0; f * f];
    gemm(f, m, f, 1.0, theta, true, theta, false, 0.0, &mut gram);
    let eps = ridge.resolve(&gram, f);
    for i in 0..f {
        gram[i * f + i] += eps;
    }
    let chol = Cholesky::factor(&gram, f, eps)?;

    let mut coefficients = vec![0.0; f * d];
    gemm(f, m, d, 1.0, theta, true, v, false, 0.0, &mut coefficients);
    chol.solve_in_place(&mut coefficients, d);

    let mut fitted = vec![0.0; m * d];
    gemm(m, f, d, 1.0, theta, false, &coefficients, false, 0.0, &mut fitted);
    let residual: Vec<f64> = v.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let residual_norm = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
    let target_norm = targets.frobenius_norm();
    if !residual_norm.is_finite() {
        return Err(Error::NonFinite("least-squares residual".into()));
    }

    let result = LeastSquaresResult {
        coefficients: Tensor::new(vec![f, d], coefficients.clone())?,
        fitted: Tensor::new(vec![m, d], fitted)?,
        residual_norm,
        target_norm,
        ridge: eps,
    };
    let record = ForwardRecord {
        m,
        f,
        d,
        features: theta.to_vec(),
        coefficients,
        residual,
        residual_norm,
        chol,
    };
    Ok((result, record))
}

/// Stateful regression layer: `forward` solves and records, `backward`
/// returns ∂L/∂Θ for the configured residual loss. Targets are treated as
/// constants.
#[derive(Clone, Debug)]
pub struct LeastSquaresLayer {
    ridge: Ridge,
    loss: ResidualLoss,
    record: Option<ForwardRecord>,
}

impl LeastSquaresLayer {
    pub fn new(ridge: Ridge, loss: ResidualLoss) -> Self {
        LeastSquaresLayer {
            ridge,
            loss,
            record: None,
        }
    }

    pub fn loss(&self) -> ResidualLoss {
        self.loss
    }

    /// Returns the solve result and the scalar loss value.
    pub fn forward(&mut self, features: &Tensor, targets: &Tensor) -> Result<(LeastSquaresResult, f64)> {
        let (result, record) = solve(features, targets, self.ridge)?;
        let value = match self.loss {
            ResidualLoss::Norm => result.residual_norm,
            ResidualLoss::SquaredNorm => result.residual_norm * result.residual_norm,
        };
        self.record = Some(record);
        Ok((result, value))
    }

    /// Gradient of `upstream · L` with respect to the features, via the
    /// adjoint of the symmetric solve.
    pub fn backward(&self, upstream: f64) -> Result<Tensor> {
        let rec = self.record.as_ref().ok_or(Error::MissingRecord("least-squares layer"))?;
        let (m, f, d) = (rec.m, rec.f, rec.d);
        let a = &rec.features;
        let phi = &rec.coefficients;
        let r = &rec.residual;

        // ∂L/∂R
        let scale = match self.loss {
            ResidualLoss::Norm if rec.residual_norm > 0.0 => upstream / rec.residual_norm,
            ResidualLoss::Norm => 0.0,
            ResidualLoss::SquaredNorm => 2.0 * upstream,
        };
        let grad_r: Vec<f64> = r.iter().map(|v| v * scale).collect();

        // R = V − AΦ: direct term −gR Φᵀ, and gΦ = −Aᵀ gR.
        let mut grad_a = vec![0.0; m * f];
        gemm(m, d, f, -1.0, &grad_r, false, phi, true, 0.0, &mut grad_a);
        let mut lambda = vec![0.0; f * d];
        gemm(f, m, d, -1.0, a, true, &grad_r, false, 0.0, &mut lambda);
        rec.chol.solve_in_place(&mut lambda, d);

        // Through Φ = G⁻¹AᵀV with G = AᵀA + εI:
        //   gA += V Λᵀ − A(ΛΦᵀ + ΦΛᵀ) = R Λᵀ − A Λ Φᵀ
        gemm(m, d, f, 1.0, r, false, &lambda, true, 1.0, &mut grad_a);
        let mut lambda_phi_t = vec![0.0; f * f];
        gemm(f, d, f, 1.0, &lambda, false, phi, true, 0.0, &mut lambda_phi_t);
        gemm(m, f, f, -1.0, a, false, &lambda_phi_t, false, 1.0, &mut grad_a);

        // ε depends on A when trace-scaled: ∂ε/∂A = 2κA/f, ∂L/∂ε = −⟨Λ, Φ⟩.
        if let Ridge::TraceScaled(kappa) = self.ridge {
            let dl_deps: f64 = -lambda.iter().zip(phi).map(|(x, y)| x * y).sum::<f64>();
            let coef = dl_deps * 2.0 * kappa / f as f64;
            if coef != 0.0 {
                for (g, x) in grad_a.iter_mut().zip(a) {
                    *g += coef * x;
                }
            }
        }

        let grad = Tensor::new(vec![m, f], grad_a)?;
        grad.check_finite("least-squares backward")?;
        Ok(grad)
    }
}

/// Convenience wrapper around [`LeastSquaresLayer`] for a single solve plus gradient.
pub fn backward_pinv_least_squares(layer: &LeastSquaresLayer, upstream: f64) -> Result<Tensor> {
    layer.backward(upstream)
}
