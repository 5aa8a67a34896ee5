//! Exponential-family likelihoods `EF_T(x|ξ) = h(x)·exp{T(x)ᵀξ − A(ξ)}`.
//!
//! Decoders output the natural parameter `ξ`; everything the estimators need
//! — sufficient statistic, log-partition, mean map `∇A(ξ) = E[T(x)]`, log
//! density, sampling — lives here. The fixed-variance Gaussian is
//! parameterized so that `ξ` is the mean: `T(x) = x/σ²`, `A(ξ) = ‖ξ‖²/(2σ²)`.
//! With `σ = 1` this reduces to `T(x) = x`, `A(ξ) = ‖ξ‖²/2`, `∇A(ξ) = ξ`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::ad::{AdError, Tape, Tensor};
use crate::numeric;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum ExpFamError {
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// An exponential-family specification used for decoders and priors.
#[derive(Clone, Debug, PartialEq)]
pub enum ExpFamily {
    /// `N(ξ, σ²I)` with fixed scalar standard deviation.
    GaussianFixedVar { sigma: f64, dim: usize },
    /// Independent Bernoulli coordinates with logits `ξ`.
    Bernoulli { dim: usize },
}

impl ExpFamily {
    pub fn gaussian(sigma: f64, dim: usize) -> Self {
        assert!(sigma > 0.0, "decoder standard deviation must be positive");
        Self::GaussianFixedVar { sigma, dim }
    }

    pub fn bernoulli(dim: usize) -> Self {
        Self::Bernoulli { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::GaussianFixedVar { dim, .. } | Self::Bernoulli { dim } => *dim,
        }
    }

    fn check(&self, v: &[f64]) -> Result<(), ExpFamError> {
        if v.len() != self.dim() {
            return Err(ExpFamError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Sufficient statistic `T(x)`.
    pub fn sufficient_stat(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::GaussianFixedVar { sigma, .. } => {
                let inv = 1.0 / (sigma * sigma);
                x.iter().map(|v| v * inv).collect()
            }
            Self::Bernoulli { .. } => x.to_vec(),
        }
    }

    /// Log-partition function `A(ξ)`.
    pub fn log_partition(&self, xi: &[f64]) -> f64 {
        match self {
            Self::GaussianFixedVar { sigma, .. } => {
                numeric::sq_norm(xi) / (2.0 * sigma * sigma)
            }
            Self::Bernoulli { .. } => xi.iter().map(|&v| numeric::softplus(v)).sum(),
        }
    }

    /// Mean map `∇A(ξ) = E_{EF(x|ξ)}[T(x)]`.
    pub fn mean_map(&self, xi: &[f64]) -> Vec<f64> {
        match self {
            Self::GaussianFixedVar { sigma, .. } => {
                let inv = 1.0 / (sigma * sigma);
                xi.iter().map(|v| v * inv).collect()
            }
            Self::Bernoulli { .. } => xi.iter().map(|&v| numeric::sigmoid(v)).collect(),
        }
    }

    /// Log base measure `log h(x)`.
    pub fn log_base(&self, x: &[f64]) -> f64 {
        match self {
            Self::GaussianFixedVar { sigma, dim } => {
                let var = sigma * sigma;
                -0.5 * (*dim as f64) * (LN_2PI + var.ln()) - numeric::sq_norm(x) / (2.0 * var)
            }
            Self::Bernoulli { .. } => 0.0,
        }
    }

    /// `log p(x|ξ) = log h(x) + T(x)ᵀξ − A(ξ)`.
    pub fn log_density(&self, x: &[f64], xi: &[f64]) -> Result<f64, ExpFamError> {
        self.check(x)?;
        self.check(xi)?;
        let t = self.sufficient_stat(x);
        let dot: f64 = t.iter().zip(xi).map(|(a, b)| a * b).sum();
        Ok(self.log_base(x) + dot - self.log_partition(xi))
    }

    /// The log density as tape ops, differentiable in `xi`.
    pub fn log_density_taped(
        &self,
        tape: &mut Tape,
        x: &[f64],
        xi: &Tensor,
    ) -> Result<Tensor, ExpFamError> {
        self.check(x)?;
        if xi.numel() != self.dim() {
            return Err(ExpFamError::DimensionMismatch {
                expected: self.dim(),
                got: xi.numel(),
            });
        }
        match self {
            Self::GaussianFixedVar { sigma, dim } => {
                let var = sigma * sigma;
                let constant = -0.5 * (*dim as f64) * (LN_2PI + var.ln());
                let diff = tape.sub(&Tensor::from_slice(x), xi)?;
                let sq = tape.sq_norm(&diff)?;
                let scaled = tape.mul(&Tensor::scalar(-0.5 / var), &sq)?;
                Ok(tape.add(&Tensor::scalar(constant), &scaled)?)
            }
            Self::Bernoulli { .. } => {
                let dot = tape.mul(&Tensor::from_slice(x), xi)?;
                let dot_sum = tape.sum(&dot)?;
                let sp = tape.softplus(xi)?;
                let partition = tape.sum(&sp)?;
                Ok(tape.sub(&dot_sum, &partition)?)
            }
        }
    }

    /// Draw one observation from `EF(x|ξ)`.
    pub fn sample<R: Rng + ?Sized>(&self, xi: &[f64], rng: &mut R) -> Vec<f64> {
        match self {
            Self::GaussianFixedVar { sigma, .. } => xi
                .iter()
                .map(|&m| {
                    let eps: f64 = StandardNormal.sample(rng);
                    m + sigma * eps
                })
                .collect(),
            Self::Bernoulli { .. } => xi
                .iter()
                .map(|&logit| {
                    let p = numeric::sigmoid(logit);
                    if rng.random::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }
}

/// `∇_z log p(x|z) = ∇f(z)ᵀ (T(x) − ∇A(f(z)))` for a decoder that supplies
/// `ξ = f(z)` and its Jacobian `∇f(z)` (rows index outputs).
pub fn score_wrt_latent(
    ef: &ExpFamily,
    x: &[f64],
    jacobian: &Tensor,
    xi: &[f64],
) -> Vec<f64> {
    let t = ef.sufficient_stat(x);
    let ma = ef.mean_map(xi);
    let v: Vec<f64> = t.iter().zip(&ma).map(|(a, b)| a - b).collect();
    let (rows, cols) = (jacobian.shape()[0], jacobian.shape()[1]);
    debug_assert_eq!(rows, v.len());
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        let vi = v[i];
        for j in 0..cols {
            out[j] += jacobian.data()[i * cols + j] * vi;
        }
    }
    out
}
