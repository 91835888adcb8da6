//! The missing-data model contract shared by every engine.
//!
//! Engines never look inside a missing-data point; they only hand it back to
//! the model. Log-likelihoods may drop additive constants that do not depend
//! on θ, since every engine works with differences and derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::theta::{Constraint, Theta};

pub trait Model: Send + Sync {
    type Missing: Clone + Send + Sync + std::fmt::Debug;

    fn dim(&self) -> usize;

    fn constraint(&self) -> Constraint;

    /// Complete-data log-likelihood `ℓ_c(θ; y, x)`.
    fn complete_loglik(&self, theta: &Theta, x: &Self::Missing) -> f64;

    /// Complete-data score `∇ℓ_c`.
    fn complete_score(&self, theta: &Theta, x: &Self::Missing) -> DVector<f64>;

    /// `-∇²ℓ_c`.
    fn complete_neg_hessian(&self, theta: &Theta, x: &Self::Missing) -> DMatrix<f64>;

    /// `log f_m(x | y; θ)` up to a term that depends on θ and y but not on x.
    fn conditional_log_density_unnorm(&self, theta: &Theta, x: &Self::Missing) -> f64;

    fn has_direct_sampler(&self) -> bool {
        false
    }

    /// `m` iid draws from `f_m(· | y; θ)`.
    fn sample_conditional_direct(&self, _theta: &Theta, _m: usize, _rng: &mut StreamRng) -> Result<Vec<Self::Missing>> {
        Err(Error::Capability("a direct conditional sampler"))
    }

    /// Sufficient statistics of the complete data, when they exist.
    fn sufficient_stats(&self, _x: &Self::Missing) -> Option<DVector<f64>> {
        None
    }

    /// True when `ℓ_c` is linear in `sufficient_stats`, so a weighted average of
    /// statistics followed by `maximize_given_stats` solves any weighted M-step.
    fn loglik_linear_in_stats(&self) -> bool {
        false
    }

    fn maximize_given_stats(&self, _stats: &DVector<f64>) -> Result<Theta> {
        Err(Error::Capability("a closed-form M-step"))
    }

    /// Observed-data log-likelihood, when available as an oracle.
    fn observed_loglik(&self, _theta: &Theta) -> Option<f64> {
        None
    }

    fn observed_score(&self, _theta: &Theta) -> Option<DVector<f64>> {
        None
    }

    fn observed_information(&self, _theta: &Theta) -> Option<DMatrix<f64>> {
        None
    }

    /// Finite conditional support with exact probabilities, for brute-force oracles.
    fn enumerate_conditional(&self, _theta: &Theta) -> Option<Vec<(Self::Missing, f64)>> {
        None
    }

    fn to_unconstrained(&self, theta: &Theta) -> DVector<f64> {
        theta.to_unconstrained()
    }

    fn from_unconstrained(&self, v: &DVector<f64>) -> Theta {
        Theta::from_unconstrained(v, &self.constraint())
    }
}

/// Closed-form conditional moments, available for oracle models.
pub trait ExactConditional: Model {
    /// `E_θ[sufficient_stats(X) | Y = y]`.
    fn expected_stats(&self, theta: &Theta) -> DVector<f64>;

    /// `E_θ[S_c(θ) | Y = y]`, the observed score.
    fn exact_score_mean(&self, theta: &Theta) -> DVector<f64>;

    /// `𝓘_c(θ) = -E_θ[∇²ℓ_c(θ) | Y = y]`.
    fn exact_complete_information(&self, theta: &Theta) -> DMatrix<f64>;

    /// `E_θ[S_c(θ) S_c(θ)ᵀ | Y = y]`.
    fn exact_score_second_moment(&self, theta: &Theta) -> DMatrix<f64>;

    /// `𝓘_m(θ) = -E_θ[∇²ℓ_m(θ) | Y = y]` computed from the missing-data law itself.
    fn exact_missing_information(&self, _theta: &Theta) -> Option<DMatrix<f64>> {
        None
    }
}

/// Evaluates a model on a parameter given in unconstrained coordinates.
pub fn theta_at<M: Model + ?Sized>(model: &M, v: &DVector<f64>) -> Theta {
    model.from_unconstrained(v)
}

/// Largest relative discrepancy between the analytic score / negative Hessian
/// and central differences of the log-likelihood / score.
///
/// Each component contributes `|analytic - numeric| / (|analytic| + h)`.
pub fn finite_difference_check<M: Model + ?Sized>(model: &M, theta: &Theta, x: &M::Missing, h: f64) -> Result<f64> {
    if !(h > 0.0 && h <= 1e-3) {
        return Err(Error::InvalidStep(h));
    }
    theta.ensure_valid()?;
    let p = theta.dim();
    let shifted = |j: usize, delta: f64| {
        let mut v = theta.values.clone();
        v[j] += delta;
        let t = theta.with_values(v);
        t.ensure_valid().map(|_| t)
    };
    let score = model.complete_score(theta, x);
    let neg_hess = model.complete_neg_hessian(theta, x);
    let mut worst: f64 = 0.0;
    for j in 0..p {
        let plus = shifted(j, h)?;
        let minus = shifted(j, -h)?;
        let fd = (model.complete_loglik(&plus, x) - model.complete_loglik(&minus, x)) / (2.0 * h);
        worst = worst.max((score[j] - fd).abs() / (score[j].abs() + h));
        let sp = model.complete_score(&plus, x);
        let sm = model.complete_score(&minus, x);
        for i in 0..p {
            let fd_h = -(sp[i] - sm[i]) / (2.0 * h);
            worst = worst.max((neg_hess[(i, j)] - fd_h).abs() / (neg_hess[(i, j)].abs() + h));
        }
    }
    Ok(worst)
}

/// Pure predicate: does `theta` satisfy its constraint?
pub fn validate_theta(theta: &Theta) -> bool {
    theta.is_valid()
}
