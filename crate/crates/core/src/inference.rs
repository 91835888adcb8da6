//! Standard errors from Louis' identity and the fraction of missing information.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{flatten, inverse, max_norm, outer, symmetric_eigenvalues, symmetrize, unflatten};
use crate::model::{ExactConditional, Model};
use crate::sample::WeightedSample;
use crate::theta::Theta;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    /// Observed information, row-major.
    pub info: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    /// Eigenvalues of `𝓘_c⁻¹ 𝓘_m`, ascending.
    pub fraction_missing_info: Vec<f64>,
    /// Draws behind the estimate; zero for exact moments.
    pub mc_size_used: usize,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl InferenceReport {
    pub fn info_matrix(&self) -> DMatrix<f64> {
        let p = self.info.len();
        DMatrix::from_fn(p, p, |i, j| self.info[i][j])
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let p = self.covariance.len();
        DMatrix::from_fn(p, p, |i, j| self.covariance[i][j])
    }

    /// Builds the report from complete-data information and observed information.
    pub fn from_parts(complete: &DMatrix<f64>, info: &DMatrix<f64>, mc_size_used: usize) -> Result<Self> {
        let info = symmetrize(info);
        let eig = symmetric_eigenvalues(&info);
        if eig.first().is_none_or(|&v| !(v > 0.0)) {
            return Err(Error::IndefiniteInformation { eigenvalues: eig });
        }
        let covariance = symmetrize(&inverse(&info, "observed information")?);
        let std_errors = (0..covariance.nrows()).map(|j| covariance[(j, j)].sqrt()).collect();
        let fraction_missing_info = missing_fraction(complete, &info)?;
        Ok(Self { info: rows(&info), covariance: rows(&covariance), std_errors, fraction_missing_info, mc_size_used })
    }
}

/// Eigenvalues of `𝓘_c⁻¹ (𝓘_c - I)`, computed symmetrically as those of
/// `L⁻¹ (𝓘_c - I) L⁻ᵀ` with `𝓘_c = L Lᵀ`.
fn missing_fraction(complete: &DMatrix<f64>, info: &DMatrix<f64>) -> Result<Vec<f64>> {
    let complete = symmetrize(complete);
    let chol = complete
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IndefiniteInformation { eigenvalues: symmetric_eigenvalues(&complete) })?;
    let l_inv = inverse(&chol.l(), "Cholesky factor of the complete-data information")?;
    let missing = &complete - info;
    Ok(symmetric_eigenvalues(&(&l_inv * missing * l_inv.transpose())))
}

/// Louis-identity observed information from a sample drawn at `θ̂`:
/// `Ê[-∇²ℓ_c] - Ê[S_c S_cᵀ] + Ŝ Ŝᵀ`, the last term only with `include_score_term`.
pub fn louis_information<M: Model>(
    model: &M,
    theta_hat: &Theta,
    sample: &WeightedSample<M::Missing>,
    include_score_term: bool,
) -> Result<InferenceReport> {
    if sample.len() < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: sample.len() });
    }
    theta_hat.ensure_valid()?;
    let p = model.dim();
    // Layout: [neg Hessian (p²) | score outer product (p²) | score (p)].
    let sums = sample.weighted_vec_sum(2 * p * p + p, |x| {
        let s = model.complete_score(theta_hat, x);
        let mut v = flatten(&model.complete_neg_hessian(theta_hat, x));
        v.extend(flatten(&outer(&s)));
        v.extend(s.iter());
        v
    });
    let complete = symmetrize(&unflatten(&sums[..p * p], p));
    let second = symmetrize(&unflatten(&sums[p * p..2 * p * p], p));
    let s_hat = DVector::from_column_slice(&sums[2 * p * p..]);
    let mut info = &complete - second;
    if include_score_term {
        info += outer(&s_hat);
    }
    let used = if sample.is_exact() { 0 } else { sample.len() };
    InferenceReport::from_parts(&complete, &info, used)
}

/// Louis identity with exact conditional moments (score term included).
pub fn louis_information_exact<M: ExactConditional>(model: &M, theta_hat: &Theta) -> Result<InferenceReport> {
    theta_hat.ensure_valid()?;
    let complete = model.exact_complete_information(theta_hat);
    InferenceReport::from_parts(&complete, &exact_louis_matrix(model, theta_hat), 0)
}

fn exact_louis_matrix<M: ExactConditional>(model: &M, theta: &Theta) -> DMatrix<f64> {
    let mean = model.exact_score_mean(theta);
    symmetrize(&(model.exact_complete_information(theta) - model.exact_score_second_moment(theta) + outer(&mean)))
}

/// Central-difference Hessian of the observed log-likelihood, negated.
pub fn fd_observed_information<M: Model>(model: &M, theta: &Theta) -> Result<DMatrix<f64>> {
    let f = |v: Vec<f64>| {
        let t = theta.with_values(v);
        t.ensure_valid()?;
        model.observed_loglik(&t).ok_or(Error::Capability("an observed-data log-likelihood"))
    };
    let p = theta.dim();
    let h: Vec<f64> = theta.values.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let at = |si: f64, sj: f64| {
                let mut v = theta.values.clone();
                v[i] += si * h[i];
                v[j] += sj * h[j];
                f(v)
            };
            let val = if i == j {
                let c = f(theta.values.clone())?;
                (at(1.0, 0.0)? - 2.0 * c + at(-1.0, 0.0)?) / (h[i] * h[i])
            } else {
                (at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?) / (4.0 * h[i] * h[j])
            };
            out[(i, j)] = -val;
            out[(j, i)] = -val;
        }
    }
    Ok(out)
}

/// Compares independent routes to the observed information at `θ`:
/// Louis' identity with exact moments, the analytic observed information,
/// `𝓘_c - 𝓘_m` from the missing-data law, and (when fewer than two of those
/// are available) a finite-difference Hessian of the observed log-likelihood.
///
/// Returns the largest pairwise discrepancy, each relative to the larger
/// max-norm of the two matrices.
pub fn information_decomposition_check<M: ExactConditional>(model: &M, theta: &Theta) -> Result<f64> {
    theta.ensure_valid()?;
    let mut routes = vec![exact_louis_matrix(model, theta)];
    if let Some(i) = model.observed_information(theta) {
        routes.push(i);
    }
    if let Some(im) = model.exact_missing_information(theta) {
        routes.push(model.exact_complete_information(theta) - im);
    }
    if routes.len() < 2 {
        routes.push(fd_observed_information(model, theta)?);
    }
    let mut worst: f64 = 0.0;
    for a in 0..routes.len() {
        for b in a + 1..routes.len() {
            let scale = max_norm(&routes[a]).max(max_norm(&routes[b]));
            worst = worst.max(max_norm(&(&routes[a] - &routes[b])) / scale);
        }
    }
    Ok(worst)
}
