//! Normal sample right-censored at a known threshold.
//!
//! Values at or below `c` are observed; `m` further units are only known to
//! exceed `c`, and their values form the missing data. `θ = (μ, σ)` with
//! `σ > 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExactConditional, Model};
use crate::rng::{StreamKey, StreamRng};
use crate::samplers::{Proposal, ProposalKind};
use crate::stats::{ln_normal_sf, normal_quantile, normal_sf, truncated_normal_moments};
use crate::theta::{Constraint, Theta};

/// Standardized thresholds above this use exponential-proposal rejection.
const TAIL_SWITCH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredData {
    /// Uncensored values, all `≤ c`.
    pub observed: Vec<f64>,
    /// Number of censored units.
    pub m: usize,
    pub c: f64,
}

impl CensoredData {
    pub fn new(observed: Vec<f64>, m: usize, c: f64) -> Result<Self> {
        if let Some(v) = observed.iter().find(|&&v| !(v <= c)) {
            return Err(Error::Config(format!("observed value {v} exceeds the censoring threshold {c}")));
        }
        if observed.is_empty() && m == 0 {
            return Err(Error::Config("censored dataset is empty".into()));
        }
        Ok(Self { observed, m, c })
    }

    /// `n` normal draws censored at `c`, from the stream keyed by `seed`.
    pub fn simulate(seed: u64, n: usize, mu: f64, sigma: f64, c: f64) -> Self {
        let mut rng = StreamKey::new(seed).rng();
        let mut observed = Vec::new();
        let mut m = 0;
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let v = mu + sigma * z;
            if v <= c {
                observed.push(v);
            } else {
                m += 1;
            }
        }
        Self { observed, m, c }
    }

    /// The committed reference dataset: seed 20240101, n = 50, μ = 0, σ = 1, c = 1.
    pub fn fixture() -> Self {
        serde_json::from_str(include_str!("../../fixtures/censored_normal.json")).expect("fixture is valid JSON")
    }

    pub fn n(&self) -> usize {
        self.observed.len() + self.m
    }
}

#[derive(Debug, Clone)]
pub struct CensoredModel {
    pub data: CensoredData,
}

fn mu_sigma(theta: &Theta) -> (f64, f64) {
    (theta.values[0], theta.values[1])
}

impl CensoredModel {
    pub fn new(data: CensoredData) -> Self {
        Self { data }
    }

    pub fn theta(&self, mu: f64, sigma: f64) -> Theta {
        Theta::new(vec![mu, sigma], Constraint::PositiveComponents(vec![1]))
    }

    fn standardized_threshold(&self, theta: &Theta) -> f64 {
        let (mu, sigma) = mu_sigma(theta);
        (self.data.c - mu) / sigma
    }

    /// `E[X^k | X > c]` for `k = 0..=kmax`.
    pub fn censored_raw_moments(&self, theta: &Theta, kmax: usize) -> Vec<f64> {
        let (mu, sigma) = mu_sigma(theta);
        let z = truncated_normal_moments(self.standardized_threshold(theta), kmax);
        // E[(μ + σZ)^k] by the binomial expansion.
        (0..=kmax)
            .map(|k| (0..=k).map(|j| binom(k, j) * mu.powi((k - j) as i32) * sigma.powi(j as i32) * z[j]).sum())
            .collect()
    }

    /// Draws one value from `N(μ, σ²)` truncated to `(c, ∞)`.
    pub fn draw_truncated(&self, theta: &Theta, rng: &mut StreamRng) -> f64 {
        let (mu, sigma) = mu_sigma(theta);
        let a = self.standardized_threshold(theta);
        let z = if a <= TAIL_SWITCH {
            let tail = normal_sf(a);
            loop {
                let u: f64 = rng.random();
                // Upper-tail inversion: Z = -Φ⁻¹(U·Φ(-a)) keeps precision for large a.
                let z = -normal_quantile(u * tail);
                if z > a && z.is_finite() {
                    break z;
                }
            }
        } else {
            tail_rejection(a, rng)
        };
        mu + sigma * z
    }

    /// Shifted-exponential proposal with the rate that maximizes the
    /// acceptance probability, and the matching rejection envelope constant.
    pub fn rejection_envelope(&self, theta: &Theta) -> (ShiftedExponential, f64) {
        let (_, sigma) = mu_sigma(theta);
        let a = self.standardized_threshold(theta);
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        let per_unit = 0.5 * lambda * lambda - lambda * a - lambda.ln() + sigma.ln();
        let proposal = ShiftedExponential { c: self.data.c, rate: lambda / sigma, m: self.data.m };
        (proposal, per_unit * self.data.m as f64)
    }

    /// Closed-form EM: exact truncated-normal moments in the E-step.
    ///
    /// Stops when the max-norm parameter change falls below `tol`.
    pub fn em_oracle(&self, theta0: &Theta, tol: f64) -> Result<Theta> {
        theta0.ensure_valid()?;
        let mut theta = theta0.clone();
        for _ in 0..100_000 {
            let next = self.maximize_given_stats(&self.expected_stats(&theta))?;
            let change = next.max_abs_diff(&theta);
            theta = next;
            if self.data.m == 0 || change < tol {
                return Ok(theta);
            }
        }
        Ok(theta)
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Standard normal truncated below at `a > 0` via an exponential envelope.
fn tail_rejection(a: f64, rng: &mut StreamRng) -> f64 {
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (z - lambda) * (z - lambda) {
            return z;
        }
    }
}

impl Model for CensoredModel {
    type Missing = Vec<f64>;

    fn dim(&self) -> usize {
        2
    }

    fn constraint(&self) -> Constraint {
        Constraint::PositiveComponents(vec![1])
    }

    fn complete_loglik(&self, theta: &Theta, x: &Vec<f64>) -> f64 {
        let (mu, sigma) = mu_sigma(theta);
        let ss: f64 = self.data.observed.iter().chain(x).map(|z| (z - mu) * (z - mu)).sum();
        -(self.data.n() as f64) * sigma.ln() - ss / (2.0 * sigma * sigma)
    }

    fn complete_score(&self, theta: &Theta, x: &Vec<f64>) -> DVector<f64> {
        let (mu, sigma) = mu_sigma(theta);
        let (s1, s2) = self.data.observed.iter().chain(x).fold((0.0, 0.0), |(a, b), z| {
            let d = z - mu;
            (a + d, b + d * d)
        });
        let n = self.data.n() as f64;
        DVector::from_vec(vec![s1 / (sigma * sigma), -n / sigma + s2 / sigma.powi(3)])
    }

    fn complete_neg_hessian(&self, theta: &Theta, x: &Vec<f64>) -> DMatrix<f64> {
        let (mu, sigma) = mu_sigma(theta);
        let (s1, s2) = self.data.observed.iter().chain(x).fold((0.0, 0.0), |(a, b), z| {
            let d = z - mu;
            (a + d, b + d * d)
        });
        let n = self.data.n() as f64;
        let s2p = sigma * sigma;
        let off = 2.0 * s1 / sigma.powi(3);
        DMatrix::from_row_slice(2, 2, &[n / s2p, off, off, -n / s2p + 3.0 * s2 / (s2p * s2p)])
    }

    fn conditional_log_density_unnorm(&self, theta: &Theta, x: &Vec<f64>) -> f64 {
        if x.len() != self.data.m || x.iter().any(|&v| !(v > self.data.c)) {
            return f64::NEG_INFINITY;
        }
        let (mu, sigma) = mu_sigma(theta);
        -x.iter().map(|z| (z - mu) * (z - mu)).sum::<f64>() / (2.0 * sigma * sigma)
    }

    fn has_direct_sampler(&self) -> bool {
        true
    }

    fn sample_conditional_direct(&self, theta: &Theta, m: usize, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
        theta.ensure_valid()?;
        Ok((0..m).map(|_| (0..self.data.m).map(|_| self.draw_truncated(theta, rng)).collect()).collect())
    }

    fn sufficient_stats(&self, x: &Vec<f64>) -> Option<DVector<f64>> {
        let (s1, s2) = self.data.observed.iter().chain(x).fold((0.0, 0.0), |(a, b), z| (a + z, b + z * z));
        Some(DVector::from_vec(vec![s1, s2]))
    }

    fn loglik_linear_in_stats(&self) -> bool {
        true
    }

    fn maximize_given_stats(&self, stats: &DVector<f64>) -> Result<Theta> {
        let n = self.data.n() as f64;
        let mu = stats[0] / n;
        let var = stats[1] / n - mu * mu;
        if !(var > 0.0) {
            return Err(Error::Constraint(format!("non-positive variance {var} from statistics")));
        }
        Theta::checked(vec![mu, var.sqrt()], self.constraint())
    }

    fn observed_loglik(&self, theta: &Theta) -> Option<f64> {
        let (mu, sigma) = mu_sigma(theta);
        let obs: f64 =
            self.data.observed.iter().map(|z| -sigma.ln() - (z - mu) * (z - mu) / (2.0 * sigma * sigma)).sum();
        Some(obs + self.data.m as f64 * ln_normal_sf(self.standardized_threshold(theta)))
    }

    fn observed_score(&self, theta: &Theta) -> Option<DVector<f64>> {
        let (mu, sigma) = mu_sigma(theta);
        let a = self.standardized_threshold(theta);
        let lambda = crate::stats::inverse_mills(a);
        let m = self.data.m as f64;
        let (s1, s2) = self.data.observed.iter().fold((0.0, 0.0), |(p, q), z| {
            let d = z - mu;
            (p + d, q + d * d)
        });
        let k = self.data.observed.len() as f64;
        Some(DVector::from_vec(vec![
            s1 / (sigma * sigma) + m * lambda / sigma,
            -k / sigma + s2 / sigma.powi(3) + m * lambda * a / sigma,
        ]))
    }
}

impl ExactConditional for CensoredModel {
    fn expected_stats(&self, theta: &Theta) -> DVector<f64> {
        let mom = self.censored_raw_moments(theta, 2);
        let m = self.data.m as f64;
        let s1: f64 = self.data.observed.iter().sum();
        let s2: f64 = self.data.observed.iter().map(|z| z * z).sum();
        DVector::from_vec(vec![s1 + m * mom[1], s2 + m * mom[2]])
    }

    fn exact_score_mean(&self, theta: &Theta) -> DVector<f64> {
        let (base, mean_g, _) = self.score_parts(theta);
        base + mean_g * self.data.m as f64
    }

    fn exact_complete_information(&self, theta: &Theta) -> DMatrix<f64> {
        let (mu, sigma) = mu_sigma(theta);
        let z = truncated_normal_moments(self.standardized_threshold(theta), 2);
        let m = self.data.m as f64;
        let (s1, s2) = self.data.observed.iter().fold((0.0, 0.0), |(p, q), v| {
            let d = v - mu;
            (p + d, q + d * d)
        });
        let e1 = s1 + m * sigma * z[1];
        let e2 = s2 + m * sigma * sigma * z[2];
        let n = self.data.n() as f64;
        let s2p = sigma * sigma;
        let off = 2.0 * e1 / sigma.powi(3);
        DMatrix::from_row_slice(2, 2, &[n / s2p, off, off, -n / s2p + 3.0 * e2 / (s2p * s2p)])
    }

    fn exact_score_second_moment(&self, theta: &Theta) -> DMatrix<f64> {
        let (base, mean_g, second_g) = self.score_parts(theta);
        let m = self.data.m as f64;
        let mean = &base + &mean_g * m;
        let cov_g = second_g - &mean_g * mean_g.transpose();
        &mean * mean.transpose() + cov_g * m
    }
}

impl CensoredModel {
    /// Splits the complete score into the observed-data part and the per-unit
    /// censored contribution `g(x) = ((x-μ)/σ², (x-μ)²/σ³)`, returning the
    /// fixed part, `E[g]` and `E[g gᵀ]`.
    fn score_parts(&self, theta: &Theta) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
        let (mu, sigma) = mu_sigma(theta);
        let z = truncated_normal_moments(self.standardized_threshold(theta), 4);
        let (s1, s2) = self.data.observed.iter().fold((0.0, 0.0), |(p, q), v| {
            let d = v - mu;
            (p + d, q + d * d)
        });
        let n = self.data.n() as f64;
        let base = DVector::from_vec(vec![s1 / (sigma * sigma), -n / sigma + s2 / sigma.powi(3)]);
        let mean_g = DVector::from_vec(vec![z[1] / sigma, z[2] / sigma]);
        let s2p = sigma * sigma;
        let second_g = DMatrix::from_row_slice(2, 2, &[z[2] / s2p, z[3] / s2p, z[3] / s2p, z[4] / s2p]);
        (base, mean_g, second_g)
    }
}

/// Each of `m` components drawn as `c + Exp(rate)`.
#[derive(Debug, Clone)]
pub struct ShiftedExponential {
    pub c: f64,
    pub rate: f64,
    pub m: usize,
}

impl Proposal<Vec<f64>> for ShiftedExponential {
    fn kind(&self) -> ProposalKind {
        ProposalKind::Independence
    }

    fn propose(&self, _current: Option<&Vec<f64>>, rng: &mut StreamRng) -> Vec<f64> {
        let exp = Exp::new(self.rate).expect("positive rate");
        (0..self.m).map(|_| self.c + exp.sample(rng)).collect()
    }

    fn log_density(&self, to: &Vec<f64>, _from: Option<&Vec<f64>>) -> f64 {
        if to.iter().any(|&v| !(v > self.c)) {
            return f64::NEG_INFINITY;
        }
        to.iter().map(|v| self.rate.ln() - self.rate * (v - self.c)).sum()
    }
}
