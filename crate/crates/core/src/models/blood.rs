//! ABO blood-type allele frequencies.
//!
//! Phenotype counts `y = (O, A, B, AB)` are observed; genotype counts
//! `x = (OO, AO, AA, BO, BB, AB)` are missing. Allele frequencies are
//! `θ = (p, q)` for A and B with `r = 1 - p - q` for O.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::outer;
use crate::model::{ExactConditional, Model};
use crate::rng::StreamRng;
use crate::samplers::{Proposal, ProposalKind};
use crate::stats::ln_binomial_pmf;
use crate::theta::{Constraint, Theta};

/// Coefficients of `(n_O, n_A, n_B)` in the genotype counts.
const ALLELE_O: [f64; 6] = [2.0, 1.0, 0.0, 1.0, 0.0, 0.0];
const ALLELE_A: [f64; 6] = [0.0, 1.0, 2.0, 0.0, 0.0, 1.0];
const ALLELE_B: [f64; 6] = [0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BloodData {
    /// Counts of phenotypes O, A, B, AB.
    pub y: [u64; 4],
}

impl BloodData {
    pub fn new(y: [u64; 4]) -> Result<Self> {
        if y.iter().sum::<u64>() == 0 {
            return Err(Error::Config("blood-type counts must not all be zero".into()));
        }
        Ok(Self { y })
    }

    pub fn n(&self) -> u64 {
        self.y.iter().sum()
    }
}

impl Default for BloodData {
    fn default() -> Self {
        Self { y: [10, 16, 7, 1] }
    }
}

/// Genotype counts OO, AO, AA, BO, BB, AB.
///
/// Stored as reals so that conditional-mean points can be evaluated too.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BloodMissing(pub [f64; 6]);

impl BloodMissing {
    /// The genotype table implied by `(x₂, x₄)` = (AO, BO) counts.
    pub fn from_free(data: &BloodData, x2: f64, x4: f64) -> Self {
        let y = data.y.map(|v| v as f64);
        BloodMissing([y[0], x2, y[1] - x2, x4, y[2] - x4, y[3]])
    }

    /// Allele counts `(n_O, n_A, n_B)`.
    pub fn allele_counts(&self) -> [f64; 3] {
        let dot = |c: &[f64; 6]| c.iter().zip(self.0.iter()).map(|(a, b)| a * b).sum::<f64>();
        [dot(&ALLELE_O), dot(&ALLELE_A), dot(&ALLELE_B)]
    }
}

#[derive(Debug, Clone, Default)]
pub struct BloodModel {
    pub data: BloodData,
}

fn pqr(theta: &Theta) -> (f64, f64, f64) {
    let p = theta.values[0];
    let q = theta.values[1];
    (p, q, 1.0 - p - q)
}

impl BloodModel {
    pub fn new(data: BloodData) -> Self {
        Self { data }
    }

    pub fn theta(&self, p: f64, q: f64) -> Theta {
        Theta::new(vec![p, q], Constraint::SimplexInterior(2))
    }

    /// `P(AO | phenotype A)` and `P(BO | phenotype B)`.
    pub fn heterozygous_probs(theta: &Theta) -> (f64, f64) {
        let (p, q, r) = pqr(theta);
        (2.0 * r / (p + 2.0 * r), 2.0 * r / (q + 2.0 * r))
    }

    /// Expected allele counts `(ν_O, ν_A, ν_B)`; `ν_O` follows from conservation of `2n` alleles.
    pub fn expected_allele_counts(&self, theta: &Theta) -> [f64; 3] {
        let (p, q, r) = pqr(theta);
        let y = self.data.y.map(|v| v as f64);
        let nu_a = y[1] * (1.0 + p * p / (p * p + 2.0 * p * r)) + y[3];
        let nu_b = y[2] * (1.0 + q * q / (q * q + 2.0 * q * r)) + y[3];
        [2.0 * self.data.n() as f64 - nu_a - nu_b, nu_a, nu_b]
    }

    /// Conditional mean of the genotype table.
    pub fn conditional_mean(&self, theta: &Theta) -> BloodMissing {
        let (a1, b1) = Self::heterozygous_probs(theta);
        BloodMissing::from_free(&self.data, self.data.y[1] as f64 * a1, self.data.y[2] as f64 * b1)
    }

    /// Conditional covariance of the genotype table.
    pub fn conditional_covariance(&self, theta: &Theta) -> DMatrix<f64> {
        let (a1, b1) = Self::heterozygous_probs(theta);
        let va = self.data.y[1] as f64 * a1 * (1.0 - a1);
        let vb = self.data.y[2] as f64 * b1 * (1.0 - b1);
        let mut s = DMatrix::zeros(6, 6);
        s[(1, 1)] = va;
        s[(2, 2)] = va;
        s[(1, 2)] = -va;
        s[(2, 1)] = -va;
        s[(3, 3)] = vb;
        s[(4, 4)] = vb;
        s[(3, 4)] = -vb;
        s[(4, 3)] = -vb;
        s
    }

    /// The 2×6 map with `S_c(θ; x) = 𝒮(θ) x`.
    pub fn score_map(theta: &Theta) -> DMatrix<f64> {
        let (p, q, r) = pqr(theta);
        DMatrix::from_fn(2, 6, |i, j| {
            let own = if i == 0 { ALLELE_A[j] / p } else { ALLELE_B[j] / q };
            own - ALLELE_O[j] / r
        })
    }

    /// Genotype probabilities `(r², 2pr, p², 2qr, q², 2pq)`.
    pub fn genotype_probs(theta: &Theta) -> [f64; 6] {
        let (p, q, r) = pqr(theta);
        [r * r, 2.0 * p * r, p * p, 2.0 * q * r, q * q, 2.0 * p * q]
    }
}

impl Model for BloodModel {
    type Missing = BloodMissing;

    fn dim(&self) -> usize {
        2
    }

    fn constraint(&self) -> Constraint {
        Constraint::SimplexInterior(2)
    }

    fn complete_loglik(&self, theta: &Theta, x: &BloodMissing) -> f64 {
        let (p, q, r) = pqr(theta);
        let [no, na, nb] = x.allele_counts();
        no * r.ln() + na * p.ln() + nb * q.ln()
    }

    fn complete_score(&self, theta: &Theta, x: &BloodMissing) -> DVector<f64> {
        let (p, q, r) = pqr(theta);
        let [no, na, nb] = x.allele_counts();
        DVector::from_vec(vec![na / p - no / r, nb / q - no / r])
    }

    fn complete_neg_hessian(&self, theta: &Theta, x: &BloodMissing) -> DMatrix<f64> {
        let (p, q, r) = pqr(theta);
        let [no, na, nb] = x.allele_counts();
        let c = no / (r * r);
        DMatrix::from_row_slice(2, 2, &[na / (p * p) + c, c, c, nb / (q * q) + c])
    }

    fn conditional_log_density_unnorm(&self, theta: &Theta, x: &BloodMissing) -> f64 {
        let (x2, x4) = (x.0[1], x.0[3]);
        if x2.fract() != 0.0 || x4.fract() != 0.0 || x2 < 0.0 || x4 < 0.0 {
            return f64::NEG_INFINITY;
        }
        let (a1, b1) = Self::heterozygous_probs(theta);
        ln_binomial_pmf(x2 as u64, self.data.y[1], a1) + ln_binomial_pmf(x4 as u64, self.data.y[2], b1)
    }

    fn has_direct_sampler(&self) -> bool {
        true
    }

    fn sample_conditional_direct(&self, theta: &Theta, m: usize, rng: &mut StreamRng) -> Result<Vec<BloodMissing>> {
        theta.ensure_valid()?;
        let (a1, b1) = Self::heterozygous_probs(theta);
        let bin_a = Binomial::new(self.data.y[1], a1).map_err(|e| Error::Constraint(e.to_string()))?;
        let bin_b = Binomial::new(self.data.y[2], b1).map_err(|e| Error::Constraint(e.to_string()))?;
        Ok((0..m)
            .map(|_| {
                let x2 = bin_a.sample(rng) as f64;
                let x4 = bin_b.sample(rng) as f64;
                BloodMissing::from_free(&self.data, x2, x4)
            })
            .collect())
    }

    fn sufficient_stats(&self, x: &BloodMissing) -> Option<DVector<f64>> {
        Some(DVector::from_column_slice(&x.allele_counts()))
    }

    fn loglik_linear_in_stats(&self) -> bool {
        true
    }

    /// Proportional allocation `(p, q) = (n_A, n_B) / (n_O + n_A + n_B)`.
    fn maximize_given_stats(&self, stats: &DVector<f64>) -> Result<Theta> {
        let total = stats.sum();
        Theta::checked(vec![stats[1] / total, stats[2] / total], Constraint::SimplexInterior(2))
    }

    fn observed_loglik(&self, theta: &Theta) -> Option<f64> {
        let (p, q, r) = pqr(theta);
        let y = self.data.y.map(|v| v as f64);
        Some(
            2.0 * y[0] * r.ln()
                + y[1] * (p * p + 2.0 * p * r).ln()
                + y[2] * (q * q + 2.0 * q * r).ln()
                + y[3] * (2.0 * p * q).ln(),
        )
    }

    fn observed_score(&self, theta: &Theta) -> Option<DVector<f64>> {
        let (p, q, r) = pqr(theta);
        let y = self.data.y.map(|v| v as f64);
        let py = p * p + 2.0 * p * r;
        let qy = q * q + 2.0 * q * r;
        Some(DVector::from_vec(vec![
            -2.0 * y[0] / r + 2.0 * r * y[1] / py - 2.0 * q * y[2] / qy + y[3] / p,
            -2.0 * y[0] / r + 2.0 * r * y[2] / qy - 2.0 * p * y[1] / py + y[3] / q,
        ]))
    }

    fn observed_information(&self, theta: &Theta) -> Option<DMatrix<f64>> {
        let (p, q, r) = pqr(theta);
        let y = self.data.y.map(|v| v as f64);
        let py = p * p + 2.0 * p * r;
        let qy = q * q + 2.0 * q * r;
        let o = 2.0 * y[0] / (r * r);
        let pp = o + 2.0 * y[1] * (py + 2.0 * r * r) / (py * py) + 4.0 * y[2] * q * q / (qy * qy) + y[3] / (p * p);
        let pq = o + 2.0 * y[1] * p * p / (py * py) + 2.0 * y[2] * q * q / (qy * qy);
        // Mirror image of `pp`, term for term, so symmetric data give symmetric results.
        let qq = o + 2.0 * y[2] * (qy + 2.0 * r * r) / (qy * qy) + 4.0 * y[1] * p * p / (py * py) + y[3] / (q * q);
        Some(DMatrix::from_row_slice(2, 2, &[pp, pq, pq, qq]))
    }

    /// All `(x₂, x₄) ∈ {0..y₂} × {0..y₃}` with their exact binomial probabilities.
    fn enumerate_conditional(&self, theta: &Theta) -> Option<Vec<(BloodMissing, f64)>> {
        let (a1, b1) = Self::heterozygous_probs(theta);
        let (ya, yb) = (self.data.y[1], self.data.y[2]);
        let mut out = Vec::with_capacity(((ya + 1) * (yb + 1)) as usize);
        for x2 in 0..=ya {
            let la = ln_binomial_pmf(x2, ya, a1);
            for x4 in 0..=yb {
                let prob = (la + ln_binomial_pmf(x4, yb, b1)).exp();
                out.push((BloodMissing::from_free(&self.data, x2 as f64, x4 as f64), prob));
            }
        }
        Some(out)
    }
}

impl ExactConditional for BloodModel {
    fn expected_stats(&self, theta: &Theta) -> DVector<f64> {
        DVector::from_column_slice(&self.expected_allele_counts(theta))
    }

    fn exact_score_mean(&self, theta: &Theta) -> DVector<f64> {
        Self::score_map(theta) * DVector::from_column_slice(&self.conditional_mean(theta).0)
    }

    fn exact_complete_information(&self, theta: &Theta) -> DMatrix<f64> {
        self.complete_neg_hessian(theta, &self.conditional_mean(theta))
    }

    fn exact_score_second_moment(&self, theta: &Theta) -> DMatrix<f64> {
        let s = Self::score_map(theta);
        let mu = DVector::from_column_slice(&self.conditional_mean(theta).0);
        let second = self.conditional_covariance(theta) + outer(&mu);
        &s * second * s.transpose()
    }

    /// Fisher information of the two conditional binomials in `θ`.
    fn exact_missing_information(&self, theta: &Theta) -> Option<DMatrix<f64>> {
        let (p, q, r) = pqr(theta);
        let (a1, b1) = Self::heterozygous_probs(theta);
        let d = p + 2.0 * r;
        let e = q + 2.0 * r;
        let grad_a = DVector::from_vec(vec![-2.0 * (p + r) / (d * d), -2.0 * p / (d * d)]);
        let grad_b = DVector::from_vec(vec![-2.0 * q / (e * e), -2.0 * (q + r) / (e * e)]);
        let ya = self.data.y[1] as f64;
        let yb = self.data.y[2] as f64;
        Some(outer(&grad_a) * (ya / (a1 * (1.0 - a1))) + outer(&grad_b) * (yb / (b1 * (1.0 - b1))))
    }
}

/// Symmetric integer random walk on `(x₂, x₄)`, folded back into
/// `{0..y₂} × {0..y₃}` at the boundaries.
#[derive(Debug, Clone)]
pub struct BloodRandomWalk {
    pub data: BloodData,
    /// Maximum absolute step per coordinate.
    pub step: u64,
}

fn fold(v: i64, n: i64) -> i64 {
    if n == 0 {
        return 0;
    }
    let period = 2 * n;
    let m = v.rem_euclid(period);
    if m > n {
        period - m
    } else {
        m
    }
}

impl Proposal<BloodMissing> for BloodRandomWalk {
    fn kind(&self) -> ProposalKind {
        ProposalKind::RandomWalk { step_scale: vec![self.step as f64; 2] }
    }

    fn propose(&self, current: Option<&BloodMissing>, rng: &mut StreamRng) -> BloodMissing {
        let cur = current.copied().unwrap_or_else(|| BloodMissing::from_free(&self.data, 0.0, 0.0));
        let s = self.step as i64;
        let d2 = rng.random_range(-s..=s);
        let d4 = rng.random_range(-s..=s);
        let x2 = fold(cur.0[1] as i64 + d2, self.data.y[1] as i64);
        let x4 = fold(cur.0[3] as i64 + d4, self.data.y[2] as i64);
        BloodMissing::from_free(&self.data, x2 as f64, x4 as f64)
    }

    /// Symmetric in its arguments, so the constant suffices for acceptance ratios.
    fn log_density(&self, _to: &BloodMissing, _from: Option<&BloodMissing>) -> f64 {
        0.0
    }
}
