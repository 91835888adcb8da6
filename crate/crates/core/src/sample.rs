//! Weighted Monte Carlo samples from the missing-data distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::StreamKey;
use crate::theta::Theta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Direct,
    Importance,
    TruncatedImportance,
    Rejection,
    MetropolisHastings,
    /// Full enumeration of a finite conditional support with exact probabilities.
    Enumeration,
}

/// A batch of missing-data draws with normalized weights and provenance.
#[derive(Debug, Clone)]
pub struct WeightedSample<X> {
    pub draws: Vec<X>,
    /// Normalized weights, summing to one.
    pub weights: Vec<f64>,
    /// Unnormalized weights (after truncation, if any), scaled by `exp(-log_offset)`.
    pub raw_weights: Vec<f64>,
    pub log_offset: f64,
    log_raw: Vec<f64>,
    pub kind: SamplerKind,
    pub target_theta: Theta,
    pub seed: u64,
    pub stream: u64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl<X> WeightedSample<X> {
    /// Equal weights `1/M`.
    pub fn uniform(draws: Vec<X>, kind: SamplerKind, target: Theta, key: StreamKey) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::EmptyInput("sample draws"));
        }
        let m = draws.len();
        let w = 1.0 / m as f64;
        Ok(Self {
            weights: vec![w; m],
            raw_weights: vec![1.0; m],
            log_offset: 0.0,
            log_raw: vec![0.0; m],
            draws,
            kind,
            target_theta: target,
            seed: key.seed,
            stream: key.path,
            diagnostics: BTreeMap::new(),
        })
    }

    /// Self-normalized weights from log importance ratios.
    ///
    /// Ratios are shifted by their maximum before exponentiation. With
    /// `truncate`, each raw weight is clamped at `√M` times the mean raw weight.
    pub fn from_log_weights(
        draws: Vec<X>,
        log_weights: Vec<f64>,
        truncate: bool,
        target: Theta,
        key: StreamKey,
    ) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::EmptyInput("sample draws"));
        }
        assert_eq!(draws.len(), log_weights.len(), "one log weight per draw");
        let kind = if truncate { SamplerKind::TruncatedImportance } else { SamplerKind::Importance };
        let mut s = Self {
            weights: Vec::new(),
            raw_weights: Vec::new(),
            log_offset: 0.0,
            log_raw: log_weights,
            draws,
            kind,
            target_theta: target,
            seed: key.seed,
            stream: key.path,
            diagnostics: BTreeMap::new(),
        };
        s.renormalize()?;
        Ok(s)
    }

    /// Exact probabilities over an enumerated support.
    pub fn enumeration(draws: Vec<X>, probabilities: Vec<f64>, target: Theta) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::EmptyInput("enumerated support"));
        }
        let total: f64 = probabilities.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::DegenerateWeights);
        }
        let weights: Vec<f64> = probabilities.iter().map(|p| p / total).collect();
        Ok(Self {
            log_raw: probabilities.iter().map(|p| p.ln()).collect(),
            raw_weights: probabilities,
            log_offset: 0.0,
            weights,
            draws,
            kind: SamplerKind::Enumeration,
            target_theta: target,
            seed: 0,
            stream: 0,
            diagnostics: BTreeMap::new(),
        })
    }

    fn renormalize(&mut self) -> Result<()> {
        let max = self.log_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::DegenerateWeights);
        }
        let mut raw: Vec<f64> = self.log_raw.iter().map(|l| (l - max).exp()).collect();
        if self.kind == SamplerKind::TruncatedImportance {
            let m = raw.len() as f64;
            let threshold = m.sqrt() * raw.iter().sum::<f64>() / m;
            for r in raw.iter_mut() {
                *r = r.min(threshold);
            }
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        self.weights = raw.iter().map(|r| r / total).collect();
        self.raw_weights = raw;
        self.log_offset = max;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.kind == SamplerKind::Enumeration
    }

    /// `1 / Σ wᵢ²`.
    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    /// Sample size entering Monte Carlo standard errors; infinite for exact enumerations.
    pub fn effective_mc_size(&self) -> f64 {
        if self.is_exact() {
            f64::INFINITY
        } else {
            self.effective_sample_size()
        }
    }

    /// Appends fresh draws targeting the same parameter and rebuilds the weights.
    pub fn merge(mut self, other: WeightedSample<X>) -> Result<Self> {
        if self.kind != other.kind {
            return Err(Error::Config(format!("cannot merge {:?} sample with {:?} sample", self.kind, other.kind)));
        }
        self.draws.extend(other.draws);
        self.log_raw.extend(other.log_raw);
        match self.kind {
            SamplerKind::Importance | SamplerKind::TruncatedImportance => self.renormalize()?,
            SamplerKind::Enumeration => {
                return Err(Error::Capability("augmentation of an exact enumeration"));
            }
            _ => {
                let m = self.draws.len();
                self.weights = vec![1.0 / m as f64; m];
                self.raw_weights = vec![1.0; m];
            }
        }
        for (k, v) in other.diagnostics {
            *self.diagnostics.entry(k).or_insert(0.0) += v;
        }
        Ok(self)
    }

    /// `Σ wᵢ f(xᵢ)`, accumulated in fixed-size chunks.
    pub fn weighted_sum<F>(&self, f: F) -> f64
    where
        X: Sync,
        F: Fn(&X) -> f64 + Sync,
    {
        parallel::chunked_sum(self.draws.len(), |i| self.weights[i] * f(&self.draws[i]))
    }

    /// `Σ wᵢ f(xᵢ)` for vector-valued `f` of length `len`.
    pub fn weighted_vec_sum<F>(&self, len: usize, f: F) -> Vec<f64>
    where
        X: Sync,
        F: Fn(&X) -> Vec<f64> + Sync + Send,
    {
        parallel::chunked_vec_sum(parallel::ExecMode::default(), self.draws.len(), len, |i| {
            let w = self.weights[i];
            f(&self.draws[i]).into_iter().map(|v| w * v).collect()
        })
    }
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}
