//! Stochastic approximation EM.
//!
//! Two updates share a decaying step size `α_k`: a preconditioned score step
//! whose metric is a running Louis-identity information estimate, and running
//! averages of sufficient statistics followed by the closed-form M-step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigen_floor, flatten, outer, symmetrize, unflatten};
use crate::model::Model;
use crate::rng::StreamKey;
use crate::sample::WeightedSample;
use crate::samplers::SamplerPolicy;
use crate::theta::Theta;
use crate::trajectory::{TerminationReason, Trajectory, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `α_k = scale · k^{-gamma}` with `gamma ∈ (0.5, 1]`.
    Power { gamma: f64 },
    /// `α_k = scale / k`.
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub scale: f64,
}

impl StepSchedule {
    pub fn power(gamma: f64) -> Self {
        Self { kind: ScheduleKind::Power { gamma }, scale: 1.0 }
    }

    pub fn harmonic() -> Self {
        Self { kind: ScheduleKind::Harmonic, scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("step scale must be positive, got {}", self.scale)));
        }
        if let ScheduleKind::Power { gamma } = self.kind {
            if !(gamma > 0.5 && gamma <= 1.0) {
                return Err(Error::Config(format!("power schedule needs gamma in (0.5, 1], got {gamma}")));
            }
        }
        Ok(())
    }

    /// Step size for iteration `k ≥ 1`.
    pub fn alpha(&self, k: usize) -> f64 {
        let k = k as f64;
        match self.kind {
            ScheduleKind::Power { gamma } => self.scale * k.powf(-gamma),
            ScheduleKind::Harmonic => self.scale / k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaemState {
    pub theta: Theta,
    /// Running information estimate on the `θ` scale.
    pub gamma_matrix: DMatrix<f64>,
    /// Running sufficient statistics; `None` until the first update.
    pub stats: Option<DVector<f64>>,
    pub iteration: usize,
    /// Iterations in which the eigenvalue floor on `gamma_matrix` was applied.
    pub floor_engagements: usize,
}

impl SaemState {
    pub fn new(theta: Theta) -> Self {
        let p = theta.dim();
        Self { theta, gamma_matrix: DMatrix::identity(p, p), stats: None, iteration: 0, floor_engagements: 0 }
    }
}

/// Applies one score-driven update with step `alpha` using `sample` drawn at `state.theta`.
///
/// `Ŝ` is the weighted mean complete score and
/// `Î = Ê[-∇²ℓ_c] - Ê[S_c S_cᵀ] + Ŝ Ŝᵀ`. The metric moves to
/// `Γ + α (Î - Γ)`, floored at `1e-6 · trace / p`. The parameter moves on the
/// unconstrained scale by `α Γ̃⁻¹ S̃`, where `S̃ = Jᵀ Ŝ` and `Γ̃ = Jᵀ Γ J`
/// with `J = ∂θ/∂v`.
pub fn gu_kong_update<M: Model>(
    model: &M,
    state: &SaemState,
    sample: &WeightedSample<M::Missing>,
    alpha: f64,
) -> Result<SaemState> {
    let p = model.dim();
    let theta = &state.theta;
    let s_hat = DVector::from_vec(sample.weighted_vec_sum(p, |x| model.complete_score(theta, x).as_slice().to_vec()));
    let curvature = sample.weighted_vec_sum(p * p, |x| {
        let s = model.complete_score(theta, x);
        flatten(&(model.complete_neg_hessian(theta, x) - outer(&s)))
    });
    let info = symmetrize(&(unflatten(&curvature, p) + outer(&s_hat)));
    let blended = &state.gamma_matrix + (info - &state.gamma_matrix) * alpha;
    let floor = 1e-6 * blended.trace().abs() / p as f64;
    let (gamma, lifted) = eigen_floor(&blended, floor.max(f64::MIN_POSITIVE));
    let j = theta.jacobian();
    let metric = j.transpose() * &gamma * &j;
    let score_v = j.transpose() * &s_hat;
    let direction =
        metric.lu().solve(&score_v).ok_or_else(|| Error::Singular("transformed information metric".into()))?;
    let v = model.to_unconstrained(theta) + direction * alpha;
    Ok(SaemState {
        theta: model.from_unconstrained(&v),
        gamma_matrix: gamma,
        stats: state.stats.clone(),
        iteration: state.iteration + 1,
        floor_engagements: state.floor_engagements + lifted as usize,
    })
}

/// Applies one sufficient-statistic update: `s ← s + α (ŝ - s)`, then the M-step.
///
/// The first update takes `ŝ` directly.
pub fn delyon_update<M: Model>(
    model: &M,
    state: &SaemState,
    sample: &WeightedSample<M::Missing>,
    alpha: f64,
) -> Result<SaemState> {
    if !model.loglik_linear_in_stats() {
        return Err(Error::Capability("sufficient statistics with a closed-form M-step"));
    }
    let k = model.sufficient_stats(&sample.draws[0]).ok_or(Error::Capability("sufficient statistics"))?.len();
    let s_hat = DVector::from_vec(sample.weighted_vec_sum(k, |x| {
        model.sufficient_stats(x).expect("model declared sufficient statistics").as_slice().to_vec()
    }));
    let stats = match &state.stats {
        Some(s) => s + (s_hat - s) * alpha,
        None => s_hat,
    };
    let theta = model.maximize_given_stats(&stats)?;
    Ok(SaemState {
        theta,
        gamma_matrix: state.gamma_matrix.clone(),
        stats: Some(stats),
        iteration: state.iteration + 1,
        floor_engagements: state.floor_engagements,
    })
}

/// Draws `m` points at the current parameter (stream `key.child(k)`) and applies [`gu_kong_update`].
pub fn saem_gu_kong_step<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    state: &SaemState,
    m: usize,
    schedule: &StepSchedule,
    sampler: &S,
    key: StreamKey,
) -> Result<SaemState> {
    let k = state.iteration + 1;
    let sample = sampler.draw(model, &state.theta, m, key.child(k as u64))?;
    gu_kong_update(model, state, &sample, schedule.alpha(k))
}

/// Draws `m` points at the current parameter (stream `key.child(k)`) and applies [`delyon_update`].
pub fn saem_delyon_step<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    state: &SaemState,
    m: usize,
    schedule: &StepSchedule,
    sampler: &S,
    key: StreamKey,
) -> Result<SaemState> {
    if !model.loglik_linear_in_stats() {
        return Err(Error::Capability("sufficient statistics with a closed-form M-step"));
    }
    let k = state.iteration + 1;
    let sample = sampler.draw(model, &state.theta, m, key.child(k as u64))?;
    delyon_update(model, state, &sample, schedule.alpha(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaemVariant {
    GuKong,
    Delyon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaemConfig {
    pub mc_size: usize,
    pub iterations: usize,
    pub schedule: StepSchedule,
}

impl Default for SaemConfig {
    fn default() -> Self {
        Self { mc_size: 10, iterations: 50, schedule: StepSchedule::power(0.7) }
    }
}

/// Runs a fixed number of SAEM iterations.
///
/// The fraction of iterations where the information floor engaged is
/// reported in the `floor_fraction` diagnostic of the last record.
pub fn run_saem<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    theta0: &Theta,
    variant: SaemVariant,
    cfg: &SaemConfig,
    sampler: &S,
    key: StreamKey,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    run_saem_into(model, theta0, variant, cfg, sampler, key, &mut traj)?;
    Ok(traj)
}

/// Like [`run_saem`], but records into `traj` as it goes, so a failed run
/// leaves the iterations completed before the error.
pub fn run_saem_into<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    theta0: &Theta,
    variant: SaemVariant,
    cfg: &SaemConfig,
    sampler: &S,
    key: StreamKey,
    traj: &mut Trajectory,
) -> Result<()> {
    cfg.schedule.validate()?;
    if cfg.mc_size == 0 {
        return Err(Error::Config("mc_size must be positive".into()));
    }
    theta0.ensure_valid()?;
    let mut state = SaemState::new(theta0.clone());
    for k in 1..=cfg.iterations {
        state = match variant {
            SaemVariant::GuKong => saem_gu_kong_step(model, &state, cfg.mc_size, &cfg.schedule, sampler, key)?,
            SaemVariant::Delyon => saem_delyon_step(model, &state, cfg.mc_size, &cfg.schedule, sampler, key)?,
        };
        traj.total_draws += cfg.mc_size as u64;
        let mut rec = TrajectoryRecord::new(0, state.theta.clone())
            .with_mc_size(cfg.mc_size)
            .diag("alpha", cfg.schedule.alpha(k));
        if variant == SaemVariant::GuKong {
            rec = rec.diag("floor_fraction", state.floor_engagements as f64 / k as f64);
        }
        traj.push(rec);
    }
    traj.terminated = TerminationReason::MaxIterations;
    Ok(())
}

/// Replaces each iterate after `burn` by the running mean of the iterates
/// `burn+1..=j`, averaged on the unconstrained scale.
///
/// Records are renumbered from 1; `source_iteration` keeps the original index.
pub fn offline_average(t: &Trajectory, burn: usize) -> Result<Trajectory> {
    if burn >= t.len() {
        return Err(Error::EmptyInput("trajectory after burn-in"));
    }
    let mut out = Trajectory {
        records: Vec::with_capacity(t.len() - burn),
        terminated: t.terminated,
        total_draws: t.total_draws,
    };
    let mut sum: Option<DVector<f64>> = None;
    for (count, rec) in t.records[burn..].iter().enumerate() {
        let v = rec.theta.to_unconstrained();
        let acc = match sum.take() {
            Some(s) => s + v,
            None => v,
        };
        let mean = &acc / (count + 1) as f64;
        sum = Some(acc);
        let theta = Theta::from_unconstrained(&mean, &rec.theta.constraint);
        let mut r = rec.clone();
        r.theta = theta;
        r.diagnostics.insert("source_iteration".into(), rec.iteration as f64);
        out.push(r);
    }
    Ok(out)
}
