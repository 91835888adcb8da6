//! Monte Carlo EM: the shared inner step and four Monte Carlo size controllers.
//!
//! Every controller draws a fresh sample at the current parameter on each
//! iteration; iteration `k` uses stream `key.child(k)` (or a named child for
//! multi-stage methods), so runs are reproducible from a single seed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::louis_information;
use crate::linalg::{inverse, outer, symmetrize, unflatten};
use crate::model::Model;
use crate::optim::{maximize, FnObjective};
use crate::rng::StreamKey;
use crate::sample::WeightedSample;
use crate::samplers::SamplerPolicy;
use crate::stats::wald_z;
use crate::theta::Theta;
use crate::trajectory::{TerminationReason, Trajectory, TrajectoryRecord};

/// Gradient tolerance for numeric M-steps.
const M_STEP_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct McemStepResult<X> {
    pub theta_new: Theta,
    pub sample: WeightedSample<X>,
    pub qhat_at_new: f64,
    pub qhat_at_old: f64,
}

impl<X> McemStepResult<X> {
    pub fn theta_old(&self) -> &Theta {
        &self.sample.target_theta
    }

    /// `Q̂(θ_new | θ_old) - Q̂(θ_old | θ_old)`.
    pub fn increment(&self) -> f64 {
        self.qhat_at_new - self.qhat_at_old
    }
}

/// `Q̂(θ | θ_old) = Σ wᵢ ℓ_c(θ; xᵢ)`.
pub fn qhat<M: Model>(model: &M, theta: &Theta, sample: &WeightedSample<M::Missing>) -> f64 {
    sample.weighted_sum(|x| model.complete_loglik(theta, x))
}

fn weighted_score<M: Model>(model: &M, theta: &Theta, sample: &WeightedSample<M::Missing>) -> DVector<f64> {
    DVector::from_vec(sample.weighted_vec_sum(model.dim(), |x| model.complete_score(theta, x).as_slice().to_vec()))
}

fn weighted_neg_hessian<M: Model>(model: &M, theta: &Theta, sample: &WeightedSample<M::Missing>) -> DMatrix<f64> {
    let p = model.dim();
    let flat = sample.weighted_vec_sum(p * p, |x| crate::linalg::flatten(&model.complete_neg_hessian(theta, x)));
    symmetrize(&unflatten(&flat, p))
}

/// Maximizes the MCEM objective over `θ` for a sample drawn at `θ_old`.
///
/// Uses the closed-form M-step on weighted sufficient statistics when the
/// complete-data log-likelihood is linear in them, otherwise a numeric
/// maximization on the unconstrained scale, where `θ_old` is kept if the
/// optimizer ends at a worse point.
pub fn mcem_inner_step<M: Model>(
    model: &M,
    theta_old: &Theta,
    sample: WeightedSample<M::Missing>,
) -> Result<McemStepResult<M::Missing>> {
    theta_old.ensure_valid()?;
    let closed_form = model.loglik_linear_in_stats();
    let candidate = if closed_form {
        let k = model.sufficient_stats(&sample.draws[0]).ok_or(Error::Capability("sufficient statistics"))?.len();
        let stats = sample.weighted_vec_sum(k, |x| {
            model.sufficient_stats(x).expect("model declared sufficient statistics").as_slice().to_vec()
        });
        model.maximize_given_stats(&DVector::from_vec(stats))?
    } else {
        let objective = FnObjective {
            value: |v: &DVector<f64>| qhat(model, &model.from_unconstrained(v), &sample),
            gradient: |v: &DVector<f64>| {
                let t = model.from_unconstrained(v);
                t.jacobian().transpose() * weighted_score(model, &t, &sample)
            },
        };
        let res = maximize(&objective, &model.to_unconstrained(theta_old), M_STEP_TOL, 200);
        if !res.converged {
            return Err(Error::Optimization {
                message: format!("M-step gradient norm {:e} after {} iterations", res.gradient_norm, res.iterations),
                iterate: res.argmax.as_slice().to_vec(),
            });
        }
        model.from_unconstrained(&res.argmax)
    };
    let qhat_at_old = qhat(model, theta_old, &sample);
    let q_new = qhat(model, &candidate, &sample);
    // A closed-form maximizer is exact; comparing it with θ_old would only trade rounding noise.
    let (theta_new, qhat_at_new) =
        if closed_form || q_new >= qhat_at_old { (candidate, q_new) } else { (theta_old.clone(), qhat_at_old) };
    Ok(McemStepResult { theta_new, sample, qhat_at_new, qhat_at_old })
}

/// Estimates `ℓ(θ_a) - ℓ(θ_b)` from a sample drawn at `θ_b`:
/// `log Σ wᵢ exp(ℓ_c(θ_a; xᵢ) - ℓ_c(θ_b; xᵢ))`, with a delta-method standard
/// error from the spread of the ratio terms. Exact enumerations carry no
/// Monte Carlo error.
pub fn estimate_log_lr<M: Model>(
    model: &M,
    theta_a: &Theta,
    theta_b: &Theta,
    sample: &WeightedSample<M::Missing>,
) -> Result<(f64, f64)> {
    let m = sample.len();
    if m < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: m });
    }
    let d: Vec<f64> =
        sample.draws.iter().map(|x| model.complete_loglik(theta_a, x) - model.complete_loglik(theta_b, x)).collect();
    let dmax = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ratios: Vec<f64> = d.iter().map(|v| (v - dmax).exp()).collect();
    let wsum: f64 = sample.weights.iter().sum();
    let mean = ratios.iter().zip(&sample.weights).map(|(r, w)| r * w).sum::<f64>() / wsum;
    let estimate = dmax + mean.ln();
    if sample.is_exact() {
        return Ok((estimate, 0.0));
    }
    // Var(Σ wᵢ rᵢ) ≈ Σ wᵢ² (rᵢ - r̄)², with the M/(M-1) small-sample correction.
    let var_mean = ratios.iter().zip(&sample.weights).map(|(r, w)| w * w * (r - mean) * (r - mean)).sum::<f64>()
        / (wsum * wsum)
        * m as f64
        / (m as f64 - 1.0);
    Ok((estimate, var_mean.sqrt() / mean))
}

/// Monte Carlo covariance of the update `θ_new` around the deterministic EM update:
/// `H⁻¹ (Σ wᵢ² S_c(θ_new; xᵢ) S_c(θ_new; xᵢ)ᵀ) H⁻¹` with `H = Σ wᵢ (-∇²ℓ_c(θ_new; xᵢ))`.
///
/// For equal weights the middle factor is `Ê[S_c S_cᵀ] / M`. Exact enumerations give zero.
pub fn mc_update_covariance<M: Model>(model: &M, step: &McemStepResult<M::Missing>) -> Result<DMatrix<f64>> {
    let p = model.dim();
    if step.sample.is_exact() {
        return Ok(DMatrix::zeros(p, p));
    }
    let theta = &step.theta_new;
    let h = weighted_neg_hessian(model, theta, &step.sample);
    let s = &step.sample;
    let flat = crate::parallel::chunked_vec_sum(crate::parallel::ExecMode::default(), s.len(), p * p, |i| {
        let sc = model.complete_score(theta, &s.draws[i]);
        let w2 = s.weights[i] * s.weights[i];
        crate::linalg::flatten(&(outer(&sc) * w2))
    });
    let middle = unflatten(&flat, p);
    let hinv = inverse(&h, "weighted complete-data Hessian")?;
    Ok(symmetrize(&(&hinv * middle * &hinv)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaQBounds {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Two-sided Wald bounds for the improvement `ΔQ = Q(θ_new | θ_old) - Q(θ_old | θ_old)`.
///
/// The standard deviation is the weighted SD of `ℓ_c(θ_new; xᵢ) - ℓ_c(θ_old; xᵢ)`
/// and the sample size is the effective sample size (infinite for exact enumerations).
pub fn delta_q_bounds<M: Model>(model: &M, step: &McemStepResult<M::Missing>, level: f64) -> Result<DeltaQBounds> {
    let s = &step.sample;
    if s.len() < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: s.len() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let old = step.theta_old();
    let new = &step.theta_new;
    let d: Vec<f64> = s.draws.iter().map(|x| model.complete_loglik(new, x) - model.complete_loglik(old, x)).collect();
    let (estimate, var) = crate::stats::weighted_mean_var(&d, &s.weights);
    let half = wald_z(level) * (var / s.effective_mc_size()).sqrt();
    Ok(DeltaQBounds { estimate, lower: estimate - half, upper: estimate + half })
}

fn step_record<X>(step: &McemStepResult<X>) -> TrajectoryRecord {
    let mut rec = TrajectoryRecord::new(0, step.theta_new.clone()).with_mc_size(step.sample.len());
    rec.objective_increment = Some(step.increment());
    if let Some(&ess) = step.sample.diagnostics.get("ess") {
        rec.diagnostics.insert("ess".into(), ess);
    }
    if let Some(&rate) = step.sample.diagnostics.get("acceptance_rate") {
        rec.diagnostics.insert("acceptance_rate".into(), rate);
    }
    rec
}

fn draw_and_step<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    sampler: &S,
    theta: &Theta,
    m: usize,
    key: StreamKey,
) -> Result<McemStepResult<M::Missing>> {
    let sample = sampler.draw(model, theta, m, key)?;
    mcem_inner_step(model, theta, sample)
}

// ---------------------------------------------------------------------------
// Fixed schedule

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeiTannerConfig {
    /// `(iterations, mc_size)` blocks run in order.
    pub schedule: Vec<(usize, usize)>,
}

impl Default for WeiTannerConfig {
    fn default() -> Self {
        Self { schedule: vec![(50, 100), (20, 1000)] }
    }
}

impl WeiTannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.iter().any(|&(_, m)| m == 0) {
            return Err(Error::Config("schedule Monte Carlo sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Runs a fixed schedule of Monte Carlo sizes with no adaptive stopping.
pub fn run_wei_tanner<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    theta0: &Theta,
    cfg: &WeiTannerConfig,
    sampler: &S,
    key: StreamKey,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    run_wei_tanner_into(model, theta0, cfg, sampler, key, &mut traj)?;
    Ok(traj)
}

/// Like [`run_wei_tanner`], but records into `traj` as it goes, so a failed run
/// leaves the iterations completed before the error.
pub fn run_wei_tanner_into<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    theta0: &Theta,
    cfg: &WeiTannerConfig,
    sampler: &S,
    key: StreamKey,
    traj: &mut Trajectory,
) -> Result<()> {
    cfg.validate()?;
    theta0.ensure_valid()?;
    let mut theta = theta0.clone();
    let mut k = 0u64;
    for &(iters, m) in &cfg.schedule {
        for _ in 0..iters {
            k += 1;
            let step = draw_and_step(model, sampler, &theta, m, key.child(k))?;
            traj.total_draws += step.sample.len() as u64;
            traj.push(step_record(&step));
            theta = step.theta_new;
        }
    }
    traj.terminated = TerminationReason::MaxIterations;
    Ok(())
}

// ---------------------------------------------------------------------------
// Pilot study, then a follow-up run stopped by a likelihood-ratio interval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChanLedolterConfig {
    pub pilot_iters: usize,
    pub pilot_mc_size: usize,
    /// Iterates after the pilot maximizer used to estimate the one-step variance.
    pub followers: usize,
    /// Target standard error of the one-step log-likelihood-ratio estimate.
    pub se_threshold: f64,
    pub ci_level: f64,
    pub max_stage2_iters: usize,
    /// Upper limit on the follow-up Monte Carlo size.
    pub max_mc_size: usize,
}

impl Default for ChanLedolterConfig {
    fn default() -> Self {
        Self {
            pilot_iters: 50,
            pilot_mc_size: 100,
            followers: 10,
            se_threshold: 1e-3,
            ci_level: 0.95,
            max_stage2_iters: 100,
            max_mc_size: 1_000_000,
        }
    }
}

impl ChanLedolterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!("ci_level must lie in (0, 1), got {}", self.ci_level)));
        }
        if !(self.se_threshold > 0.0) {
            return Err(Error::Config("se_threshold must be positive".into()));
        }
        if self.pilot_mc_size < 2 || self.followers == 0 || self.max_mc_size < self.pilot_mc_size {
            return Err(Error::Config(
                "pilot_mc_size must be at least 2, followers positive, max_mc_size at least pilot_mc_size".into(),
            ));
        }
        Ok(())
    }
}

/// Index of the first entry within `1e-12` of the maximum.
fn first_argmax(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|&v| v >= max - 1e-12).unwrap_or(0)
}

/// The `followers` pilot iterates nearest after `best` among `0..=pilot_len`;
/// when the pilot ends first, the window is filled with iterates just before `best`.
fn follower_window(best: usize, pilot_len: usize, followers: usize) -> Option<Vec<usize>> {
    if followers > pilot_len {
        return None;
    }
    let after = (pilot_len - best).min(followers);
    let before = followers - after;
    Some((best - before..best).chain(best + 1..=best + after).collect())
}

/// Two-stage MCEM.
///
/// The pilot runs `pilot_iters` iterations at `pilot_mc_size`, accumulating
/// one-step log-likelihood ratios relative to `θ₀`. One-step MCEM runs from the
/// `followers` iterates after the best pilot iterate (or nearest to it, when
/// the pilot ends sooner) give a pooled standard error, which sets the follow-up size assuming the standard error scales as
/// `1/M` near the maximizer. The follow-up restarts from the best pilot iterate
/// and stops once the Wald interval for a one-step ratio contains zero.
///
/// The trajectory holds the pilot iterates up to the best one, then the
/// follow-up iterates; `stage` in the diagnostics tells them apart.
pub fn run_chan_ledolter<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    theta0: &Theta,
    cfg: &ChanLedolterConfig,
    sampler: &S,
    key: StreamKey,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    run_chan_ledolter_into(model, theta0, cfg, sampler, key, &mut traj)?;
    Ok(traj)
}

/// Like [`run_chan_ledolter`], but records into `traj` as it goes, so a failed run
/// leaves the iterations completed before the error.
pub fn run_chan_ledolter_into<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    theta0: &Theta,
    cfg: &ChanLedolterConfig,
    sampler: &S,
    key: StreamKey,
    traj: &mut Trajectory,
) -> Result<()> {
    cfg.validate()?;
    theta0.ensure_valid()?;
    let mp = cfg.pilot_mc_size;

    // Stage 1. Sample k is drawn at θ_k; it drives the step to θ_{k+1} and
    // the ratio for the step from θ_{k-1}.
    let pilot_key = key.named("pilot");
    let mut thetas = vec![theta0.clone()];
    let mut cumulative = vec![0.0];
    let mut records = Vec::new();
    let mut sample = sampler.draw(model, theta0, mp, pilot_key.child(0))?;
    traj.total_draws += sample.len() as u64;
    for k in 1..=cfg.pilot_iters {
        let prev = thetas[k - 1].clone();
        let step = mcem_inner_step(model, &prev, sample)?;
        let theta_k = step.theta_new.clone();
        let next = sampler.draw(model, &theta_k, mp, pilot_key.child(k as u64))?;
        traj.total_draws += next.len() as u64;
        let (lr, se) = estimate_log_lr(model, &prev, &theta_k, &next)?;
        let lr = -lr;
        let cum = cumulative[k - 1] + lr;
        let mut rec = step_record(&step).diag("stage", 1.0).diag("cumulative_log_lr", cum).diag("se", se);
        rec.objective_increment = Some(lr);
        records.push(rec);
        thetas.push(theta_k);
        cumulative.push(cum);
        sample = next;
    }
    let best = first_argmax(&cumulative);
    let window = follower_window(best, cfg.pilot_iters, cfg.followers).ok_or(Error::InsufficientPilot {
        maximizer: best,
        pilot_len: cfg.pilot_iters,
        followers: cfg.followers,
    })?;
    for rec in records.into_iter().take(best) {
        traj.push(rec);
    }

    // Pooled one-step variance from the iterates following the maximizer.
    let follow_key = key.named("followers");
    let mut var_sum = 0.0;
    for i in window {
        let fk = follow_key.child(i as u64);
        let step = draw_and_step(model, sampler, &thetas[i], mp, fk.child(0))?;
        let after = sampler.draw(model, &step.theta_new, mp, fk.child(1))?;
        traj.total_draws += (step.sample.len() + after.len()) as u64;
        let (_, se) = estimate_log_lr(model, &thetas[i], &step.theta_new, &after)?;
        var_sum += se * se;
    }
    let pooled_se = (var_sum / cfg.followers as f64).sqrt();
    let m2 = ((mp as f64 * pooled_se / cfg.se_threshold).ceil() as usize).clamp(mp, cfg.max_mc_size);

    // Stage 2.
    let stage2_key = key.named("stage2");
    let z = wald_z(cfg.ci_level);
    let mut theta = thetas[best].clone();
    let mut sample = sampler.draw(model, &theta, m2, stage2_key.child(0))?;
    traj.total_draws += sample.len() as u64;
    traj.terminated = TerminationReason::MaxIterations;
    for t in 1..=cfg.max_stage2_iters {
        let step = mcem_inner_step(model, &theta, sample)?;
        let next = sampler.draw(model, &step.theta_new, m2, stage2_key.child(t as u64))?;
        traj.total_draws += next.len() as u64;
        let (lr, se) = estimate_log_lr(model, &theta, &step.theta_new, &next)?;
        let lr = -lr;
        let (lo, hi) = (lr - z * se, lr + z * se);
        let mut rec = step_record(&step).diag("stage", 2.0).diag("se", se).diag("pooled_pilot_se", pooled_se);
        rec.objective_increment = Some(lr);
        rec.ci_lower = Some(lo);
        rec.ci_upper = Some(hi);
        traj.push(rec);
        theta = step.theta_new;
        sample = next;
        if lo <= 0.0 && 0.0 <= hi {
            traj.terminated = TerminationReason::CiContainsZero;
            break;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Escalation when the update interval covers the previous estimate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoothHobertConfig {
    pub m0: usize,
    /// Miss probability of the per-component update intervals.
    pub alpha: f64,
    /// Escalation divisor: `M ← M + ⌈M / r⌉`.
    pub r: usize,
    pub delta1: f64,
    pub delta2: f64,
    /// Consecutive iterations the relative-error rule must hold.
    pub consecutive: usize,
    /// Use statistical standard errors instead of `|θ|` in the relative-error denominators.
    pub se_rule: bool,
    /// Escalate when the coefficient of variation of recent relative steps grows.
    pub ripatti_variant: bool,
    pub max_iters: usize,
    /// Escalation never goes beyond this size.
    pub max_mc_size: usize,
}

impl Default for BoothHobertConfig {
    fn default() -> Self {
        Self {
            m0: 10,
            alpha: 0.25,
            r: 3,
            delta1: 1e-3,
            delta2: 2e-3,
            consecutive: 3,
            se_rule: false,
            ripatti_variant: false,
            max_iters: 200,
            max_mc_size: 1_000_000,
        }
    }
}

impl BoothHobertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m0 == 0 || self.r == 0 || self.consecutive == 0 || self.max_mc_size < self.m0 {
            return Err(Error::Config("m0, r and consecutive must be positive and max_mc_size at least m0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.delta1 > 0.0 && self.delta2 > 0.0) {
            return Err(Error::Config("delta1 and delta2 must be positive".into()));
        }
        Ok(())
    }
}

/// `M + ⌈M / r⌉`, i.e. `⌈M (1 + 1/r)⌉`.
pub fn escalate(m: usize, r: usize) -> usize {
    m + m.div_ceil(r)
}

fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if mean == 0.0 {
        0.0
    } else {
        var.sqrt() / mean
    }
}

/// MCEM with Monte Carlo size escalation driven by update intervals.
///
/// Each iteration builds a `(1 - alpha)` box interval for the EM update from
/// the sandwich covariance. If the box contains the previous estimate, the next
/// iteration uses `M + ⌈M/r⌉` draws. The run stops once the relative-error
/// rule has held for `consecutive` iterations; stopping is checked before
/// escalation. With `se_rule` the denominators are statistical standard errors
/// from Louis' identity on the iteration's sample; iterations where that
/// information is not positive definite do not count towards the streak.
pub fn run_booth_hobert<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    theta0: &Theta,
    cfg: &BoothHobertConfig,
    sampler: &S,
    key: StreamKey,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    run_booth_hobert_into(model, theta0, cfg, sampler, key, &mut traj)?;
    Ok(traj)
}

/// Like [`run_booth_hobert`], but records into `traj` as it goes, so a failed run
/// leaves the iterations completed before the error.
pub fn run_booth_hobert_into<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    theta0: &Theta,
    cfg: &BoothHobertConfig,
    sampler: &S,
    key: StreamKey,
    traj: &mut Trajectory,
) -> Result<()> {
    cfg.validate()?;
    theta0.ensure_valid()?;
    let z = wald_z(1.0 - cfg.alpha);
    let mut theta = theta0.clone();
    let mut m = cfg.m0;
    let mut streak = 0usize;
    let mut rel_steps: Vec<f64> = Vec::new();
    for k in 1..=cfg.max_iters {
        let step = draw_and_step(model, sampler, &theta, m, key.child(k as u64))?;
        traj.total_draws += step.sample.len() as u64;
        let cov = mc_update_covariance(model, &step)?;
        let se: Vec<f64> = (0..model.dim()).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
        let new = &step.theta_new;
        let covers = new.values.iter().zip(&theta.values).zip(&se).all(|((n, o), s)| (n - o).abs() <= z * s);
        let rel = new
            .values
            .iter()
            .zip(&theta.values)
            .map(|(n, o)| (n - o).abs() / (o.abs() + cfg.delta1))
            .fold(0.0, f64::max);
        let criterion = if cfg.se_rule {
            match louis_information(model, new, &step.sample, true) {
                Ok(report) => new
                    .values
                    .iter()
                    .zip(&theta.values)
                    .zip(&report.std_errors)
                    .map(|((n, o), s)| (n - o).abs() / (s + cfg.delta1))
                    .fold(0.0, f64::max),
                Err(Error::IndefiniteInformation { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            }
        } else {
            rel
        };
        rel_steps.push(rel);
        streak = if criterion < cfg.delta2 { streak + 1 } else { 0 };

        let escalate_now = if cfg.ripatti_variant {
            let n = rel_steps.len();
            n >= 4 && coefficient_of_variation(&rel_steps[n - 3..]) > coefficient_of_variation(&rel_steps[n - 4..n - 1])
        } else {
            covers
        };
        let mut rec =
            step_record(&step).diag("relative_error", criterion).diag("interval_covers_previous", covers as u8 as f64);
        for (j, s) in se.iter().enumerate() {
            rec.diagnostics.insert(format!("se_{j}"), *s);
        }
        traj.push(rec);
        theta = step.theta_new;
        if streak >= cfg.consecutive {
            traj.terminated = TerminationReason::Converged;
            return Ok(());
        }
        if escalate_now {
            m = escalate(m, cfg.r).min(cfg.max_mc_size);
        }
    }
    traj.terminated = TerminationReason::MaxIterations;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ascent-based sample augmentation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaffoConfig {
    pub m0: usize,
    /// Level of the lower bound that must be positive before accepting an update.
    pub ascent_level: f64,
    /// Level of the upper bound compared against `tau`.
    pub term_level: f64,
    pub tau: f64,
    /// Fresh draws added per augmentation, as a fraction of the current size.
    pub augment_fraction: f64,
    pub max_iters: usize,
    pub max_augments_per_iter: usize,
}

impl Default for CaffoConfig {
    fn default() -> Self {
        Self {
            m0: 10,
            ascent_level: 0.80,
            term_level: 0.90,
            tau: 1e-3,
            augment_fraction: 0.5,
            max_iters: 200,
            max_augments_per_iter: 20,
        }
    }
}

impl CaffoConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.ascent_level) || !in_unit(self.term_level) {
            return Err(Error::Config("confidence levels must lie in (0, 1)".into()));
        }
        if !(self.tau > 0.0 && self.augment_fraction > 0.0) || self.m0 < 2 {
            return Err(Error::Config("tau and augment_fraction must be positive and m0 at least 2".into()));
        }
        Ok(())
    }
}

/// MCEM with ascent checks.
///
/// An update is accepted only once the lower `ascent_level` bound on the
/// objective increment is positive; until then the iteration's sample is
/// augmented with `⌈M · augment_fraction⌉` fresh draws and the step redone.
/// The run stops when the upper `term_level` bound falls below `tau`; that
/// check also ends augmentation, since no further ascent is worth certifying. The
/// next iteration starts from the final augmented size.
pub fn run_caffo<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    theta0: &Theta,
    cfg: &CaffoConfig,
    sampler: &S,
    key: StreamKey,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    run_caffo_into(model, theta0, cfg, sampler, key, &mut traj)?;
    Ok(traj)
}

/// Like [`run_caffo`], but records into `traj` as it goes, so a failed run
/// leaves the iterations completed before the error.
pub fn run_caffo_into<M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &M,
    theta0: &Theta,
    cfg: &CaffoConfig,
    sampler: &S,
    key: StreamKey,
    traj: &mut Trajectory,
) -> Result<()> {
    cfg.validate()?;
    theta0.ensure_valid()?;
    let mut theta = theta0.clone();
    let mut m = cfg.m0;
    for k in 1..=cfg.max_iters {
        let ik = key.child(k as u64);
        let mut step = draw_and_step(model, sampler, &theta, m, ik.child(0))?;
        traj.total_draws += step.sample.len() as u64;
        let mut augments = 0usize;
        let mut bounds = delta_q_bounds(model, &step, cfg.ascent_level)?;
        let mut term = delta_q_bounds(model, &step, cfg.term_level)?;
        while bounds.lower <= 0.0 && term.upper >= cfg.tau && !step.sample.is_exact() {
            if augments == cfg.max_augments_per_iter {
                return Err(Error::AugmentationStall {
                    iteration: k,
                    mc_size: step.sample.len(),
                    theta: theta.values.clone(),
                });
            }
            augments += 1;
            let extra = (step.sample.len() as f64 * cfg.augment_fraction).ceil() as usize;
            let fresh = sampler.draw(model, &theta, extra, ik.child(augments as u64))?;
            traj.total_draws += fresh.len() as u64;
            let merged = step.sample.merge(fresh)?;
            step = mcem_inner_step(model, &theta, merged)?;
            bounds = delta_q_bounds(model, &step, cfg.ascent_level)?;
            term = delta_q_bounds(model, &step, cfg.term_level)?;
        }
        let mut rec = step_record(&step).diag("augmentations", augments as f64);
        rec.ci_lower = Some(bounds.lower);
        rec.ci_upper = Some(term.upper);
        traj.push(rec);
        m = m.max(step.sample.len());
        theta = step.theta_new;
        if term.upper < cfg.tau {
            traj.terminated = TerminationReason::IncrementBelowTau;
            return Ok(());
        }
    }
    traj.terminated = TerminationReason::MaxIterations;
    Ok(())
}
