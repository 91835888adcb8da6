//! Draws from the missing-data distribution `f_m(x | y; θ)`.
//!
//! Every sampler takes a [`StreamKey`] instead of a generator. Direct and
//! importance draws are produced in fixed-size chunks, chunk `c` using stream
//! `key.child(c)`, so the result does not depend on how chunks are scheduled.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::parallel::{map_indexed, ExecMode, CHUNK};
use crate::rng::{StreamKey, StreamRng};
use crate::sample::{SamplerKind, WeightedSample};
use crate::theta::Theta;

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalKind {
    /// Proposals ignore the current state.
    Independence,
    /// Symmetric moves around the current state.
    RandomWalk { step_scale: Vec<f64> },
}

/// A proposal distribution `g` over missing-data points.
pub trait Proposal<X>: Send + Sync {
    fn kind(&self) -> ProposalKind;

    /// Draws a point; random-walk proposals move from `current`.
    fn propose(&self, current: Option<&X>, rng: &mut StreamRng) -> X;

    /// `log g(to | from)`, possibly unnormalized.
    fn log_density(&self, to: &X, from: Option<&X>) -> f64;
}

/// The model's own conditional distribution at a fixed parameter.
pub struct ModelConditional<'a, M: Model> {
    model: &'a M,
    theta: Theta,
}

impl<'a, M: Model> ModelConditional<'a, M> {
    pub fn new(model: &'a M, theta: Theta) -> Result<Self> {
        if !model.has_direct_sampler() {
            return Err(Error::Capability("a direct conditional sampler"));
        }
        theta.ensure_valid()?;
        Ok(Self { model, theta })
    }
}

impl<M: Model> Proposal<M::Missing> for ModelConditional<'_, M> {
    fn kind(&self) -> ProposalKind {
        ProposalKind::Independence
    }

    fn propose(&self, _current: Option<&M::Missing>, rng: &mut StreamRng) -> M::Missing {
        self.model
            .sample_conditional_direct(&self.theta, 1, rng)
            .expect("parameter validated at construction")
            .pop()
            .expect("one draw requested")
    }

    fn log_density(&self, to: &M::Missing, _from: Option<&M::Missing>) -> f64 {
        self.model.conditional_log_density_unnorm(&self.theta, to)
    }
}

/// Independent Gaussian steps on every component of a real vector.
#[derive(Debug, Clone)]
pub struct GaussianRandomWalk {
    pub scale: Vec<f64>,
}

impl Proposal<Vec<f64>> for GaussianRandomWalk {
    fn kind(&self) -> ProposalKind {
        ProposalKind::RandomWalk { step_scale: self.scale.clone() }
    }

    fn propose(&self, current: Option<&Vec<f64>>, rng: &mut StreamRng) -> Vec<f64> {
        let cur = current.cloned().unwrap_or_else(|| vec![0.0; self.scale.len()]);
        cur.iter()
            .zip(self.scale.iter().cycle())
            .map(|(x, s)| {
                let z: f64 = rng.sample(StandardNormal);
                x + s * z
            })
            .collect()
    }

    fn log_density(&self, _to: &Vec<f64>, _from: Option<&Vec<f64>>) -> f64 {
        0.0
    }
}

fn chunked_draws<X, F>(mode: ExecMode, m: usize, key: StreamKey, draw: F) -> Vec<X>
where
    X: Send,
    F: Fn(&mut StreamRng) -> X + Sync + Send,
{
    let chunks = m.div_ceil(CHUNK);
    let parts = map_indexed(mode, chunks, |c| {
        let mut rng = key.child(c as u64).rng();
        let len = CHUNK.min(m - c * CHUNK);
        (0..len).map(|_| draw(&mut rng)).collect::<Vec<X>>()
    });
    parts.into_iter().flatten().collect()
}

/// `m` iid draws with weights `1/m`.
pub fn sample_direct<M: Model>(
    model: &M,
    theta: &Theta,
    m: usize,
    key: StreamKey,
) -> Result<WeightedSample<M::Missing>> {
    sample_direct_with(ExecMode::default(), model, theta, m, key)
}

pub fn sample_direct_with<M: Model>(
    mode: ExecMode,
    model: &M,
    theta: &Theta,
    m: usize,
    key: StreamKey,
) -> Result<WeightedSample<M::Missing>> {
    if !model.has_direct_sampler() {
        return Err(Error::Capability("a direct conditional sampler"));
    }
    if m == 0 {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    theta.ensure_valid()?;
    let chunks = m.div_ceil(CHUNK);
    let parts = map_indexed(mode, chunks, |c| {
        let mut rng = key.child(c as u64).rng();
        let len = CHUNK.min(m - c * CHUNK);
        model.sample_conditional_direct(theta, len, &mut rng)
    });
    let mut draws = Vec::with_capacity(m);
    for p in parts {
        draws.extend(p?);
    }
    WeightedSample::uniform(draws, SamplerKind::Direct, theta.clone(), key)
}

/// Self-normalized importance sampling from an independence proposal.
///
/// With `truncate`, raw weights are clamped at `√M` times their mean.
pub fn sample_importance<M: Model, P: Proposal<M::Missing>>(
    model: &M,
    theta: &Theta,
    proposal: &P,
    m: usize,
    truncate: bool,
    key: StreamKey,
) -> Result<WeightedSample<M::Missing>> {
    if m < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: m });
    }
    if proposal.kind() != ProposalKind::Independence {
        return Err(Error::Config("importance sampling needs an independence proposal".into()));
    }
    theta.ensure_valid()?;
    let draws = chunked_draws(ExecMode::default(), m, key, |rng| proposal.propose(None, rng));
    let log_w: Vec<f64> = draws
        .iter()
        .map(|x| model.conditional_log_density_unnorm(theta, x) - proposal.log_density(x, None))
        .map(|l| if l.is_nan() { f64::NEG_INFINITY } else { l })
        .collect();
    let mut s = WeightedSample::from_log_weights(draws, log_w, truncate, theta.clone(), key)?;
    let ess = s.effective_sample_size();
    s.diagnostics.insert("ess".into(), ess);
    Ok(s)
}

/// Accept–reject sampling under the envelope `exp(log_c) · g`.
///
/// The caller guarantees `log f_m(x) ≤ log_c + log g(x)` everywhere.
pub fn sample_rejection<M: Model, P: Proposal<M::Missing>>(
    model: &M,
    theta: &Theta,
    proposal: &P,
    envelope_log_const: f64,
    m: usize,
    max_proposals: usize,
    key: StreamKey,
) -> Result<WeightedSample<M::Missing>> {
    if m == 0 {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    theta.ensure_valid()?;
    let mut rng = key.rng();
    let mut draws = Vec::with_capacity(m);
    let mut consumed = 0usize;
    while draws.len() < m {
        if consumed >= max_proposals {
            return Err(Error::BudgetExhausted { accepted: draws.len(), requested: m, consumed });
        }
        let x = proposal.propose(None, &mut rng);
        consumed += 1;
        let log_accept =
            model.conditional_log_density_unnorm(theta, &x) - envelope_log_const - proposal.log_density(&x, None);
        let u: f64 = rng.random();
        if u.ln() < log_accept {
            draws.push(x);
        }
    }
    let mut s = WeightedSample::uniform(draws, SamplerKind::Rejection, theta.clone(), key)?;
    s.diagnostics.insert("proposals_consumed".into(), consumed as f64);
    s.diagnostics.insert("acceptance_rate".into(), m as f64 / consumed as f64);
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct MhConfig<P> {
    pub burn_in: usize,
    pub thinning: usize,
    pub proposal: P,
}

impl<P> MhConfig<P> {
    pub fn validate<X>(&self) -> Result<()>
    where
        P: Proposal<X>,
    {
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if let ProposalKind::RandomWalk { step_scale } = self.proposal.kind() {
            if step_scale.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::Config("random-walk step scales must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Metropolis–Hastings chain started at `init`.
///
/// `burn_in` steps are discarded, then `m · thinning` steps are run and every
/// `thinning`-th state is kept. A rejected move repeats the current state.
pub fn sample_mh<M: Model, P: Proposal<M::Missing>>(
    model: &M,
    theta: &Theta,
    cfg: &MhConfig<P>,
    m: usize,
    init: M::Missing,
    key: StreamKey,
) -> Result<WeightedSample<M::Missing>> {
    cfg.validate::<M::Missing>()?;
    if m == 0 {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    theta.ensure_valid()?;
    let mut current = init;
    let mut log_target = model.conditional_log_density_unnorm(theta, &current);
    if !log_target.is_finite() {
        return Err(Error::InvalidInit);
    }
    let mut rng = key.rng();
    let total = cfg.burn_in + m * cfg.thinning;
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(m);
    for step in 0..total {
        let cand = cfg.proposal.propose(Some(&current), &mut rng);
        let cand_target = model.conditional_log_density_unnorm(theta, &cand);
        let correction =
            cfg.proposal.log_density(&current, Some(&cand)) - cfg.proposal.log_density(&cand, Some(&current));
        let log_r = (cand_target - log_target) + correction;
        let accept = cand_target.is_finite() && (log_r >= 0.0 || rng.random::<f64>().ln() < log_r);
        if accept {
            current = cand;
            log_target = cand_target;
            accepted += 1;
        }
        if step >= cfg.burn_in && (step - cfg.burn_in + 1).is_multiple_of(cfg.thinning) {
            draws.push(current.clone());
        }
    }
    let mut s = WeightedSample::uniform(draws, SamplerKind::MetropolisHastings, theta.clone(), key)?;
    s.diagnostics.insert("acceptance_rate".into(), accepted as f64 / total as f64);
    Ok(s)
}

pub fn effective_sample_size<X>(s: &WeightedSample<X>) -> f64 {
    s.effective_sample_size()
}

/// How an engine obtains its Monte Carlo sample at a given parameter.
pub trait SamplerPolicy<M: Model>: Send + Sync {
    fn draw(&self, model: &M, theta: &Theta, m: usize, key: StreamKey) -> Result<WeightedSample<M::Missing>>;
}

/// iid draws from the model's conditional sampler.
#[derive(Debug, Clone, Copy, Default)]
pub struct Direct;

impl<M: Model> SamplerPolicy<M> for Direct {
    fn draw(&self, model: &M, theta: &Theta, m: usize, key: StreamKey) -> Result<WeightedSample<M::Missing>> {
        sample_direct(model, theta, m, key)
    }
}

/// The full conditional support with exact probabilities; `m` and the stream are ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exact;

impl<M: Model> SamplerPolicy<M> for Exact {
    fn draw(&self, model: &M, theta: &Theta, _m: usize, _key: StreamKey) -> Result<WeightedSample<M::Missing>> {
        theta.ensure_valid()?;
        let support = model.enumerate_conditional(theta).ok_or(Error::Capability("a finite conditional support"))?;
        let (draws, probs) = support.into_iter().unzip();
        WeightedSample::enumeration(draws, probs, theta.clone())
    }
}

/// Importance sampling from a proposal built for each target parameter.
pub struct Importance<F> {
    pub build: F,
    pub truncate: bool,
}

impl<M, F, P> SamplerPolicy<M> for Importance<F>
where
    M: Model,
    F: Fn(&M, &Theta) -> Result<P> + Send + Sync,
    P: Proposal<M::Missing>,
{
    fn draw(&self, model: &M, theta: &Theta, m: usize, key: StreamKey) -> Result<WeightedSample<M::Missing>> {
        let proposal = (self.build)(model, theta)?;
        sample_importance(model, theta, &proposal, m.max(2), self.truncate, key)
    }
}

/// Rejection sampling; the builder returns the proposal and envelope constant.
pub struct Rejection<F> {
    pub build: F,
    /// Proposal budget per requested draw.
    pub budget_factor: usize,
}

impl<M, F, P> SamplerPolicy<M> for Rejection<F>
where
    M: Model,
    F: Fn(&M, &Theta) -> Result<(P, f64)> + Send + Sync,
    P: Proposal<M::Missing>,
{
    fn draw(&self, model: &M, theta: &Theta, m: usize, key: StreamKey) -> Result<WeightedSample<M::Missing>> {
        let (proposal, log_c) = (self.build)(model, theta)?;
        sample_rejection(model, theta, &proposal, log_c, m, m.saturating_mul(self.budget_factor), key)
    }
}

/// Metropolis–Hastings with a proposal and starting point built per target parameter.
pub struct Mh<F, G> {
    pub build: F,
    pub init: G,
    pub burn_in: usize,
    pub thinning: usize,
}

impl<M, F, G, P> SamplerPolicy<M> for Mh<F, G>
where
    M: Model,
    F: Fn(&M, &Theta) -> Result<P> + Send + Sync,
    G: Fn(&M, &Theta) -> M::Missing + Send + Sync,
    P: Proposal<M::Missing>,
{
    fn draw(&self, model: &M, theta: &Theta, m: usize, key: StreamKey) -> Result<WeightedSample<M::Missing>> {
        let cfg = MhConfig { burn_in: self.burn_in, thinning: self.thinning, proposal: (self.build)(model, theta)? };
        sample_mh(model, theta, &cfg, m, (self.init)(model, theta), key)
    }
}

impl<M: Model> SamplerPolicy<M> for Box<dyn SamplerPolicy<M>> {
    fn draw(&self, model: &M, theta: &Theta, m: usize, key: StreamKey) -> Result<WeightedSample<M::Missing>> {
        self.as_ref().draw(model, theta, m, key)
    }
}
