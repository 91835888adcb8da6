//! Monte Carlo maximum likelihood.
//!
//! One sample at a reference parameter `θ*` estimates the whole surface
//! `ℓ(θ) - ℓ(θ*) ≈ log Σ wᵢ exp(ℓ_c(θ; xᵢ) - ℓ_c(θ*; xᵢ))`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{maximize, FnObjective};
use crate::rng::StreamKey;
use crate::sample::WeightedSample;
use crate::samplers::SamplerPolicy;
use crate::theta::Theta;

/// Optional extra term added to the surface, for models whose complete-data
/// likelihood is only known up to a parameter-dependent normalizer.
pub type SecondTerm = Box<dyn Fn(&Theta) -> f64 + Send + Sync>;

pub struct McmlSurface<'a, M: Model> {
    pub model: &'a M,
    pub theta_star: Theta,
    pub sample: WeightedSample<M::Missing>,
    pub second_term: Option<SecondTerm>,
    base: Vec<f64>,
}

impl<'a, M: Model> McmlSurface<'a, M> {
    pub fn from_sample(model: &'a M, sample: WeightedSample<M::Missing>) -> Result<Self> {
        if sample.len() < 2 {
            return Err(Error::InsufficientSample { needed: 2, got: sample.len() });
        }
        let theta_star = sample.target_theta.clone();
        let base = sample.draws.iter().map(|x| model.complete_loglik(&theta_star, x)).collect();
        Ok(Self { model, theta_star, sample, second_term: None, base })
    }

    fn log_ratios(&self, theta: &Theta) -> Vec<f64> {
        self.sample.draws.iter().zip(&self.base).map(|(x, b)| self.model.complete_loglik(theta, x) - b).collect()
    }

    /// Estimated `ℓ(θ) - ℓ(θ*)`; exactly zero at `θ*`.
    pub fn eval(&self, theta: &Theta) -> f64 {
        let d = self.log_ratios(theta);
        let dmax = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w = &self.sample.weights;
        let num: f64 = d.iter().zip(w).map(|(v, w)| w * (v - dmax).exp()).sum();
        let den: f64 = w.iter().sum();
        let extra = self.second_term.as_ref().map_or(0.0, |f| f(theta));
        dmax + (num / den).ln() + extra
    }

    /// Gradient of [`Self::eval`] in `θ` (without the optional second term):
    /// complete scores averaged with the tilted weights `wᵢ exp(dᵢ) / Σ`.
    pub fn gradient(&self, theta: &Theta) -> DVector<f64> {
        let d = self.log_ratios(theta);
        let dmax = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tilted: Vec<f64> = d.iter().zip(&self.sample.weights).map(|(v, w)| w * (v - dmax).exp()).collect();
        let total: f64 = tilted.iter().sum();
        let mut g = DVector::zeros(self.model.dim());
        for (x, t) in self.sample.draws.iter().zip(&tilted) {
            g += self.model.complete_score(theta, x) * (t / total);
        }
        g
    }
}

/// Draws `m` points at `θ*` and builds the likelihood-ratio surface.
pub fn mcml_surface<'a, M: Model, S: SamplerPolicy<M> + ?Sized>(
    model: &'a M,
    theta_star: &Theta,
    m: usize,
    sampler: &S,
    key: StreamKey,
) -> Result<McmlSurface<'a, M>> {
    if m < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: m });
    }
    theta_star.ensure_valid()?;
    let sample = sampler.draw(model, theta_star, m, key)?;
    McmlSurface::from_sample(model, sample)
}

/// Maximizes the surface on the unconstrained scale starting from `θ_init`.
pub fn mcml_maximize<M: Model>(surface: &McmlSurface<'_, M>, theta_init: &Theta) -> Result<Theta> {
    theta_init.ensure_valid()?;
    let model = surface.model;
    if surface.second_term.is_some() {
        // Value-only extra term: differentiate the whole surface numerically.
        let objective = FnObjective {
            value: |v: &DVector<f64>| surface.eval(&model.from_unconstrained(v)),
            gradient: |v: &DVector<f64>| {
                DVector::from_fn(v.len(), |j, _| {
                    let h = 1e-6 * (1.0 + v[j].abs());
                    let mut up = v.clone();
                    up[j] += h;
                    let mut dn = v.clone();
                    dn[j] -= h;
                    (surface.eval(&model.from_unconstrained(&up)) - surface.eval(&model.from_unconstrained(&dn)))
                        / (2.0 * h)
                })
            },
        };
        return finish(model, maximize(&objective, &model.to_unconstrained(theta_init), 1e-7, 200));
    }
    let objective = FnObjective {
        value: |v: &DVector<f64>| surface.eval(&model.from_unconstrained(v)),
        gradient: |v: &DVector<f64>| {
            let t = model.from_unconstrained(v);
            t.jacobian().transpose() * surface.gradient(&t)
        },
    };
    finish(model, maximize(&objective, &model.to_unconstrained(theta_init), 1e-9, 200))
}

fn finish<M: Model>(model: &M, res: crate::optim::OptimResult) -> Result<Theta> {
    if !res.converged {
        return Err(Error::Optimization {
            message: format!("surface gradient norm {:e} after {} iterations", res.gradient_norm, res.iterations),
            iterate: res.argmax.as_slice().to_vec(),
        });
    }
    Ok(model.from_unconstrained(&res.argmax))
}
