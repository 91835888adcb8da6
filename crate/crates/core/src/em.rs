//! Deterministic EM for models with closed-form conditional expectations.

use crate::error::{Error, Result};
use crate::model::ExactConditional;
use crate::theta::Theta;
use crate::trajectory::{TerminationReason, Trajectory, TrajectoryRecord};

/// One EM update: exact expected sufficient statistics, then the closed-form M-step.
pub fn em_step<M: ExactConditional + ?Sized>(model: &M, theta0: &Theta) -> Result<Theta> {
    theta0.ensure_valid()?;
    if !model.loglik_linear_in_stats() {
        return Err(Error::Capability("an exact E-step in sufficient statistics"));
    }
    model.maximize_given_stats(&model.expected_stats(theta0))
}

/// Iterates [`em_step`] until the max-norm parameter change drops below `tol`.
///
/// Records `observed_loglik` as a diagnostic when the model provides it, and
/// its change as the objective increment.
pub fn run_em<M: ExactConditional + ?Sized>(
    model: &M,
    theta0: &Theta,
    tol: f64,
    max_iter: usize,
) -> Result<Trajectory> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let mut traj = Trajectory::new();
    let mut theta = theta0.clone();
    let mut prev_ll = model.observed_loglik(&theta);
    for _ in 0..max_iter {
        let next = em_step(model, &theta)?;
        let change = next.max_abs_diff(&theta);
        let mut rec = TrajectoryRecord::new(0, next.clone()).diag("param_change", change);
        if let Some(ll) = model.observed_loglik(&next) {
            rec = rec.diag("observed_loglik", ll);
            rec.objective_increment = prev_ll.map(|p| ll - p);
            prev_ll = Some(ll);
        }
        traj.push(rec);
        theta = next;
        if change < tol {
            traj.terminated = TerminationReason::Converged;
            return Ok(traj);
        }
    }
    traj.terminated = TerminationReason::MaxIterations;
    Ok(traj)
}
