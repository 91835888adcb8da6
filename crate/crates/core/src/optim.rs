//! Smooth unconstrained maximization and score-equation root finding.
//!
//! Constraints are handled by the caller through `Theta`'s transforms; the
//! optimizer itself only sees ℝᵖ.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{inverse, symmetrize, vec_max_norm};
use crate::model::Model;
use crate::theta::Theta;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Rounding allowance on objective comparisons, so steps whose predicted gain
/// is below the resolution of `f` are not rejected at random.
fn value_slack(f: f64) -> f64 {
    16.0 * f64::EPSILON * (1.0 + f.abs())
}

/// Predicted gains below this are lost in the rounding of objectives that are
/// differences of much larger terms, so such steps are judged by the gradient.
fn gain_floor(f: f64) -> f64 {
    1e-12 * (1.0 + f.abs())
}

fn armijo(from: f64, to: f64, step: f64, slope: f64) -> bool {
    to >= from + ARMIJO * step * slope - value_slack(from)
}

pub trait Objective {
    fn value(&self, v: &DVector<f64>) -> f64;
    fn gradient(&self, v: &DVector<f64>) -> DVector<f64>;
}

/// Objective assembled from a value closure and a gradient closure.
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn value(&self, v: &DVector<f64>) -> f64 {
        (self.value)(v)
    }
    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(v)
    }
}

/// One accepted line-search step.
#[derive(Debug, Clone, Copy)]
pub struct LineStep {
    pub from_value: f64,
    pub to_value: f64,
    pub step: f64,
    /// `gᵀd` at the start of the step.
    pub slope: f64,
    pub newton: bool,
}

impl LineStep {
    pub fn satisfies_armijo(&self) -> bool {
        armijo(self.from_value, self.to_value, self.step, self.slope)
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub argmax: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub steps: Vec<LineStep>,
}

/// Hessian by central differences of the gradient, `h_j = 1e-6 (1 + |v_j|)`.
pub fn fd_hessian<O: Objective + ?Sized>(f: &O, v: &DVector<f64>) -> DMatrix<f64> {
    let p = v.len();
    let mut h = DMatrix::zeros(p, p);
    for j in 0..p {
        let step = 1e-6 * (1.0 + v[j].abs());
        let mut vp = v.clone();
        vp[j] += step;
        let mut vm = v.clone();
        vm[j] -= step;
        let col = (f.gradient(&vp) - f.gradient(&vm)) / (2.0 * step);
        h.set_column(j, &col);
    }
    symmetrize(&h)
}

fn backtrack<O: Objective + ?Sized>(
    f: &O,
    v: &DVector<f64>,
    fv: f64,
    d: &DVector<f64>,
    slope: f64,
) -> Option<(DVector<f64>, f64, f64)> {
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let cand = v + d * t;
        let fc = f.value(&cand);
        if fc.is_finite() && armijo(fv, fc, t, slope) {
            return Some((cand, fc, t));
        }
        t *= 0.5;
    }
    None
}

/// Maximizes `f` from `v0`.
///
/// Newton steps use a finite-difference Hessian; when the Newton direction is
/// not an ascent direction (or the Hessian is singular) a gradient step is
/// taken instead. Steps are accepted by Armijo backtracking, up to the
/// rounding resolution of the objective; a Newton step whose predicted gain is
/// below that resolution is taken whole when it shrinks the gradient. Convergence
/// means the gradient max-norm fell below `tol`; running out of iterations or
/// line-search progress yields `converged = false`.
pub fn maximize<O: Objective + ?Sized>(f: &O, v0: &DVector<f64>, tol: f64, max_iter: usize) -> OptimResult {
    let mut v = v0.clone();
    let mut fv = f.value(&v);
    let mut steps = Vec::new();
    let mut g = f.gradient(&v);
    let mut iterations = 0;
    while iterations < max_iter {
        if vec_max_norm(&g) < tol {
            return OptimResult {
                argmax: v,
                value: fv,
                gradient_norm: vec_max_norm(&g),
                converged: true,
                iterations,
                steps,
            };
        }
        iterations += 1;
        let hess = fd_hessian(f, &v);
        let newton = hess.clone().lu().solve(&(-&g)).filter(|d| d.iter().all(|x| x.is_finite()) && g.dot(d) > 0.0);
        let mut accepted = None;
        if let Some(d) = newton {
            let slope = g.dot(&d);
            if slope < gain_floor(fv) {
                let cand = &v + &d;
                let gc = f.gradient(&cand);
                if vec_max_norm(&gc) < vec_max_norm(&g) {
                    let fc = f.value(&cand);
                    if fc.is_finite() {
                        steps.push(LineStep { from_value: fv, to_value: fc, step: 1.0, slope, newton: true });
                        v = cand;
                        fv = fc;
                        g = gc;
                        continue;
                    }
                }
            }
            if let Some((cand, fc, t)) = backtrack(f, &v, fv, &d, slope) {
                accepted = Some((cand, fc, t, slope, true));
            }
        }
        if accepted.is_none() {
            let scale = vec_max_norm(&g).max(1.0);
            let d = &g / scale;
            let slope = g.dot(&d);
            if let Some((cand, fc, t)) = backtrack(f, &v, fv, &d, slope) {
                accepted = Some((cand, fc, t, slope, false));
            }
        }
        let Some((cand, fc, t, slope, was_newton)) = accepted else {
            break;
        };
        steps.push(LineStep { from_value: fv, to_value: fc, step: t, slope, newton: was_newton });
        v = cand;
        fv = fc;
        g = f.gradient(&v);
    }
    let gn = vec_max_norm(&g);
    OptimResult { argmax: v, value: fv, gradient_norm: gn, converged: gn < tol, iterations, steps }
}

/// Solves the observed-data score equations `S(θ) = 0` by damped Newton
/// iteration started at `from_unconstrained(v0)`.
///
/// Iterates are kept strictly inside the constraint set; a root that can only
/// be approached by leaving it is rejected.
pub fn solve_score_system<M: Model + ?Sized>(model: &M, v0: &DVector<f64>) -> Result<Theta> {
    let mut theta = model.from_unconstrained(v0);
    let score_of = |t: &Theta| model.observed_score(t).ok_or(Error::Capability("an observed-data score"));
    let mut s = score_of(&theta)?;
    for _ in 0..200 {
        let norm = vec_max_norm(&s);
        if norm < 1e-11 {
            return Ok(theta);
        }
        let info = match model.observed_information(&theta) {
            Some(i) => i,
            None => score_jacobian_neg(model, &theta)?,
        };
        let step = inverse(&info, "observed information in score solve")? * &s;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let cand = theta.with_values(theta.values.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect());
            if cand.is_valid() {
                let sc = score_of(&cand)?;
                if vec_max_norm(&sc) < norm {
                    theta = cand;
                    s = sc;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            // Rounding floor: accept once no step can reduce the residual further.
            if norm < 1e-9 {
                return Ok(theta);
            }
            return Err(Error::RootFailure(format!(
                "no interior step reduces the score from {:?} (|S| = {norm:e})",
                theta.values
            )));
        }
    }
    Err(Error::RootFailure(format!("no convergence after 200 Newton steps (last {:?})", theta.values)))
}

fn score_jacobian_neg<M: Model + ?Sized>(model: &M, theta: &Theta) -> Result<DMatrix<f64>> {
    let p = theta.dim();
    let mut j = DMatrix::zeros(p, p);
    for c in 0..p {
        let h = 1e-6 * (1.0 + theta.values[c].abs());
        let mut up = theta.values.clone();
        up[c] += h;
        let mut dn = theta.values.clone();
        dn[c] -= h;
        let sp = model.observed_score(&theta.with_values(up)).ok_or(Error::Capability("an observed-data score"))?;
        let sm = model.observed_score(&theta.with_values(dn)).ok_or(Error::Capability("an observed-data score"))?;
        j.set_column(c, &(-(sp - sm) / (2.0 * h)));
    }
    Ok(symmetrize(&j))
}
