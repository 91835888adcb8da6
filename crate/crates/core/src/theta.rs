//! Parameter vectors and their constraint transforms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constraint attached to a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    Unconstrained,
    /// The first `k` components lie strictly inside the probability simplex;
    /// the implicit remainder `1 - Σ` is strictly positive.
    SimplexInterior(usize),
    /// The listed components are strictly positive.
    PositiveComponents(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub values: Vec<f64>,
    pub constraint: Constraint,
}

impl Theta {
    pub fn new(values: Vec<f64>, constraint: Constraint) -> Self {
        Self { values, constraint }
    }

    /// Builds a parameter and rejects it unless it satisfies its constraint.
    pub fn checked(values: Vec<f64>, constraint: Constraint) -> Result<Self> {
        let t = Self::new(values, constraint);
        t.ensure_valid()?;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self::new(values, self.constraint.clone())
    }

    pub fn is_valid(&self) -> bool {
        if self.values.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match &self.constraint {
            Constraint::Unconstrained => true,
            Constraint::SimplexInterior(k) => {
                if *k > self.values.len() {
                    return false;
                }
                let head = &self.values[..*k];
                head.iter().all(|&v| v > 0.0 && v < 1.0) && head.iter().sum::<f64>() < 1.0
            }
            Constraint::PositiveComponents(idx) => idx.iter().all(|&i| i < self.values.len() && self.values[i] > 0.0),
        }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Constraint(format!("{:?} does not satisfy {:?}", self.values, self.constraint)))
        }
    }

    /// Map onto ℝᵖ: log-ratio coordinates for the simplex, logs for positive components.
    pub fn to_unconstrained(&self) -> DVector<f64> {
        let mut v = self.values.clone();
        match &self.constraint {
            Constraint::Unconstrained => {}
            Constraint::SimplexInterior(k) => {
                let rest = 1.0 - self.values[..*k].iter().sum::<f64>();
                for x in v.iter_mut().take(*k) {
                    *x = (*x / rest).ln();
                }
            }
            Constraint::PositiveComponents(idx) => {
                for &i in idx {
                    v[i] = v[i].ln();
                }
            }
        }
        DVector::from_vec(v)
    }

    pub fn from_unconstrained(v: &DVector<f64>, constraint: &Constraint) -> Self {
        let mut values: Vec<f64> = v.iter().copied().collect();
        match constraint {
            Constraint::Unconstrained => {}
            Constraint::SimplexInterior(k) => {
                let shift = values[..*k].iter().copied().fold(0.0, f64::max);
                let denom = (-shift).exp() + values[..*k].iter().map(|x| (x - shift).exp()).sum::<f64>();
                for x in values.iter_mut().take(*k) {
                    *x = (*x - shift).exp() / denom;
                }
            }
            Constraint::PositiveComponents(idx) => {
                for &i in idx {
                    values[i] = values[i].exp();
                }
            }
        }
        Self::new(values, constraint.clone())
    }

    /// Jacobian `∂θ/∂v` of the inverse transform, evaluated at this point.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let p = self.dim();
        let mut j = DMatrix::identity(p, p);
        match &self.constraint {
            Constraint::Unconstrained => {}
            Constraint::SimplexInterior(k) => {
                for a in 0..*k {
                    for b in 0..*k {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        j[(a, b)] = self.values[a] * (delta - self.values[b]);
                    }
                }
            }
            Constraint::PositiveComponents(idx) => {
                for &i in idx {
                    j[(i, i)] = self.values[i];
                }
            }
        }
        j
    }

    pub fn max_abs_diff(&self, other: &Theta) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
