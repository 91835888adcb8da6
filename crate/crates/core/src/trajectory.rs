//! Per-iteration records produced by every estimation engine.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::theta::Theta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    MaxIterations,
    Converged,
    CiContainsZero,
    IncrementBelowTau,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::MaxIterations => "max-iterations",
            TerminationReason::Converged => "converged",
            TerminationReason::CiContainsZero => "ci-contains-zero",
            TerminationReason::IncrementBelowTau => "increment-below-tau",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "max-iterations" => TerminationReason::MaxIterations,
            "converged" => TerminationReason::Converged,
            "ci-contains-zero" => TerminationReason::CiContainsZero,
            "increment-below-tau" => TerminationReason::IncrementBelowTau,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub theta: Theta,
    pub mc_size: Option<usize>,
    pub objective_increment: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl TrajectoryRecord {
    pub fn new(iteration: usize, theta: Theta) -> Self {
        Self {
            iteration,
            theta,
            mc_size: None,
            objective_increment: None,
            ci_lower: None,
            ci_upper: None,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with_mc_size(mut self, m: usize) -> Self {
        self.mc_size = Some(m);
        self
    }

    pub fn diag(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub terminated: TerminationReason,
    /// Missing-data draws consumed over the whole run, including pilots and augmentations.
    pub total_draws: u64,
}

impl Trajectory {
    pub fn new() -> Self {
        Self { records: Vec::new(), terminated: TerminationReason::MaxIterations, total_draws: 0 }
    }

    /// Appends a record numbered one past the last.
    pub fn push(&mut self, mut record: TrajectoryRecord) {
        record.iteration = self.records.len() + 1;
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_theta(&self) -> Option<&Theta> {
        self.records.last().map(|r| &r.theta)
    }

    /// Iterations run from 1 without gaps and every recorded size is positive.
    pub fn is_well_formed(&self) -> bool {
        self.records.iter().enumerate().all(|(i, r)| r.iteration == i + 1 && r.mc_size.is_none_or(|m| m >= 1))
    }
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theta::Constraint;

    #[test]
    fn push_numbers_from_one() {
        let mut t = Trajectory::new();
        let th = Theta::new(vec![0.1], Constraint::Unconstrained);
        t.push(TrajectoryRecord::new(0, th.clone()).with_mc_size(3));
        t.push(TrajectoryRecord::new(0, th));
        assert_eq!(t.records[1].iteration, 2);
        assert!(t.is_well_formed());
    }

    #[test]
    fn reason_names_round_trip() {
        for r in [
            TerminationReason::MaxIterations,
            TerminationReason::Converged,
            TerminationReason::CiContainsZero,
            TerminationReason::IncrementBelowTau,
        ] {
            assert_eq!(TerminationReason::parse(r.as_str()), Some(r));
        }
    }
}
