//! Gain-schedule design for jump observers.
//!
//! The per-state error covariances evolve under the operator `𝔈`
//! ([`covariance_step`]); its noise-free part `𝒯` ([`lyapunov_step`]) governs
//! stability. Gains are shared between outcome states according to a
//! [`Strategy`] and synthesized by [`synthesize`].

mod grouping;
mod operator;
mod schedule_io;
mod synthesis;
mod verify;

pub(crate) use operator::{check_schedule, masked_gain};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use grouping::{custom_grouping, group_assignment, Grouping};
pub use operator::{covariance_step, lyapunov_step, FixedPointSystem, JumpOperator};
pub use schedule_io::{read_grouping, read_schedule, write_schedule};
pub use synthesis::{
    group_gain_update, predicted_covariances, synthesize, synthesize_grouping, Synthesis, SynthesisOptions,
    SynthesisReport,
};
pub use verify::{verify_fixed_point, verify_stability, FixedPointOptions, FixedPointVerdict, StabilityVerdict};

/// Gain-sharing strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// One gain for every reception scenario.
    S1,
    /// Gain depends on the number of real sensors delivering.
    S2,
    /// Gain depends on the number of delivering slots (real and delayed).
    S3,
    /// Gain depends on the current availability pattern.
    S4,
    /// Gain depends on the full outcome state.
    S5,
    /// User-supplied grouping.
    Custom,
}

impl Strategy {
    pub const PRESETS: [Strategy; 5] = [Strategy::S1, Strategy::S2, Strategy::S3, Strategy::S4, Strategy::S5];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::S1 => "S1",
            Strategy::S2 => "S2",
            Strategy::S3 => "S3",
            Strategy::S4 => "S4",
            Strategy::S5 => "S5",
            Strategy::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "S1" | "s1" => Ok(Strategy::S1),
            "S2" | "s2" => Ok(Strategy::S2),
            "S3" | "s3" => Ok(Strategy::S3),
            "S4" | "s4" => Ok(Strategy::S4),
            "S5" | "s5" => Ok(Strategy::S5),
            "custom" => Ok(Strategy::Custom),
            other => Err(Error::UnknownStrategy(other.to_string())),
        }
    }
}

/// Per-state covariance family `(P_0, …, P_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTuple {
    pub p: Vec<DMatrix<f64>>,
}

impl CovarianceTuple {
    pub fn zeros(states: usize, dim: usize) -> Self {
        Self {
            p: vec![DMatrix::zeros(dim, dim); states],
        }
    }

    pub fn scaled_identity(states: usize, dim: usize, scale: f64) -> Self {
        Self {
            p: vec![DMatrix::from_diagonal_element(dim, dim, scale); states],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.p.first().map_or(0, |m| m.nrows())
    }

    /// `Σ_j π_j P_j`.
    pub fn weighted_sum(&self, pi: &[f64]) -> DMatrix<f64> {
        let dim = self.dim();
        self.p
            .iter()
            .zip(pi)
            .fold(DMatrix::zeros(dim, dim), |acc, (p, &w)| acc + p * w)
    }

    /// `tr(Σ_j π_j P_j)`.
    pub fn objective(&self, pi: &[f64]) -> f64 {
        self.p.iter().zip(pi).map(|(p, &w)| w * p.trace()).sum()
    }

    /// `max_j ‖A_j − B_j‖_F / (1 + ‖B_j‖_F)`.
    pub fn relative_distance(&self, other: &CovarianceTuple) -> f64 {
        self.p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b).norm() / (1.0 + b.norm()))
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            p: self.p.iter().map(|m| m * factor).collect(),
        }
    }

    pub fn add(&self, other: &CovarianceTuple) -> Self {
        Self {
            p: self.p.iter().zip(&other.p).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &CovarianceTuple) -> Self {
        Self {
            p: self.p.iter().zip(&other.p).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Grouping of outcome states onto a finite set of gains.
///
/// States whose availability pattern is empty always use the implicit zero
/// gain and carry `None` in `grouping`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub strategy: Strategy,
    pub grouping: Vec<Option<usize>>,
    /// One `n(d_max+1) × n̄_y` matrix per group.
    pub gains: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    /// All-zero gains for a grouping.
    pub fn zeros(strategy: Strategy, grouping: Vec<Option<usize>>, rows: usize, cols: usize) -> Self {
        let groups = grouping.iter().flatten().map(|g| g + 1).max().unwrap_or(0);
        Self {
            strategy,
            grouping,
            gains: vec![DMatrix::zeros(rows, cols); groups],
        }
    }

    pub fn gain_for(&self, state: usize) -> Option<&DMatrix<f64>> {
        self.grouping[state].map(|g| &self.gains[g])
    }

    pub fn num_groups(&self) -> usize {
        self.gains.len()
    }

    /// Number of stored gains actually used by reachable states.
    pub fn num_gains(&self, pi: &[f64]) -> usize {
        let mut used = vec![false; self.gains.len()];
        for (j, g) in self.grouping.iter().enumerate() {
            if let Some(g) = g {
                if pi[j] > crate::outcome_chain::ZERO_PROB {
                    used[*g] = true;
                }
            }
        }
        used.iter().filter(|&&u| u).count()
    }

    /// Multiply every gain by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            strategy: self.strategy,
            grouping: self.grouping.clone(),
            gains: self.gains.iter().map(|g| g * factor).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_round_trip() {
        for s in Strategy::PRESETS {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("S9".parse::<Strategy>(), Err(Error::UnknownStrategy(_))));
    }
}
