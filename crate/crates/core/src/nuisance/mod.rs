//! Estimates of the three nuisance functions: the Q-function, the
//! marginalized ratio `omega` and the conditional ratio `tau`.
//!
//! Every estimate carries a provenance tag recording where it came from and
//! which fold, if any, was held out while it was trained. The debiasing
//! engine uses the tag to enforce cross-fitting.

mod fqe;
pub mod kernel;
mod noise;
pub mod objective;
mod omega;
mod tau;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use fqe::{fit_fqe, FqeSpec};
pub use kernel::{Bandwidth, KernelSpec};
pub use noise::{contaminate, NoiseSpec, NuisanceSet};
pub use objective::{OptReport, OptSpec};
pub use omega::{fit_omega, fit_omega_exact, omega_objective_exact, omega_objective_sample};
pub use tau::{fit_tau, fit_tau_exact, table_to_params, tau_objective_exact, tau_objective_sample};

use crate::error::{Error, Result};
use crate::mdp::{Policy, ReferenceDistribution, TabularMdp, Transition};
use crate::oracles::OracleSet;
use crate::table::{ConditionalTable, SaTable};

/// How a nuisance estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Fqe,
    Minimax,
    Exact,
    ExactWithNoise,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Fqe => "fqe",
            Source::Minimax => "minimax",
            Source::Exact => "exact",
            Source::ExactWithNoise => "exact+noise",
        }
    }
}

/// Which data an estimate has not seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeldOut {
    /// Built without any observed data (oracle based); valid for every fold.
    Independent,
    /// Trained on the complement of this fold.
    Fold(usize),
    /// Trained on data that may include any fold.
    None,
}

impl HeldOut {
    /// Whether the estimate may be used to evaluate tuples of fold `k`.
    pub fn permits(self, k: usize) -> bool {
        match self {
            HeldOut::Independent => true,
            HeldOut::Fold(j) => j == k,
            HeldOut::None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFunctionEstimate {
    pub table: SaTable,
    pub source: Source,
    pub held_out: HeldOut,
    /// Cells without any training tuple; their value defaults to zero.
    pub unvisited: Vec<bool>,
}

impl QFunctionEstimate {
    pub fn eval(&self, s: usize, a: usize) -> Result<f64> {
        self.table.eval(s, a)
    }

    pub fn unvisited_count(&self) -> usize {
        self.unvisited.iter().filter(|&&u| u).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioEstimate {
    pub table: SaTable,
    pub source: Source,
    pub held_out: HeldOut,
    /// Constant the raw estimate was divided by.
    pub normalizer: f64,
    pub report: Option<OptReport>,
}

impl RatioEstimate {
    pub fn eval(&self, s: usize, a: usize) -> Result<f64> {
        self.table.eval(s, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRatioEstimate {
    pub table: ConditionalTable,
    pub source: Source,
    pub held_out: HeldOut,
    /// Per conditioning pair `x0`, the constant `tau(.; x0)` was divided by.
    pub normalizers: Vec<f64>,
    pub report: Option<OptReport>,
}

impl ConditionalRatioEstimate {
    pub fn eval(&self, s: usize, a: usize, s0: usize, a0: usize) -> Result<f64> {
        self.table.eval(s, a, s0, a0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceTriple {
    pub q: QFunctionEstimate,
    pub omega: RatioEstimate,
    pub tau: ConditionalRatioEstimate,
}

impl NuisanceTriple {
    /// Checks that all three estimates may be used on fold `k`.
    pub fn check_fold(&self, k: usize) -> Result<()> {
        let tags = [
            ("Q", self.q.held_out),
            ("omega", self.omega.held_out),
            ("tau", self.tau.held_out),
        ];
        for (name, tag) in tags {
            if !tag.permits(k) {
                return Err(Error::CrossFitting(format!(
                    "{name} estimate ({tag:?}) was not trained on the complement of fold {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_held_out(mut self, tag: HeldOut) -> Self {
        self.q.held_out = tag;
        self.omega.held_out = tag;
        self.tau.held_out = tag;
        self
    }
}

/// The oracle tables wrapped as nuisance estimates.
pub fn exact_nuisances(
    mdp: &TabularMdp,
    target: &Policy,
    behavior: &Policy,
    g: &ReferenceDistribution,
) -> Result<NuisanceTriple> {
    Ok(nuisances_from_oracles(&OracleSet::compute(mdp, target, behavior, g)?))
}

pub fn nuisances_from_oracles(oracles: &OracleSet) -> NuisanceTriple {
    let n = oracles.q.0.n_pairs();
    NuisanceTriple {
        q: QFunctionEstimate {
            table: oracles.q.0.clone(),
            source: Source::Exact,
            held_out: HeldOut::Independent,
            unvisited: vec![false; n],
        },
        omega: RatioEstimate {
            table: oracles.omega.0.clone(),
            source: Source::Exact,
            held_out: HeldOut::Independent,
            normalizer: 1.0,
            report: None,
        },
        tau: ConditionalRatioEstimate {
            table: oracles.tau.0.clone(),
            source: Source::Exact,
            held_out: HeldOut::Independent,
            normalizers: vec![1.0; n],
            report: None,
        },
    }
}

/// Empirical frequency of each state-action pair among `tuples`.
pub(crate) fn pair_frequencies(tuples: &[Transition], n_states: usize, n_actions: usize) -> Vec<f64> {
    let mut freq = vec![0.0; n_states * n_actions];
    for t in tuples {
        freq[t.state * n_actions + t.action] += 1.0;
    }
    let m = tuples.len() as f64;
    for f in &mut freq {
        *f /= m;
    }
    freq
}

pub(crate) fn check_tuples(tuples: &[Transition], n_states: usize, n_actions: usize) -> Result<()> {
    if tuples.is_empty() {
        return Err(Error::invalid("training subset is empty"));
    }
    if tuples
        .iter()
        .any(|t| t.state >= n_states || t.next_state >= n_states || t.action >= n_actions)
    {
        return Err(Error::invalid("training tuple leaves the state-action grid"));
    }
    Ok(())
}
