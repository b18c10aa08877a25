//! Deeply-debiased off-policy evaluation for finite MDPs.
//!
//! This crate holds the algorithmic core: tabular MDPs and trajectory
//! simulation, exact oracles for every ground-truth quantity, built-in
//! environments, nuisance learners (fitted-Q evaluation and kernel minimax
//! ratio estimation), and the debiasing engine that turns an initial
//! Q-estimate into the m-th order value estimator.
//!
//! It is `no_std` and only needs `alloc`. File formats, the inference
//! harness and the command line live in the `d2ope` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod debias;
pub mod environments;
pub mod error;
pub mod mdp;
pub mod nuisance;
pub mod oracles;
pub mod rng;
pub mod table;

pub use error::{Error, Result};
pub use mdp::{Dataset, FoldAssignment, Policy, ReferenceDistribution, TabularMdp, Transition};
pub use table::{ConditionalTable, SaTable};
