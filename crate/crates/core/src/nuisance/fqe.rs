//! Tabular fitted-Q evaluation.
//!
//! With a tabular regressor the least-squares step of each iteration is the
//! per-cell sample mean of the regression targets, so the whole fit runs on
//! sufficient statistics: visit counts, reward sums and next-state counts.

use alloc::vec;

use crate::error::Result;
use crate::mdp::{Policy, Transition};
use crate::nuisance::{check_tuples, HeldOut, QFunctionEstimate, Source};
use crate::table::SaTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FqeSpec {
    pub iters: usize,
    /// Stop once the sup-norm change between iterates falls below this.
    pub tol: f64,
}

impl Default for FqeSpec {
    fn default() -> Self {
        FqeSpec {
            iters: 2000,
            tol: 1e-10,
        }
    }
}

pub fn fit_fqe(
    tuples: &[Transition],
    target: &Policy,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    spec: FqeSpec,
) -> Result<QFunctionEstimate> {
    check_tuples(tuples, n_states, n_actions)?;
    let n = n_states * n_actions;
    let mut count = vec![0usize; n];
    let mut reward_sum = vec![0.0; n];
    let mut next_count = vec![0usize; n * n_states];
    for t in tuples {
        let u = t.state * n_actions + t.action;
        count[u] += 1;
        reward_sum[u] += t.reward;
        next_count[u * n_states + t.next_state] += 1;
    }
    let unvisited: alloc::vec::Vec<bool> = count.iter().map(|&c| c == 0).collect();

    let mut q = SaTable::zeros(n_states, n_actions);
    let iters = if gamma == 0.0 { 1 } else { spec.iters.max(1) };
    for _ in 0..iters {
        let v = target.state_values(&q);
        let mut next = SaTable::zeros(n_states, n_actions);
        for u in 0..n {
            if count[u] == 0 {
                continue;
            }
            let cont: f64 = next_count[u * n_states..(u + 1) * n_states]
                .iter()
                .zip(&v)
                .map(|(&c, v)| c as f64 * v)
                .sum();
            next.as_mut_slice()[u] = (reward_sum[u] + gamma * cont) / count[u] as f64;
        }
        let change = next.sup_distance(&q);
        q = next;
        if change < spec.tol {
            break;
        }
    }
    Ok(QFunctionEstimate {
        table: q,
        source: Source::Fqe,
        held_out: HeldOut::None,
        unvisited,
    })
}
