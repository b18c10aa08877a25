//! The debiasing operator, higher-order debiased Q-functions and the
//! cross-fitted value estimator built on them.
//!
//! For a tuple `j = (x_j, r_j, s'_j)` the operator maps a Q-table to
//!
//! ```text
//! D_j Q(x0) = Q(x0) + tau(x_j; x0) {r_j + gamma E_pi Q(s'_j, .) - Q(x_j)} / (1 - gamma)
//! ```
//!
//! The order-`m` estimate averages `D_{i1} ... D_{i(m-1)} Q` over ordered
//! tuples of distinct indices from the fold, the rightmost operator applied
//! first. Tuples are identified with their rank in lexicographic order, so
//! complete enumeration and sampling without replacement share one code path
//! and accumulate in the same order.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::mdp::{Dataset, FoldAssignment, Policy, ReferenceDistribution, Transition};
use crate::nuisance::NuisanceTriple;
use crate::rng;
use crate::table::{ConditionalTable, SaTable};

/// How the ordered index tuples are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Complete when the tuple count is within `complete_limit`, else sampled.
    Auto,
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DebiasConfig {
    pub order: usize,
    /// Fraction of ordered tuples drawn when sampling.
    pub incomplete_fraction: f64,
    pub leave_one_out: bool,
    pub seed: u64,
    pub sampling: Sampling,
    pub complete_limit: u64,
    /// Hard cap on the number of sampled tuples.
    pub max_tuples: u64,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        DebiasConfig {
            order: 2,
            incomplete_fraction: 0.05,
            leave_one_out: false,
            seed: 0,
            sampling: Sampling::Auto,
            complete_limit: 1_000_000,
            max_tuples: 5_000_000,
        }
    }
}

impl DebiasConfig {
    pub fn with_order(order: usize) -> Self {
        DebiasConfig {
            order,
            ..DebiasConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::invalid("debiasing order must be at least 1"));
        }
        if !(self.incomplete_fraction > 0.0 && self.incomplete_fraction <= 1.0) {
            return Err(Error::invalid("incomplete fraction must lie in (0, 1]"));
        }
        if self.max_tuples == 0 {
            return Err(Error::invalid("tuple cap must be positive"));
        }
        Ok(())
    }
}

/// Per-tuple sums needed to drop one tuple from the average.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOneOut {
    /// Row `j` holds the sum of compositions over index tuples containing `j`.
    sums: Vec<f64>,
    counts: Vec<u64>,
    total: Vec<f64>,
    total_count: u64,
    shape: (usize, usize),
}

impl LeaveOneOut {
    /// The average over index tuples that avoid fold tuple `j`.
    pub fn without(&self, j: usize) -> Result<SaTable> {
        let n = self.total.len();
        let count = self.total_count - self.counts[j];
        if count == 0 {
            return Err(Error::invalid("no index tuple avoids this fold tuple"));
        }
        let row = &self.sums[j * n..(j + 1) * n];
        let values = self
            .total
            .iter()
            .zip(row)
            .map(|(t, s)| (t - s) / count as f64)
            .collect();
        SaTable::from_vec(self.shape.0, self.shape.1, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedQ {
    pub values: SaTable,
    pub order: usize,
    pub fold: usize,
    pub tuples_used: u64,
    /// Whether every ordered tuple was visited.
    pub complete: bool,
    pub loo: Option<LeaveOneOut>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiSample {
    pub traj: usize,
    pub t: usize,
    pub fold: usize,
    pub value: f64,
}

/// Temporal-difference error of `q` at a tuple.
fn td_error(q: &[f64], n_actions: usize, tuple: &Transition, target: &Policy, gamma: f64) -> f64 {
    let next = tuple.next_state;
    let v: f64 = target
        .row(next)
        .iter()
        .enumerate()
        .map(|(a, p)| p * q[next * n_actions + a])
        .sum();
    tuple.reward + gamma * v - q[tuple.state * n_actions + tuple.action]
}

/// Applies `D_tuple` in place.
fn apply_in_place(q: &mut [f64], n_actions: usize, tuple: &Transition, tau: &ConditionalTable, target: &Policy, gamma: f64) {
    let scale = td_error(q, n_actions, tuple, target, gamma) / (1.0 - gamma);
    let row = tau.row(tuple.state * n_actions + tuple.action);
    for (v, t) in q.iter_mut().zip(row) {
        *v += t * scale;
    }
}

pub fn apply_debias_operator(
    q: &SaTable,
    tuple: &Transition,
    tau: &ConditionalTable,
    target: &Policy,
    gamma: f64,
) -> Result<SaTable> {
    if tau.n_pairs() != q.n_pairs() || tuple.state >= q.n_states() || tuple.next_state >= q.n_states() {
        return Err(Error::OffGrid {
            state: tuple.state,
            action: tuple.action,
        });
    }
    if tuple.action >= q.n_actions() {
        return Err(Error::OffGrid {
            state: tuple.state,
            action: tuple.action,
        });
    }
    let mut out = q.clone();
    apply_in_place(out.as_mut_slice(), q.n_actions(), tuple, tau, target, gamma);
    Ok(out)
}

/// Number of ordered `len`-tuples of distinct indices out of `n`.
pub fn ordered_tuple_count(n: usize, len: usize) -> Option<u64> {
    (0..len).try_fold(1u64, |acc, k| acc.checked_mul(n.checked_sub(k)? as u64))
}

/// Inverse of the lexicographic rank over ordered tuples of distinct indices.
fn unrank(mut rank: u64, n: usize, out: &mut [usize], sorted: &mut Vec<usize>) {
    let len = out.len();
    for k in (0..len).rev() {
        let radix = (n - k) as u64;
        out[k] = (rank % radix) as usize;
        rank /= radix;
    }
    sorted.clear();
    for slot in out.iter_mut() {
        let mut idx = *slot;
        for &c in sorted.iter() {
            if c <= idx {
                idx += 1;
            } else {
                break;
            }
        }
        *slot = idx;
        let pos = sorted.partition_point(|&c| c < idx);
        sorted.insert(pos, idx);
    }
}

/// Order-`m` debiased Q-table from the tuples of one fold.
pub fn debiased_q(
    initial: &SaTable,
    fold_tuples: &[Transition],
    tau: &ConditionalTable,
    target: &Policy,
    gamma: f64,
    fold: usize,
    config: &DebiasConfig,
) -> Result<DebiasedQ> {
    config.validate()?;
    let len = config.order - 1;
    let n = fold_tuples.len();
    if n < len {
        return Err(Error::invalid("fold has fewer tuples than the debiasing order requires"));
    }
    if len == 0 {
        return Ok(DebiasedQ {
            values: initial.clone(),
            order: 1,
            fold,
            tuples_used: 0,
            complete: true,
            loo: None,
        });
    }
    let (n_states, n_actions) = (initial.n_states(), initial.n_actions());
    let pairs = initial.n_pairs();
    if tau.n_pairs() != pairs {
        return Err(Error::invalid("tau and Q are defined on different grids"));
    }
    if let Some(t) = fold_tuples
        .iter()
        .find(|t| t.state >= n_states || t.next_state >= n_states || t.action >= n_actions)
    {
        return Err(Error::OffGrid {
            state: t.state,
            action: t.action,
        });
    }
    let total = ordered_tuple_count(n, len)
        .ok_or_else(|| Error::invalid("number of ordered index tuples overflows"))?;
    let complete = match config.sampling {
        Sampling::Complete => true,
        Sampling::Incomplete => false,
        Sampling::Auto => total <= config.complete_limit,
    };
    let ranks: Vec<u64> = if complete {
        Vec::new()
    } else {
        let want = libm::round(config.incomplete_fraction * total as f64) as u64;
        let amount = want.clamp(1, total).min(config.max_tuples);
        let length = usize::try_from(total).map_err(|_| Error::invalid("too many index tuples to sample"))?;
        let mut r = rng::stream(config.seed, fold as u64);
        let mut picked: Vec<u64> = index::sample(&mut r, length, amount as usize)
            .into_iter()
            .map(|i| i as u64)
            .collect();
        picked.sort_unstable();
        picked
    };
    let used = if complete { total } else { ranks.len() as u64 };

    // innermost operator applied to the initial table, one row per tuple
    let mut inner = vec![0.0; n * pairs];
    for (j, t) in fold_tuples.iter().enumerate() {
        let row = &mut inner[j * pairs..(j + 1) * pairs];
        row.copy_from_slice(initial.as_slice());
        apply_in_place(row, n_actions, t, tau, target, gamma);
    }

    let mut sum = vec![0.0; pairs];
    let mut loo_sums = if config.leave_one_out { vec![0.0; n * pairs] } else { Vec::new() };
    let mut loo_counts = if config.leave_one_out { vec![0u64; n] } else { Vec::new() };
    let mut idx = vec![0usize; len];
    let mut sorted = Vec::with_capacity(len);
    let mut work = vec![0.0; pairs];
    let mut visit = |rank: u64| {
        unrank(rank, n, &mut idx, &mut sorted);
        let last = idx[len - 1];
        work.copy_from_slice(&inner[last * pairs..(last + 1) * pairs]);
        for &j in idx[..len - 1].iter().rev() {
            apply_in_place(&mut work, n_actions, &fold_tuples[j], tau, target, gamma);
        }
        for (s, w) in sum.iter_mut().zip(&work) {
            *s += w;
        }
        if config.leave_one_out {
            for &j in &idx {
                loo_counts[j] += 1;
                for (s, w) in loo_sums[j * pairs..(j + 1) * pairs].iter_mut().zip(&work) {
                    *s += w;
                }
            }
        }
    };
    if complete {
        (0..total).for_each(&mut visit);
    } else {
        ranks.iter().copied().for_each(&mut visit);
    }
    let values = sum.iter().map(|s| s / used as f64).collect();
    let loo = config.leave_one_out.then(|| LeaveOneOut {
        sums: loo_sums,
        counts: loo_counts,
        total: sum.clone(),
        total_count: used,
        shape: (n_states, n_actions),
    });
    Ok(DebiasedQ {
        values: SaTable::from_vec(n_states, n_actions, values)?,
        order: config.order,
        fold,
        tuples_used: used,
        complete,
        loo,
    })
}

/// Estimating function at one tuple.
pub fn psi(
    tuple: &Transition,
    fold: usize,
    q: &SaTable,
    omega: &SaTable,
    target: &Policy,
    g: &ReferenceDistribution,
    gamma: f64,
) -> PsiSample {
    let plug = g.plug_in(target, q);
    PsiSample {
        traj: tuple.traj,
        t: tuple.t,
        fold,
        value: psi_value(tuple, q, omega, target, gamma, plug),
    }
}

#[inline]
fn psi_value(tuple: &Transition, q: &SaTable, omega: &SaTable, target: &Policy, gamma: f64, plug: f64) -> f64 {
    let inv = 1.0 / (1.0 - gamma);
    let w = omega.get(tuple.state, tuple.action);
    let qx = q.get(tuple.state, tuple.action);
    let vnext = target.expect(q, tuple.next_state);
    inv * w * (tuple.reward - qx + gamma * vnext) + plug
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub estimate: f64,
    /// In dataset order.
    pub samples: Vec<PsiSample>,
    /// One per fold.
    pub debiased: Vec<DebiasedQ>,
}

/// Cross-fitted order-`m` estimate. `nuisances[k]` must have been trained
/// without fold `k`.
pub fn estimate_value(
    data: &Dataset,
    folds: &FoldAssignment,
    nuisances: &[NuisanceTriple],
    target: &Policy,
    g: &ReferenceDistribution,
    gamma: f64,
    config: &DebiasConfig,
) -> Result<ValueEstimate> {
    config.validate()?;
    if nuisances.len() != folds.k() {
        return Err(Error::invalid("need one nuisance triple per fold"));
    }
    if folds.folds().len() != data.n_traj() {
        return Err(Error::invalid("fold assignment does not match the dataset"));
    }
    for (k, triple) in nuisances.iter().enumerate() {
        triple.check_fold(k)?;
    }
    let (n_states, n_actions) = (nuisances[0].q.table.n_states(), nuisances[0].q.table.n_actions());
    data.check_grid(n_states, n_actions)?;

    let mut debiased = Vec::with_capacity(folds.k());
    for (k, triple) in nuisances.iter().enumerate() {
        let fold_tuples = folds.in_fold(data, k);
        debiased.push(debiased_q(
            &triple.q.table,
            &fold_tuples,
            &triple.tau.table,
            target,
            gamma,
            k,
            config,
        )?);
    }
    let plugs: Vec<f64> = debiased.iter().map(|d| g.plug_in(target, &d.values)).collect();
    // position of each tuple inside its fold, for leave-one-out lookups
    let mut seen = vec![0usize; folds.k()];
    let mut samples = Vec::with_capacity(data.len());
    for tuple in data.tuples() {
        let k = folds.fold_of(tuple.traj);
        let pos = seen[k];
        seen[k] += 1;
        let omega = &nuisances[k].omega.table;
        let value = match &debiased[k].loo {
            Some(loo) => {
                let q = loo.without(pos)?;
                let plug = g.plug_in(target, &q);
                psi_value(tuple, &q, omega, target, gamma, plug)
            }
            None => psi_value(tuple, &debiased[k].values, omega, target, gamma, plugs[k]),
        };
        samples.push(PsiSample {
            traj: tuple.traj,
            t: tuple.t,
            fold: k,
            value,
        });
    }
    let estimate = samples.iter().map(|s| s.value).sum::<f64>() / samples.len() as f64;
    if !estimate.is_finite() {
        return Err(Error::Numerical("non-finite value estimate".into()));
    }
    Ok(ValueEstimate {
        estimate,
        samples,
        debiased,
    })
}

/// Leading term of the Hoeffding decomposition, computed with exact nuisances.
pub fn first_order_term(data: &Dataset, omega: &SaTable, q: &SaTable, target: &Policy, gamma: f64) -> f64 {
    let sum: f64 = data
        .tuples()
        .iter()
        .map(|t| {
            omega.get(t.state, t.action)
                * (t.reward + gamma * target.expect(q, t.next_state) - q.get(t.state, t.action))
        })
        .sum();
    sum / (data.len() as f64 * (1.0 - gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn tuple(state: usize, action: usize, reward: f64, next_state: usize) -> Transition {
        Transition {
            traj: 0,
            t: 0,
            state,
            action,
            reward,
            next_state,
        }
    }

    #[test]
    fn unrank_enumerates_distinct_tuples_in_lex_order() {
        let (n, len) = (5, 3);
        let total = ordered_tuple_count(n, len).unwrap();
        assert_eq!(total, 60);
        let mut out = vec![0; len];
        let mut sorted = Vec::new();
        let mut prev: Option<Vec<usize>> = None;
        let mut all = BTreeSet::new();
        for r in 0..total {
            unrank(r, n, &mut out, &mut sorted);
            let set: BTreeSet<_> = out.iter().collect();
            assert_eq!(set.len(), len);
            if let Some(p) = &prev {
                assert!(p < &out);
            }
            prev = Some(out.clone());
            all.insert(out.clone());
        }
        assert_eq!(all.len(), 60);
    }

    #[test]
    fn operator_matches_hand_expansion() {
        let target = Policy::new(2, 2, vec![0.5, 0.5, 0.0, 1.0]).unwrap();
        let q = SaTable::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let tau = ConditionalTable::from_fn(2, 2, |x, x0| 0.1 * (x + 1) as f64 + 0.01 * x0 as f64);
        let t = tuple(0, 1, 0.5, 1);
        let gamma = 0.5;
        let out = apply_debias_operator(&q, &t, &tau, &target, gamma).unwrap();
        // delta = 0.5 + 0.5 * 4 - 2 = 0.5; x = 1 so tau row is 0.2 + 0.01 x0
        for x0 in 0..4 {
            let expected = q.as_slice()[x0] + (0.2 + 0.01 * x0 as f64) * 0.5 / 0.5;
            assert!((out.as_slice()[x0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_tau_leaves_q_unchanged() {
        let target = Policy::uniform(2, 2);
        let q = SaTable::from_vec(2, 2, vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let tau = ConditionalTable::zeros(2, 2);
        let tuples = [tuple(0, 0, 1.0, 1), tuple(1, 1, 0.0, 0), tuple(1, 0, 2.0, 1)];
        let cfg = DebiasConfig::with_order(3);
        let d = debiased_q(&q, &tuples, &tau, &target, 0.9, 0, &cfg).unwrap();
        assert_eq!(d.values, q);
        assert_eq!(d.tuples_used, 6);
    }

    #[test]
    fn full_fraction_sampling_matches_complete_bitwise() {
        let target = Policy::uniform(2, 2);
        let q = SaTable::from_vec(2, 2, vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let tau = ConditionalTable::from_fn(2, 2, |x, x0| 1.0 + 0.3 * x as f64 - 0.2 * x0 as f64);
        let tuples = [tuple(0, 0, 1.0, 1), tuple(1, 1, 0.0, 0), tuple(1, 0, 2.0, 1), tuple(0, 1, 0.3, 0)];
        let complete = DebiasConfig {
            sampling: Sampling::Complete,
            ..DebiasConfig::with_order(3)
        };
        let sampled = DebiasConfig {
            sampling: Sampling::Incomplete,
            incomplete_fraction: 1.0,
            ..complete
        };
        let a = debiased_q(&q, &tuples, &tau, &target, 0.8, 0, &complete).unwrap();
        let b = debiased_q(&q, &tuples, &tau, &target, 0.8, 0, &sampled).unwrap();
        assert_eq!(a.values, b.values);
        assert!(!b.complete);
    }

    #[test]
    fn leave_one_out_drops_the_tuple() {
        let target = Policy::uniform(2, 2);
        let q = SaTable::from_vec(2, 2, vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let tau = ConditionalTable::from_fn(2, 2, |x, x0| 1.0 + 0.3 * x as f64 - 0.2 * x0 as f64);
        let tuples = [tuple(0, 0, 1.0, 1), tuple(1, 1, 0.0, 0), tuple(1, 0, 2.0, 1)];
        let cfg = DebiasConfig {
            leave_one_out: true,
            ..DebiasConfig::with_order(2)
        };
        let d = debiased_q(&q, &tuples, &tau, &target, 0.8, 0, &cfg).unwrap();
        let without_first = d.loo.unwrap().without(0).unwrap();
        let direct = debiased_q(&q, &tuples[1..], &tau, &target, 0.8, 0, &DebiasConfig::with_order(2)).unwrap();
        assert!(without_first.sup_distance(&direct.values) < 1e-12);
    }

    #[test]
    fn small_fold_and_bad_config_are_rejected() {
        let target = Policy::uniform(2, 2);
        let q = SaTable::zeros(2, 2);
        let tau = ConditionalTable::zeros(2, 2);
        let tuples = [tuple(0, 0, 1.0, 1)];
        assert!(debiased_q(&q, &tuples, &tau, &target, 0.8, 0, &DebiasConfig::with_order(3)).is_err());
        let bad = DebiasConfig {
            incomplete_fraction: 0.0,
            ..DebiasConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(DebiasConfig::with_order(0).validate().is_err());
    }

    #[test]
    fn zero_omega_gives_the_plug_in() {
        let target = Policy::uniform(2, 2);
        let g = ReferenceDistribution::uniform(2);
        let q = SaTable::from_vec(2, 2, vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let p = psi(&tuple(0, 1, 0.7, 1), 0, &q, &SaTable::zeros(2, 2), &target, &g, 0.9);
        assert_eq!(p.value, g.plug_in(&target, &q));
        assert_eq!(p.value, 2.75);
    }
}
