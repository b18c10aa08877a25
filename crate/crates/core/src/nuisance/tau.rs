//! Minimax estimation of the conditional ratio `tau(x; x0)`.
//!
//! For a conditioning pair `x0` the ratio satisfies
//!
//! ```text
//! E[tau(X; x0) {f(X) - gamma E_pi f(S', .)}] = (1 - gamma) f(x0)
//! ```
//!
//! On data, `x0` is the pair of a second tuple drawn from a different
//! trajectory so the two are independent. Test functions act on `(x, x0)`
//! and the kernel is the product of pair kernels on each component, which
//! makes the objective block-structured by `x0`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp, Transition};
use crate::nuisance::kernel::{self, KernelSpec};
use crate::nuisance::objective::{self, BlockQuadratic, Normalizer, OptReport, OptSpec, RatioObjective};
use crate::nuisance::{check_tuples, pair_frequencies, ConditionalRatioEstimate, HeldOut, Source};
use crate::oracles::stationary_distribution;
use crate::table::ConditionalTable;

/// Builds the block objective from `mass[x0][(x, s')]`, the weight of the
/// event "conditioning pair x0, tuple pair x, next state s'", and the
/// conditioning marginal `cond[x0]`.
fn assemble(
    mass: &[f64],
    cond: &[f64],
    target: &Policy,
    shape: (usize, usize),
    gamma: f64,
    bandwidth: f64,
    weights: Vec<f64>,
) -> RatioObjective<BlockQuadratic> {
    let (n_states, n_actions) = shape;
    let n = n_states * n_actions;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for x0 in 0..n {
        let mut av = DVector::zeros(n);
        av[x0] = (1.0 - gamma) * cond[x0];
        let mut bm = DMatrix::zeros(n, n);
        for x in 0..n {
            for s in 0..n_states {
                let w = mass[(x0 * n + x) * n_states + s];
                if w == 0.0 {
                    continue;
                }
                bm[(x, x)] -= w;
                for act in 0..n_actions {
                    bm[(s * n_actions + act, x)] += w * gamma * target.prob(s, act);
                }
            }
        }
        a.push(av);
        b.push(bm);
    }
    let k = kernel::pair_gram(n_states, n_actions, bandwidth);
    RatioObjective {
        quad: BlockQuadratic {
            outer: k.clone(),
            inner: k,
            a,
            b,
        },
        norm: Normalizer {
            group: (0..n * n).map(|i| i / n).collect(),
            weight: (0..n * n).map(|i| weights[i % n]).collect(),
            n_groups: n,
        },
    }
}

/// Sample objective over all ordered tuple pairs from distinct trajectories.
pub fn tau_objective_sample(
    tuples: &[Transition],
    target: &Policy,
    shape: (usize, usize),
    gamma: f64,
    bandwidth: f64,
) -> Result<RatioObjective<BlockQuadratic>> {
    let (n_states, n_actions) = shape;
    check_tuples(tuples, n_states, n_actions)?;
    let n = n_states * n_actions;
    let cell = |t: &Transition| (t.state * n_actions + t.action) * n_states + t.next_state;

    let mut order: Vec<usize> = (0..tuples.len()).collect();
    order.sort_by_key(|&i| tuples[i].traj);
    let mut groups: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    for end in 1..=order.len() {
        if end == order.len() || tuples[order[end]].traj != tuples[order[start]].traj {
            groups.push(&order[start..end]);
            start = end;
        }
    }
    if groups.len() < 2 {
        return Err(Error::invalid("the tau objective needs tuples from at least two trajectories"));
    }

    let mut tuple_total = vec![0.0; n * n_states];
    let mut cond_total = vec![0.0; n];
    for t in tuples {
        tuple_total[cell(t)] += 1.0;
        cond_total[t.state * n_actions + t.action] += 1.0;
    }
    // all ordered pairs, then remove the same-trajectory ones
    let mut mass = vec![0.0; n * n * n_states];
    for x0 in 0..n {
        if cond_total[x0] == 0.0 {
            continue;
        }
        for (c, &tot) in tuple_total.iter().enumerate() {
            mass[x0 * n * n_states + c] = cond_total[x0] * tot;
        }
    }
    let m = tuples.len() as f64;
    let mut cond: Vec<f64> = cond_total.iter().map(|c| c * m).collect();
    let mut pairs = m * m;
    for idx in &groups {
        let mut local_cells: Vec<(usize, f64)> = Vec::new();
        let mut local_cond: Vec<(usize, f64)> = Vec::new();
        for &i in idx.iter() {
            let t = &tuples[i];
            bump(&mut local_cells, cell(t));
            bump(&mut local_cond, t.state * n_actions + t.action);
        }
        let mi = idx.len() as f64;
        pairs -= mi * mi;
        for &(x0, c0) in &local_cond {
            cond[x0] -= c0 * mi;
            for &(c, c1) in &local_cells {
                mass[x0 * n * n_states + c] -= c0 * c1;
            }
        }
    }
    for v in mass.iter_mut() {
        *v /= pairs;
    }
    for v in cond.iter_mut() {
        *v /= pairs;
    }
    let freq = pair_frequencies(tuples, n_states, n_actions);
    Ok(assemble(&mass, &cond, target, shape, gamma, bandwidth, freq))
}

fn bump(list: &mut Vec<(usize, f64)>, key: usize) {
    match list.iter_mut().find(|(k, _)| *k == key) {
        Some(entry) => entry.1 += 1.0,
        None => list.push((key, 1.0)),
    }
}

/// Population objective with `x0` and the tuple drawn independently from the
/// stationary behavior distribution.
pub fn tau_objective_exact(
    mdp: &TabularMdp,
    behavior: &Policy,
    target: &Policy,
    bandwidth: f64,
) -> Result<RatioObjective<BlockQuadratic>> {
    mdp.check_inputs(&[behavior, target], None)?;
    let p = stationary_distribution(mdp, behavior)?.probs().to_vec();
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let n = n_states * n_actions;
    let mut mass = vec![0.0; n * n * n_states];
    for x0 in 0..n {
        for x in 0..n {
            let next = mdp.next_states(x / n_actions, x % n_actions);
            for (s, &q) in next.iter().enumerate() {
                mass[(x0 * n + x) * n_states + s] = p[x0] * p[x] * q;
            }
        }
    }
    Ok(assemble(&mass, &p, target, (n_states, n_actions), mdp.gamma(), bandwidth, p.clone()))
}

pub fn fit_tau(
    tuples: &[Transition],
    target: &Policy,
    shape: (usize, usize),
    gamma: f64,
    kernel: KernelSpec,
    opt: &OptSpec,
) -> Result<ConditionalRatioEstimate> {
    let freq = {
        check_tuples(tuples, shape.0, shape.1)?;
        pair_frequencies(tuples, shape.0, shape.1)
    };
    let h = kernel::resolve(kernel, || kernel::median_bandwidth_conditional(&freq, shape.1));
    let obj = tau_objective_sample(tuples, target, shape, gamma, h)?;
    let (raw, report) = objective::minimize(&obj, opt);
    Ok(finish(raw, &obj.norm, shape, HeldOut::None, report))
}

pub fn fit_tau_exact(
    mdp: &TabularMdp,
    behavior: &Policy,
    target: &Policy,
    kernel: KernelSpec,
    opt: &OptSpec,
) -> Result<ConditionalRatioEstimate> {
    let p = stationary_distribution(mdp, behavior)?;
    let h = kernel::resolve(kernel, || kernel::median_bandwidth_conditional(p.probs(), mdp.n_actions()));
    let obj = tau_objective_exact(mdp, behavior, target, h)?;
    let (raw, report) = objective::minimize(&obj, opt);
    Ok(finish(
        raw,
        &obj.norm,
        (mdp.n_states(), mdp.n_actions()),
        HeldOut::Independent,
        report,
    ))
}

/// Parameter vector in `x0`-major order to an `x`-major table.
pub fn table_to_params(table: &ConditionalTable) -> Vec<f64> {
    let n = table.n_pairs();
    (0..n * n).map(|i| table.at(i % n, i / n)).collect()
}

fn finish(
    raw: Vec<f64>,
    norm: &Normalizer,
    shape: (usize, usize),
    held_out: HeldOut,
    report: OptReport,
) -> ConditionalRatioEstimate {
    let z = norm.constants(&raw);
    let mut table = ConditionalTable::zeros(shape.0, shape.1);
    let n = table.n_pairs();
    for (i, r) in raw.iter().enumerate() {
        let (x0, x) = (i / n, i % n);
        table.set_at(x, x0, r / z[x0]);
    }
    ConditionalRatioEstimate {
        table,
        source: Source::Minimax,
        held_out,
        normalizers: z,
        report: Some(report),
    }
}
