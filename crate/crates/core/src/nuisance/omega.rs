//! Minimax estimation of the marginalized density ratio `omega`.
//!
//! The moment condition is
//!
//! ```text
//! L(w, f) = E[w(X) {gamma E_pi f(S', .) - f(X)}] + (1 - gamma) E_{G x pi} f = 0
//! ```
//!
//! for every test function `f`. Over the unit ball of the RKHS of a kernel
//! `k`, `sup_f L(w, f)^2` equals the kernel-weighted double sum of the
//! per-tuple terms, which for a tabular `w` is a quadratic form. The sample
//! objective uses the U-statistic over distinct tuple pairs.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;

use crate::error::Result;
use crate::mdp::{Policy, ReferenceDistribution, TabularMdp, Transition};
use crate::nuisance::kernel::{self, KernelSpec};
use crate::nuisance::objective::{self, Normalizer, OptSpec, Quadratic, RatioObjective};
use crate::nuisance::{check_tuples, pair_frequencies, HeldOut, RatioEstimate, Source};
use crate::oracles::stationary_distribution;
use crate::rng;
use crate::table::SaTable;

/// `gamma E_pi e_(s', .) - e_x`, the test-function functional of one tuple.
fn psi_vector(target: &Policy, n_actions: usize, gamma: f64, x: usize, next: usize) -> DVector<f64> {
    let mut v = DVector::zeros(target.n_states() * n_actions);
    for a in 0..n_actions {
        v[next * n_actions + a] += gamma * target.prob(next, a);
    }
    v[x] -= 1.0;
    v
}

fn start_vector(target: &Policy, g: &ReferenceDistribution, gamma: f64) -> DVector<f64> {
    DVector::from_vec(g.with_policy(target)) * (1.0 - gamma)
}

/// Sample objective over the tuples in `tuples`, with normaliser weights equal
/// to the empirical pair frequencies.
pub fn omega_objective_sample(
    tuples: &[Transition],
    target: &Policy,
    g: &ReferenceDistribution,
    shape: (usize, usize),
    gamma: f64,
    bandwidth: f64,
) -> Result<RatioObjective> {
    let (n_states, n_actions) = shape;
    check_tuples(tuples, n_states, n_actions)?;
    let freq = pair_frequencies(tuples, n_states, n_actions);
    Ok(RatioObjective {
        quad: sample_quadratic(tuples, target, g, shape, gamma, bandwidth)?,
        norm: Normalizer::single(freq),
    })
}

fn sample_quadratic(
    tuples: &[Transition],
    target: &Policy,
    g: &ReferenceDistribution,
    shape: (usize, usize),
    gamma: f64,
    bandwidth: f64,
) -> Result<Quadratic> {
    let (n_states, n_actions) = shape;
    let n = n_states * n_actions;
    let m = tuples.len();
    if m < 2 {
        return Err(crate::error::Error::invalid("the omega objective needs at least two tuples"));
    }
    let mut counts = vec![0usize; n * n_states];
    for t in tuples {
        counts[(t.state * n_actions + t.action) * n_states + t.next_state] += 1;
    }
    let k = kernel::pair_gram(n_states, n_actions, bandwidth);
    let v = start_vector(target, g, gamma);
    let mut psi = DMatrix::zeros(n, n);
    let mut diag = vec![0.0; n];
    for u in 0..n {
        for s in 0..n_states {
            let c = counts[u * n_states + s];
            if c == 0 {
                continue;
            }
            let p = psi_vector(target, n_actions, gamma, u, s);
            let c = c as f64;
            diag[u] += c * p.dot(&(&k * &p));
            psi.column_mut(u).axpy(c, &p, 1.0);
        }
    }
    let kpsi = &k * &psi;
    let mf = m as f64;
    let mut h = psi.tr_mul(&kpsi);
    for (u, d) in diag.iter().enumerate() {
        h[(u, u)] -= d;
    }
    h /= mf * (mf - 1.0);
    let b = kpsi.tr_mul(&v) / mf;
    let c = v.dot(&(&k * &v));
    Ok(Quadratic { h, b, c })
}

/// Population objective: sample means replaced by expectations under the
/// stationary behavior distribution and the transition kernel.
pub fn omega_objective_exact(
    mdp: &TabularMdp,
    behavior: &Policy,
    target: &Policy,
    g: &ReferenceDistribution,
    bandwidth: f64,
) -> Result<RatioObjective> {
    mdp.check_inputs(&[behavior, target], Some(g))?;
    let p_inf = stationary_distribution(mdp, behavior)?;
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let n = n_states * n_actions;
    let gamma = mdp.gamma();
    let k = kernel::pair_gram(n_states, n_actions, bandwidth);
    let v = start_vector(target, g, gamma);
    let mut phi = DMatrix::zeros(n, n);
    for u in 0..n {
        let (s, a) = (u / n_actions, u % n_actions);
        let weight = p_inf.probs()[u];
        for next in 0..n_states {
            let p = mdp.prob(s, a, next);
            if p > 0.0 {
                let col = psi_vector(target, n_actions, gamma, u, next);
                phi.column_mut(u).axpy(weight * p, &col, 1.0);
            }
        }
    }
    let kphi = &k * &phi;
    Ok(RatioObjective {
        quad: Quadratic {
            h: phi.tr_mul(&kphi),
            b: kphi.tr_mul(&v),
            c: v.dot(&(&k * &v)),
        },
        norm: Normalizer::single(p_inf.probs().to_vec()),
    })
}

/// Fits `omega` on `tuples` and normalises it to mean one over them.
pub fn fit_omega(
    tuples: &[Transition],
    target: &Policy,
    g: &ReferenceDistribution,
    shape: (usize, usize),
    gamma: f64,
    kernel: KernelSpec,
    opt: &OptSpec,
) -> Result<RatioEstimate> {
    let (n_states, n_actions) = shape;
    check_tuples(tuples, n_states, n_actions)?;
    let freq = pair_frequencies(tuples, n_states, n_actions);
    let h = kernel::resolve(kernel, || kernel::median_bandwidth(&freq, n_actions));
    let full = omega_objective_sample(tuples, target, g, shape, gamma, h)?;
    let (raw, report) = match opt.batch {
        Some(size) if size >= 2 && size < tuples.len() => {
            objective::minimize_minibatch(&full, opt, |it| {
                let mut r = rng::stream(opt.seed, it as u64);
                let picked: Vec<Transition> =
                    index::sample(&mut r, tuples.len(), size).iter().map(|i| tuples[i]).collect();
                let quad = sample_quadratic(&picked, target, g, shape, gamma, h)
                    .unwrap_or_else(|_| full.quad.clone());
                RatioObjective {
                    quad,
                    norm: full.norm.clone(),
                }
            })
        }
        _ => objective::minimize(&full, opt),
    };
    Ok(finish(raw, &full.norm, shape, HeldOut::None, Source::Minimax, report))
}

/// Fits `omega` against the population objective; normalised under the
/// stationary distribution.
pub fn fit_omega_exact(
    mdp: &TabularMdp,
    behavior: &Policy,
    target: &Policy,
    g: &ReferenceDistribution,
    kernel: KernelSpec,
    opt: &OptSpec,
) -> Result<RatioEstimate> {
    let p_inf = stationary_distribution(mdp, behavior)?;
    let h = kernel::resolve(kernel, || kernel::median_bandwidth(p_inf.probs(), mdp.n_actions()));
    let obj = omega_objective_exact(mdp, behavior, target, g, h)?;
    let (raw, report) = objective::minimize(&obj, opt);
    Ok(finish(
        raw,
        &obj.norm,
        (mdp.n_states(), mdp.n_actions()),
        HeldOut::Independent,
        Source::Minimax,
        report,
    ))
}

fn finish(
    raw: Vec<f64>,
    norm: &Normalizer,
    shape: (usize, usize),
    held_out: HeldOut,
    source: Source,
    report: objective::OptReport,
) -> RatioEstimate {
    let z = norm.constants(&raw)[0];
    let values = raw.iter().map(|r| r / z).collect();
    RatioEstimate {
        table: SaTable::from_vec(shape.0, shape.1, values).expect("shape matches the grid"),
        source,
        held_out,
        normalizer: z,
        report: Some(report),
    }
}
