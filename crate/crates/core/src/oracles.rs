//! Exact ground truth on a tabular MDP.
//!
//! Everything here is a direct linear solve. The pair kernel of a policy is
//! the matrix `M[u][v] = P(s_v | u) pi(a_v | s_v)` over flattened pairs.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mdp::{Policy, ReferenceDistribution, TabularMdp};
use crate::table::{ConditionalTable, SaTable};

/// Mass below this is treated as "not visited" in support checks.
const SUPPORT_EPS: f64 = 1e-14;
/// Second-smallest singular value of `I - M` below this means the chain has
/// more than one closed class.
const ERGODIC_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactQ(pub SaTable);

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution(pub SaTable);

#[derive(Debug, Clone, PartialEq)]
pub struct ExactOmega(pub SaTable);

/// `tau(x; x0)` for every pair of state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTau(pub ConditionalTable);

impl StationaryDistribution {
    pub fn probs(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Marginal over states.
    pub fn state_marginal(&self) -> Vec<f64> {
        let t = &self.0;
        (0..t.n_states())
            .map(|s| (0..t.n_actions()).map(|a| t.get(s, a)).sum())
            .collect()
    }
}

/// `M[u][v] = P(s_v | u) pi(a_v | s_v)`.
pub fn pair_kernel(mdp: &TabularMdp, policy: &Policy) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    DMatrix::from_fn(n, n, |u, v| {
        let (s, a) = (u / na, u % na);
        let (s2, a2) = (v / na, v % na);
        mdp.prob(s, a, s2) * policy.prob(s2, a2)
    })
}

fn solve(lhs: DMatrix<f64>, rhs: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical(format!("{what}: singular system")))
}

/// `Q^pi` from `(I - gamma M) Q = r`.
pub fn exact_q(mdp: &TabularMdp, target: &Policy) -> Result<ExactQ> {
    mdp.check_inputs(&[target], None)?;
    let n = mdp.n_pairs();
    let m = pair_kernel(mdp, target);
    let lhs = DMatrix::identity(n, n) - m * mdp.gamma();
    let r = mdp.mean_reward_table();
    let rhs = DMatrix::from_column_slice(n, 1, r.as_slice());
    let q = solve(lhs, rhs, "Bellman equation")?;
    let table = SaTable::from_vec(mdp.n_states(), mdp.n_actions(), q.iter().copied().collect())?;
    Ok(ExactQ(table))
}

/// `eta^pi = E_{s ~ G} V^pi(s)`.
pub fn exact_value(mdp: &TabularMdp, target: &Policy, g: &ReferenceDistribution) -> Result<f64> {
    mdp.check_inputs(&[target], Some(g))?;
    let q = exact_q(mdp, target)?;
    Ok(g.plug_in(target, &q.0))
}

/// Limiting distribution over state-action pairs of the chain driven by
/// `behavior`.
pub fn stationary_distribution(mdp: &TabularMdp, behavior: &Policy) -> Result<StationaryDistribution> {
    mdp.check_inputs(&[behavior], None)?;
    let n = mdp.n_pairs();
    let m = pair_kernel(mdp, behavior);
    let a = DMatrix::identity(n, n) - m.transpose();
    if n > 1 {
        let sv = a.clone().svd(false, false).singular_values;
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
        if sorted[1] < ERGODIC_EPS {
            return Err(Error::NotErgodic(format!(
                "eigenvalue 1 has multiplicity > 1 (second singular value {:.3e})",
                sorted[1]
            )));
        }
    }
    // Replace the last balance equation by the normalisation constraint.
    let mut lhs = a;
    for j in 0..n {
        lhs[(n - 1, j)] = 1.0;
    }
    let mut rhs = DMatrix::zeros(n, 1);
    rhs[(n - 1, 0)] = 1.0;
    let p = solve(lhs, rhs, "stationary distribution")
        .map_err(|_| Error::NotErgodic("stationary system is singular".into()))?;
    let mut probs: Vec<f64> = p.iter().map(|&x| if x < 0.0 && x > -1e-12 { 0.0 } else { x }).collect();
    if probs.iter().any(|&x| x < 0.0) {
        return Err(Error::NotErgodic("stationary solve produced negative mass".into()));
    }
    let total: f64 = probs.iter().sum();
    for x in &mut probs {
        *x /= total;
    }
    Ok(StationaryDistribution(SaTable::from_vec(
        mdp.n_states(),
        mdp.n_actions(),
        probs,
    )?))
}

/// Normalised discounted occupancy `(1 - gamma) sum_t gamma^t p_t` of the
/// target policy started from `start` (a distribution over pairs).
pub fn discounted_visitation(mdp: &TabularMdp, target: &Policy, start: &[f64]) -> Result<Vec<f64>> {
    mdp.check_inputs(&[target], None)?;
    let n = mdp.n_pairs();
    if start.len() != n {
        return Err(Error::invalid("start distribution has the wrong length"));
    }
    let g = mdp.gamma();
    let lhs = DMatrix::identity(n, n) - pair_kernel(mdp, target).transpose() * g;
    let rhs = DMatrix::from_iterator(n, 1, start.iter().map(|p| (1.0 - g) * p));
    let d = solve(lhs, rhs, "discounted visitation")?;
    Ok(d.iter().copied().collect())
}

fn ratio_or_coverage_error(
    d: f64,
    p: f64,
    pair: usize,
    n_actions: usize,
) -> Result<f64> {
    if p > SUPPORT_EPS {
        Ok(d / p)
    } else if d.abs() <= SUPPORT_EPS {
        Ok(0.0)
    } else {
        Err(Error::Coverage {
            state: pair / n_actions,
            action: pair % n_actions,
            detail: format!("target visitation {d:.3e} but behavior stationary mass {p:.3e}"),
        })
    }
}

/// `omega^pi = d^pi / p_inf` with the `G x pi` start.
pub fn exact_omega(
    mdp: &TabularMdp,
    target: &Policy,
    behavior: &Policy,
    g: &ReferenceDistribution,
) -> Result<ExactOmega> {
    mdp.check_inputs(&[target, behavior], Some(g))?;
    let p_inf = stationary_distribution(mdp, behavior)?;
    omega_from(mdp, target, g, &p_inf)
}

pub(crate) fn omega_from(
    mdp: &TabularMdp,
    target: &Policy,
    g: &ReferenceDistribution,
    p_inf: &StationaryDistribution,
) -> Result<ExactOmega> {
    let d = discounted_visitation(mdp, target, &g.with_policy(target))?;
    let values = d
        .iter()
        .zip(p_inf.probs())
        .enumerate()
        .map(|(u, (&d, &p))| ratio_or_coverage_error(d, p, u, mdp.n_actions()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExactOmega(SaTable::from_vec(mdp.n_states(), mdp.n_actions(), values)?))
}

/// Conditional ratio: the visitation started from a point mass at each
/// `x0`, divided by `p_inf`.
pub fn exact_tau(mdp: &TabularMdp, target: &Policy, behavior: &Policy) -> Result<ExactTau> {
    mdp.check_inputs(&[target, behavior], None)?;
    let p_inf = stationary_distribution(mdp, behavior)?;
    tau_from(mdp, target, &p_inf)
}

pub(crate) fn tau_from(mdp: &TabularMdp, target: &Policy, p_inf: &StationaryDistribution) -> Result<ExactTau> {
    let n = mdp.n_pairs();
    let g = mdp.gamma();
    let lhs = DMatrix::identity(n, n) - pair_kernel(mdp, target).transpose() * g;
    let rhs = DMatrix::identity(n, n) * (1.0 - g);
    // column x0 holds the visitation started at x0
    let d = solve(lhs, rhs, "conditional visitation")?;
    let p = p_inf.probs();
    let mut table = ConditionalTable::zeros(mdp.n_states(), mdp.n_actions());
    for x in 0..n {
        for x0 in 0..n {
            table.set_at(x, x0, ratio_or_coverage_error(d[(x, x0)], p[x], x, mdp.n_actions())?);
        }
    }
    Ok(ExactTau(table))
}

/// Semiparametric efficiency bound
/// `(1-gamma)^-2 E_{p_inf}[omega^2 E{(r + gamma V(S') - Q)^2 | s, a}]`.
pub fn efficiency_bound(
    mdp: &TabularMdp,
    target: &Policy,
    behavior: &Policy,
    g: &ReferenceDistribution,
) -> Result<f64> {
    mdp.check_inputs(&[target, behavior], Some(g))?;
    let p_inf = stationary_distribution(mdp, behavior)?;
    let omega = omega_from(mdp, target, g, &p_inf)?;
    let q = exact_q(mdp, target)?;
    Ok(efficiency_bound_from(mdp, target, &p_inf, &omega, &q))
}

pub(crate) fn efficiency_bound_from(
    mdp: &TabularMdp,
    target: &Policy,
    p_inf: &StationaryDistribution,
    omega: &ExactOmega,
    q: &ExactQ,
) -> f64 {
    let gamma = mdp.gamma();
    let v = target.state_values(&q.0);
    let mut total = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let mut second_moment = 0.0;
            for (s2, (&p, &r)) in mdp.next_states(s, a).iter().zip(mdp.rewards(s, a)).enumerate() {
                let td = r + gamma * v[s2] - q.0.get(s, a);
                second_moment += p * td * td;
            }
            let w = omega.0.get(s, a);
            total += p_inf.0.get(s, a) * w * w * second_moment;
        }
    }
    total / ((1.0 - gamma) * (1.0 - gamma))
}

/// Exact `E L(omega, f)`: expectation under `p_inf` and the transition law of
/// `omega(X)(gamma E_pi f(S', .) - f(X)) + (1-gamma) E_{G x pi} f`.
pub fn moment_check_omega(
    mdp: &TabularMdp,
    target: &Policy,
    behavior: &Policy,
    g: &ReferenceDistribution,
    omega: &SaTable,
    f: &SaTable,
) -> Result<f64> {
    mdp.check_inputs(&[target, behavior], Some(g))?;
    let p_inf = stationary_distribution(mdp, behavior)?;
    let gamma = mdp.gamma();
    let v_f = target.state_values(f);
    let mut total = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let next: f64 = mdp.next_states(s, a).iter().zip(&v_f).map(|(p, v)| p * v).sum();
            total += p_inf.0.get(s, a) * omega.get(s, a) * (gamma * next - f.get(s, a));
        }
    }
    Ok(total + (1.0 - gamma) * g.plug_in(target, f))
}

/// Exact `h(tau, f)` with the conditioning pair drawn from `p_inf` and an
/// independent stationary transition.
pub fn moment_check_tau(
    mdp: &TabularMdp,
    target: &Policy,
    behavior: &Policy,
    tau: &ConditionalTable,
    f: &ConditionalTable,
) -> Result<f64> {
    mdp.check_inputs(&[target, behavior], None)?;
    let p_inf = stationary_distribution(mdp, behavior)?;
    let gamma = mdp.gamma();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    let p = p_inf.probs();
    // next[x][x0] = E_{S' ~ P(.|x), a ~ pi(.|S')} f((S', a); x0)
    let mut total = 0.0;
    for x0 in 0..n {
        if p[x0] == 0.0 {
            continue;
        }
        let mut inner = (1.0 - gamma) * f.at(x0, x0);
        for x in 0..n {
            let (s, a) = (x / na, x % na);
            let mut next = 0.0;
            for (s2, &ps) in mdp.next_states(s, a).iter().enumerate() {
                if ps == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    next += ps * target.prob(s2, a2) * f.at(s2 * na + a2, x0);
                }
            }
            inner -= p[x] * tau.at(x, x0) * (f.at(x, x0) - gamma * next);
        }
        total += p[x0] * inner;
    }
    Ok(total)
}

/// All exact quantities for one environment, computed once.
#[derive(Debug, Clone)]
pub struct OracleSet {
    pub q: ExactQ,
    pub eta: f64,
    pub p_inf: StationaryDistribution,
    pub omega: ExactOmega,
    pub tau: ExactTau,
    pub sigma2: f64,
}

impl OracleSet {
    pub fn compute(
        mdp: &TabularMdp,
        target: &Policy,
        behavior: &Policy,
        g: &ReferenceDistribution,
    ) -> Result<Self> {
        mdp.check_inputs(&[target, behavior], Some(g))?;
        let q = exact_q(mdp, target)?;
        let eta = g.plug_in(target, &q.0);
        let p_inf = stationary_distribution(mdp, behavior)?;
        let omega = omega_from(mdp, target, g, &p_inf)?;
        let tau = tau_from(mdp, target, &p_inf)?;
        let sigma2 = efficiency_bound_from(mdp, target, &p_inf, &omega, &q);
        Ok(OracleSet {
            q,
            eta,
            p_inf,
            omega,
            tau,
            sigma2,
        })
    }
}

/// Sup-norm Bellman residual `|Q - (r + gamma M Q)|_inf` of a table.
pub fn bellman_residual(mdp: &TabularMdp, target: &Policy, q: &SaTable) -> f64 {
    let v = target.state_values(q);
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let next: f64 = mdp.next_states(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
            let res = q.get(s, a) - (mdp.mean_reward(s, a) + mdp.gamma() * next);
            worst = worst.max(res.abs());
        }
    }
    worst
}
