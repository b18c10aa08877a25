//! Independent reference computations used only by the tests: value
//! iteration, power iteration and truncated sums, written with plain loops
//! and no linear solves.

#![allow(dead_code)]

use d2ope_core::environments::{toy_circle, EnvBundle, ToyCircleSpec};
use d2ope_core::{Policy, TabularMdp};

pub fn toy() -> EnvBundle {
    toy_circle(ToyCircleSpec::default()).unwrap()
}

/// `sum_{s'} P(s'|x) sum_a pi(a|s') f(s', a)` for a flat pair table `f`.
pub fn next_expectation(mdp: &TabularMdp, pi: &Policy, f: &[f64], x: usize) -> f64 {
    let na = mdp.n_actions();
    let (s, a) = (x / na, x % na);
    let mut acc = 0.0;
    for (s2, p) in mdp.next_states(s, a).iter().enumerate() {
        for a2 in 0..na {
            acc += p * pi.prob(s2, a2) * f[s2 * na + a2];
        }
    }
    acc
}

/// Q by value iteration until the sup-norm update is below `tol`.
pub fn value_iteration(mdp: &TabularMdp, pi: &Policy, tol: f64) -> Vec<f64> {
    let n = mdp.n_pairs();
    let na = mdp.n_actions();
    let mut q = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|x| mdp.mean_reward(x / na, x % na) + mdp.gamma() * next_expectation(mdp, pi, &q, x))
            .collect();
        let change = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if change < tol {
            return q;
        }
    }
}

/// Pair distribution after one step of the chain driven by `pi`.
pub fn push_forward(mdp: &TabularMdp, pi: &Policy, d: &[f64]) -> Vec<f64> {
    let na = mdp.n_actions();
    let mut out = vec![0.0; d.len()];
    for (x, &w) in d.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (s2, p) in mdp.next_states(x / na, x % na).iter().enumerate() {
            for a2 in 0..na {
                out[s2 * na + a2] += w * p * pi.prob(s2, a2);
            }
        }
    }
    out
}

/// Stationary pair distribution by repeated averaging of the chain (lazy
/// power iteration, immune to periodicity).
pub fn power_iteration(mdp: &TabularMdp, pi: &Policy, tol: f64) -> Vec<f64> {
    let n = mdp.n_pairs();
    let mut d = vec![1.0 / n as f64; n];
    for _ in 0..1_000_000 {
        let p = push_forward(mdp, pi, &d);
        let next: Vec<f64> = p.iter().zip(&d).map(|(a, b)| 0.5 * (a + b)).collect();
        let change = next.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        d = next;
        if change < tol {
            break;
        }
    }
    d
}

/// `(1 - gamma) sum_{t <= horizon} gamma^t p_t` from `start`.
pub fn truncated_visitation(mdp: &TabularMdp, pi: &Policy, start: &[f64], horizon: usize) -> Vec<f64> {
    let g = mdp.gamma();
    let mut p = start.to_vec();
    let mut acc = vec![0.0; start.len()];
    let mut w = 1.0 - g;
    for _ in 0..=horizon {
        for (a, v) in acc.iter_mut().zip(&p) {
            *a += w * v;
        }
        p = push_forward(mdp, pi, &p);
        w *= g;
    }
    acc
}

/// Smallest horizon with `gamma^(h+1) / (1 - gamma) < eps`.
pub fn truncation_horizon(gamma: f64, eps: f64) -> usize {
    let mut h = 0;
    while gamma.powi(h as i32 + 1) / (1.0 - gamma) >= eps {
        h += 1;
    }
    h
}

pub fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
