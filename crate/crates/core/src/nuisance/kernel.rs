//! Laplacian kernel on one-hot encoded state-action pairs.
//!
//! A pair `(s, a)` is encoded as the concatenation of a one-hot state vector
//! and a one-hot action vector, so the L1 distance between two pairs is
//! `2 * [s != s'] + 2 * [a != a']`. For the conditional ratio the kernel acts
//! on `(x, x0)` and the distances of both components add.

use alloc::vec::Vec;

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median heuristic over the training distribution.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            bandwidth: Bandwidth::Auto,
        }
    }
}

#[inline]
pub fn onehot_distance(n_actions: usize, u: usize, v: usize) -> f64 {
    let ds = if u / n_actions != v / n_actions { 2.0 } else { 0.0 };
    let da = if u % n_actions != v % n_actions { 2.0 } else { 0.0 };
    ds + da
}

/// Weighted median of a discrete distance distribution; `(distance, mass)`.
fn weighted_median(mut points: Vec<(f64, f64)>) -> f64 {
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(core::cmp::Ordering::Equal));
    let total: f64 = points.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (d, w) in points {
        acc += w;
        if acc >= 0.5 * total {
            return d;
        }
    }
    0.0
}

/// Distribution of the one-hot distance between two independent draws from
/// `weights`, bucketed by distance value (0, 2 or 4).
fn distance_masses(weights: &[f64], n_actions: usize) -> [f64; 3] {
    let mut masses = [0.0; 3];
    for (u, &wu) in weights.iter().enumerate() {
        for (v, &wv) in weights.iter().enumerate() {
            let d = onehot_distance(n_actions, u, v);
            masses[(d / 2.0) as usize] += wu * wv;
        }
    }
    masses
}

fn positive_or_one(h: f64) -> f64 {
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

/// Median heuristic for the pair kernel under the pair distribution `weights`.
pub fn median_bandwidth(weights: &[f64], n_actions: usize) -> f64 {
    let m = distance_masses(weights, n_actions);
    positive_or_one(weighted_median(alloc::vec![(0.0, m[0]), (2.0, m[1]), (4.0, m[2])]))
}

/// Median heuristic for the conditional kernel: both components of `(x, x0)`
/// are drawn independently from `weights`.
pub fn median_bandwidth_conditional(weights: &[f64], n_actions: usize) -> f64 {
    let m = distance_masses(weights, n_actions);
    let mut sum = [0.0; 5];
    for i in 0..3 {
        for j in 0..3 {
            sum[i + j] += m[i] * m[j];
        }
    }
    let points = sum.iter().enumerate().map(|(k, &w)| (2.0 * k as f64, w)).collect();
    positive_or_one(weighted_median(points))
}

pub fn resolve(spec: KernelSpec, auto: impl FnOnce() -> f64) -> f64 {
    match spec.bandwidth {
        Bandwidth::Auto => auto(),
        Bandwidth::Fixed(h) => h,
    }
}

/// Gram matrix of the pair kernel over the full grid.
pub fn pair_gram(n_states: usize, n_actions: usize, bandwidth: f64) -> DMatrix<f64> {
    let n = n_states * n_actions;
    DMatrix::from_fn(n, n, |u, v| libm::exp(-onehot_distance(n_actions, u, v) / bandwidth))
}

/// Gram matrix of the conditional kernel over `(x, x0)`, flattened as
/// `x * n_pairs + x0`.
pub fn conditional_gram(n_states: usize, n_actions: usize, bandwidth: f64) -> DMatrix<f64> {
    let n = n_states * n_actions;
    DMatrix::from_fn(n * n, n * n, |i, j| {
        let d = onehot_distance(n_actions, i / n, j / n) + onehot_distance(n_actions, i % n, j % n);
        libm::exp(-d / bandwidth)
    })
}
