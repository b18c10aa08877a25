//! Quadratic minimax objectives and the gradient-descent optimizer shared by
//! the `omega` and `tau` learners.
//!
//! With the test function ranging over the unit ball of an RKHS, the inner
//! supremum of both minimax problems has a closed form that is quadratic in
//! the normalised ratio vector `w`:
//!
//! ```text
//! D(w) = w' H w + 2 b' w + c
//! ```
//!
//! The ratio is parameterised as `softplus(theta)` per grid cell and
//! normalised inside the objective: parameters are split into groups, and
//! each group is divided by its weighted mean `z_g = sum_{i in g} v_i raw_i`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// A quadratic form in the normalised ratio vector.
pub trait Form {
    fn value_grad(&self, w: &DVector<f64>) -> (f64, DVector<f64>);

    fn value(&self, w: &DVector<f64>) -> f64 {
        self.value_grad(w).0
    }
}

/// Dense `w' H w + 2 b' w + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl Form for Quadratic {
    fn value(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.h * w)) + 2.0 * self.b.dot(w) + self.c
    }

    fn value_grad(&self, w: &DVector<f64>) -> (f64, DVector<f64>) {
        let hw = &self.h * w;
        let value = w.dot(&hw) + 2.0 * self.b.dot(w) + self.c;
        (value, (hw + &self.b) * 2.0)
    }
}

/// `sum_{i,j} k(i,j) phi_i' K phi_j` with `phi_i = a_i + B_i w_i`, where `w_i`
/// is the i-th contiguous block of `w`. This is the conditional objective
/// with a product kernel; it never materialises the full Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockQuadratic {
    /// Kernel between blocks.
    pub outer: DMatrix<f64>,
    /// Kernel within a block.
    pub inner: DMatrix<f64>,
    pub a: Vec<DVector<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

impl BlockQuadratic {
    fn residuals(&self, w: &DVector<f64>) -> Vec<DVector<f64>> {
        let n = self.inner.nrows();
        self.a
            .iter()
            .zip(&self.b)
            .enumerate()
            .map(|(i, (a, b))| a + b * w.rows(i * n, n))
            .collect()
    }

    /// `sum_j k(i,j) K phi_j` for every block `i`.
    fn smoothed(&self, phi: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let kphi: Vec<DVector<f64>> = phi.iter().map(|p| &self.inner * p).collect();
        (0..phi.len())
            .map(|i| {
                let mut acc = DVector::zeros(self.inner.nrows());
                for (j, kp) in kphi.iter().enumerate() {
                    let k = self.outer[(i, j)];
                    if k != 0.0 {
                        acc.axpy(k, kp, 1.0);
                    }
                }
                acc
            })
            .collect()
    }
}

impl Form for BlockQuadratic {
    fn value_grad(&self, w: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.inner.nrows();
        let phi = self.residuals(w);
        let sm = self.smoothed(&phi);
        let value = phi.iter().zip(&sm).map(|(p, s)| p.dot(s)).sum();
        let mut grad = DVector::zeros(w.len());
        for (i, (b, s)) in self.b.iter().zip(&sm).enumerate() {
            grad.rows_mut(i * n, n).copy_from(&(b.tr_mul(s) * 2.0));
        }
        (value, grad)
    }
}

/// Grouped weighted-mean normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub group: Vec<usize>,
    pub weight: Vec<f64>,
    pub n_groups: usize,
}

impl Normalizer {
    pub fn single(weight: Vec<f64>) -> Self {
        Normalizer {
            group: vec![0; weight.len()],
            weight,
            n_groups: 1,
        }
    }

    pub fn constants(&self, raw: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n_groups];
        for ((&g, &v), &r) in self.group.iter().zip(&self.weight).zip(raw) {
            z[g] += v * r;
        }
        z
    }

    pub fn apply(&self, raw: &[f64]) -> (DVector<f64>, Vec<f64>) {
        let z = self.constants(raw);
        let w = DVector::from_iterator(raw.len(), raw.iter().zip(&self.group).map(|(r, &g)| r / z[g]));
        (w, z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioObjective<F = Quadratic> {
    pub quad: F,
    pub norm: Normalizer,
}

impl<F: Form> RatioObjective<F> {
    /// Objective at an already-normalised ratio vector.
    pub fn value_normalized(&self, w: &[f64]) -> f64 {
        self.quad.value(&DVector::from_column_slice(w))
    }

    /// Objective at a raw (unnormalised) ratio vector.
    pub fn value(&self, raw: &[f64]) -> f64 {
        self.quad.value(&self.norm.apply(raw).0)
    }

    /// Value and gradient with respect to the raw ratio entries.
    fn value_grad_raw(&self, raw: &[f64]) -> (f64, Vec<f64>) {
        let (w, z) = self.norm.apply(raw);
        let (value, g) = self.quad.value_grad(&w);
        // d w_i / d raw_j = [g(i)=g(j)] (delta_ij / z - raw_i v_j / z^2)
        let mut dot = vec![0.0; self.norm.n_groups];
        for (i, &gi) in self.norm.group.iter().enumerate() {
            dot[gi] += g[i] * raw[i];
        }
        let grad = (0..raw.len())
            .map(|j| {
                let gj = self.norm.group[j];
                let zj = z[gj];
                g[j] / zj - self.norm.weight[j] * dot[gj] / (zj * zj)
            })
            .collect();
        (value, grad)
    }

    fn value_grad_theta(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let raw: Vec<f64> = theta.iter().map(|&t| softplus(t)).collect();
        let (value, grad) = self.value_grad_raw(&raw);
        let grad = grad.iter().zip(theta).map(|(g, &t)| g * sigmoid(t)).collect();
        (value, grad)
    }
}

#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else {
        libm::log1p(libm::exp(t))
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-t))
}

/// `softplus^-1(1)`, the parameter of a unit ratio.
pub fn unit_theta() -> f64 {
    libm::log(libm::expm1(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptSpec {
    /// Initial step size.
    pub lr: f64,
    pub iters: usize,
    /// Converged once the sup norm of the gradient drops below this.
    pub grad_tol: f64,
    /// Step multiplier after an accepted step (1.0 keeps the step fixed).
    pub growth: f64,
    /// Minibatch size; `None` runs full-batch descent.
    pub batch: Option<usize>,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for OptSpec {
    fn default() -> Self {
        OptSpec {
            lr: 1.0,
            iters: 20_000,
            grad_tol: 1e-12,
            growth: 1.2,
            batch: None,
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptReport {
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    /// Objective value every `checkpoint_every` iterations, then the final one.
    pub checkpoints: Vec<f64>,
}

/// Full-batch descent on `theta` with step halving whenever a step would
/// increase the objective. Returns the raw ratio vector `softplus(theta)`.
pub fn minimize<F: Form>(obj: &RatioObjective<F>, spec: &OptSpec) -> (Vec<f64>, OptReport) {
    let dim = obj.norm.group.len();
    let mut theta = vec![unit_theta(); dim];
    let (mut value, mut grad) = obj.value_grad_theta(&theta);
    let mut lr = spec.lr;
    let mut checkpoints = vec![value];
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; dim];
    while iterations < spec.iters {
        if sup_norm(&grad) < spec.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        for ((t, th), g) in trial.iter_mut().zip(&theta).zip(&grad) {
            *t = th - lr * g;
        }
        let (v_new, g_new) = obj.value_grad_theta(&trial);
        if v_new <= value && v_new.is_finite() {
            let stalled = value - v_new <= f64::EPSILON * value.abs().max(f64::MIN_POSITIVE);
            core::mem::swap(&mut theta, &mut trial);
            value = v_new;
            grad = g_new;
            lr *= spec.growth;
            if stalled && lr < 1e-300 {
                break;
            }
        } else {
            lr *= 0.5;
            if lr < 1e-300 {
                // no descent direction left at machine precision
                converged = true;
                break;
            }
        }
        if spec.checkpoint_every > 0 && iterations % spec.checkpoint_every == 0 {
            checkpoints.push(value);
        }
    }
    checkpoints.push(value);
    let raw = theta.iter().map(|&t| softplus(t)).collect();
    (
        raw,
        OptReport {
            iterations,
            objective: value,
            converged,
            checkpoints,
        },
    )
}

/// Minibatch descent with a fixed step; `batch_objective` is called once per
/// iteration and may sample a fresh minibatch. The final objective is
/// reported under `full`.
pub fn minimize_minibatch<F: Form>(
    full: &RatioObjective<F>,
    spec: &OptSpec,
    mut batch_objective: impl FnMut(usize) -> RatioObjective<F>,
) -> (Vec<f64>, OptReport) {
    let dim = full.norm.group.len();
    let mut theta = vec![unit_theta(); dim];
    let mut checkpoints = vec![full.value_grad_theta(&theta).0];
    for it in 1..=spec.iters {
        let obj = batch_objective(it);
        let (_, grad) = obj.value_grad_theta(&theta);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= spec.lr * g;
        }
        if spec.checkpoint_every > 0 && it % spec.checkpoint_every == 0 {
            checkpoints.push(full.value_grad_theta(&theta).0);
        }
    }
    let raw: Vec<f64> = theta.iter().map(|&t| softplus(t)).collect();
    let objective = full.value(&raw);
    checkpoints.push(objective);
    (
        raw,
        OptReport {
            iterations: spec.iters,
            objective,
            converged: false,
            checkpoints,
        },
    )
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
}
