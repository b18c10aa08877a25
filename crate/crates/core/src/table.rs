//! Dense tables over the state-action grid.
//!
//! A state-action pair `(s, a)` is flattened to `s * n_actions + a`. The
//! conditional table stores `f(x; x0)` at `x * n_pairs + x0`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SaTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl SaTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        SaTable {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::invalid("table length does not match grid size"));
        }
        Ok(SaTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                values.push(f(s, a));
            }
        }
        SaTable {
            n_states,
            n_actions,
            values,
        }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn n_pairs(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    /// Checked evaluation; points outside the grid are rejected.
    pub fn eval(&self, s: usize, a: usize) -> Result<f64> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(Error::OffGrid { state: s, action: a });
        }
        Ok(self.get(s, a))
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_distance(&self, other: &SaTable) -> f64 {
        sup_distance(&self.values, &other.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Table `f(x; x0)` over pairs of state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl ConditionalTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        let n = n_states * n_actions;
        ConditionalTable {
            n_states,
            n_actions,
            values: vec![value; n * n],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        let n = n_states * n_actions;
        if values.len() != n * n {
            return Err(Error::invalid("conditional table length does not match grid size"));
        }
        Ok(ConditionalTable {
            n_states,
            n_actions,
            values,
        })
    }

    /// Builds the table from `f(x, x0)` on flattened pair indices.
    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let n = n_states * n_actions;
        let mut values = Vec::with_capacity(n * n);
        for x in 0..n {
            for x0 in 0..n {
                values.push(f(x, x0));
            }
        }
        ConditionalTable {
            n_states,
            n_actions,
            values,
        }
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Value at flattened pair indices `(x, x0)`.
    #[inline]
    pub fn at(&self, x: usize, x0: usize) -> f64 {
        self.values[x * self.n_pairs() + x0]
    }

    #[inline]
    pub fn set_at(&mut self, x: usize, x0: usize, v: f64) {
        let n = self.n_pairs();
        self.values[x * n + x0] = v;
    }

    /// Row `x`: the values `f(x; ·)` over all conditioning pairs.
    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        let n = self.n_pairs();
        &self.values[x * n..(x + 1) * n]
    }

    /// `f((s, a); (s0, a0))`
    pub fn get(&self, s: usize, a: usize, s0: usize, a0: usize) -> f64 {
        self.at(s * self.n_actions + a, s0 * self.n_actions + a0)
    }

    pub fn eval(&self, s: usize, a: usize, s0: usize, a0: usize) -> Result<f64> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(Error::OffGrid { state: s, action: a });
        }
        if s0 >= self.n_states || a0 >= self.n_actions {
            return Err(Error::OffGrid { state: s0, action: a0 });
        }
        Ok(self.get(s, a, s0, a0))
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sup_distance(&self, other: &ConditionalTable) -> f64 {
        sup_distance(&self.values, &other.values)
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| libm::fabs(x - y))
        .fold(0.0, f64::max)
}
