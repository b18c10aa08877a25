//! Synthetic contamination of nuisance tables with Gaussian noise.
//!
//! Each grid cell of a selected function receives independent noise with
//! standard deviation `sigma * (n T)^-rate`. Ratios are clipped at zero
//! afterwards since they are nonnegative by definition.

use rand_distr::{Distribution, StandardNormal};

use crate::nuisance::{NuisanceTriple, Source};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_q: f64,
    /// Shared by `omega` and `tau`.
    pub sigma_ratio: f64,
    pub rate: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_q: 0.2,
            sigma_ratio: 0.04,
            rate: 0.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    /// Per-cell standard deviations `(q, ratio)` for a dataset of `n` by `horizon`.
    pub fn scales(&self, n: usize, horizon: usize) -> (f64, f64) {
        let shrink = libm::pow((n * horizon) as f64, -self.rate);
        (self.sigma_q * shrink, self.sigma_ratio * shrink)
    }
}

/// Which nuisance functions to contaminate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NuisanceSet {
    pub q: bool,
    pub omega: bool,
    pub tau: bool,
}

impl NuisanceSet {
    pub const ALL: NuisanceSet = NuisanceSet {
        q: true,
        omega: true,
        tau: true,
    };
    pub const NONE: NuisanceSet = NuisanceSet {
        q: false,
        omega: false,
        tau: false,
    };
}

const Q_STREAM: u64 = 0;
const OMEGA_STREAM: u64 = 1;
const TAU_STREAM: u64 = 2;

fn perturb(values: &mut [f64], std: f64, seed: u64, stream: u64, clip: bool) {
    let mut r = rng::stream(seed, stream);
    for v in values {
        let z: f64 = StandardNormal.sample(&mut r);
        *v += std * z;
        if clip && *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn contaminate(
    mut triple: NuisanceTriple,
    which: NuisanceSet,
    noise: &NoiseSpec,
    n: usize,
    horizon: usize,
) -> NuisanceTriple {
    let (sq, sr) = noise.scales(n, horizon);
    if which.q && sq > 0.0 {
        perturb(triple.q.table.as_mut_slice(), sq, noise.seed, Q_STREAM, false);
        triple.q.source = Source::ExactWithNoise;
    }
    if which.omega && sr > 0.0 {
        perturb(triple.omega.table.as_mut_slice(), sr, noise.seed, OMEGA_STREAM, true);
        triple.omega.source = Source::ExactWithNoise;
    }
    if which.tau && sr > 0.0 {
        perturb(triple.tau.table.as_mut_slice(), sr, noise.seed, TAU_STREAM, true);
        triple.tau.source = Source::ExactWithNoise;
    }
    triple
}
