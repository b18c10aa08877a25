//! Built-in benchmark environments.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{Policy, ReferenceDistribution, TabularMdp};

/// Everything needed to pose an evaluation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvBundle {
    pub mdp: TabularMdp,
    pub behavior: Policy,
    pub target: Policy,
    pub reference: ReferenceDistribution,
}

impl EnvBundle {
    /// Same environment with the behavior policy replaced by the target.
    pub fn on_policy(mut self) -> Self {
        self.behavior = self.target.clone();
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.mdp = self.mdp.with_gamma(gamma)?;
        Ok(self)
    }
}

pub const STATE_A: usize = 0;
pub const STATE_B: usize = 1;
pub const STATE_C: usize = 2;
/// Moves A -> B -> C -> A.
pub const CLOCKWISE: usize = 0;
/// Moves A -> C -> B -> A.
pub const COUNTER_CLOCKWISE: usize = 1;

/// Three states on a circle; the agent is rewarded for entering A.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyCircleSpec {
    /// Probability that the intended move fails and the agent stays put.
    pub slip: f64,
    pub gamma: f64,
}

impl Default for ToyCircleSpec {
    fn default() -> Self {
        ToyCircleSpec {
            slip: 0.1,
            gamma: 0.95,
        }
    }
}

fn circle_move(s: usize, a: usize) -> usize {
    match a {
        CLOCKWISE => (s + 1) % 3,
        _ => (s + 2) % 3,
    }
}

pub fn toy_circle(spec: ToyCircleSpec) -> Result<EnvBundle> {
    if !(0.0..1.0).contains(&spec.slip) {
        return Err(Error::invalid(format!("slip must lie in [0, 1), got {}", spec.slip)));
    }
    let (ns, na) = (3, 2);
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let base = (s * na + a) * ns;
            transition[base + circle_move(s, a)] += 1.0 - spec.slip;
            transition[base + s] += spec.slip;
            reward[base + STATE_A] = 1.0;
        }
    }
    let mdp = TabularMdp::new(ns, na, transition, reward, spec.gamma)?;
    let behavior = Policy::uniform(ns, na);
    let mut target = vec![0.0; ns * na];
    target[STATE_A * na + CLOCKWISE] = 0.5;
    target[STATE_A * na + COUNTER_CLOCKWISE] = 0.5;
    target[STATE_B * na + COUNTER_CLOCKWISE] = 1.0;
    target[STATE_C * na + CLOCKWISE] = 1.0;
    Ok(EnvBundle {
        mdp,
        behavior,
        target: Policy::new(ns, na, target)?,
        reference: ReferenceDistribution::uniform(ns),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub seed: u64,
    pub reward_range: (f64, f64),
    pub gamma: f64,
}

impl RandomMdpSpec {
    pub fn new(n_states: usize, n_actions: usize, seed: u64) -> Self {
        RandomMdpSpec {
            n_states,
            n_actions,
            seed,
            reward_range: (0.0, 1.0),
            gamma: 0.95,
        }
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Renormalise a row so rounding error cannot push its sum off 1.
fn fix_row(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// Random dense MDP with a behavior policy bounded away from zero, so the
/// behavior chain is ergodic by construction.
pub fn random_mdp(spec: RandomMdpSpec) -> Result<EnvBundle> {
    let RandomMdpSpec {
        n_states: ns,
        n_actions: na,
        seed,
        reward_range: (lo, hi),
        gamma,
    } = spec;
    if ns < 2 || na < 2 {
        return Err(Error::invalid("random MDP needs at least 2 states and 2 actions"));
    }
    if !(lo <= hi) {
        return Err(Error::invalid("reward range must satisfy lo <= hi"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let mut row = random_simplex(&mut rng, ns);
        fix_row(&mut row);
        transition.extend(row);
    }
    let reward: Vec<f64> = (0..ns * na * ns).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    let floor = f64::min(0.05, 0.5 / na as f64);
    let mut behavior = Vec::with_capacity(ns * na);
    let mut target = Vec::with_capacity(ns * na);
    for _ in 0..ns {
        let mut row: Vec<f64> = random_simplex(&mut rng, na)
            .into_iter()
            .map(|w| floor + (1.0 - floor * na as f64) * w)
            .collect();
        fix_row(&mut row);
        behavior.extend(row);
    }
    for _ in 0..ns {
        let mut row = random_simplex(&mut rng, na);
        fix_row(&mut row);
        target.extend(row);
    }
    Ok(EnvBundle {
        mdp: TabularMdp::new(ns, na, transition, reward, gamma)?,
        behavior: Policy::new(ns, na, behavior)?,
        target: Policy::new(ns, na, target)?,
        reference: ReferenceDistribution::uniform(ns),
    })
}

/// Parsed environment selector: `toy`, `toy-onpolicy` or
/// `random:<states>x<actions>:<seed>`.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSelector {
    Toy,
    ToyOnPolicy,
    Random {
        n_states: usize,
        n_actions: usize,
        seed: u64,
    },
}

impl EnvSelector {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "toy" => return Ok(EnvSelector::Toy),
            "toy-onpolicy" => return Ok(EnvSelector::ToyOnPolicy),
            _ => {}
        }
        let bad = || Error::invalid(format!("unknown environment selector '{s}'"));
        let rest = s.strip_prefix("random:").ok_or_else(bad)?;
        let (shape, seed) = rest.split_once(':').ok_or_else(bad)?;
        let (ns, na) = shape.split_once('x').ok_or_else(bad)?;
        Ok(EnvSelector::Random {
            n_states: ns.parse().map_err(|_| bad())?,
            n_actions: na.parse().map_err(|_| bad())?,
            seed: seed.parse().map_err(|_| bad())?,
        })
    }

    /// Builds the environment; `gamma` overrides the default discount.
    pub fn build(&self, gamma: Option<f64>) -> Result<EnvBundle> {
        let bundle = match *self {
            EnvSelector::Toy => toy_circle(ToyCircleSpec::default())?,
            EnvSelector::ToyOnPolicy => toy_circle(ToyCircleSpec::default())?.on_policy(),
            EnvSelector::Random {
                n_states,
                n_actions,
                seed,
            } => random_mdp(RandomMdpSpec::new(n_states, n_actions, seed))?,
        };
        match gamma {
            Some(g) => bundle.with_gamma(g),
            None => Ok(bundle),
        }
    }

    pub fn name(&self) -> String {
        match self {
            EnvSelector::Toy => "toy".to_string(),
            EnvSelector::ToyOnPolicy => "toy-onpolicy".to_string(),
            EnvSelector::Random {
                n_states,
                n_actions,
                seed,
            } => format!("random:{n_states}x{n_actions}:{seed}"),
        }
    }
}
