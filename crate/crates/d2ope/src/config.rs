//! Run configuration shared by all subcommands.
//!
//! Settings come from an optional `key = value` file and then from command
//! line flags, which take precedence. Keys are the long flag names without
//! the leading dashes; `#` starts a comment. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use d2ope_core::nuisance::{Bandwidth, NoiseSpec, NuisanceSet};

use crate::error::{Error, Result};
use crate::inference::{EstimatorConfig, Method, NuisanceMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceChoice {
    Fitted,
    Exact,
    Noisy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: String,
    pub n: Option<Vec<usize>>,
    pub horizon: usize,
    pub gamma: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub methods: Option<Vec<Method>>,
    pub m: usize,
    pub k: usize,
    pub alpha: f64,
    pub nuisance: Option<NuisanceChoice>,
    pub noise_q: f64,
    pub noise_ratio: f64,
    pub noise_rates: Option<Vec<f64>>,
    pub noise_on: NuisanceSet,
    pub incomplete_fraction: f64,
    pub reps: usize,
    pub bootstrap_reps: usize,
    pub full: bool,
    pub estimator: EstimatorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let base = EstimatorConfig::default();
        RunConfig {
            env: "toy".into(),
            n: None,
            horizon: 50,
            gamma: None,
            seed: 0,
            out: None,
            data: None,
            methods: None,
            m: base.m,
            k: base.k,
            alpha: base.alpha,
            nuisance: None,
            noise_q: NoiseSpec::default().sigma_q,
            noise_ratio: NoiseSpec::default().sigma_ratio,
            noise_rates: None,
            noise_on: NuisanceSet::ALL,
            incomplete_fraction: base.incomplete_fraction,
            reps: 200,
            bootstrap_reps: base.bootstrap_reps,
            full: false,
            estimator: base,
        }
    }
}

/// Keys accepted in config files and as flags.
pub const KEYS: [&str; 30] = [
    "env",
    "n",
    "T",
    "gamma",
    "seed",
    "out",
    "data",
    "method",
    "m",
    "K",
    "alpha",
    "nuisance",
    "noise-q",
    "noise-ratio",
    "noise-rate",
    "noise-on",
    "incomplete-fraction",
    "reps",
    "bootstrap-reps",
    "full",
    "omega.lr",
    "omega.iters",
    "omega.batch",
    "omega.growth",
    "tau.lr",
    "tau.iters",
    "tau.growth",
    "kernel.bandwidth",
    "fqe.iters",
    "fqe.tol",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::usage(format!("invalid value '{value}' for {key}")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn in_range(key: &str, ok: bool, value: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::usage(format!("{key} = {value} is out of range")))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "env" => self.env = value.to_string(),
            "n" => {
                let n: Vec<usize> = list(key, value)?;
                in_range(key, !n.is_empty() && n.iter().all(|&x| x > 0), value)?;
                self.n = Some(n);
            }
            "T" => {
                self.horizon = parse(key, value)?;
                in_range(key, self.horizon > 0, value)?;
            }
            "gamma" => {
                let g: f64 = parse(key, value)?;
                in_range(key, (0.0..1.0).contains(&g), value)?;
                self.gamma = Some(g);
            }
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "data" => self.data = Some(PathBuf::from(value)),
            "method" => {
                let m = value.split(',').map(|v| Method::parse(v.trim())).collect::<Result<Vec<_>>>()?;
                self.methods = Some(m);
            }
            "m" => {
                self.m = parse(key, value)?;
                in_range(key, self.m >= 1, value)?;
            }
            "K" => {
                self.k = parse(key, value)?;
                in_range(key, self.k >= 2, value)?;
            }
            "alpha" => {
                self.alpha = parse(key, value)?;
                in_range(key, self.alpha > 0.0 && self.alpha < 1.0, value)?;
            }
            "nuisance" => {
                self.nuisance = Some(match value {
                    "fitted" => NuisanceChoice::Fitted,
                    "exact" => NuisanceChoice::Exact,
                    "noisy" => NuisanceChoice::Noisy,
                    _ => return Err(Error::usage(format!("nuisance must be fitted, exact or noisy, got '{value}'"))),
                })
            }
            "noise-q" => {
                self.noise_q = parse(key, value)?;
                in_range(key, self.noise_q >= 0.0, value)?;
            }
            "noise-ratio" => {
                self.noise_ratio = parse(key, value)?;
                in_range(key, self.noise_ratio >= 0.0, value)?;
            }
            "noise-rate" => {
                let r: Vec<f64> = list(key, value)?;
                in_range(key, r.iter().all(|&x| x >= 0.0 && x.is_finite()), value)?;
                self.noise_rates = Some(r);
            }
            "noise-on" => {
                let mut set = NuisanceSet::NONE;
                for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    match part {
                        "q" => set.q = true,
                        "omega" => set.omega = true,
                        "tau" => set.tau = true,
                        _ => return Err(Error::usage(format!("noise-on takes q, omega, tau; got '{part}'"))),
                    }
                }
                self.noise_on = set;
            }
            "incomplete-fraction" => {
                self.incomplete_fraction = parse(key, value)?;
                let f = self.incomplete_fraction;
                in_range(key, f > 0.0 && f <= 1.0, value)?;
            }
            "reps" => {
                self.reps = parse(key, value)?;
                in_range(key, self.reps > 0, value)?;
            }
            "bootstrap-reps" => {
                self.bootstrap_reps = parse(key, value)?;
                in_range(key, self.bootstrap_reps >= 2, value)?;
            }
            "full" => self.full = parse(key, value)?,
            "omega.lr" | "tau.lr" => {
                let lr: f64 = parse(key, value)?;
                in_range(key, lr > 0.0, value)?;
                self.opt_mut(key).lr = lr;
            }
            "omega.iters" | "tau.iters" => self.opt_mut(key).iters = parse(key, value)?,
            "omega.growth" | "tau.growth" => {
                let g: f64 = parse(key, value)?;
                in_range(key, g >= 1.0, value)?;
                self.opt_mut(key).growth = g;
            }
            "omega.batch" => {
                let b: usize = parse(key, value)?;
                self.estimator.omega_opt.batch = (b > 0).then_some(b);
            }
            "kernel.bandwidth" => {
                self.estimator.kernel.bandwidth = if value == "auto" {
                    Bandwidth::Auto
                } else {
                    let h: f64 = parse(key, value)?;
                    in_range(key, h > 0.0, value)?;
                    Bandwidth::Fixed(h)
                };
            }
            "fqe.iters" => self.estimator.fqe.iters = parse(key, value)?,
            "fqe.tol" => self.estimator.fqe.tol = parse(key, value)?,
            _ => return Err(Error::usage(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    fn opt_mut(&mut self, key: &str) -> &mut d2ope_core::nuisance::OptSpec {
        if key.starts_with("omega") {
            &mut self.estimator.omega_opt
        } else {
            &mut self.estimator.tau_opt
        }
    }

    /// Applies every `key = value` line of `text`. `origin` names the source
    /// in error messages.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("{origin}:{}: expected 'key = value'", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::usage(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn noise(&self, rate: f64) -> NoiseSpec {
        NoiseSpec {
            sigma_q: self.noise_q,
            sigma_ratio: self.noise_ratio,
            rate,
            seed: 0,
        }
    }

    pub fn nuisance_mode(&self, default: NuisanceChoice, rate: f64) -> NuisanceMode {
        match self.nuisance.unwrap_or(default) {
            NuisanceChoice::Fitted => NuisanceMode::Fitted,
            NuisanceChoice::Exact => NuisanceMode::Exact,
            NuisanceChoice::Noisy => NuisanceMode::Noisy {
                which: self.noise_on,
                noise: self.noise(rate),
            },
        }
    }

    /// Estimator settings for one method.
    pub fn estimator_config(&self, method: Method, nuisance: NuisanceMode) -> EstimatorConfig {
        EstimatorConfig {
            method,
            m: self.m,
            k: self.k,
            alpha: self.alpha,
            nuisance,
            incomplete_fraction: self.incomplete_fraction,
            seed: self.seed,
            bootstrap_reps: self.bootstrap_reps,
            ..self.estimator.clone()
        }
    }
}
