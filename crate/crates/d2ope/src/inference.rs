//! End-to-end estimation on one dataset: cross-fitted debiased estimators,
//! the plug-in, importance-sampling baselines and their intervals.

use d2ope_core::debias::{estimate_value, DebiasConfig, Sampling};
use d2ope_core::environments::EnvBundle;
use d2ope_core::mdp::split_folds;
use d2ope_core::nuisance::{
    contaminate, fit_fqe, fit_omega, fit_tau, nuisances_from_oracles, FqeSpec, HeldOut, KernelSpec, NoiseSpec,
    NuisanceSet, NuisanceTriple, OptSpec,
};
use d2ope_core::oracles::OracleSet;
use d2ope_core::rng::{derive_seed, stream};
use d2ope_core::{Dataset, Policy};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Tr,
    Drl,
    Fqe,
    Is,
    IsBootstrap,
    IsBernstein,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Tr,
        Method::Drl,
        Method::Fqe,
        Method::Is,
        Method::IsBootstrap,
        Method::IsBernstein,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tr => "tr",
            Method::Drl => "drl",
            Method::Fqe => "fqe",
            Method::Is => "is",
            Method::IsBootstrap => "is-bootstrap",
            Method::IsBernstein => "is-bernstein",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::usage(format!("unknown method '{s}'")))
    }

    fn uses_nuisances(self) -> bool {
        matches!(self, Method::Tr | Method::Drl | Method::Fqe)
    }
}

/// Where the nuisance functions come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuisanceMode {
    /// Learned on the complement of each fold: FQE for Q, kernel minimax
    /// for the two ratios.
    Fitted,
    /// Oracle tables.
    Exact,
    /// Oracle tables with Gaussian noise on the selected functions. One noise
    /// draw serves every fold; it does not depend on the data.
    Noisy { which: NuisanceSet, noise: NoiseSpec },
}

impl NuisanceMode {
    pub fn label(&self) -> String {
        match self {
            NuisanceMode::Fitted => "fitted".into(),
            NuisanceMode::Exact => "exact".into(),
            NuisanceMode::Noisy { which, noise } => {
                let mut parts = Vec::new();
                for (on, name) in [(which.q, "q"), (which.omega, "omega"), (which.tau, "tau")] {
                    if on {
                        parts.push(name);
                    }
                }
                format!("noisy[{}]@{}", parts.join("+"), noise.rate)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub method: Method,
    /// Debiasing order for `tr`; ignored by the other methods.
    pub m: usize,
    pub k: usize,
    pub alpha: f64,
    pub nuisance: NuisanceMode,
    pub incomplete_fraction: f64,
    pub seed: u64,
    pub omega_opt: OptSpec,
    pub tau_opt: OptSpec,
    pub kernel: KernelSpec,
    pub fqe: FqeSpec,
    pub bootstrap_reps: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            method: Method::Tr,
            m: 2,
            k: 2,
            alpha: 0.10,
            nuisance: NuisanceMode::Fitted,
            incomplete_fraction: DebiasConfig::default().incomplete_fraction,
            seed: 0,
            omega_opt: OptSpec::default(),
            tau_opt: OptSpec::default(),
            kernel: KernelSpec::default(),
            fqe: FqeSpec::default(),
            bootstrap_reps: 500,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::usage(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.k < 2 {
            return Err(Error::usage("cross-fitting needs K >= 2"));
        }
        if self.m == 0 {
            return Err(Error::usage("order m must be at least 1"));
        }
        if !(self.incomplete_fraction > 0.0 && self.incomplete_fraction <= 1.0) {
            return Err(Error::usage("incomplete fraction must lie in (0, 1]"));
        }
        if self.method == Method::IsBootstrap && self.bootstrap_reps < 2 {
            return Err(Error::usage("bootstrap needs at least 2 resamples"));
        }
        Ok(())
    }

    /// Effective order: `drl` is the first-order estimator.
    pub fn order(&self) -> usize {
        match self.method {
            Method::Drl => 1,
            _ => self.m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub eta_hat: f64,
    pub sigma_hat: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub nuisance: String,
    /// Zero-variance interval collapsed to the point estimate.
    pub degenerate: bool,
}

impl EstimateReport {
    pub fn covers(&self, eta: f64) -> Option<bool> {
        Some(self.ci_low? <= eta && eta <= self.ci_high?)
    }

    pub fn width(&self) -> Option<f64> {
        Some(self.ci_high? - self.ci_low?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldInterval {
    pub low: f64,
    pub high: f64,
    pub sigma: f64,
    pub degenerate: bool,
}

fn upper_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// `eta ± z_{alpha/2} sigma / sqrt(N)` with `sigma` the sample standard
/// deviation of the `N` pooled samples.
pub fn wald_ci(eta: f64, samples: &[f64], alpha: f64) -> Result<WaldInterval> {
    if samples.len() < 2 {
        return Err(Error::usage("a Wald interval needs at least two samples"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::usage(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(wald_from_sigma(eta, sample_sd(samples), samples.len(), alpha))
}

pub fn wald_from_sigma(eta: f64, sigma: f64, count: usize, alpha: f64) -> WaldInterval {
    if sigma == 0.0 {
        return WaldInterval {
            low: eta,
            high: eta,
            sigma,
            degenerate: true,
        };
    }
    let half = upper_quantile(alpha) * sigma / (count as f64).sqrt();
    WaldInterval {
        low: eta - half,
        high: eta + half,
        sigma,
        degenerate: false,
    }
}

/// Fails if the behavior policy never takes an action the target may take.
pub fn check_support(target: &Policy, behavior: &Policy) -> Result<()> {
    for s in 0..target.n_states() {
        for a in 0..target.n_actions() {
            if target.prob(s, a) > 0.0 && behavior.prob(s, a) == 0.0 {
                return Err(d2ope_core::Error::Coverage {
                    state: s,
                    action: a,
                    detail: "behavior probability is zero where the target is positive".into(),
                }
                .into());
            }
        }
    }
    Ok(())
}

/// Per-trajectory discounted importance-weighted returns and the largest
/// cumulative ratio seen.
pub fn is_returns(data: &Dataset, target: &Policy, behavior: &Policy, gamma: f64) -> Result<(Vec<f64>, f64)> {
    check_support(target, behavior)?;
    let mut max_rho: f64 = 0.0;
    let returns = (0..data.n_traj())
        .map(|i| {
            let (mut rho, mut disc, mut total) = (1.0, 1.0, 0.0);
            for t in data.trajectory(i) {
                rho *= target.prob(t.state, t.action) / behavior.prob(t.state, t.action);
                max_rho = max_rho.max(rho);
                total += disc * rho * t.reward;
                disc *= gamma;
            }
            total
        })
        .collect();
    Ok((returns, max_rho))
}

/// Trajectory-level percentile bootstrap of the IS mean.
pub fn bootstrap_ci(returns: &[f64], alpha: f64, reps: usize, seed: u64) -> (f64, f64) {
    let n = returns.len();
    let mut rng = stream(seed, 0xB007);
    let mut means: Vec<f64> = (0..reps)
        .map(|_| (0..n).map(|_| returns[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    (quantile(&means, alpha / 2.0), quantile(&means, 1.0 - alpha / 2.0))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Two-sided empirical Bernstein interval for the mean of values known to lie
/// in an interval of width `range`:
/// `mean ± (sqrt(2 V ln(4/alpha) / n) + 7 range ln(4/alpha) / (3 (n - 1)))`.
pub fn bernstein_ci(values: &[f64], range: f64, alpha: f64) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = sample_sd(values).powi(2);
    let l = (4.0 / alpha).ln();
    let half = (2.0 * var * l / n).sqrt() + 7.0 * range * l / (3.0 * (n - 1.0));
    (mean - half, mean + half)
}

/// Nuisance triples, one per fold, each usable on its fold.
pub fn build_nuisances(
    data: &Dataset,
    folds: &d2ope_core::FoldAssignment,
    env: &EnvBundle,
    oracles: Option<&OracleSet>,
    config: &EstimatorConfig,
) -> Result<Vec<NuisanceTriple>> {
    let shape = (env.mdp.n_states(), env.mdp.n_actions());
    let gamma = env.mdp.gamma();
    let exact = || -> Result<NuisanceTriple> {
        Ok(match oracles {
            Some(o) => nuisances_from_oracles(o),
            None => nuisances_from_oracles(&OracleSet::compute(&env.mdp, &env.target, &env.behavior, &env.reference)?),
        })
    };
    match config.nuisance {
        NuisanceMode::Exact => Ok(vec![exact()?; folds.k()]),
        NuisanceMode::Noisy { which, noise } => {
            let noise = NoiseSpec {
                seed: derive_seed(config.seed, 3),
                ..noise
            };
            let triple = contaminate(exact()?, which, &noise, data.n_traj(), data.horizon());
            Ok(vec![triple; folds.k()])
        }
        NuisanceMode::Fitted => (0..folds.k())
            .map(|k| {
                let train = folds.complement(data, k);
                let q = fit_fqe(&train, &env.target, shape.0, shape.1, gamma, config.fqe)?;
                let omega_opt = OptSpec {
                    seed: derive_seed(config.seed, 40 + k as u64),
                    ..config.omega_opt
                };
                let omega = fit_omega(&train, &env.target, &env.reference, shape, gamma, config.kernel, &omega_opt)?;
                let tau = fit_tau(&train, &env.target, shape, gamma, config.kernel, &config.tau_opt)?;
                Ok(NuisanceTriple { q, omega, tau }.with_held_out(HeldOut::Fold(k)))
            })
            .collect(),
    }
}

/// Runs one estimator. `oracles` may be supplied to avoid recomputing them
/// when the nuisance mode is exact or noisy.
pub fn run_estimator(
    data: &Dataset,
    env: &EnvBundle,
    oracles: Option<&OracleSet>,
    config: &EstimatorConfig,
) -> Result<EstimateReport> {
    config.validate()?;
    data.check_grid(env.mdp.n_states(), env.mdp.n_actions())?;
    let gamma = env.mdp.gamma();
    let mut report = EstimateReport {
        method: config.method,
        eta_hat: f64::NAN,
        sigma_hat: None,
        ci_low: None,
        ci_high: None,
        n: data.n_traj(),
        horizon: data.horizon(),
        m: config.order(),
        k: config.k,
        alpha: config.alpha,
        nuisance: if config.method.uses_nuisances() {
            config.nuisance.label()
        } else {
            "none".into()
        },
        degenerate: false,
    };
    match config.method {
        Method::Tr | Method::Drl | Method::Fqe => {
            if data.n_traj() < config.k {
                return Err(Error::usage(format!(
                    "{} trajectories cannot be split into {} folds",
                    data.n_traj(),
                    config.k
                )));
            }
            let folds = split_folds(data, config.k, derive_seed(config.seed, 1))?;
            let nuisances = build_nuisances(data, &folds, env, oracles, config)?;
            if config.method == Method::Fqe {
                let eta = nuisances
                    .iter()
                    .map(|t| env.reference.plug_in(&env.target, &t.q.table))
                    .sum::<f64>()
                    / nuisances.len() as f64;
                report.eta_hat = eta;
                report.m = 0;
                return Ok(report);
            }
            let dc = DebiasConfig {
                order: config.order(),
                incomplete_fraction: config.incomplete_fraction,
                seed: derive_seed(config.seed, 2),
                sampling: Sampling::Auto,
                ..DebiasConfig::default()
            };
            let est = estimate_value(data, &folds, &nuisances, &env.target, &env.reference, gamma, &dc)?;
            let psi: Vec<f64> = est.samples.iter().map(|s| s.value).collect();
            let ci = wald_ci(est.estimate, &psi, config.alpha)?;
            report.eta_hat = est.estimate;
            report.sigma_hat = Some(ci.sigma);
            report.ci_low = Some(ci.low);
            report.ci_high = Some(ci.high);
            report.degenerate = ci.degenerate;
        }
        Method::Is | Method::IsBootstrap | Method::IsBernstein => {
            report.m = 0;
            report.k = 1;
            let (returns, max_rho) = is_returns(data, &env.target, &env.behavior, gamma)?;
            let n = returns.len();
            report.eta_hat = returns.iter().sum::<f64>() / n as f64;
            if n >= 2 {
                report.sigma_hat = Some(sample_sd(&returns));
            }
            let ci = match config.method {
                Method::IsBootstrap => Some(bootstrap_ci(
                    &returns,
                    config.alpha,
                    config.bootstrap_reps,
                    derive_seed(config.seed, 5),
                )),
                Method::IsBernstein if n >= 2 => {
                    let (lo, hi) = env.mdp.reward_range();
                    let width = (hi.max(0.0) - lo.min(0.0)) / (1.0 - gamma) * max_rho;
                    Some(bernstein_ci(&returns, width, config.alpha))
                }
                _ => None,
            };
            if let Some((low, high)) = ci {
                report.ci_low = Some(low);
                report.ci_high = Some(high);
                report.degenerate = low == high;
            }
        }
    }
    if !report.eta_hat.is_finite() {
        return Err(d2ope_core::Error::Numerical("non-finite estimate".into()).into());
    }
    Ok(report)
}
