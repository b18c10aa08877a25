//! Replication experiments: coverage of the Wald intervals and RMSE under
//! partial contamination of the nuisances.
//!
//! Each replication `rep` at sample size `n` simulates one dataset from the
//! seed `derive_seed2(seed, n, rep)` and runs every (method, nuisance
//! pattern) cell on it, so cells are paired. Replications run on a rayon pool
//! and are aggregated in replication order, so results do not depend on the
//! number of workers.

use std::io::Write;
use std::time::Instant;

use d2ope_core::environments::EnvBundle;
use d2ope_core::mdp::simulate;
use d2ope_core::nuisance::{NoiseSpec, NuisanceSet};
use d2ope_core::oracles::OracleSet;
use d2ope_core::rng::derive_seed2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{run_estimator, EstimateReport, EstimatorConfig, Method, NuisanceMode};

/// Worker count taken from `D2OPE_THREADS`, if set.
pub const THREADS_VAR: &str = "D2OPE_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub n_grid: Vec<usize>,
    pub horizon: usize,
    pub methods: Vec<Method>,
    pub patterns: Vec<NuisanceMode>,
    pub reps: usize,
    pub seed: u64,
    /// Shared estimator settings; method and nuisance mode are overridden per cell.
    pub base: EstimatorConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::usage("the n grid must be non-empty and positive"));
        }
        if self.horizon == 0 {
            return Err(Error::usage("T must be positive"));
        }
        if self.reps == 0 {
            return Err(Error::usage("reps must be positive"));
        }
        if self.methods.is_empty() || self.patterns.is_empty() {
            return Err(Error::usage("need at least one method and one nuisance pattern"));
        }
        self.base.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    pub eta_hat: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub covered: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: Method,
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub m: usize,
    pub noise: String,
    pub noise_rate: Option<f64>,
    pub eta: f64,
    pub coverage: Option<f64>,
    pub width_mean: Option<f64>,
    pub rmse: f64,
    pub bias: f64,
    pub reps: usize,
    pub seed: u64,
    /// Wall-clock seconds summed over this cell's replications.
    pub runtime: f64,
    pub replications: Vec<Replication>,
}

fn pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::usage(format!("{THREADS_VAR} must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))
}

fn noise_rate(mode: &NuisanceMode) -> Option<f64> {
    match mode {
        NuisanceMode::Noisy { noise, .. } => Some(noise.rate),
        _ => None,
    }
}

/// Runs every cell of the grid.
pub fn run_experiment(env: &EnvBundle, oracles: &OracleSet, spec: &ExperimentSpec) -> Result<Vec<ExperimentResult>> {
    spec.validate()?;
    let cells: Vec<(Method, NuisanceMode)> = spec
        .methods
        .iter()
        .flat_map(|&m| spec.patterns.iter().map(move |&p| (m, p)))
        .collect();
    let jobs: Vec<(usize, usize)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| (0..spec.reps).map(move |r| (n, r)))
        .collect();

    let run_job = |&(n, rep): &(usize, usize)| -> Result<Vec<(EstimateReport, f64)>> {
        let seed = derive_seed2(spec.seed, n as u64, rep as u64);
        let data = simulate(&env.mdp, &env.behavior, &env.reference, n, spec.horizon, seed)?;
        cells
            .iter()
            .map(|&(method, nuisance)| {
                let config = EstimatorConfig {
                    method,
                    nuisance,
                    seed,
                    ..spec.base.clone()
                };
                let start = Instant::now();
                let report = run_estimator(&data, env, Some(oracles), &config)?;
                Ok((report, start.elapsed().as_secs_f64()))
            })
            .collect()
    };
    let outcomes: Vec<Result<Vec<(EstimateReport, f64)>>> = pool()?.install(|| jobs.par_iter().map(run_job).collect());
    // first failure in job order, independent of scheduling
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut results = Vec::new();
    for &n in &spec.n_grid {
        for (c, &(method, nuisance)) in cells.iter().enumerate() {
            let mut reps = Vec::with_capacity(spec.reps);
            let mut runtime = 0.0;
            for ((jn, rep), outcome) in jobs.iter().zip(&outcomes) {
                if *jn != n {
                    continue;
                }
                let (report, secs) = &outcome[c];
                runtime += *secs;
                reps.push(Replication {
                    rep: *rep,
                    seed: derive_seed2(spec.seed, n as u64, *rep as u64),
                    eta_hat: report.eta_hat,
                    ci_low: report.ci_low,
                    ci_high: report.ci_high,
                    covered: report.covers(oracles.eta),
                });
            }
            let m = match method {
                Method::Tr => spec.base.m,
                Method::Drl => 1,
                _ => 0,
            };
            results.push(aggregate(method, n, spec, m, &nuisance, oracles.eta, reps, runtime));
        }
    }
    Ok(results)
}

#[allow(clippy::too_many_arguments)]
fn aggregate(
    method: Method,
    n: usize,
    spec: &ExperimentSpec,
    m: usize,
    nuisance: &NuisanceMode,
    eta: f64,
    replications: Vec<Replication>,
    runtime: f64,
) -> ExperimentResult {
    let count = replications.len() as f64;
    let errors: Vec<f64> = replications.iter().map(|r| r.eta_hat - eta).collect();
    let bias = errors.iter().sum::<f64>() / count;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / count).sqrt();
    let has_ci = replications.iter().all(|r| r.covered.is_some());
    let coverage = has_ci.then(|| replications.iter().filter(|r| r.covered == Some(true)).count() as f64 / count);
    let width_mean = has_ci.then(|| {
        replications
            .iter()
            .map(|r| r.ci_high.unwrap_or(0.0) - r.ci_low.unwrap_or(0.0))
            .sum::<f64>()
            / count
    });
    ExperimentResult {
        method,
        n,
        horizon: spec.horizon,
        m,
        noise: nuisance.label(),
        noise_rate: noise_rate(nuisance),
        eta,
        coverage,
        width_mean,
        rmse,
        bias,
        reps: replications.len(),
        seed: spec.seed,
        runtime,
        replications,
    }
}

/// Noisy nuisances at each polynomial rate, all three functions contaminated.
pub fn coverage_patterns(noise: NoiseSpec, rates: &[f64]) -> Vec<NuisanceMode> {
    rates
        .iter()
        .map(|&rate| NuisanceMode::Noisy {
            which: NuisanceSet::ALL,
            noise: NoiseSpec { rate, ..noise },
        })
        .collect()
}

/// The three patterns leaving exactly one nuisance exact, then the
/// all-exact and all-contaminated references.
pub fn robustness_patterns(noise: NoiseSpec) -> Vec<NuisanceMode> {
    let noisy = |q, omega, tau| NuisanceMode::Noisy {
        which: NuisanceSet { q, omega, tau },
        noise,
    };
    vec![
        noisy(false, true, true),
        noisy(true, false, true),
        noisy(true, true, false),
        NuisanceMode::Exact,
        noisy(true, true, true),
    ]
}

pub fn coverage_experiment(
    env: &EnvBundle,
    oracles: &OracleSet,
    spec: ExperimentSpec,
) -> Result<Vec<ExperimentResult>> {
    run_experiment(env, oracles, &spec)
}

/// TR of the configured order under each robustness pattern.
pub fn robustness_experiment(
    env: &EnvBundle,
    oracles: &OracleSet,
    noise: NoiseSpec,
    mut spec: ExperimentSpec,
) -> Result<Vec<ExperimentResult>> {
    spec.methods = vec![Method::Tr];
    spec.patterns = robustness_patterns(NoiseSpec { rate: 0.0, ..noise });
    run_experiment(env, oracles, &spec)
}

pub const CSV_COLUMNS: [&str; 13] = [
    "method",
    "n",
    "T",
    "m",
    "noise",
    "noise_rate",
    "coverage",
    "width_mean",
    "rmse",
    "bias",
    "reps",
    "seed",
    "runtime",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(results: &[ExperimentResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Output(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in results {
        w.write_record([
            r.method.as_str().to_string(),
            r.n.to_string(),
            r.horizon.to_string(),
            r.m.to_string(),
            r.noise.clone(),
            opt(r.noise_rate),
            opt(r.coverage),
            opt(r.width_mean),
            r.rmse.to_string(),
            r.bias.to_string(),
            r.reps.to_string(),
            r.seed.to_string(),
            r.runtime.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Output(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use d2ope_core::environments::{toy_circle, ToyCircleSpec};

    fn setup() -> (EnvBundle, OracleSet) {
        let env = toy_circle(ToyCircleSpec::default()).unwrap();
        let o = OracleSet::compute(&env.mdp, &env.target, &env.behavior, &env.reference).unwrap();
        (env, o)
    }

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            n_grid: vec![6, 8],
            horizon: 10,
            methods: vec![Method::Tr, Method::Drl, Method::Is],
            patterns: vec![NuisanceMode::Exact],
            reps: 6,
            seed: 11,
            base: EstimatorConfig {
                nuisance: NuisanceMode::Exact,
                ..EstimatorConfig::default()
            },
        }
    }

    fn strip_runtime(mut r: Vec<ExperimentResult>) -> Vec<ExperimentResult> {
        for c in &mut r {
            c.runtime = 0.0;
        }
        r
    }

    #[test]
    fn aggregates_satisfy_basic_identities() {
        let (env, o) = setup();
        let res = run_experiment(&env, &o, &small_spec()).unwrap();
        assert_eq!(res.len(), 6);
        for r in &res {
            assert!(r.rmse * r.rmse >= r.bias * r.bias * (1.0 - 1e-12));
            if let Some(c) = r.coverage {
                assert!((0.0..=1.0).contains(&c));
                let k = r.replications.iter().filter(|x| x.covered == Some(true)).count();
                assert_eq!(c, k as f64 / r.reps as f64);
            }
        }
        assert!(res.iter().find(|r| r.method == Method::Is).unwrap().coverage.is_none());
    }

    #[test]
    fn deterministic_across_runs() {
        let (env, o) = setup();
        let a = strip_runtime(run_experiment(&env, &o, &small_spec()).unwrap());
        let b = strip_runtime(run_experiment(&env, &o, &small_spec()).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn robustness_patterns_leave_one_exact() {
        let p = robustness_patterns(NoiseSpec::default());
        let exact: Vec<usize> = p[..3]
            .iter()
            .map(|m| match m {
                NuisanceMode::Noisy { which, .. } => [which.q, which.omega, which.tau].iter().filter(|b| !**b).count(),
                _ => 99,
            })
            .collect();
        assert_eq!(exact, vec![1, 1, 1]);
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let (env, o) = setup();
        let res = run_experiment(&env, &o, &small_spec()).unwrap();
        let mut buf = Vec::new();
        write_csv(&res, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + res.len());
        assert!(text.starts_with("method,n,T,m,noise"));
    }
}
