//! Command-line front end.

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d2ope_core::environments::{EnvBundle, EnvSelector};
use d2ope_core::mdp::simulate;
use d2ope_core::oracles::OracleSet;
use d2ope_core::Dataset;
use serde_json::{json, Value};

use d2ope::config::{NuisanceChoice, RunConfig};
use d2ope::experiment::{coverage_experiment, coverage_patterns, robustness_experiment, write_csv, ExperimentSpec};
use d2ope::inference::{run_estimator, Method};
use d2ope::io::{read_dataset_file, write_dataset, Shape};
use d2ope::{Error, Result};

#[derive(Parser)]
#[command(name = "d2ope", version, about = "Deeply-debiased off-policy interval estimation on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate behavior-policy trajectories and write them as CSV.
    Simulate(Flags),
    /// Print exact value, efficiency bound and nuisance tables as JSON.
    Oracle(Flags),
    /// Run one estimator and print its report as JSON.
    Estimate(Flags),
    /// Coverage of the Wald intervals over replications.
    Coverage(Flags),
    /// RMSE under partial contamination of the nuisances.
    Robustness(Flags),
}

/// Every flag is optional and overrides the config file.
#[derive(Args, Default)]
struct Flags {
    /// `key = value` file read before the flags.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// toy, toy-onpolicy or random:<states>x<actions>:<seed>.
    #[arg(long)]
    env: Option<String>,
    /// Trajectories; a comma list for experiments.
    #[arg(long)]
    n: Option<String>,
    /// Trajectory length.
    #[arg(long = "T")]
    horizon: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Dataset CSV to read instead of simulating.
    #[arg(long)]
    data: Option<String>,
    /// tr, drl, fqe, is, is-bootstrap or is-bernstein; a comma list for experiments.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    m: Option<String>,
    /// Number of cross-fitting folds.
    #[arg(long = "K")]
    k: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// fitted, exact or noisy.
    #[arg(long)]
    nuisance: Option<String>,
    #[arg(long = "noise-q")]
    noise_q: Option<String>,
    #[arg(long = "noise-ratio")]
    noise_ratio: Option<String>,
    /// Noise decays as (nT)^-rate; a comma list for coverage runs.
    #[arg(long = "noise-rate")]
    noise_rate: Option<String>,
    /// Which nuisances get noise: comma list of q, omega, tau.
    #[arg(long = "noise-on")]
    noise_on: Option<String>,
    #[arg(long = "incomplete-fraction")]
    incomplete_fraction: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long = "bootstrap-reps")]
    bootstrap_reps: Option<String>,
    /// Include the full Q, omega and tau tables in oracle output.
    #[arg(long)]
    full: bool,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        let pairs = [
            ("env", &self.env),
            ("n", &self.n),
            ("T", &self.horizon),
            ("gamma", &self.gamma),
            ("seed", &self.seed),
            ("out", &self.out),
            ("data", &self.data),
            ("method", &self.method),
            ("m", &self.m),
            ("K", &self.k),
            ("alpha", &self.alpha),
            ("nuisance", &self.nuisance),
            ("noise-q", &self.noise_q),
            ("noise-ratio", &self.noise_ratio),
            ("noise-rate", &self.noise_rate),
            ("noise-on", &self.noise_on),
            ("incomplete-fraction", &self.incomplete_fraction),
            ("reps", &self.reps),
            ("bootstrap-reps", &self.bootstrap_reps),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                c.set(key, v)?;
            }
        }
        if self.full {
            c.full = true;
        }
        Ok(c)
    }
}

fn environment(c: &RunConfig) -> Result<EnvBundle> {
    Ok(EnvSelector::parse(&c.env)?.build(c.gamma)?)
}

fn single_n(c: &RunConfig) -> Result<usize> {
    match c.n.as_deref() {
        None => Ok(20),
        Some([n]) => Ok(*n),
        Some(_) => Err(Error::usage("this command takes a single value of n")),
    }
}

fn emit(c: &RunConfig, text: &str) -> Result<()> {
    match &c.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| Error::Output(e.to_string()))
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Output(e.to_string()))
}

fn cmd_simulate(c: &RunConfig) -> Result<()> {
    let env = environment(c)?;
    let n = single_n(c)?;
    let data = simulate(&env.mdp, &env.behavior, &env.reference, n, c.horizon, c.seed)?;
    let summary = json!({
        "env": c.env,
        "n": n,
        "T": c.horizon,
        "seed": c.seed,
        "rows": data.len(),
        "state_counts": data.state_counts(env.mdp.n_states()),
    });
    match &c.out {
        Some(path) => {
            d2ope::io::write_dataset_file(&data, path)?;
            eprintln!("{}", pretty(&summary)?);
        }
        None => {
            write_dataset(&data, std::io::stdout().lock())?;
            eprintln!("{}", pretty(&summary)?);
        }
    }
    Ok(())
}

fn table_rows(values: &[f64], width: usize) -> Value {
    Value::from(values.chunks(width).map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn cmd_oracle(c: &RunConfig) -> Result<()> {
    let env = environment(c)?;
    let o = OracleSet::compute(&env.mdp, &env.target, &env.behavior, &env.reference)?;
    let na = env.mdp.n_actions();
    let mut out = json!({
        "env": c.env,
        "gamma": env.mdp.gamma(),
        "n_states": env.mdp.n_states(),
        "n_actions": na,
        "eta": o.eta,
        "sigma2": o.sigma2,
        "q": table_rows(o.q.0.as_slice(), na),
        "omega": table_rows(o.omega.0.as_slice(), na),
    });
    let pairs = env.mdp.n_pairs();
    // tau[x0][x]: ratio at pair x conditioned on the start pair x0
    let tau: Vec<Vec<f64>> = (0..pairs).map(|x0| (0..pairs).map(|x| o.tau.0.at(x, x0)).collect()).collect();
    out["tau"] = if c.full {
        Value::from(tau)
    } else {
        Value::from(tau.into_iter().map(|row| row.into_iter().sum::<f64>() / pairs as f64).collect::<Vec<_>>())
    };
    out["tau_layout"] = Value::from(if c.full { "x0-major" } else { "mean-over-x" });
    out["p_inf"] = table_rows(o.p_inf.probs(), na);
    emit(c, &pretty(&out)?)
}

fn load_or_simulate(c: &RunConfig, env: &EnvBundle) -> Result<Dataset> {
    match &c.data {
        Some(path) => {
            let shape = Shape {
                n: c.n.as_ref().map(|_| single_n(c)).transpose()?,
                horizon: None,
            };
            read_dataset_file(Path::new(path), shape)
        }
        None => Ok(simulate(&env.mdp, &env.behavior, &env.reference, single_n(c)?, c.horizon, c.seed)?),
    }
}

fn single_method(c: &RunConfig) -> Result<Method> {
    match c.methods.as_deref() {
        None => Ok(Method::Tr),
        Some([m]) => Ok(*m),
        Some(_) => Err(Error::usage("estimate takes a single method")),
    }
}

fn first_rate(c: &RunConfig) -> f64 {
    c.noise_rates.as_ref().and_then(|r| r.first().copied()).unwrap_or(0.5)
}

fn cmd_estimate(c: &RunConfig) -> Result<()> {
    let env = environment(c)?;
    let data = load_or_simulate(c, &env)?;
    let method = single_method(c)?;
    let config = c.estimator_config(method, c.nuisance_mode(NuisanceChoice::Fitted, first_rate(c)));
    let report = run_estimator(&data, &env, None, &config)?;
    emit(c, &pretty(&report)?)
}

fn experiment_spec(c: &RunConfig, methods: Vec<Method>) -> ExperimentSpec {
    ExperimentSpec {
        n_grid: c.n.clone().unwrap_or_else(|| vec![20, 40, 80]),
        horizon: c.horizon,
        methods,
        patterns: Vec::new(),
        reps: c.reps,
        seed: c.seed,
        base: c.estimator_config(Method::Tr, d2ope::inference::NuisanceMode::Exact),
    }
}

/// CSV to `--out` (or stdout) and the full JSON next to it.
fn emit_results(c: &RunConfig, results: &[d2ope::experiment::ExperimentResult]) -> Result<()> {
    let mut csv = Vec::new();
    write_csv(results, &mut csv)?;
    let csv = String::from_utf8(csv).map_err(|e| Error::Output(e.to_string()))?;
    match &c.out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
            let json_path = path.with_extension("json");
            std::fs::write(&json_path, pretty(&results)?).map_err(|e| Error::io(&json_path, e))?;
            Ok(())
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_coverage(c: &RunConfig) -> Result<()> {
    let env = environment(c)?;
    let oracles = OracleSet::compute(&env.mdp, &env.target, &env.behavior, &env.reference)?;
    let mut spec = experiment_spec(c, c.methods.clone().unwrap_or_else(|| vec![Method::Tr, Method::Drl]));
    let rates = c.noise_rates.clone().unwrap_or_else(|| vec![0.5, 0.25, 1.0 / 6.0]);
    spec.patterns = match c.nuisance.unwrap_or(NuisanceChoice::Noisy) {
        NuisanceChoice::Noisy => coverage_patterns(c.noise(0.0), &rates)
            .into_iter()
            .map(|p| match p {
                d2ope::inference::NuisanceMode::Noisy { noise, .. } => d2ope::inference::NuisanceMode::Noisy {
                    which: c.noise_on,
                    noise,
                },
                other => other,
            })
            .collect(),
        other => vec![c.nuisance_mode(other, 0.0)],
    };
    let results = coverage_experiment(&env, &oracles, spec)?;
    emit_results(c, &results)
}

fn cmd_robustness(c: &RunConfig) -> Result<()> {
    let env = environment(c)?;
    let oracles = OracleSet::compute(&env.mdp, &env.target, &env.behavior, &env.reference)?;
    let spec = experiment_spec(c, vec![Method::Tr]);
    let results = robustness_experiment(&env, &oracles, c.noise(0.0), spec)?;
    emit_results(c, &results)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(f) => cmd_simulate(&f.resolve()?),
        Command::Oracle(f) => cmd_oracle(&f.resolve()?),
        Command::Estimate(f) => cmd_estimate(&f.resolve()?),
        Command::Coverage(f) => cmd_coverage(&f.resolve()?),
        Command::Robustness(f) => cmd_robustness(&f.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
