//! `sfa`: simulate, fit, predict, margins, experiment and verify.
//!
//! Exit status: 0 success, 1 usage or input error, 2 a fit did not
//! converge, 3 verification failed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sfa_core::estimation::{numeric_hessian_se, StandardErrors};
use sfa_core::experiments::{run_seeds, run_verify, ExperimentConfig, ExperimentKind};
use sfa_core::margins::{margins_table, write_margins_csv};
use sfa_core::predictors::{efficiency_table, write_efficiency_csv};
use sfa_core::simulate::{gen_generic, gen_mean_te, gen_obs_te, SimulatedSample};
use sfa_core::{fit, Dataset, DiscreteComponents, Family, FamilyParams, FitOptions, FitResult, Params, ScaleLink};

const DEFAULT_SEED: u64 = 42;
const DEFAULT_N: usize = 1000;

#[derive(Parser, Debug)]
#[command(name = "sfa", version, about = "Stochastic frontier models: simulation, estimation and checks")]
struct Cli {
    /// JSON file with default values; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a sample from one of the simulation designs.
    Simulate(SimulateArgs),
    /// Estimate a model by maximum likelihood.
    Fit(FitArgs),
    /// Observation-level efficiency predictions at given parameters.
    Predict(TableArgs),
    /// Observation-level marginal effects at given parameters.
    Margins(TableArgs),
    /// Run a seeded experiment over one or more seeds.
    Experiment(ExperimentArgs),
    /// Numerical checks of the inequalities and sign results.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Dgp {
    MeanTe,
    ObsTe,
    Generic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    MeanTe,
    ObsTe,
    Identifiability,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::MeanTe => ExperimentKind::MeanTe,
            Kind::ObsTe => ExperimentKind::ObsTe,
            Kind::Identifiability => ExperimentKind::Identifiability,
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    dgp: Option<Dgp>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample size of the generic design.
    #[arg(long)]
    n: Option<usize>,
    /// Family of the generic design when no parameter file is given.
    #[arg(long)]
    family: Option<String>,
    /// Parameter JSON for the generic design.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output directory; the CSV goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct FitFlags {
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Seed of the restart jitter.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// exponential, half-normal, discrete or discrete-z.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Args, Debug)]
struct TableArgs {
    #[arg(long)]
    data: PathBuf,
    /// Parameter JSON, or the `fit.json` written by `fit`.
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output directory; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(value_enum)]
    kind: Kind,
    /// Seeds as `1..20` (inclusive), `1,2,3`, or a mix such as `1..3,7`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    dgp: Option<Dgp>,
    seed: Option<u64>,
    seeds: Option<String>,
    n: Option<usize>,
    family: Option<String>,
    format: Option<Format>,
    out: Option<PathBuf>,
    fit: Option<FitOptions>,
}

enum Failure {
    Usage(anyhow::Error),
    NotConverged(String),
    Verification(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("not converged: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => simulate(a, &config),
        Command::Fit(a) => fit_command(a, &config),
        Command::Predict(a) => table_command(a, &config, false),
        Command::Margins(a) => table_command(a, &config, true),
        Command::Experiment(a) => experiment(a, &config),
        Command::Verify(a) => verify(a, &config),
    }
}

fn fit_options(flags: &FitFlags, config: &FileConfig) -> anyhow::Result<FitOptions> {
    let mut o = config.fit.unwrap_or_default();
    if let Some(v) = flags.max_iterations {
        o.max_iterations = v;
    }
    if let Some(v) = flags.tolerance {
        o.tolerance = v;
    }
    if let Some(v) = flags.restarts {
        o.restarts = v;
    }
    if let Some(v) = flags.seed {
        o.seed = v;
    }
    o.validate()?;
    Ok(o)
}

fn parse_family(flag: Option<&String>, config: &FileConfig) -> anyhow::Result<Family> {
    match flag.or(config.family.as_ref()) {
        Some(name) => Ok(name.parse()?),
        None => bail!("--family is required (exponential, half-normal, discrete or discrete-z)"),
    }
}

/// Parses `1..20`, `1,2,3` or combinations; ranges are inclusive.
fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
            if a > b {
                bail!("empty seed range {part}");
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().with_context(|| format!("bad seed {part:?}"))?);
        }
    }
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

/// Parameters of the generic design when no file is given.
fn default_truth(family: Family) -> Params {
    let inefficiency = match family {
        Family::Exponential => FamilyParams::Exponential(ScaleLink::new(-1.0, 0.3)),
        Family::HalfNormal => FamilyParams::HalfNormal(ScaleLink::new(-0.5, 0.3)),
        Family::Discrete { z_scaled } => FamilyParams::Discrete(DiscreteComponents {
            p: 0.7,
            u1: 0.1,
            u2: 0.6,
            z_scaled,
        }),
    };
    Params::new(1.0, vec![1.0], 0.5, inefficiency)
}

/// Reads bare parameters or the `params` member of a fit report.
fn read_params(path: &Path) -> anyhow::Result<Params> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(inner) = value.get_mut("result").and_then(|r| r.get_mut("params")) {
        value = inner.take();
    } else if let Some(inner) = value.get_mut("params") {
        value = inner.take();
    }
    let params: Params = serde_json::from_value(value).with_context(|| format!("parameters in {}", path.display()))?;
    params.validate()?;
    Ok(params)
}

fn read_data(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::read_csv_path(path).with_context(|| format!("reading {}", path.display()))
}

fn simulate(a: SimulateArgs, config: &FileConfig) -> Outcome {
    let dgp = a.dgp.or(config.dgp).context("--dgp is required (mean-te, obs-te or generic)")?;
    let seed = a.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    let sample: SimulatedSample = match dgp {
        Dgp::MeanTe => gen_mean_te(seed),
        Dgp::ObsTe => gen_obs_te(seed),
        Dgp::Generic => {
            let params = match &a.params {
                Some(p) => read_params(p)?,
                None => default_truth(parse_family(a.family.as_ref(), config).unwrap_or(Family::Exponential)),
            };
            let n = a.n.or(config.n).unwrap_or(DEFAULT_N);
            gen_generic(&params, n, seed)?
        }
    };
    match a.out.or_else(|| config.out.clone()) {
        Some(dir) => {
            let stem = format!("{}_{seed}", dgp.to_possible_value().unwrap().get_name());
            sample.write_files(&dir, &stem)?;
            eprintln!("wrote {}", dir.join(format!("{stem}.csv")).display());
        }
        None => sample.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct FitReport<'a> {
    family: &'static str,
    n: usize,
    result: &'a FitResult,
    standard_errors: StandardErrors,
}

fn fit_command(a: FitArgs, config: &FileConfig) -> Outcome {
    let family = parse_family(a.family.as_ref(), config)?;
    let options = fit_options(&a.fit, config)?;
    let data = read_data(&a.data)?;
    let spec = sfa_core::ModelSpec::new(family, data.n_inputs());
    let (result, table) = fit(&data, &spec, &options)?;
    let standard_errors = numeric_hessian_se(&data, &spec, &result.params)?;
    let report = FitReport {
        family: family.name(),
        n: data.len(),
        result: &result,
        standard_errors,
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match a.out.or_else(|| config.out.clone()) {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("fit.json"), &json)?;
            let f = File::create(dir.join("efficiency.csv"))?;
            write_efficiency_csv(&table, f)?;
            eprintln!("wrote {}", dir.join("fit.json").display());
        }
        None => io::stdout().write_all(json.as_bytes())?,
    }
    if result.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged(result.message))
    }
}

fn table_command(a: TableArgs, config: &FileConfig, margins: bool) -> Outcome {
    let params = read_params(&a.params)?;
    let data = read_data(&a.data)?;
    let spec = sfa_core::ModelSpec::new(params.family(), data.n_inputs());
    let format = a.format.or(config.format).unwrap_or(Format::Csv);
    let mut buf = Vec::new();
    if margins {
        let rows = margins_table(&data, &spec, &params)?;
        match format {
            Format::Csv => write_margins_csv(&rows, &mut buf)?,
            Format::Json => serde_json::to_writer_pretty(&mut buf, &rows)?,
        }
    } else {
        let rows = efficiency_table(&data, &spec, &params)?;
        match format {
            Format::Csv => write_efficiency_csv(&rows, &mut buf)?,
            Format::Json => serde_json::to_writer_pretty(&mut buf, &rows)?,
        }
    }
    if format == Format::Json {
        buf.push(b'\n');
    }
    match a.out.or_else(|| config.out.clone()) {
        Some(dir) => {
            let name = if margins { "margins" } else { "predict" };
            let ext = if format == Format::Json { "json" } else { "csv" };
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("{name}.{ext}"));
            std::fs::write(&path, buf)?;
            eprintln!("wrote {}", path.display());
        }
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn experiment(a: ExperimentArgs, config: &FileConfig) -> Outcome {
    let seeds = match a.seeds.as_ref().or(config.seeds.as_ref()) {
        Some(s) => parse_seeds(s)?,
        None => vec![config.seed.unwrap_or(DEFAULT_SEED)],
    };
    let exp_config = ExperimentConfig {
        fit: fit_options(&a.fit, config)?,
        ..ExperimentConfig::default()
    };
    let report = run_seeds(a.kind.into(), &seeds, &exp_config);
    if let Some(dir) = a.out.or_else(|| config.out.clone()) {
        let written = report.write(&dir)?;
        eprintln!("wrote {} files to {}", written.len(), dir.display());
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        name: &'a str,
        seeds: &'a [u64],
        means: &'a BTreeMap<String, f64>,
        flag_counts: &'a BTreeMap<String, usize>,
    }
    let summary = Summary {
        name: &report.name,
        seeds: &report.seeds,
        means: &report.means,
        flag_counts: &report.flag_counts,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    let failed: Vec<String> = report
        .per_seed
        .iter()
        .flat_map(|r| {
            r.pass_flags
                .iter()
                .filter(|(k, &v)| k.starts_with("converged_") && !v)
                .map(move |(k, _)| format!("seed {}: {k}", r.seeds.first().copied().unwrap_or_default()))
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::NotConverged(failed.join(", ")))
    }
}

fn verify(a: VerifyArgs, config: &FileConfig) -> Outcome {
    let report = run_verify();
    for (name, pass) in &report.pass_flags {
        println!("{} {name}", if *pass { "ok  " } else { "FAIL" });
    }
    for note in &report.notes {
        println!("  {note}");
    }
    if let Some(dir) = a.out.or_else(|| config.out.clone()) {
        report.write(&dir)?;
    }
    if report.all_pass() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.pass_flags.iter().filter(|(_, &v)| !v).map(|(k, _)| k.as_str()).collect();
        Err(Failure::Verification(failed.join(", ")))
    }
}
