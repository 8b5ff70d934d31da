//! Seeded end-to-end experiments and the grid verification report.
//!
//! Every report is a pure function of its seed and [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfaError};
use crate::estimation::{fit, FitOptions, FitResult};
use crate::margins::{
    dte_dsigma_exp, dte_dsigma_halfnormal, dte_dz_discrete, dti_dsigma_exp, dti_dsigma_halfnormal, duncond_dz,
    finite_difference,
};
use crate::models::{DiscreteComponents, Family, FamilyParams, ModelSpec, ScaleLink};
use crate::predictors::{
    te_cond_exponential, te_cond_halfnormal, te_uncond_exponential, te_uncond_halfnormal, ti_cond_exponential,
    ti_cond_halfnormal, EfficiencyRecord,
};
use crate::simulate::{
    gen_mean_te_with, gen_obs_te, mean_te_mean_u, mean_te_sigma_u, mean_te_te, MeanTeConfig,
};
use crate::specfun::{mills_lambda, mills_lambda_prime};

pub use crate::stats::spearman;

/// Named columns of equal length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl Table {
    pub fn with(mut self, name: &str, values: Vec<f64>) -> Self {
        self.columns.push(name.to_string());
        self.data.push(values);
        self
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().position(|c| c == name).map(|i| self.data[i].as_slice())
    }

    pub fn n_rows(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(&self.columns)?;
        for i in 0..self.n_rows() {
            wtr.write_record(self.data.iter().map(|c| c[i].to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seeds: Vec<u64>,
    pub tables: BTreeMap<String, Table>,
    pub scalars: BTreeMap<String, f64>,
    /// Scalars that could not be computed, with the reason.
    pub unavailable: BTreeMap<String, String>,
    pub pass_flags: BTreeMap<String, bool>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    fn new(name: &str, seeds: Vec<u64>) -> Self {
        Self {
            name: name.to_string(),
            seeds,
            ..Self::default()
        }
    }

    fn scalar(&mut self, name: &str, value: Option<f64>, reason: &str) {
        match value {
            Some(v) if v.is_finite() => {
                self.scalars.insert(name.to_string(), v);
            }
            _ => {
                self.unavailable.insert(name.to_string(), reason.to_string());
            }
        }
    }

    fn flag(&mut self, name: &str, value: bool) {
        self.pass_flags.insert(name.to_string(), value);
    }

    /// True when every pass flag is set.
    pub fn all_pass(&self) -> bool {
        self.pass_flags.values().all(|&v| v)
    }

    /// Base file name: `{name}_{seed}`, or `{name}` without a single seed.
    pub fn stem(&self) -> String {
        match self.seeds.as_slice() {
            [s] => format!("{}_{s}", self.name),
            _ => self.name.clone(),
        }
    }

    /// Writes `{stem}.json` and `{stem}_{table}.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let stem = self.stem();
        let mut written = Vec::new();
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_string_pretty(self)? + "\n")?;
        written.push(json);
        for (name, table) in &self.tables {
            let path = dir.join(format!("{stem}_{name}.csv"));
            table.write_csv(&path)?;
            written.push(path);
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub fit: FitOptions,
    pub mean_te: MeanTeConfig,
    /// Open window on fitted residuals selecting the subsample.
    pub window: (f64, f64),
    pub min_subsample: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            mean_te: MeanTeConfig::default(),
            window: (-2.3, -2.1),
            min_subsample: 5,
        }
    }
}

/// Experiments runnable over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    MeanTe,
    ObsTe,
    Identifiability,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::MeanTe => "mean-te",
            ExperimentKind::ObsTe => "obs-te",
            ExperimentKind::Identifiability => "identifiability",
        }
    }

    pub fn run(self, seed: u64, config: &ExperimentConfig) -> ExperimentReport {
        match self {
            ExperimentKind::MeanTe => run_mean_te_with(seed, config),
            ExperimentKind::ObsTe => run_obs_te_with(seed, config),
            ExperimentKind::Identifiability => run_identifiability_with(seed, config),
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = SfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-te" => Ok(ExperimentKind::MeanTe),
            "obs-te" => Ok(ExperimentKind::ObsTe),
            "identifiability" => Ok(ExperimentKind::Identifiability),
            other => Err(SfaError::InvalidParameter(format!("unknown experiment {other:?}"))),
        }
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn record_fit(report: &mut ExperimentReport, key: &str, result: &FitResult) {
    report.scalar(&format!("loglik_{key}"), Some(result.loglik), "no finite log-likelihood");
    report.flag(&format!("converged_{key}"), result.converged);
    if !result.converged {
        report.notes.push(format!("{key} fit: {}", result.message));
    }
}

// ---------------------------------------------------------------------------
// mean efficiency under a z-scaled two-point law

pub fn run_mean_te(seed: u64) -> ExperimentReport {
    run_mean_te_with(seed, &ExperimentConfig::default())
}

/// Fits the exponential model with `ln σ_u = γ0 + γ z` to the mean-TE design
/// and compares fitted and true efficiency as functions of `z`.
pub fn run_mean_te_with(seed: u64, config: &ExperimentConfig) -> ExperimentReport {
    let mut report = ExperimentReport::new("mean-te", vec![seed]);
    let sample = gen_mean_te_with(&config.mean_te, seed);
    let grid: Vec<f64> = (0..=160).map(|i| 9.0 + 0.05 * i as f64).collect();
    let upper: Vec<f64> = grid.iter().copied().filter(|&z| z >= 10.5 - 1e-9).collect();

    let te_true_upper: Vec<f64> = upper.iter().map(|&z| mean_te_te(z)).collect();
    report.flag("te_true_increasing_on_upper_range", strictly_increasing(&te_true_upper));
    let mean_u_upper: Vec<f64> = upper.iter().map(|&z| mean_te_mean_u(z)).collect();
    report.flag("mean_u_true_increasing_on_upper_range", strictly_increasing(&mean_u_upper));

    let spec = ModelSpec::new(Family::Exponential, 1);
    let fitted = match fit(&sample.dataset, &spec, &config.fit) {
        Ok((result, _)) => result,
        Err(e) => {
            report.notes.push(format!("exponential fit failed: {e}"));
            report.flag("converged_exponential", false);
            report.flag("gamma_hat_positive", false);
            report.flag("te_hat_decreasing_in_z", false);
            return report;
        }
    };
    record_fit(&mut report, "exponential", &fitted);
    let link = match fitted.params.inefficiency {
        FamilyParams::Exponential(l) => l,
        _ => unreachable!("exponential spec yields exponential parameters"),
    };
    report.scalar("gamma0_hat", Some(link.gamma0), "");
    report.scalar("gamma_hat", Some(link.gamma), "");
    report.flag("gamma_hat_positive", link.gamma > 0.0);

    let te_hat = |z: f64| te_uncond_exponential(link.sigma_u(z));
    let te_hat_grid: Vec<f64> = grid.iter().map(|&z| te_hat(z)).collect();
    let te_hat_upper: Vec<f64> = upper.iter().map(|&z| te_hat(z)).collect();
    report.flag("te_hat_decreasing_in_z", strictly_decreasing(&te_hat_grid));
    report.flag("te_hat_decreasing_on_upper_range", strictly_decreasing(&te_hat_upper));
    report.flag(
        "opposite_directions_on_upper_range",
        strictly_decreasing(&te_hat_upper) && strictly_increasing(&te_true_upper),
    );

    report.tables.insert(
        "curves".into(),
        Table::default()
            .with("z", grid.clone())
            .with("sigma_u_true", grid.iter().map(|&z| mean_te_sigma_u(z)).collect())
            .with("sigma_u_hat", grid.iter().map(|&z| link.sigma_u(z)).collect())
            .with("mean_u_true", grid.iter().map(|&z| mean_te_mean_u(z)).collect())
            .with("te_true", grid.iter().map(|&z| mean_te_te(z)).collect())
            .with("te_hat", te_hat_grid),
    );
    let mut order: Vec<usize> = (0..sample.dataset.len()).collect();
    order.sort_by(|&a, &b| sample.dataset.z[a].total_cmp(&sample.dataset.z[b]));
    let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let z_sorted = pick(&sample.dataset.z);
    report.tables.insert(
        "sample".into(),
        Table::default()
            .with("sigma_u_hat", z_sorted.iter().map(|&z| link.sigma_u(z)).collect())
            .with("te_hat", z_sorted.iter().map(|&z| te_hat(z)).collect())
            .with("z", z_sorted)
            .with("sigma_u_true", pick(&sample.sigma_u_true))
            .with("te_true", pick(&sample.te_true)),
    );
    report
}

// ---------------------------------------------------------------------------
// observation-specific efficiency

struct ModelFit {
    result: FitResult,
    records: Vec<EfficiencyRecord>,
}

fn fit_family(sample_family: Family, dataset: &crate::models::Dataset, options: &FitOptions) -> Result<ModelFit> {
    let (result, records) = fit(dataset, &ModelSpec::new(sample_family, dataset.n_inputs()), options)?;
    Ok(ModelFit { result, records })
}

/// Rank correlations of fitted vs true efficiency over the full sample and
/// over observations whose fitted residual lies inside `window`.
fn correlations(
    report: &mut ExperimentReport,
    key: &str,
    model: &ModelFit,
    te_true: &[f64],
    config: &ExperimentConfig,
) -> Vec<f64> {
    let te_hat: Vec<f64> = model.records.iter().map(|r| r.te_cond).collect();
    report.scalar(&format!("spearman_full_{key}"), spearman(&te_hat, te_true), "zero rank variance");
    let (lo, hi) = config.window;
    let inside: Vec<usize> = (0..te_hat.len())
        .filter(|&i| model.records[i].eps > lo && model.records[i].eps < hi)
        .collect();
    report.scalars.insert(format!("subsample_size_{key}"), inside.len() as f64);
    let name = format!("spearman_subsample_{key}");
    if inside.len() < config.min_subsample {
        report.scalar(&name, None, &format!("subsample has {} < {} points", inside.len(), config.min_subsample));
    } else {
        let a: Vec<f64> = inside.iter().map(|&i| te_hat[i]).collect();
        let b: Vec<f64> = inside.iter().map(|&i| te_true[i]).collect();
        report.scalar(&name, spearman(&a, &b), "zero rank variance in subsample");
    }
    te_hat
}

pub fn run_obs_te(seed: u64) -> ExperimentReport {
    run_obs_te_with(seed, &ExperimentConfig::default())
}

/// Fits the exponential model to the observation-TE design and compares
/// per-observation fitted efficiency with the true posterior efficiency.
pub fn run_obs_te_with(seed: u64, config: &ExperimentConfig) -> ExperimentReport {
    let mut report = ExperimentReport::new("obs-te", vec![seed]);
    let sample = gen_obs_te(seed);
    let model = match fit_family(Family::Exponential, &sample.dataset, &config.fit) {
        Ok(m) => m,
        Err(e) => {
            report.notes.push(format!("exponential fit failed: {e}"));
            report.flag("converged_exponential", false);
            return report;
        }
    };
    record_fit(&mut report, "exponential", &model.result);
    let te_hat = correlations(&mut report, "exponential", &model, &sample.te_true, config);
    for (from, to) in [
        ("spearman_full_exponential", "spearman_full"),
        ("spearman_subsample_exponential", "spearman_subsample"),
    ] {
        if let Some(v) = report.scalars.get(from).copied() {
            report.scalars.insert(to.into(), v);
        } else if let Some(r) = report.unavailable.get(from).cloned() {
            report.unavailable.insert(to.into(), r);
        }
    }
    let (lo, hi) = config.window;
    let eps_hat: Vec<f64> = model.records.iter().map(|r| r.eps).collect();
    report.tables.insert(
        "scatter".into(),
        Table::default()
            .with("in_window", eps_hat.iter().map(|&e| f64::from(u8::from(e > lo && e < hi))).collect())
            .with("eps_hat", eps_hat)
            .with("eps_true", sample.eps_true.clone())
            .with("z", sample.dataset.z.clone())
            .with("te_true", sample.te_true.clone())
            .with("te_hat", te_hat),
    );
    report
}

// ---------------------------------------------------------------------------
// cross-family identifiability

/// Model keys used in identifiability scalar names, with their families.
pub const MODELS: [(&str, Family); 3] = [
    ("discrete", Family::Discrete { z_scaled: true }),
    ("halfnormal", Family::HalfNormal),
    ("exponential", Family::Exponential),
];

pub fn run_identifiability(seed: u64) -> ExperimentReport {
    run_identifiability_with(seed, &ExperimentConfig::default())
}

/// Fits the true two-point model and both continuous models to one
/// observation-TE sample. Scalars `spearman_full_{model}` and
/// `spearman_subsample_{model}` hold the rank correlations.
pub fn run_identifiability_with(seed: u64, config: &ExperimentConfig) -> ExperimentReport {
    let mut report = ExperimentReport::new("identifiability", vec![seed]);
    let sample = gen_obs_te(seed);
    let mut table = Table::default().with("te_true", sample.te_true.clone());
    for (key, family) in MODELS {
        match fit_family(family, &sample.dataset, &config.fit) {
            Ok(model) => {
                record_fit(&mut report, key, &model.result);
                let te_hat = correlations(&mut report, key, &model, &sample.te_true, config);
                table = table
                    .with(&format!("eps_hat_{key}"), model.records.iter().map(|r| r.eps).collect())
                    .with(&format!("te_hat_{key}"), te_hat);
                report
                    .notes
                    .push(format!("{key}: {}", serde_json::to_string(&model.result.params).unwrap_or_default()));
            }
            Err(e) => {
                report.flag(&format!("converged_{key}"), false);
                report.notes.push(format!("{key} fit failed: {e}"));
                for s in ["spearman_full", "spearman_subsample"] {
                    report.scalar(&format!("{s}_{key}"), None, "fit failed");
                }
            }
        }
    }
    let get = |k: &str| report.scalars.get(&format!("spearman_full_{k}")).copied();
    if let (Some(d), Some(h), Some(e)) = (get("discrete"), get("halfnormal"), get("exponential")) {
        report.flag("ordering_discrete_halfnormal_exponential", d > h && h > e);
    }
    report.tables.insert("te".into(), table);
    report
}

// ---------------------------------------------------------------------------
// multi-seed

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub name: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<ExperimentReport>,
    /// Mean of each scalar over the seeds where it is available.
    pub means: BTreeMap<String, f64>,
    /// Number of seeds where each scalar is available.
    pub available: BTreeMap<String, usize>,
    /// Number of seeds where each flag is set.
    pub flag_counts: BTreeMap<String, usize>,
}

impl MultiSeedReport {
    pub fn from_reports(name: &str, per_seed: Vec<ExperimentReport>) -> Self {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut flag_counts = BTreeMap::new();
        for r in &per_seed {
            for (k, &v) in &r.scalars {
                let e = sums.entry(k.clone()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
            for (k, &v) in &r.pass_flags {
                *flag_counts.entry(k.clone()).or_insert(0) += usize::from(v);
            }
        }
        Self {
            name: name.to_string(),
            seeds: per_seed.iter().flat_map(|r| r.seeds.clone()).collect(),
            means: sums.iter().map(|(k, &(s, n))| (k.clone(), s / n as f64)).collect(),
            available: sums.iter().map(|(k, &(_, n))| (k.clone(), n)).collect(),
            flag_counts,
            per_seed,
        }
    }

    /// Per-seed values of a scalar (`None` where unavailable).
    pub fn values(&self, scalar: &str) -> Vec<Option<f64>> {
        self.per_seed.iter().map(|r| r.scalars.get(scalar).copied()).collect()
    }

    /// Writes every per-seed report plus `{name}_summary.json`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for r in &self.per_seed {
            written.extend(r.write(dir)?);
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            name: &'a str,
            seeds: &'a [u64],
            means: &'a BTreeMap<String, f64>,
            available: &'a BTreeMap<String, usize>,
            flag_counts: &'a BTreeMap<String, usize>,
            scalars: Vec<&'a BTreeMap<String, f64>>,
        }
        let summary = Summary {
            name: &self.name,
            seeds: &self.seeds,
            means: &self.means,
            available: &self.available,
            flag_counts: &self.flag_counts,
            scalars: self.per_seed.iter().map(|r| &r.scalars).collect(),
        };
        let path = dir.join(format!("{}_summary.json", self.name));
        std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
        written.push(path);
        Ok(written)
    }
}

/// Runs `kind` for every seed in parallel; results keep the seed order.
pub fn run_seeds(kind: ExperimentKind, seeds: &[u64], config: &ExperimentConfig) -> MultiSeedReport {
    let per_seed: Vec<ExperimentReport> = seeds.par_iter().map(|&s| kind.run(s, config)).collect();
    MultiSeedReport::from_reports(kind.name(), per_seed)
}

// ---------------------------------------------------------------------------
// verification

/// Functions under test in the inequality checks of [`run_verify_with`].
#[derive(Clone, Copy)]
pub struct VerifyHooks {
    pub lambda: fn(f64) -> f64,
    pub lambda_prime: fn(f64) -> f64,
}

impl Default for VerifyHooks {
    fn default() -> Self {
        Self {
            lambda: mills_lambda,
            lambda_prime: mills_lambda_prime,
        }
    }
}

/// Slack allowed by every inequality check.
pub const SLACK: f64 = 1e-12;

/// Worst margin of a check over a grid; a check passes when the margin is
/// at least `-SLACK`.
struct Check {
    worst: f64,
    at: String,
}

impl Check {
    fn new() -> Self {
        Self {
            worst: f64::INFINITY,
            at: String::new(),
        }
    }

    fn see(&mut self, margin: f64, at: impl FnOnce() -> String) {
        let m = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if m < self.worst {
            self.worst = m;
            self.at = at();
        }
    }

    fn finish(self, report: &mut ExperimentReport, name: &str) {
        let pass = self.worst >= -SLACK;
        report.flag(name, pass);
        if self.worst.is_finite() {
            report.scalars.insert(format!("worst_margin_{name}"), self.worst);
        }
        if !pass {
            report
                .notes
                .push(format!("{name} fails: worst margin {:e} at {}", self.worst, self.at));
        }
    }
}

/// `x` grid `[-40, 40]` with step 0.01.
pub fn mills_grid() -> Vec<f64> {
    (0..=8000).map(|i| -40.0 + 0.01 * i as f64).collect()
}

/// Grid of `(ε, σ_v, σ_u)` used by the marginal-effect checks.
pub fn margins_grid() -> Vec<(f64, f64, f64)> {
    let mut g = Vec::new();
    for i in 0..=100 {
        let eps = -5.0 + 0.1 * i as f64;
        for sv in [0.5, 1.0, 2.0] {
            for su in [0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0] {
                g.push((eps, sv, su));
            }
        }
    }
    g
}

pub fn run_verify() -> ExperimentReport {
    run_verify_with(&VerifyHooks::default())
}

/// Grid checks of the Mills-ratio inequalities, the sign results for the
/// continuous families, sign opposition of the `z` effects, agreement of
/// analytic and finite-difference derivatives, and the two counterexamples.
pub fn run_verify_with(hooks: &VerifyHooks) -> ExperimentReport {
    let mut report = ExperimentReport::new("verify", vec![]);
    verify_mills(&mut report, hooks);
    verify_sigma_signs(&mut report);
    verify_finite_differences(&mut report);
    verify_counterexamples(&mut report);
    report
}

fn verify_mills(report: &mut ExperimentReport, hooks: &VerifyHooks) {
    let (lam, lam_p) = (hooks.lambda, hooks.lambda_prime);
    let grid = mills_grid();
    let mut variance = Check::new();
    let mut prime_upper = Check::new();
    let mut prime_lower = Check::new();
    let mut decreasing = Check::new();
    let mut quadratic = Check::new();
    let mut bound = Check::new();
    let mut ti_inner = Check::new();
    let mut te_inner = Check::new();
    let mut prime_fd = Check::new();
    let at = |x: f64| move || format!("x = {x:.2}");
    for (i, &x) in grid.iter().enumerate() {
        let l = lam(x);
        let lp = lam_p(x);
        variance.see(1.0 - x * l - l * l, at(x));
        prime_upper.see(-lp, at(x));
        prime_lower.see(lp + 1.0, at(x));
        if i > 0 {
            decreasing.see(lam(grid[i - 1]) - l, at(x));
        }
        if x <= -0.01 + 1e-9 {
            quadratic.see(2.0 * l * l - (1.0 - x * x - 3.0 * x * l), at(x));
        }
        if x <= 0.0 {
            bound.see(l - 0.25 * ((x * x + 8.0).sqrt() - 3.0 * x), at(x));
        }
        ti_inner.see(l + 2.0 * x - x * x * l - x * l * l, at(x));
        te_inner.see(l + x * lp + 2.0 * x, at(x));
        if x.abs() <= 20.0 {
            let h = 1e-6 * x.abs().max(1.0);
            let fd = (lam(x + h) - lam(x - h)) / (2.0 * h);
            prime_fd.see(1e-6 - (lp - fd).abs() / lp.abs(), at(x));
        }
    }
    variance.finish(report, "truncated_variance_nonnegative");
    prime_upper.finish(report, "lambda_prime_nonpositive");
    prime_lower.finish(report, "lambda_prime_above_minus_one");
    decreasing.finish(report, "lambda_decreasing");
    quadratic.finish(report, "mills_quadratic_bound");
    bound.finish(report, "mills_lower_bound");
    ti_inner.finish(report, "halfnormal_ti_inner_inequality");
    te_inner.finish(report, "halfnormal_te_inner_inequality");
    prime_fd.finish(report, "lambda_prime_matches_finite_difference");
}

fn verify_sigma_signs(report: &mut ExperimentReport) {
    let mut checks: Vec<Check> = (0..5).map(|_| Check::new()).collect();
    let names = [
        "exponential_ti_increasing_in_sigma",
        "exponential_te_decreasing_in_sigma",
        "halfnormal_ti_increasing_in_sigma",
        "halfnormal_te_decreasing_in_sigma",
        "sign_opposition",
    ];
    for (eps, sv, su) in margins_grid() {
        let at = || format!("eps = {eps:.1}, sigma_v = {sv}, sigma_u = {su}");
        let effects = [
            (dti_dsigma_exp(eps, sv, su), dte_dsigma_exp(eps, sv, su)),
            (dti_dsigma_halfnormal(eps, sv, su), dte_dsigma_halfnormal(eps, sv, su)),
        ];
        for (f, (ti, te)) in effects.into_iter().enumerate() {
            let (ti, te) = (ti.unwrap_or(f64::NAN), te.unwrap_or(f64::NAN));
            checks[2 * f].see(ti, at);
            checks[2 * f + 1].see(-te, at);
            for gamma in [-0.7, 0.3] {
                let ds = gamma * su;
                let product = (ti * ds).signum() * (te * ds).signum();
                let both_nonzero = ti * ds != 0.0 && te * ds != 0.0;
                checks[4].see(if both_nonzero { -product } else { 0.0 }, at);
            }
        }
    }
    for (c, name) in checks.into_iter().zip(names) {
        c.finish(report, name);
    }
}

fn verify_finite_differences(report: &mut ExperimentReport) {
    const REL: f64 = 1e-4;
    let mut check = Check::new();
    type Pair = (fn(f64, f64, f64) -> crate::Result<f64>, fn(f64, f64, f64) -> f64, &'static str);
    let pairs: [Pair; 4] = [
        (dti_dsigma_exp, ti_cond_exponential, "dTI_dsigma_exp"),
        (dte_dsigma_exp, te_cond_exponential, "dTE_dsigma_exp"),
        (dti_dsigma_halfnormal, ti_cond_halfnormal, "dTI_dsigma_halfnormal"),
        (dte_dsigma_halfnormal, te_cond_halfnormal, "dTE_dsigma_halfnormal"),
    ];
    for (eps, sv, su) in margins_grid() {
        let h = 1e-6 * su.max(1.0);
        for (analytic, predictor, label) in pairs {
            let a = analytic(eps, sv, su).unwrap_or(f64::NAN);
            let fd = finite_difference(|s| predictor(eps, sv, s), su, h).unwrap_or(f64::NAN);
            check.see(REL - (a - fd).abs() / a.abs(), || {
                format!("{label} at eps = {eps:.1}, sigma_v = {sv}, sigma_u = {su}: {a} vs {fd}")
            });
        }
    }
    for gamma in [-0.5, 0.4] {
        for z in [-1.0, 0.0, 1.5] {
            for (family, te_fn) in [
                (FamilyParams::Exponential(ScaleLink::new(0.2, gamma)), te_uncond_exponential as fn(f64) -> f64),
                (FamilyParams::HalfNormal(ScaleLink::new(0.2, gamma)), te_uncond_halfnormal),
            ] {
                let link = ScaleLink::new(0.2, gamma);
                let (_, dte) = duncond_dz(&family, z).unwrap_or((f64::NAN, f64::NAN));
                let fd = finite_difference(|zz| te_fn(link.sigma_u(zz)), z, 1e-6 * z.abs().max(1.0))
                    .unwrap_or(f64::NAN);
                check.see(REL - (dte - fd).abs() / dte.abs(), || format!("duncond_dz at gamma = {gamma}, z = {z}"));
            }
        }
    }
    let comps = sign_change_components();
    for i in 0..=80 {
        let eps = -6.0 + 0.1 * i as f64;
        let a = dte_dz_discrete(eps, 8.5, 1.0, &comps).unwrap_or(f64::NAN);
        let fd = finite_difference(
            |z| crate::predictors::te_cond_discrete(eps, 1.0, &comps, z),
            8.5,
            8.5e-6,
        )
        .unwrap_or(f64::NAN);
        check.see(REL - (a - fd).abs() / a.abs(), || format!("dTE_dz_discrete at eps = {eps:.1}"));
    }
    check.finish(report, "finite_difference_agreement");
}

/// Two-point components of the sign-change illustration: `p1 = 0.99`,
/// `u1 = 0.1`, `u2 = 0.89`, scaled by `z`.
pub fn sign_change_components() -> DiscreteComponents {
    DiscreteComponents {
        p: 0.99,
        u1: 0.1,
        u2: 0.89,
        z_scaled: true,
    }
}

fn verify_counterexamples(report: &mut ExperimentReport) {
    let full: Vec<f64> = (0..=160).map(|i| 9.0 + 0.05 * i as f64).collect();
    let upper: Vec<f64> = (0..=130).map(|i| 10.5 + 0.05 * i as f64).collect();
    let sigma: Vec<f64> = full.iter().map(|&z| mean_te_sigma_u(z)).collect();
    let mean: Vec<f64> = upper.iter().map(|&z| mean_te_mean_u(z)).collect();
    let te: Vec<f64> = upper.iter().map(|&z| mean_te_te(z)).collect();
    report.flag("counterexample_sigma_u_increasing", strictly_increasing(&sigma));
    report.flag("counterexample_mean_u_increasing", strictly_increasing(&mean));
    report.flag("counterexample_te_increasing", strictly_increasing(&te));

    let comps = sign_change_components();
    let effects: Vec<f64> = (0..=800)
        .map(|i| dte_dz_discrete(-6.0 + 0.01 * i as f64, 8.5, 1.0, &comps).unwrap_or(f64::NAN))
        .collect();
    let has_neg = effects.iter().any(|&v| v < 0.0);
    let has_pos = effects.iter().any(|&v| v > 0.0);
    report.flag("discrete_sign_change", has_neg && has_pos);
    let lo = effects.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = effects.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    report.scalars.insert("discrete_effect_min".into(), lo);
    report.scalars.insert("discrete_effect_max".into(), hi);
}
