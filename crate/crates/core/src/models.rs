//! Composed-error densities and sample log-likelihoods.
//!
//! The frontier is linear in parameters, `y_i = β0 + x_i'β + v_i - u_i`,
//! with `v ~ N(0, σ_v²)`. The inefficiency `u` is exponential or half-normal
//! with scale `σ_u(z) = exp(γ0 + γ z)`, or takes one of two positive values
//! (optionally scaled by `z`).
//!
//! Every density is evaluated through its log; the plain densities just
//! exponentiate.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfaError};
use crate::specfun::{log_mills_ratio, log_norm_cdf, log_norm_pdf, TAIL_SWITCH};

/// Lower bound applied to `σ_v` and `σ_u` inside the likelihood.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Observed sample: log output `y`, inputs `x` (one row per observation) and
/// the inefficiency determinant `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<Vec<f64>>, z: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(SfaError::InvalidData("dataset has no observations".into()));
        }
        if x.len() != n || z.len() != n {
            return Err(SfaError::Dimension(format!(
                "y has {n} rows, x has {}, z has {}",
                x.len(),
                z.len()
            )));
        }
        let k = x[0].len();
        if let Some(i) = x.iter().position(|row| row.len() != k) {
            return Err(SfaError::Dimension(format!("row {i} of x has {} columns, expected {k}", x[i].len())));
        }
        let finite = y.iter().chain(z.iter()).chain(x.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(SfaError::InvalidData("non-finite entry".into()));
        }
        Ok(Self { y, x, z })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of input columns `k`.
    pub fn n_inputs(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Dataset with observations reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            y: order.iter().map(|&i| self.y[i]).collect(),
            x: order.iter().map(|&i| self.x[i].clone()).collect(),
            z: order.iter().map(|&i| self.z[i]).collect(),
        }
    }

    /// Read a CSV with header `y`, `z`, `x1..xk` (any column order).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let y_col = find("y").ok_or_else(|| SfaError::InvalidData("missing column y".into()))?;
        let z_col = find("z").ok_or_else(|| SfaError::InvalidData("missing column z".into()))?;
        let mut x_cols = Vec::new();
        for j in 1.. {
            match find(&format!("x{j}")) {
                Some(c) => x_cols.push(c),
                None => break,
            }
        }
        if x_cols.is_empty() {
            return Err(SfaError::InvalidData("missing column x1".into()));
        }
        let (mut y, mut x, mut z) = (Vec::new(), Vec::new(), Vec::new());
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |c: usize| -> Result<f64> {
                let field = record.get(c).unwrap_or("").trim();
                field
                    .parse::<f64>()
                    .map_err(|_| SfaError::InvalidData(format!("row {}: cannot parse {field:?}", line + 1)))
            };
            y.push(parse(y_col)?);
            z.push(parse(z_col)?);
            x.push(x_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?);
        }
        Self::new(y, x, z)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "z".to_string()];
        header.extend((1..=self.n_inputs()).map(|j| format!("x{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.y[i].to_string(), self.z[i].to_string()];
            row.extend(self.x[i].iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Heteroscedastic scale link `σ_u(z) = exp(γ0 + γ z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleLink {
    pub gamma0: f64,
    pub gamma: f64,
}

impl ScaleLink {
    pub fn new(gamma0: f64, gamma: f64) -> Self {
        Self { gamma0, gamma }
    }

    /// Constant scale `σ_u` (γ = 0).
    pub fn constant(sigma_u: f64) -> Self {
        Self {
            gamma0: sigma_u.ln(),
            gamma: 0.0,
        }
    }

    pub fn sigma_u(&self, z: f64) -> f64 {
        (self.gamma0 + self.gamma * z).exp()
    }

    /// `∂σ_u/∂z = γ σ_u(z)`.
    pub fn dsigma_dz(&self, z: f64) -> f64 {
        self.gamma * self.sigma_u(z)
    }
}

/// Two-point inefficiency distribution: `u = u1` with probability `p`,
/// `u = u2` otherwise. With `z_scaled` the realised support is `z·u1, z·u2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteComponents {
    pub p: f64,
    pub u1: f64,
    pub u2: f64,
    #[serde(default)]
    pub z_scaled: bool,
}

impl DiscreteComponents {
    /// Validates and canonicalises so that `u1 <= u2` (swapping `p ↦ 1-p`).
    pub fn new(p: f64, u1: f64, u2: f64, z_scaled: bool) -> Result<Self> {
        let c = Self { p, u1, u2, z_scaled };
        c.validate()?;
        Ok(c.canonical())
    }

    pub fn canonical(self) -> Self {
        if self.u1 > self.u2 {
            Self {
                p: 1.0 - self.p,
                u1: self.u2,
                u2: self.u1,
                z_scaled: self.z_scaled,
            }
        } else {
            self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(SfaError::InvalidParameter(format!("p = {} outside (0, 1)", self.p)));
        }
        if !(self.u1 > 0.0 && self.u1.is_finite() && self.u2 > 0.0 && self.u2.is_finite()) {
            return Err(SfaError::InvalidParameter(format!(
                "support ({}, {}) must be positive",
                self.u1, self.u2
            )));
        }
        Ok(())
    }

    /// Realised support `(s1, s2)` at determinant `z`.
    pub fn support(&self, z: f64) -> (f64, f64) {
        if self.z_scaled {
            (z * self.u1, z * self.u2)
        } else {
            (self.u1, self.u2)
        }
    }

    /// Standard deviation of `u` at `z`.
    pub fn sigma_u(&self, z: f64) -> f64 {
        let (s1, s2) = self.support(z);
        (self.p * (1.0 - self.p)).sqrt() * (s2 - s1).abs()
    }
}

/// Inefficiency family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Exponential,
    HalfNormal,
    Discrete { z_scaled: bool },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::HalfNormal => "half-normal",
            Family::Discrete { z_scaled: false } => "discrete",
            Family::Discrete { z_scaled: true } => "discrete-z",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = SfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" | "exp" => Ok(Family::Exponential),
            "half-normal" | "halfnormal" | "hn" => Ok(Family::HalfNormal),
            "discrete" => Ok(Family::Discrete { z_scaled: false }),
            "discrete-z" | "discrete-zscaled" => Ok(Family::Discrete { z_scaled: true }),
            other => Err(SfaError::InvalidParameter(format!("unknown family {other:?}"))),
        }
    }
}

/// Model specification: family plus a linear frontier with `n_inputs` slopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub n_inputs: usize,
}

impl ModelSpec {
    pub fn new(family: Family, n_inputs: usize) -> Self {
        Self { family, n_inputs }
    }
}

/// Family-specific inefficiency parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilyParams {
    Exponential(ScaleLink),
    HalfNormal(ScaleLink),
    Discrete(DiscreteComponents),
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::Exponential(_) => Family::Exponential,
            FamilyParams::HalfNormal(_) => Family::HalfNormal,
            FamilyParams::Discrete(c) => Family::Discrete { z_scaled: c.z_scaled },
        }
    }

    /// Scale of `u` at `z`: `σ_u(z)` for the continuous families, the
    /// standard deviation of the two-point law otherwise.
    pub fn sigma_u(&self, z: f64) -> f64 {
        match self {
            FamilyParams::Exponential(l) | FamilyParams::HalfNormal(l) => l.sigma_u(z),
            FamilyParams::Discrete(c) => c.sigma_u(z),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FamilyParams::Exponential(l) | FamilyParams::HalfNormal(l) => {
                if l.gamma0.is_finite() && l.gamma.is_finite() {
                    Ok(())
                } else {
                    Err(SfaError::InvalidParameter("non-finite scale link".into()))
                }
            }
            FamilyParams::Discrete(c) => c.validate(),
        }
    }
}

/// Full parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub sigma_v: f64,
    #[serde(flatten)]
    pub inefficiency: FamilyParams,
}

impl Params {
    pub fn new(beta0: f64, beta: Vec<f64>, sigma_v: f64, inefficiency: FamilyParams) -> Self {
        Self {
            beta0,
            beta,
            sigma_v,
            inefficiency,
        }
    }

    pub fn family(&self) -> Family {
        self.inefficiency.family()
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.family(), self.beta.len())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_v > 0.0 && self.sigma_v.is_finite()) {
            return Err(SfaError::InvalidParameter(format!("sigma_v = {} must be positive", self.sigma_v)));
        }
        if !self.beta0.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(SfaError::InvalidParameter("non-finite frontier coefficient".into()));
        }
        self.inefficiency.validate()
    }

    /// Checks that these parameters belong to `spec`.
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.family() != spec.family {
            return Err(SfaError::InvalidParameter(format!(
                "parameters are for family {}, spec is {}",
                self.family().name(),
                spec.family.name()
            )));
        }
        if self.beta.len() != spec.n_inputs {
            return Err(SfaError::Dimension(format!(
                "{} slopes for {} inputs",
                self.beta.len(),
                spec.n_inputs
            )));
        }
        Ok(())
    }

    /// Frontier value `β0 + x'β`.
    pub fn frontier(&self, x: &[f64]) -> f64 {
        self.beta0 + self.beta.iter().zip(x).map(|(b, xi)| b * xi).sum::<f64>()
    }
}

/// Composed errors `ε_i = y_i - β0 - x_i'β`.
pub fn residuals(dataset: &Dataset, params: &Params) -> Result<Vec<f64>> {
    if dataset.n_inputs() != params.beta.len() {
        return Err(SfaError::Dimension(format!(
            "dataset has {} inputs, parameters have {} slopes",
            dataset.n_inputs(),
            params.beta.len()
        )));
    }
    Ok(dataset
        .y
        .iter()
        .zip(&dataset.x)
        .map(|(y, x)| y - params.frontier(x))
        .collect())
}

fn check_scales(sigma_v: f64, sigma_u: f64) -> Result<()> {
    if sigma_v > 0.0 && sigma_u > 0.0 {
        Ok(())
    } else {
        Err(SfaError::InvalidParameter(format!(
            "scales must be positive (sigma_v = {sigma_v}, sigma_u = {sigma_u})"
        )))
    }
}

/// `ln f(ε)` for the normal-exponential family.
pub fn log_density_exponential(eps: f64, sigma_v: f64, sigma_u: f64) -> f64 {
    let t = -eps / sigma_v - sigma_v / sigma_u;
    if t <= TAIL_SWITCH {
        // the exp(ε/σ_u + σ_v²/2σ_u²) prefactor cancels against φ(t)
        -sigma_u.ln() + log_norm_pdf(eps / sigma_v) + log_mills_ratio(-t)
    } else {
        -sigma_u.ln() + eps / sigma_u + 0.5 * (sigma_v / sigma_u).powi(2) + log_norm_cdf(t)
    }
}

/// `ln f(ε)` for the normal-half-normal family.
pub fn log_density_halfnormal(eps: f64, sigma_v: f64, sigma_u: f64) -> f64 {
    let sigma = sigma_u.hypot(sigma_v);
    let ratio = sigma_u / sigma_v;
    std::f64::consts::LN_2 - sigma.ln() + log_norm_pdf(eps / sigma) + log_norm_cdf(-eps * ratio / sigma)
}

/// `ln f(ε)` for the two-point family at determinant `z`.
pub fn log_density_discrete(eps: f64, sigma_v: f64, comps: &DiscreteComponents, z: f64) -> f64 {
    let (s1, s2) = comps.support(z);
    let l1 = comps.p.ln() + log_norm_pdf((s1 + eps) / sigma_v);
    let l2 = (-comps.p).ln_1p() + log_norm_pdf((s2 + eps) / sigma_v);
    log_sum_exp2(l1, l2) - sigma_v.ln()
}

pub(crate) fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Normal-exponential density of `ε = v - u`.
pub fn density_eps_exponential(eps: f64, sigma_v: f64, sigma_u: f64) -> Result<f64> {
    check_scales(sigma_v, sigma_u)?;
    Ok(log_density_exponential(eps, sigma_v, sigma_u).exp())
}

/// Normal-half-normal density of `ε = v - u`.
pub fn density_eps_halfnormal(eps: f64, sigma_v: f64, sigma_u: f64) -> Result<f64> {
    check_scales(sigma_v, sigma_u)?;
    Ok(log_density_halfnormal(eps, sigma_v, sigma_u).exp())
}

/// Normal-discrete density of `ε = v - u`: a two-component normal mixture.
pub fn density_eps_discrete(eps: f64, sigma_v: f64, comps: &DiscreteComponents, z: f64) -> Result<f64> {
    check_scales(sigma_v, 1.0)?;
    comps.validate()?;
    if comps.z_scaled && z <= 0.0 {
        return Err(SfaError::InvalidParameter(format!("z = {z} must be positive for z-scaled support")));
    }
    Ok(log_density_discrete(eps, sigma_v, comps, z).exp())
}

/// Per-observation log density with the likelihood scale floor applied.
pub fn log_density(eps: f64, sigma_v: f64, inefficiency: &FamilyParams, z: f64) -> f64 {
    let sv = sigma_v.max(SCALE_FLOOR);
    match inefficiency {
        FamilyParams::Exponential(l) => log_density_exponential(eps, sv, l.sigma_u(z).max(SCALE_FLOOR)),
        FamilyParams::HalfNormal(l) => log_density_halfnormal(eps, sv, l.sigma_u(z).max(SCALE_FLOOR)),
        FamilyParams::Discrete(c) => log_density_discrete(eps, sv, c, z),
    }
}

/// Outcome of a likelihood evaluation: a value, or the reason the
/// parameters are outside the model.
#[derive(Debug, Clone, PartialEq)]
pub enum LogLik {
    Value(f64),
    Invalid(String),
}

impl LogLik {
    /// Numeric value, `-∞` for invalid parameters.
    pub fn value(&self) -> f64 {
        match self {
            LogLik::Value(v) => *v,
            LogLik::Invalid(_) => f64::NEG_INFINITY,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, LogLik::Value(v) if v.is_finite())
    }
}

/// Per-observation log densities.
pub fn loglik_terms(dataset: &Dataset, spec: &ModelSpec, params: &Params) -> Result<Vec<f64>> {
    if dataset.n_inputs() != spec.n_inputs {
        return Err(SfaError::Dimension(format!(
            "dataset has {} inputs, spec expects {}",
            dataset.n_inputs(),
            spec.n_inputs
        )));
    }
    params.check_spec(spec)?;
    let eps = residuals(dataset, params)?;
    Ok(eps
        .iter()
        .zip(&dataset.z)
        .map(|(&e, &z)| log_density(e, params.sigma_v, &params.inefficiency, z))
        .collect())
}

/// Sample log-likelihood `Σ ln f(ε_i)`.
///
/// Dimension mismatches are errors; parameters outside the model give
/// [`LogLik::Invalid`].
pub fn loglik(dataset: &Dataset, spec: &ModelSpec, params: &Params) -> Result<LogLik> {
    if let Err(e) = params.validate() {
        return Ok(LogLik::Invalid(e.to_string()));
    }
    if let FamilyParams::Discrete(c) = &params.inefficiency {
        if c.z_scaled && dataset.z.iter().any(|&z| z <= 0.0) {
            return Ok(LogLik::Invalid("z-scaled support needs z > 0".into()));
        }
    }
    let terms = loglik_terms(dataset, spec, params)?;
    let total = neumaier_sum(&terms);
    if total.is_nan() {
        return Ok(LogLik::Invalid("log-likelihood evaluated to NaN".into()));
    }
    Ok(LogLik::Value(total))
}

/// Compensated summation; result depends only on the order of `values`.
pub fn neumaier_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
