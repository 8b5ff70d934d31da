//! Maximum-likelihood fitting.
//!
//! Parameters are mapped to an unconstrained vector and the negative
//! log-likelihood is minimised with Nelder–Mead. Restarts rebuild the
//! simplex around the incumbent with seeded Gaussian jitter, so the
//! incumbent is always a vertex and the objective never worsens.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfaError};
use crate::models::{
    loglik, Dataset, DiscreteComponents, Family, FamilyParams, ModelSpec, Params, ScaleLink, SCALE_FLOOR,
};
use crate::predictors::{efficiency_table, EfficiencyRecord};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Restarts stop once one improves the objective by less than this.
const RESTART_GAIN: f64 = 1e-7;
const SIMPLEX_XTOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the spread of log-likelihood values across
    /// the simplex.
    pub tolerance: f64,
    pub restarts: usize,
    /// Jitter scale of restart simplices in unconstrained space.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            tolerance: 1e-10,
            restarts: 5,
            jitter: 0.5,
            seed: 42,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 || !(self.jitter >= 0.0) {
            return Err(SfaError::InvalidParameter(
                "fit options need tolerance > 0, max_iterations >= 1 and jitter >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Params,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    pub message: String,
}

// ---------------------------------------------------------------------------
// initialisation

/// Least-squares frontier with moment-matched scales.
///
/// The residual variance `s²` is split evenly between `v` and `u`; the
/// intercept is shifted up by the implied `E(u)`.
pub fn ols_init(dataset: &Dataset, spec: &ModelSpec) -> Result<Params> {
    let n = dataset.len();
    let k = spec.n_inputs;
    if dataset.n_inputs() != k {
        return Err(SfaError::Dimension(format!(
            "dataset has {} inputs, spec expects {k}",
            dataset.n_inputs()
        )));
    }
    if n <= k + 1 {
        return Err(SfaError::InvalidData(format!("need more than {} observations, got {n}", k + 1)));
    }
    let design = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { dataset.x[i][j - 1] });
    let y = DVector::from_column_slice(&dataset.y);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(SfaError::RankDeficient);
    }
    let coef = svd
        .solve(&y, 0.0)
        .map_err(|e| SfaError::InvalidData(format!("least squares failed: {e}")))?;
    let resid = &y - &design * &coef;
    let s2 = (resid.norm_squared() / (n - k - 1) as f64).max(SCALE_FLOOR * SCALE_FLOOR);
    let half = s2 / 2.0;
    let sigma_v = half.sqrt().max(SCALE_FLOOR);

    let (inefficiency, mean_u) = match spec.family {
        Family::Exponential => {
            let su = half.sqrt().max(SCALE_FLOOR);
            (FamilyParams::Exponential(ScaleLink::constant(su)), su)
        }
        Family::HalfNormal => {
            let su = (half / (1.0 - 2.0 / std::f64::consts::PI)).sqrt().max(SCALE_FLOOR);
            (FamilyParams::HalfNormal(ScaleLink::constant(su)), su * SQRT_2_OVER_PI)
        }
        Family::Discrete { z_scaled } => {
            // p = ½ and a gap d give Var(u) = d²/4.
            let gap = (2.0 * s2).sqrt().max(SCALE_FLOOR);
            let u1 = 0.25 * gap;
            let u2 = u1 + gap;
            let zbar = if z_scaled {
                let m = dataset.z.iter().sum::<f64>() / n as f64;
                if !(m > 0.0) {
                    return Err(SfaError::InvalidData("z-scaled support needs z > 0".into()));
                }
                m
            } else {
                1.0
            };
            let comps = DiscreteComponents::new(0.5, u1 / zbar, u2 / zbar, z_scaled)?;
            (FamilyParams::Discrete(comps), 0.5 * (u1 + u2))
        }
    };
    let beta = coef.iter().skip(1).copied().collect();
    Ok(Params::new(coef[0] + mean_u, beta, sigma_v, inefficiency))
}

// ---------------------------------------------------------------------------
// transforms

/// Length of the unconstrained vector for `spec`.
pub fn n_free(spec: &ModelSpec) -> usize {
    2 + spec.n_inputs
        + match spec.family {
            Family::Exponential | Family::HalfNormal => 2,
            Family::Discrete { .. } => 3,
        }
}

/// `[β0, β…, ln σ_v, γ0, γ]` or `[β0, β…, ln σ_v, logit p, ln u1, ln(u2 - u1)]`.
pub fn to_unconstrained(params: &Params, spec: &ModelSpec) -> Result<Vec<f64>> {
    params.check_spec(spec)?;
    params.validate()?;
    let mut theta = Vec::with_capacity(n_free(spec));
    theta.push(params.beta0);
    theta.extend_from_slice(&params.beta);
    theta.push(params.sigma_v.ln());
    match params.inefficiency {
        FamilyParams::Exponential(l) | FamilyParams::HalfNormal(l) => {
            theta.push(l.gamma0);
            theta.push(l.gamma);
        }
        FamilyParams::Discrete(c) => {
            let c = c.canonical();
            theta.push((c.p / (1.0 - c.p)).ln());
            theta.push(c.u1.ln());
            theta.push((c.u2 - c.u1).max(1e-300).ln());
        }
    }
    Ok(theta)
}

fn finite(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-f64::MAX, f64::MAX)
    }
}

fn bounded_exp(v: f64) -> f64 {
    finite(v).clamp(-700.0, 700.0).exp()
}

fn logistic(v: f64) -> f64 {
    // Above 36 the result would round to 1.
    let v = finite(v).clamp(-700.0, 36.0);
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`to_unconstrained`]; every finite input maps to valid
/// parameters.
pub fn from_unconstrained(theta: &[f64], spec: &ModelSpec) -> Result<Params> {
    if theta.len() != n_free(spec) {
        return Err(SfaError::Dimension(format!(
            "expected {} free parameters, got {}",
            n_free(spec),
            theta.len()
        )));
    }
    let k = spec.n_inputs;
    let beta = theta[1..=k].iter().map(|&b| finite(b)).collect();
    let sigma_v = bounded_exp(theta[k + 1]);
    let rest = &theta[k + 2..];
    let inefficiency = match spec.family {
        Family::Exponential => FamilyParams::Exponential(ScaleLink::new(finite(rest[0]), finite(rest[1]))),
        Family::HalfNormal => FamilyParams::HalfNormal(ScaleLink::new(finite(rest[0]), finite(rest[1]))),
        Family::Discrete { z_scaled } => {
            let u1 = bounded_exp(rest[1]);
            FamilyParams::Discrete(DiscreteComponents {
                p: logistic(rest[0]),
                u1,
                u2: u1 + bounded_exp(rest[2]),
                z_scaled,
            })
        }
    };
    Ok(Params::new(finite(theta[0]), beta, sigma_v, inefficiency))
}

// ---------------------------------------------------------------------------
// Nelder–Mead

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Vertex spread below `SIMPLEX_XTOL` relative to the best vertex, so a
/// simplex straddling a minimum with equal values does not count as
/// converged.
fn collapsed(pts: &[(Vec<f64>, f64)]) -> bool {
    let x0 = &pts[0].0;
    pts[1..].iter().all(|(x, _)| {
        x.iter()
            .zip(x0)
            .all(|(a, b)| (a - b).abs() <= SIMPLEX_XTOL * b.abs().max(1.0))
    })
}

/// Minimises `f` from the given simplex (`n + 1` vertices of length `n`).
/// Non-finite objective values are treated as `+∞`. Converged when the
/// spread of finite vertex values falls below `tolerance` and the simplex
/// has collapsed.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    simplex: Vec<Vec<f64>>,
    max_iterations: usize,
    tolerance: f64,
) -> SimplexOutcome {
    let n = simplex.len() - 1;
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut pts: Vec<(Vec<f64>, f64)> = simplex
        .into_iter()
        .map(|x| {
            let v = eval(&x);
            (x, v)
        })
        .collect();
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect() };

    let mut iterations = 0;
    let mut converged = false;
    loop {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (pts[0].1, pts[n].1);
        if best.is_finite() && worst - best < tolerance && collapsed(&pts) {
            converged = true;
            break;
        }
        if iterations >= max_iterations {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &pts[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let xw = pts[n].0.clone();
        let xr = lerp(&centroid, &xw, -1.0);
        let fr = eval(&xr);
        if fr < best {
            let xe = lerp(&centroid, &xw, -2.0);
            let fe = eval(&xe);
            pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < pts[n - 1].1 {
            pts[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst {
            let xc = lerp(&centroid, &xr, 0.5);
            let fc = eval(&xc);
            (xc, if fc <= fr { fc } else { f64::NAN })
        } else {
            let xc = lerp(&centroid, &xw, 0.5);
            let fc = eval(&xc);
            (xc, if fc < worst { fc } else { f64::NAN })
        };
        if !fc.is_nan() {
            pts[n] = (xc, fc);
            continue;
        }
        let x0 = pts[0].0.clone();
        for p in pts.iter_mut().skip(1) {
            p.0 = lerp(&x0, &p.0, 0.5);
            p.1 = eval(&p.0);
        }
    }
    let (x, value) = pts.swap_remove(0);
    SimplexOutcome {
        x,
        value,
        iterations,
        converged,
    }
}

/// Per-coordinate step scales: slopes and the link slope are shrunk by the
/// typical magnitude of their regressor.
fn coordinate_scales(dataset: &Dataset, spec: &ModelSpec) -> Vec<f64> {
    let n = dataset.len().max(1) as f64;
    let mean_abs = |it: &mut dyn Iterator<Item = f64>| it.map(f64::abs).sum::<f64>() / n;
    let mut scales = vec![1.0];
    for j in 0..spec.n_inputs {
        scales.push(1.0 / mean_abs(&mut dataset.x.iter().map(|r| r[j])).max(1.0));
    }
    scales.push(1.0);
    match spec.family {
        Family::Exponential | Family::HalfNormal => {
            scales.push(1.0);
            scales.push(1.0 / mean_abs(&mut dataset.z.iter().copied()).max(1.0));
        }
        Family::Discrete { .. } => scales.extend([1.0, 1.0, 1.0]),
    }
    scales
}

/// Maximises the log-likelihood from `init`.
pub fn maximize(dataset: &Dataset, spec: &ModelSpec, init: &Params, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    init.check_spec(spec)?;
    if dataset.n_inputs() != spec.n_inputs {
        return Err(SfaError::Dimension(format!(
            "dataset has {} inputs, spec expects {}",
            dataset.n_inputs(),
            spec.n_inputs
        )));
    }
    let init_ll = loglik(dataset, spec, init)?.value();
    let theta0 = to_unconstrained(init, spec)?;
    let objective = |theta: &[f64]| -> f64 {
        match from_unconstrained(theta, spec) {
            Ok(p) => loglik(dataset, spec, &p).map(|l| -l.value()).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    };
    let scales = coordinate_scales(dataset, spec);
    let dim = theta0.len();

    let mut simplex = vec![theta0.clone()];
    for j in 0..dim {
        let mut v = theta0.clone();
        v[j] += 0.1 * scales[j];
        simplex.push(v);
    }
    let mut best = nelder_mead(objective, simplex, options.max_iterations, options.tolerance);
    let mut iterations = best.iterations;
    let mut restarts_used = 0;
    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    for _ in 0..options.restarts {
        let mut simplex = vec![best.x.clone()];
        for _ in 0..dim {
            simplex.push(
                best.x
                    .iter()
                    .zip(&scales)
                    .map(|(x, s)| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        x + options.jitter * s * g
                    })
                    .collect(),
            );
        }
        let out = nelder_mead(objective, simplex, options.max_iterations, options.tolerance);
        restarts_used += 1;
        iterations += out.iterations;
        let gain = best.value - out.value;
        if out.value <= best.value {
            best = out;
        }
        if best.converged && !(gain > RESTART_GAIN) {
            break;
        }
    }

    let mut params = from_unconstrained(&best.x, spec)?;
    let mut ll = -best.value;
    if !(ll >= init_ll) && init_ll.is_finite() {
        params = init.clone();
        ll = init_ll;
    }
    let converged = best.converged && ll.is_finite();
    let message = if !ll.is_finite() {
        "no finite log-likelihood found".to_string()
    } else if converged {
        format!("converged after {iterations} iterations and {restarts_used} restarts")
    } else {
        format!("iteration limit {} reached", options.max_iterations)
    };
    Ok(FitResult {
        params,
        loglik: ll,
        iterations,
        converged,
        restarts_used,
        message,
    })
}

/// `ols_init`, then `maximize`, then the efficiency table at the estimate.
pub fn fit(dataset: &Dataset, spec: &ModelSpec, options: &FitOptions) -> Result<(FitResult, Vec<EfficiencyRecord>)> {
    if let Family::Discrete { z_scaled: true } = spec.family {
        if let Some(z) = dataset.z.iter().find(|&&z| !(z > 0.0)) {
            return Err(SfaError::InvalidData(format!("z-scaled support needs z > 0, found {z}")));
        }
    }
    let init = ols_init(dataset, spec)?;
    let result = maximize(dataset, spec, &init, options)?;
    let table = efficiency_table(dataset, spec, &result.params)?;
    Ok((result, table))
}

// ---------------------------------------------------------------------------
// standard errors

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum StandardErrors {
    Available { names: Vec<String>, values: Vec<f64> },
    Unavailable { reason: String },
}

/// Names of the natural parameter vector used by [`numeric_hessian_se`].
pub fn natural_names(spec: &ModelSpec) -> Vec<String> {
    let mut names = vec!["beta0".to_string()];
    names.extend((1..=spec.n_inputs).map(|j| format!("beta{j}")));
    names.push("sigma_v".into());
    match spec.family {
        Family::Exponential | Family::HalfNormal => names.extend(["gamma0".into(), "gamma".into()]),
        Family::Discrete { .. } => names.extend(["p".into(), "u1".into(), "u2".into()]),
    }
    names
}

fn natural_vector(params: &Params) -> Vec<f64> {
    let mut v = vec![params.beta0];
    v.extend_from_slice(&params.beta);
    v.push(params.sigma_v);
    match params.inefficiency {
        FamilyParams::Exponential(l) | FamilyParams::HalfNormal(l) => v.extend([l.gamma0, l.gamma]),
        FamilyParams::Discrete(c) => v.extend([c.p, c.u1, c.u2]),
    }
    v
}

fn from_natural(v: &[f64], template: &Params) -> Params {
    let k = template.beta.len();
    let rest = &v[k + 2..];
    let inefficiency = match template.inefficiency {
        FamilyParams::Exponential(_) => FamilyParams::Exponential(ScaleLink::new(rest[0], rest[1])),
        FamilyParams::HalfNormal(_) => FamilyParams::HalfNormal(ScaleLink::new(rest[0], rest[1])),
        FamilyParams::Discrete(c) => FamilyParams::Discrete(DiscreteComponents {
            p: rest[0],
            u1: rest[1],
            u2: rest[2],
            z_scaled: c.z_scaled,
        }),
    };
    Params::new(v[0], v[1..=k].to_vec(), v[k + 1], inefficiency)
}

/// Standard errors `sqrt(diag(H⁻¹))` from a central-difference Hessian of
/// the negative log-likelihood `f` at `x`.
///
/// Unavailable when an evaluation is not finite, the Hessian is not
/// positive definite, or the Newton decrement `gᵀH⁻¹g` exceeds one (the
/// point is not an optimum).
pub fn hessian_standard_errors<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> std::result::Result<Vec<f64>, String> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let at = |moves: &[(usize, f64)]| {
        let mut p = x.to_vec();
        for &(i, s) in moves {
            p[i] += s * h[i];
        }
        f(&p)
    };
    let f0 = f(x);
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let (fp, fm) = (at(&[(i, 1.0)]), at(&[(i, -1.0)]));
        grad[i] = (fp - fm) / (2.0 * h[i]);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let v = (at(&[(i, 1.0), (j, 1.0)]) - at(&[(i, 1.0), (j, -1.0)]) - at(&[(i, -1.0), (j, 1.0)])
                + at(&[(i, -1.0), (j, -1.0)]))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    if !f0.is_finite() || hess.iter().any(|v| !v.is_finite()) || grad.iter().any(|v| !v.is_finite()) {
        return Err("non-finite log-likelihood near the point".into());
    }
    let chol = hess.cholesky().ok_or("Hessian is not positive definite")?;
    let decrement = grad.dot(&chol.solve(&grad));
    if decrement > 1.0 {
        return Err(format!("not at an optimum (Newton decrement {decrement:.3e})"));
    }
    let inv = chol.inverse();
    Ok((0..n).map(|i| inv[(i, i)].sqrt()).collect())
}

/// Standard errors of the natural parameters (see [`natural_names`]).
pub fn numeric_hessian_se(dataset: &Dataset, spec: &ModelSpec, params: &Params) -> Result<StandardErrors> {
    params.check_spec(spec)?;
    params.validate()?;
    let x = natural_vector(params);
    let f = |v: &[f64]| -> f64 {
        let p = from_natural(v, params);
        loglik(dataset, spec, &p).map(|l| -l.value()).unwrap_or(f64::INFINITY)
    };
    Ok(match hessian_standard_errors(f, &x) {
        Ok(values) => StandardErrors::Available {
            names: natural_names(spec),
            values,
        },
        Err(reason) => StandardErrors::Unavailable { reason },
    })
}
