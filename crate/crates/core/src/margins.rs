//! Marginal effects of `σ_u` and `z` on technical inefficiency and
//! efficiency.
//!
//! For the continuous families the effect of `z` is the effect of `σ_u`
//! times `∂σ_u/∂z = γ σ_u(z)`. The `σ_u` effects are written in terms of the
//! Mills excess `e(x) = λ(x) + x` and the truncated-normal variance
//! `v(x) = 1 + λ'(x)`, which keeps them finite and correctly signed deep in
//! the lower tail.

use std::io::Write;

use serde::Serialize;

use crate::error::{Result, SfaError};
use crate::models::{residuals, Dataset, DiscreteComponents, FamilyParams, ModelSpec, Params, ScaleLink};
use crate::predictors::{
    discrete_posterior, exponential_t, halfnormal_posterior, te_cond_exponential, te_cond_halfnormal,
    ti_cond_discrete,
};
use crate::specfun::{log_norm_cdf, mills_excess, truncated_variance, FRAC_1_SQRT_2PI};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Per-observation marginal effects. `None` marks effects that are not
/// defined for the family (`σ_u` effects of the discrete model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalRecord {
    pub eps: f64,
    #[serde(rename = "dTI_dsigma")]
    pub dti_dsigma: Option<f64>,
    #[serde(rename = "dTE_dsigma")]
    pub dte_dsigma: Option<f64>,
    #[serde(rename = "dTI_dz")]
    pub dti_dz: f64,
    #[serde(rename = "dTE_dz")]
    pub dte_dz: f64,
}

fn check_scales(sigma_v: f64, sigma_u: f64) -> Result<()> {
    if sigma_v > 0.0 && sigma_u > 0.0 && sigma_v.is_finite() && sigma_u.is_finite() {
        Ok(())
    } else {
        Err(SfaError::InvalidParameter(format!(
            "scales must be positive (sigma_v = {sigma_v}, sigma_u = {sigma_u})"
        )))
    }
}

/// `∂E(u|ε)/∂σ_u = (σ_v/σ_u)² v(t)` for the normal-exponential model.
pub fn dti_dsigma_exp(eps: f64, sigma_v: f64, sigma_u: f64) -> Result<f64> {
    check_scales(sigma_v, sigma_u)?;
    let t = exponential_t(eps, sigma_v, sigma_u);
    let r = sigma_v / sigma_u;
    Ok(r * r * truncated_variance(t))
}

/// `∂E(e^{-u}|ε)/∂σ_u = TE (σ_v/σ_u²) (e(t - σ_v) - e(t))`.
pub fn dte_dsigma_exp(eps: f64, sigma_v: f64, sigma_u: f64) -> Result<f64> {
    check_scales(sigma_v, sigma_u)?;
    let t = exponential_t(eps, sigma_v, sigma_u);
    let te = te_cond_exponential(eps, sigma_v, sigma_u);
    Ok(te * sigma_v / (sigma_u * sigma_u) * (mills_excess(t - sigma_v) - mills_excess(t)))
}

/// `∂σ*/∂σ_u = σ_v³ / (σ_v² + σ_u²)^{3/2}`.
fn dsigma_star(sigma_v: f64, sigma_u: f64) -> f64 {
    let h = sigma_u.hypot(sigma_v);
    let q = sigma_v / h;
    q * q * q
}

/// `[λ(A) + 2A + Aλ'(A)] ∂σ*/∂σ_u` for the normal-half-normal model.
pub fn dti_dsigma_halfnormal(eps: f64, sigma_v: f64, sigma_u: f64) -> Result<f64> {
    check_scales(sigma_v, sigma_u)?;
    let (a, _) = halfnormal_posterior(eps, sigma_v, sigma_u);
    Ok((mills_excess(a) + a * truncated_variance(a)) * dsigma_star(sigma_v, sigma_u))
}

/// `∂E(e^{-u}|ε)/∂σ_u` for the normal-half-normal model.
///
/// With `A = kσ*`, `k = -ε/σ_v²`, the log-efficiency derivative in `σ*` is
/// `k (e(A - σ*) - e(A)) - e(A - σ*)`.
pub fn dte_dsigma_halfnormal(eps: f64, sigma_v: f64, sigma_u: f64) -> Result<f64> {
    check_scales(sigma_v, sigma_u)?;
    let (a, sigma_star) = halfnormal_posterior(eps, sigma_v, sigma_u);
    let k = -eps / (sigma_v * sigma_v);
    let shifted = mills_excess(a - sigma_star);
    let dlog = k * (shifted - mills_excess(a)) - shifted;
    let te = te_cond_halfnormal(eps, sigma_v, sigma_u);
    Ok(te * dlog * dsigma_star(sigma_v, sigma_u))
}

/// Effects of `z` on the unconditional `E(u)` and `E(e^{-u})`.
///
/// For the half-normal model `dTE/dz = 2 σ_u' e^{σ_u²/2} (σ_u (1 - Φ(σ_u)) - φ(σ_u))`.
pub fn duncond_dz(inefficiency: &FamilyParams, z: f64) -> Result<(f64, f64)> {
    inefficiency.validate()?;
    match inefficiency {
        FamilyParams::Exponential(l) => {
            let (s, ds) = link_at(l, z)?;
            Ok((ds, -ds / ((1.0 + s) * (1.0 + s))))
        }
        FamilyParams::HalfNormal(l) => {
            let (s, ds) = link_at(l, z)?;
            let tail = (0.5 * s * s + log_norm_cdf(-s)).exp();
            Ok((SQRT_2_OVER_PI * ds, 2.0 * ds * (s * tail - FRAC_1_SQRT_2PI)))
        }
        FamilyParams::Discrete(c) => {
            if !c.z_scaled {
                return Ok((0.0, 0.0));
            }
            if !(z > 0.0) {
                return Err(SfaError::InvalidParameter(format!("z = {z} must be positive for z-scaled support")));
            }
            let q = 1.0 - c.p;
            let dti = c.p * c.u1 + q * c.u2;
            let dte = -c.p * c.u1 * (-z * c.u1).exp() - q * c.u2 * (-z * c.u2).exp();
            Ok((dti, dte))
        }
    }
}

fn link_at(link: &ScaleLink, z: f64) -> Result<(f64, f64)> {
    let s = link.sigma_u(z);
    if !(s > 0.0 && s.is_finite()) {
        return Err(SfaError::InvalidParameter(format!("sigma_u(z) = {s} at z = {z}")));
    }
    Ok((s, link.dsigma_dz(z)))
}

/// `∂E(e^{-u}|ε)/∂z` for the z-scaled two-point model:
/// `-Σ π_i e^{-z u_i0} (u_i0 + w'_i) + TE Σ π_i w'_i`, where `π_i` are the
/// posterior weights and `w'_i = (z u_i0² + ε u_i0)/σ_v²`.
pub fn dte_dz_discrete(eps: f64, z: f64, sigma_v: f64, comps: &DiscreteComponents) -> Result<f64> {
    comps.validate()?;
    if !comps.z_scaled {
        return Err(SfaError::InvalidParameter("components are not z-scaled".into()));
    }
    if !(z > 0.0 && z.is_finite()) || !(sigma_v > 0.0 && sigma_v.is_finite()) {
        return Err(SfaError::InvalidParameter(format!("z = {z} and sigma_v = {sigma_v} must be positive")));
    }
    let (pi, s) = discrete_posterior(eps, sigma_v, comps, z);
    let u0 = [comps.u1, comps.u2];
    let s2 = sigma_v * sigma_v;
    let mut te = 0.0;
    let mut direct = 0.0;
    let mut mean_w = 0.0;
    for i in 0..2 {
        let w_prime = (z * u0[i] * u0[i] + eps * u0[i]) / s2;
        let e = (-s[i]).exp();
        te += pi[i] * e;
        direct += pi[i] * e * (u0[i] + w_prime);
        mean_w += pi[i] * w_prime;
    }
    Ok(-direct + te * mean_w)
}

/// Central difference of `ti_cond` for the z-scaled two-point model in `z`.
pub fn dti_dz_discrete(eps: f64, z: f64, sigma_v: f64, comps: &DiscreteComponents) -> Result<f64> {
    comps.validate()?;
    if !comps.z_scaled {
        return Err(SfaError::InvalidParameter("components are not z-scaled".into()));
    }
    let h = 1e-6 * z.abs().max(1.0);
    if !(z - h > 0.0) || !(sigma_v > 0.0) {
        return Err(SfaError::InvalidParameter(format!("z = {z} and sigma_v = {sigma_v} must be positive")));
    }
    finite_difference(|zz| ti_cond_discrete(eps, sigma_v, comps, zz), z, h)
}

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn finite_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SfaError::InvalidParameter(format!("step h = {h} must be positive")));
    }
    let hi = f(x + h);
    let lo = f(x - h);
    if !hi.is_finite() {
        return Err(SfaError::NonFinite(hi));
    }
    if !lo.is_finite() {
        return Err(SfaError::NonFinite(lo));
    }
    Ok((hi - lo) / (2.0 * h))
}

/// Marginal effects for every observation at the residuals implied by
/// `params`.
pub fn margins_table(dataset: &Dataset, spec: &ModelSpec, params: &Params) -> Result<Vec<MarginalRecord>> {
    params.check_spec(spec)?;
    params.validate()?;
    let eps = residuals(dataset, params)?;
    let sv = params.sigma_v;
    eps.iter()
        .zip(&dataset.z)
        .map(|(&e, &z)| match &params.inefficiency {
            FamilyParams::Exponential(l) | FamilyParams::HalfNormal(l) => {
                let (s, ds) = link_at(l, z)?;
                let (dti, dte) = if matches!(params.inefficiency, FamilyParams::Exponential(_)) {
                    (dti_dsigma_exp(e, sv, s)?, dte_dsigma_exp(e, sv, s)?)
                } else {
                    (dti_dsigma_halfnormal(e, sv, s)?, dte_dsigma_halfnormal(e, sv, s)?)
                };
                Ok(MarginalRecord {
                    eps: e,
                    dti_dsigma: Some(dti),
                    dte_dsigma: Some(dte),
                    dti_dz: dti * ds,
                    dte_dz: dte * ds,
                })
            }
            FamilyParams::Discrete(c) => {
                let (dti_dz, dte_dz) = if c.z_scaled {
                    (dti_dz_discrete(e, z, sv, c)?, dte_dz_discrete(e, z, sv, c)?)
                } else {
                    (0.0, 0.0)
                };
                Ok(MarginalRecord { eps: e, dti_dsigma: None, dte_dsigma: None, dti_dz, dte_dz })
            }
        })
        .collect()
}

/// CSV with columns `obs, eps, dTI_dsigma, dTE_dsigma, dTI_dz, dTE_dz`;
/// undefined effects are written as empty fields.
pub fn write_margins_csv<W: Write>(records: &[MarginalRecord], writer: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["obs", "eps", "dTI_dsigma", "dTE_dsigma", "dTI_dz", "dTE_dz"])?;
    for (i, r) in records.iter().enumerate() {
        wtr.write_record(&[
            (i + 1).to_string(),
            r.eps.to_string(),
            opt(r.dti_dsigma),
            opt(r.dte_dsigma),
            r.dti_dz.to_string(),
            r.dte_dz.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
