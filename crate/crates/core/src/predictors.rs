//! Technical inefficiency and efficiency predictors.
//!
//! Unconditional measures are `E(u)` and `E(e^{-u})`. The observation-specific
//! ones are the JLMS predictor `E(u|ε)` and the Battese–Coelli predictor
//! `E(e^{-u}|ε)`. For the continuous families both are computed from the
//! truncated-normal posterior of `u` given `ε`. Ratios of normal CDFs are
//! formed in log space.

use std::io::Write;

use serde::Serialize;

use crate::error::{Result, SfaError};
use crate::models::{residuals, Dataset, DiscreteComponents, FamilyParams, ModelSpec, Params};
use crate::quadrature::{integrate_with_breaks, QuadOptions};
use crate::specfun::{log_norm_cdf, log_norm_pdf, log_shifted_cdf_ratio, mills_excess};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Per-observation efficiency estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyRecord {
    pub eps: f64,
    pub ti_cond: f64,
    pub te_cond: f64,
    /// `σ_u(z)` for the continuous families, the standard deviation of the
    /// two-point law for the discrete family.
    pub sigma_u: f64,
}

fn check_sigma_v(sigma_v: f64) -> Result<()> {
    if sigma_v > 0.0 && sigma_v.is_finite() {
        Ok(())
    } else {
        Err(SfaError::InvalidParameter(format!("sigma_v = {sigma_v} must be positive")))
    }
}

fn check_sigma_u(sigma_u: f64) -> Result<()> {
    if sigma_u > 0.0 && sigma_u.is_finite() {
        Ok(())
    } else {
        Err(SfaError::InvalidParameter(format!("sigma_u = {sigma_u} must be positive")))
    }
}

fn check_discrete(comps: &DiscreteComponents, z: f64) -> Result<()> {
    comps.validate()?;
    if comps.z_scaled && !(z > 0.0) {
        return Err(SfaError::InvalidParameter(format!("z = {z} must be positive for z-scaled support")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// unconditional measures

pub fn te_uncond_exponential(sigma_u: f64) -> f64 {
    1.0 / (1.0 + sigma_u)
}

/// `2 (1 - Φ(σ_u)) exp(σ_u²/2)`.
pub fn te_uncond_halfnormal(sigma_u: f64) -> f64 {
    (std::f64::consts::LN_2 + 0.5 * sigma_u * sigma_u + log_norm_cdf(-sigma_u)).exp()
}

/// Unconditional mean inefficiency `E(u)` at determinant `z`.
pub fn ti_uncond(inefficiency: &FamilyParams, z: f64) -> Result<f64> {
    inefficiency.validate()?;
    match inefficiency {
        FamilyParams::Exponential(l) => Ok(l.sigma_u(z)),
        FamilyParams::HalfNormal(l) => Ok(l.sigma_u(z) * SQRT_2_OVER_PI),
        FamilyParams::Discrete(c) => {
            check_discrete(c, z)?;
            let (s1, s2) = c.support(z);
            Ok(c.p * s1 + (1.0 - c.p) * s2)
        }
    }
}

/// Unconditional mean efficiency `E(e^{-u})` at determinant `z`.
pub fn te_uncond(inefficiency: &FamilyParams, z: f64) -> Result<f64> {
    inefficiency.validate()?;
    match inefficiency {
        FamilyParams::Exponential(l) => Ok(te_uncond_exponential(l.sigma_u(z))),
        FamilyParams::HalfNormal(l) => Ok(te_uncond_halfnormal(l.sigma_u(z))),
        FamilyParams::Discrete(c) => {
            check_discrete(c, z)?;
            let (s1, s2) = c.support(z);
            Ok(c.p * (-s1).exp() + (1.0 - c.p) * (-s2).exp())
        }
    }
}

// ---------------------------------------------------------------------------
// conditional measures, continuous families

/// `t = μ*/σ_v = -ε/σ_v - σ_v/σ_u` for the exponential family.
#[inline]
pub fn exponential_t(eps: f64, sigma_v: f64, sigma_u: f64) -> f64 {
    -eps / sigma_v - sigma_v / sigma_u
}

/// Posterior location/scale for the half-normal family: `(A, σ*)` with
/// `A = μ*/σ* = -ε σ*/σ_v²`.
#[inline]
pub fn halfnormal_posterior(eps: f64, sigma_v: f64, sigma_u: f64) -> (f64, f64) {
    let sigma_star = sigma_v * sigma_u / sigma_u.hypot(sigma_v);
    (-eps * sigma_star / (sigma_v * sigma_v), sigma_star)
}

/// `E(u|ε) = σ_v λ(t) + μ*` for the normal-exponential model.
pub fn ti_cond_exponential(eps: f64, sigma_v: f64, sigma_u: f64) -> f64 {
    sigma_v * mills_excess(exponential_t(eps, sigma_v, sigma_u))
}

/// `E(e^{-u}|ε)` for the normal-exponential model.
pub fn te_cond_exponential(eps: f64, sigma_v: f64, sigma_u: f64) -> f64 {
    log_shifted_cdf_ratio(exponential_t(eps, sigma_v, sigma_u), sigma_v).exp()
}

/// `E(u|ε) = σ* λ(A) + μ*` for the normal-half-normal model.
pub fn ti_cond_halfnormal(eps: f64, sigma_v: f64, sigma_u: f64) -> f64 {
    let (a, sigma_star) = halfnormal_posterior(eps, sigma_v, sigma_u);
    sigma_star * mills_excess(a)
}

/// `E(e^{-u}|ε)` for the normal-half-normal model.
pub fn te_cond_halfnormal(eps: f64, sigma_v: f64, sigma_u: f64) -> f64 {
    let (a, sigma_star) = halfnormal_posterior(eps, sigma_v, sigma_u);
    log_shifted_cdf_ratio(a, sigma_star).exp()
}

// ---------------------------------------------------------------------------
// discrete family

/// Posterior probabilities `P(u = s_i | ε)` and the realised support.
pub fn discrete_posterior(eps: f64, sigma_v: f64, comps: &DiscreteComponents, z: f64) -> ([f64; 2], [f64; 2]) {
    let (s1, s2) = comps.support(z);
    let l1 = comps.p.ln() + log_norm_pdf((s1 + eps) / sigma_v);
    let l2 = (-comps.p).ln_1p() + log_norm_pdf((s2 + eps) / sigma_v);
    let m = l1.max(l2);
    let (w1, w2) = ((l1 - m).exp(), (l2 - m).exp());
    let total = w1 + w2;
    ([w1 / total, w2 / total], [s1, s2])
}

pub fn ti_cond_discrete(eps: f64, sigma_v: f64, comps: &DiscreteComponents, z: f64) -> f64 {
    let (w, s) = discrete_posterior(eps, sigma_v, comps, z);
    w[0] * s[0] + w[1] * s[1]
}

/// Observation-specific efficiency for the two-point family:
/// `Σ p_i e^{-s_i} e^{-w_i} / Σ p_i e^{-w_i}`, `w_i = (s_i + ε)²/2σ_v²`.
pub fn te_cond_discrete(eps: f64, sigma_v: f64, comps: &DiscreteComponents, z: f64) -> f64 {
    let (w, s) = discrete_posterior(eps, sigma_v, comps, z);
    w[0] * (-s[0]).exp() + w[1] * (-s[1]).exp()
}

// ---------------------------------------------------------------------------
// family dispatch

fn validate_cond(inefficiency: &FamilyParams, sigma_v: f64, z: f64) -> Result<()> {
    check_sigma_v(sigma_v)?;
    inefficiency.validate()?;
    match inefficiency {
        FamilyParams::Exponential(l) | FamilyParams::HalfNormal(l) => check_sigma_u(l.sigma_u(z)),
        FamilyParams::Discrete(c) => check_discrete(c, z),
    }
}

/// JLMS predictor `E(u|ε)`.
pub fn ti_cond(inefficiency: &FamilyParams, eps: f64, sigma_v: f64, z: f64) -> Result<f64> {
    validate_cond(inefficiency, sigma_v, z)?;
    Ok(match inefficiency {
        FamilyParams::Exponential(l) => ti_cond_exponential(eps, sigma_v, l.sigma_u(z)),
        FamilyParams::HalfNormal(l) => ti_cond_halfnormal(eps, sigma_v, l.sigma_u(z)),
        FamilyParams::Discrete(c) => ti_cond_discrete(eps, sigma_v, c, z),
    })
}

/// Battese–Coelli predictor `E(e^{-u}|ε)`.
pub fn te_cond(inefficiency: &FamilyParams, eps: f64, sigma_v: f64, z: f64) -> Result<f64> {
    validate_cond(inefficiency, sigma_v, z)?;
    Ok(match inefficiency {
        FamilyParams::Exponential(l) => te_cond_exponential(eps, sigma_v, l.sigma_u(z)),
        FamilyParams::HalfNormal(l) => te_cond_halfnormal(eps, sigma_v, l.sigma_u(z)),
        FamilyParams::Discrete(c) => te_cond_discrete(eps, sigma_v, c, z),
    })
}

// ---------------------------------------------------------------------------
// quadrature oracle

/// Functions of `u` supported by [`cond_expectation_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    One,
    U,
    ExpNegU,
}

impl Moment {
    fn eval(self, u: f64) -> f64 {
        match self {
            Moment::One => 1.0,
            Moment::U => u,
            Moment::ExpNegU => (-u).exp(),
        }
    }
}

/// `E(g(u)|ε) = ∫ g(u) f(ε|u) dF(u) / ∫ f(ε|u) dF(u)` by brute-force
/// quadrature over the prior of `u` (finite sums for the discrete family).
///
/// Independent of the closed-form predictors: it only uses the prior
/// density of `u` and the normal density of `v`.
pub fn cond_expectation_oracle(
    inefficiency: &FamilyParams,
    eps: f64,
    sigma_v: f64,
    z: f64,
    g: Moment,
) -> Result<f64> {
    validate_cond(inefficiency, sigma_v, z)?;
    let log_prior: Box<dyn Fn(f64) -> f64> = match *inefficiency {
        FamilyParams::Exponential(l) => {
            let su = l.sigma_u(z);
            Box::new(move |u| -su.ln() - u / su)
        }
        FamilyParams::HalfNormal(l) => {
            let su = l.sigma_u(z);
            Box::new(move |u| std::f64::consts::LN_2 - su.ln() + log_norm_pdf(u / su))
        }
        FamilyParams::Discrete(c) => {
            let (s1, s2) = c.support(z);
            let terms = [(c.p, s1), (1.0 - c.p, s2)];
            let mut num = 0.0;
            let mut den = 0.0;
            let shift = terms
                .iter()
                .map(|&(_, s)| log_norm_pdf((eps + s) / sigma_v))
                .fold(f64::NEG_INFINITY, f64::max);
            for (p, s) in terms {
                let w = p * (log_norm_pdf((eps + s) / sigma_v) - shift).exp();
                num += w * g.eval(s);
                den += w;
            }
            return Ok(num / den);
        }
    };
    let scale = match inefficiency {
        FamilyParams::Exponential(l) | FamilyParams::HalfNormal(l) => l.sigma_u(z),
        FamilyParams::Discrete(_) => unreachable!(),
    };
    let log_joint = |u: f64| log_norm_pdf((eps + u) / sigma_v) + log_prior(u);

    // Locate the bulk of the posterior on a coarse grid.
    let upper = (-eps).max(0.0) + 40.0 * (sigma_v + scale);
    const GRID: usize = 4000;
    let step = upper / GRID as f64;
    let values: Vec<f64> = (0..=GRID).map(|i| log_joint(i as f64 * step)).collect();
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = values.iter().position(|&v| v > peak - 80.0).unwrap_or(0);
    let last = values.iter().rposition(|&v| v > peak - 80.0).unwrap_or(GRID);
    let lo = (first.saturating_sub(1)) as f64 * step;
    let hi = ((last + 1).min(GRID)) as f64 * step + if last == GRID { 40.0 * scale } else { 0.0 };
    let pieces = 16;
    let breaks: Vec<f64> = (0..=pieces).map(|i| lo + (hi - lo) * i as f64 / pieces as f64).collect();

    let opts = QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-13,
        max_subdivisions: 4000,
    };
    let den = integrate_with_breaks(|u| (log_joint(u) - peak).exp(), &breaks, opts)?;
    let num = integrate_with_breaks(|u| g.eval(u) * (log_joint(u) - peak).exp(), &breaks, opts)?;
    Ok(num.value / den.value)
}

// ---------------------------------------------------------------------------
// tables

/// Applies the conditional predictors to every observation.
pub fn efficiency_table(dataset: &Dataset, spec: &ModelSpec, params: &Params) -> Result<Vec<EfficiencyRecord>> {
    params.check_spec(spec)?;
    params.validate()?;
    let eps = residuals(dataset, params)?;
    eps.iter()
        .zip(&dataset.z)
        .map(|(&e, &z)| {
            Ok(EfficiencyRecord {
                eps: e,
                ti_cond: ti_cond(&params.inefficiency, e, params.sigma_v, z)?,
                te_cond: te_cond(&params.inefficiency, e, params.sigma_v, z)?,
                sigma_u: params.inefficiency.sigma_u(z),
            })
        })
        .collect()
}

/// CSV with columns `obs, eps, ti_cond, te_cond, sigma_u` (obs is 1-based).
pub fn write_efficiency_csv<W: Write>(records: &[EfficiencyRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["obs", "eps", "ti_cond", "te_cond", "sigma_u"])?;
    for (i, r) in records.iter().enumerate() {
        wtr.write_record(&[
            (i + 1).to_string(),
            r.eps.to_string(),
            r.ti_cond.to_string(),
            r.te_cond.to_string(),
            r.sigma_u.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ScaleLink;
    use approx::assert_relative_eq;

    fn exp1() -> FamilyParams {
        FamilyParams::Exponential(ScaleLink::constant(1.0))
    }
    fn hn1() -> FamilyParams {
        FamilyParams::HalfNormal(ScaleLink::constant(1.0))
    }
    fn disc(p: f64, u1: f64, u2: f64) -> FamilyParams {
        FamilyParams::Discrete(DiscreteComponents::new(p, u1, u2, false).unwrap())
    }

    #[test]
    fn unconditional_inefficiency() {
        assert_relative_eq!(ti_uncond(&exp1(), 0.0).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(ti_uncond(&hn1(), 0.0).unwrap(), 0.7978845608, max_relative = 1e-10);
        assert_relative_eq!(ti_uncond(&disc(0.9, 0.1, 1.0), 0.0).unwrap(), 0.19, max_relative = 1e-14);
    }

    #[test]
    fn unconditional_efficiency() {
        assert_relative_eq!(te_uncond(&exp1(), 0.0).unwrap(), 0.5, max_relative = 1e-15);
        // 2 (1 - Φ(1)) e^{1/2}
        let hn = 2.0 * (1.0 - 0.8413447460685429) * 0.5f64.exp();
        assert_relative_eq!(te_uncond(&hn1(), 0.0).unwrap(), hn, max_relative = 1e-13);
        assert!((te_uncond(&hn1(), 0.0).unwrap() - 0.52315).abs() < 1e-4);
        let d = 0.9 * (-0.1f64).exp() + 0.1 * (-1.0f64).exp();
        assert_relative_eq!(te_uncond(&disc(0.9, 0.1, 1.0), 0.0).unwrap(), d, max_relative = 1e-15);
        assert!((d - 0.851141).abs() < 1e-5);
    }

    #[test]
    fn uncond_rejects_invalid() {
        let bad = FamilyParams::Exponential(ScaleLink::new(f64::NAN, 0.0));
        assert!(ti_uncond(&bad, 0.0).is_err());
        let bad = FamilyParams::Discrete(DiscreteComponents { p: 1.5, u1: 0.1, u2: 1.0, z_scaled: false });
        assert!(te_uncond(&bad, 0.0).is_err());
    }

    #[test]
    fn conditional_exponential_point() {
        // λ(-1) - 1 and e^{1.5} Φ(-2)/Φ(-1)
        assert_relative_eq!(ti_cond(&exp1(), 0.0, 1.0, 0.0).unwrap(), 0.5251352761609812, max_relative = 1e-13);
        let te = 1.5f64.exp() * 0.022750131948179195 / 0.15865525393145707;
        assert_relative_eq!(te_cond(&exp1(), 0.0, 1.0, 0.0).unwrap(), te, max_relative = 1e-13);
    }

    #[test]
    fn conditional_halfnormal_point() {
        // μ* = 0, σ* = √½: σ* λ(0) and e^{1/4} Φ(-√½)/½
        let s = 0.5f64.sqrt();
        assert_relative_eq!(
            ti_cond(&hn1(), 0.0, 1.0, 0.0).unwrap(),
            s * 0.7978845608028654,
            max_relative = 1e-14
        );
        let te = 0.25f64.exp() * 0.23975006109347674 / 0.5;
        assert_relative_eq!(te_cond(&hn1(), 0.0, 1.0, 0.0).unwrap(), te, max_relative = 1e-13);
    }

    #[test]
    fn conditional_discrete_degenerate() {
        let d = disc(0.5, 0.3, 0.3);
        for eps in [-3.0, 0.0, 2.0] {
            assert_relative_eq!(ti_cond(&d, eps, 1.0, 0.0).unwrap(), 0.3, max_relative = 1e-15);
            assert_relative_eq!(te_cond(&d, eps, 1.0, 0.0).unwrap(), (-0.3f64).exp(), max_relative = 1e-15);
        }
    }

    #[test]
    fn conditional_rejects_bad_inputs() {
        assert!(ti_cond(&exp1(), 0.0, 0.0, 0.0).is_err());
        let z_scaled = FamilyParams::Discrete(DiscreteComponents::new(0.5, 0.1, 1.0, true).unwrap());
        assert!(te_cond(&z_scaled, 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn oracle_normalisation() {
        for fam in [exp1(), hn1(), disc(0.3, 0.2, 2.0)] {
            for eps in [-2.0, 0.5] {
                let v = cond_expectation_oracle(&fam, eps, 0.8, 0.0, Moment::One).unwrap();
                assert_relative_eq!(v, 1.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn oracle_matches_point_value() {
        let v = cond_expectation_oracle(&exp1(), 0.0, 1.0, 0.0, Moment::U).unwrap();
        assert!((v - 0.52514).abs() < 1e-4);
    }

    #[test]
    fn oracle_discrete_is_exact() {
        let d = FamilyParams::Discrete(DiscreteComponents::new(0.8, 0.1, 0.89, true).unwrap());
        for eps in [-8.0, -2.2, 0.0, 1.0] {
            let o = cond_expectation_oracle(&d, eps, 1.0, 8.7, Moment::ExpNegU).unwrap();
            assert_relative_eq!(o, te_cond(&d, eps, 1.0, 8.7).unwrap(), max_relative = 1e-14);
            let o = cond_expectation_oracle(&d, eps, 1.0, 8.7, Moment::U).unwrap();
            assert_relative_eq!(o, ti_cond(&d, eps, 1.0, 8.7).unwrap(), max_relative = 1e-14);
        }
    }

    #[test]
    fn efficiency_table_single_observation() {
        let data = Dataset::new(vec![1.3], vec![vec![0.5]], vec![0.2]).unwrap();
        let p = Params::new(1.0, vec![1.0], 0.7, FamilyParams::HalfNormal(ScaleLink::new(-0.2, 0.5)));
        let table = efficiency_table(&data, &p.spec(), &p).unwrap();
        assert_eq!(table.len(), 1);
        let su = (-0.2f64 + 0.5 * 0.2).exp();
        let eps = residuals(&data, &p).unwrap()[0];
        assert_eq!(table[0].eps, eps);
        assert_eq!(table[0].te_cond, te_cond_halfnormal(eps, 0.7, su));
        assert_eq!(table[0].sigma_u, su);
    }

    #[test]
    fn efficiency_csv_header() {
        let r = EfficiencyRecord { eps: 0.1, ti_cond: 0.2, te_cond: 0.8, sigma_u: 0.5 };
        let mut buf = Vec::new();
        write_efficiency_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "obs,eps,ti_cond,te_cond,sigma_u");
        assert_eq!(text.lines().nth(1).unwrap(), "1,0.1,0.2,0.8,0.5");
    }
}
