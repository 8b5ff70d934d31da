//! Standard-normal primitives and Mills-ratio functions.
//!
//! `Φ` is evaluated through a complementary error function ported from the
//! FreeBSD/fdlibm `s_erf.c` rational approximations (error below one ulp on
//! the body). Below [`TAIL_SWITCH`] the lower tail is handled entirely in log
//! space through the continued fraction of the upper-tail Mills ratio
//! `R(a) = (1 - Φ(a)) / φ(a)`, so `ln Φ(x)` and `λ(x) = φ(x)/Φ(x)` stay
//! accurate down to `x = -40` and beyond.
//!
//! Besides `λ` itself the module exposes two derived quantities that are
//! needed in cancellation-free form by the predictors and marginal effects:
//!
//! - [`mills_excess`]: `λ(x) + x`, the scaled conditional mean `E(u|ε)/σ`;
//! - [`truncated_variance`]: `1 + λ'(x) = 1 - xλ(x) - λ(x)²`.

// Coefficients are kept digit for digit as published.
#![allow(clippy::excessive_precision)]

use std::f64::consts::FRAC_1_SQRT_2;

/// `1/√(2π)`.
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// `ln √(2π)`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the lower tail of `Φ` is evaluated through the
/// Mills-ratio continued fraction instead of `erfc`.
pub const TAIL_SWITCH: f64 = -5.0;

// fdlibm s_erf.c coefficients.
const ERX: f64 = 8.45062911510467529297e-01;
const PP0: f64 = 1.28379167095512558561e-01;
const PP1: f64 = -3.25042107247001499370e-01;
const PP2: f64 = -2.84817495755985104766e-02;
const PP3: f64 = -5.77027029648944159157e-03;
const PP4: f64 = -2.37630166566501626084e-05;
const QQ1: f64 = 3.97917223959155352819e-01;
const QQ2: f64 = 6.50222499887672944485e-02;
const QQ3: f64 = 5.08130628187576562776e-03;
const QQ4: f64 = 1.32494738004321644526e-04;
const QQ5: f64 = -3.96022827877536812320e-06;
const PA0: f64 = -2.36211856075265944077e-03;
const PA1: f64 = 4.14856118683748331666e-01;
const PA2: f64 = -3.72207876035701323847e-01;
const PA3: f64 = 3.18346619901161753674e-01;
const PA4: f64 = -1.10894694282396677476e-01;
const PA5: f64 = 3.54783043256182359371e-02;
const PA6: f64 = -2.16637559486879084300e-03;
const QA1: f64 = 1.06420880400844228286e-01;
const QA2: f64 = 5.40397917702171048937e-01;
const QA3: f64 = 7.18286544141962662868e-02;
const QA4: f64 = 1.26171219808761642112e-01;
const QA5: f64 = 1.36370839120290507362e-02;
const QA6: f64 = 1.19844998467991074170e-02;
const RA0: f64 = -9.86494403484714822705e-03;
const RA1: f64 = -6.93858572707181764372e-01;
const RA2: f64 = -1.05586262253232909814e+01;
const RA3: f64 = -6.23753324503260060396e+01;
const RA4: f64 = -1.62396669462573470355e+02;
const RA5: f64 = -1.84605092906711035994e+02;
const RA6: f64 = -8.12874355063065934246e+01;
const RA7: f64 = -9.81432934416914548592e+00;
const SA1: f64 = 1.96512716674392571292e+01;
const SA2: f64 = 1.37657754143519042600e+02;
const SA3: f64 = 4.34565877475229228821e+02;
const SA4: f64 = 6.45387271733267880336e+02;
const SA5: f64 = 4.29008140027567833386e+02;
const SA6: f64 = 1.08635005541779435134e+02;
const SA7: f64 = 6.57024977031928170135e+00;
const SA8: f64 = -6.04244152148580987438e-02;
const RB0: f64 = -9.86494292470009928597e-03;
const RB1: f64 = -7.99283237680523006574e-01;
const RB2: f64 = -1.77579549177547519889e+01;
const RB3: f64 = -1.60636384855821916062e+02;
const RB4: f64 = -6.37566443368389627722e+02;
const RB5: f64 = -1.02509513161107724954e+03;
const RB6: f64 = -4.83519191608651397019e+02;
const SB1: f64 = 3.03380607434824582924e+01;
const SB2: f64 = 3.25792512996573918826e+02;
const SB3: f64 = 1.53672958608443695994e+03;
const SB4: f64 = 3.19985821950859553908e+03;
const SB5: f64 = 2.55305040643316442583e+03;
const SB6: f64 = 4.74528541206955367215e+02;
const SB7: f64 = -2.24409524465858183362e+01;

/// `erfc` for `|x| >= 0.84375` and `x < 28`; returns the value for `|x|`.
fn erfc_tail(ax: f64) -> f64 {
    if ax < 1.25 {
        let s = ax - 1.0;
        let p = PA0 + s * (PA1 + s * (PA2 + s * (PA3 + s * (PA4 + s * (PA5 + s * PA6)))));
        let q = 1.0 + s * (QA1 + s * (QA2 + s * (QA3 + s * (QA4 + s * (QA5 + s * QA6)))));
        return 1.0 - ERX - p / q;
    }
    let s = 1.0 / (ax * ax);
    let (r, big_s) = if ax < 1.0 / 0.35 {
        (
            RA0 + s * (RA1 + s * (RA2 + s * (RA3 + s * (RA4 + s * (RA5 + s * (RA6 + s * RA7)))))),
            1.0 + s
                * (SA1
                    + s * (SA2 + s * (SA3 + s * (SA4 + s * (SA5 + s * (SA6 + s * (SA7 + s * SA8))))))),
        )
    } else {
        (
            RB0 + s * (RB1 + s * (RB2 + s * (RB3 + s * (RB4 + s * (RB5 + s * RB6))))),
            1.0 + s * (SB1 + s * (SB2 + s * (SB3 + s * (SB4 + s * (SB5 + s * (SB6 + s * SB7)))))),
        )
    };
    // split ax so that -ax*ax is formed without rounding error
    let z = f64::from_bits(ax.to_bits() & 0xffff_ffff_0000_0000);
    (-z * z - 0.5625).exp() * ((z - ax) * (z + ax) + r / big_s).exp() / ax
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    if ax < 0.84375 {
        if ax < 1.0 / (1u64 << 56) as f64 {
            return 1.0 - x;
        }
        let z = x * x;
        let r = PP0 + z * (PP1 + z * (PP2 + z * (PP3 + z * PP4)));
        let s = 1.0 + z * (QQ1 + z * (QQ2 + z * (QQ3 + z * (QQ4 + z * QQ5))));
        let y = r / s;
        if x < 0.25 {
            return 1.0 - (x + x * y);
        }
        return 0.5 - (x - 0.5 + x * y);
    }
    if ax < 28.0 {
        let t = erfc_tail(ax);
        return if x < 0.0 { 2.0 - t } else { t };
    }
    if x < 0.0 {
        2.0
    } else {
        0.0
    }
}

/// Standard normal density `φ(x)`.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `ln φ(x)`.
#[inline]
pub fn log_norm_pdf(x: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * x * x
}

/// Standard normal distribution function `Φ(x)`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Continued-fraction tail `c(a) = 1/(a + 2/(a + 3/(a + ...)))`.
///
/// For `a > 0` the upper-tail Mills ratio is `R(a) = 1/(a + c(a))`, hence
/// `λ(-a) = a + c(a)` and `λ(-a) - a = c(a)` without cancellation.
/// Evaluated by the modified Lentz method; converges quickly for `a >= 5`.
fn mills_tail(a: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-17;
    let mut f = TINY;
    let mut c = f;
    let mut d = 0.0;
    for j in 1..=500 {
        let aj = j as f64;
        d = a + aj * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = a + aj / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    f
}

/// `ln R(a)` for the upper-tail Mills ratio `R(a) = (1 - Φ(a))/φ(a)`.
///
/// Valid for all finite `a`; the continued fraction is used for `a >= 5`.
pub fn log_mills_ratio(a: f64) -> f64 {
    if a >= -TAIL_SWITCH {
        -(a + mills_tail(a)).ln()
    } else {
        log_norm_cdf(-a) - log_norm_pdf(a)
    }
}

/// `ln Φ(x)`, accurate in the far lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x <= TAIL_SWITCH {
        let a = -x;
        log_norm_pdf(a) - (a + mills_tail(a)).ln()
    } else if x < 0.0 {
        norm_cdf(x).ln()
    } else {
        (-norm_cdf(-x)).ln_1p()
    }
}

/// Inverse Mills ratio `λ(x) = φ(x)/Φ(x)`.
///
/// Underflows to zero for `x` beyond roughly 38.5, where `φ(x)` is below the
/// smallest subnormal double.
pub fn mills_lambda(x: f64) -> f64 {
    if x <= TAIL_SWITCH {
        -x + mills_tail(-x)
    } else {
        norm_pdf(x) / norm_cdf(x)
    }
}

/// `λ(x) + x`, strictly positive and increasing.
pub fn mills_excess(x: f64) -> f64 {
    if x <= TAIL_SWITCH {
        mills_tail(-x)
    } else {
        mills_lambda(x) + x
    }
}

/// `1 + λ'(x) = 1 - xλ(x) - λ(x)²`, the variance of a standard normal
/// truncated to `(-∞, x]`; lies in `(0, 1)`.
pub fn truncated_variance(x: f64) -> f64 {
    1.0 - mills_lambda(x) * mills_excess(x)
}

/// `λ'(x) = -xλ(x) - λ(x)²`, in `(-1, 0)`.
pub fn mills_lambda_prime(x: f64) -> f64 {
    -mills_lambda(x) * mills_excess(x)
}

/// `ln(Φ(x)/Φ(y))` without forming either probability.
pub fn log_cdf_ratio(x: f64, y: f64) -> f64 {
    if x <= TAIL_SWITCH && y <= TAIL_SWITCH {
        0.5 * (y - x) * (y + x) + log_mills_ratio(-x) - log_mills_ratio(-y)
    } else {
        log_norm_cdf(x) - log_norm_cdf(y)
    }
}

/// `ln[exp(-s·t + s²/2) · Φ(t - s) / Φ(t)]` for `s > 0`.
///
/// This is the log of the conditional efficiency `E(e^{-u}|ε)` shared by the
/// exponential (`t = μ*/σ_v, s = σ_v`) and half-normal
/// (`t = μ*/σ*, s = σ*`) families.
pub fn log_shifted_cdf_ratio(t: f64, s: f64) -> f64 {
    let lower = t - s;
    if lower <= TAIL_SWITCH {
        // exp(-st + s²/2) φ(t - s) = φ(t), so the Gaussian parts cancel.
        let head = log_norm_pdf(t) + log_mills_ratio(-lower);
        if t <= TAIL_SWITCH {
            log_mills_ratio(-lower) - log_mills_ratio(-t)
        } else {
            head - log_norm_cdf(t)
        }
    } else {
        -s * t + 0.5 * s * s + log_norm_cdf(lower) - log_norm_cdf(t)
    }
}

/// Upper tail `1 - Φ(x)`.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}
