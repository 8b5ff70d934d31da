//! Closed-form predictors and densities against brute-force integrals.

use sfa_core::models::{density_eps_exponential, density_eps_halfnormal, log_density};
use sfa_core::predictors::*;
use sfa_core::quadrature::{integrate_with_breaks, QuadOptions};
use sfa_core::specfun::norm_pdf;
use sfa_core::{DiscreteComponents, FamilyParams, ScaleLink};

const EPS: [f64; 6] = [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0];
const SV: [f64; 3] = [0.5, 1.0, 2.0];
const SU: [f64; 4] = [0.1, 0.5, 1.0, 2.0];

fn continuous(su: f64) -> [FamilyParams; 2] {
    [
        FamilyParams::Exponential(ScaleLink::constant(su)),
        FamilyParams::HalfNormal(ScaleLink::constant(su)),
    ]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn closed_forms_match_quadrature_on_grid() {
    let mut points = 0;
    for eps in EPS {
        for sv in SV {
            for su in SU {
                for fam in continuous(su) {
                    let ti = ti_cond(&fam, eps, sv, 0.0).unwrap();
                    let te = te_cond(&fam, eps, sv, 0.0).unwrap();
                    let ti_q = cond_expectation_oracle(&fam, eps, sv, 0.0, Moment::U).unwrap();
                    let te_q = cond_expectation_oracle(&fam, eps, sv, 0.0, Moment::ExpNegU).unwrap();
                    assert!(rel(ti, ti_q) < 1e-6, "{fam:?} eps {eps} sv {sv}: ti {ti} vs {ti_q}");
                    assert!(rel(te, te_q) < 1e-6, "{fam:?} eps {eps} sv {sv}: te {te} vs {te_q}");
                    points += 1;
                }
            }
        }
    }
    assert_eq!(points, 144);
}

#[test]
fn quoted_point_values() {
    let e = FamilyParams::Exponential(ScaleLink::constant(1.0));
    let h = FamilyParams::HalfNormal(ScaleLink::constant(1.0));
    assert!((ti_cond(&e, 0.0, 1.0, 0.0).unwrap() - 0.52514).abs() < 1e-4);
    assert!((ti_cond(&h, 0.0, 1.0, 0.0).unwrap() - 0.56419).abs() < 1e-4);
    assert!((te_cond(&e, 0.0, 1.0, 0.0).unwrap() - 0.642548).abs() < 1e-4);
    assert!((te_cond(&h, 0.0, 1.0, 0.0).unwrap() - 0.615691).abs() < 1e-4);
}

/// `∫ φ((ε + u)/σ_v)/σ_v f_u(u) du` on `[0, ∞)`.
fn convolution(eps: f64, sv: f64, su: f64, half_normal: bool) -> f64 {
    let prior = |u: f64| {
        if half_normal {
            2.0 * norm_pdf(u / su) / su
        } else {
            (-u / su).exp() / su
        }
    };
    let upper = (-eps).max(0.0) + 40.0 * (sv + su);
    let breaks: Vec<f64> = (0..=64).map(|i| upper * f64::from(i) / 64.0).collect();
    let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-13, max_subdivisions: 4000 };
    integrate_with_breaks(|u| norm_pdf((eps + u) / sv) / sv * prior(u), &breaks, opts)
        .unwrap()
        .value
}

#[test]
fn densities_match_convolution() {
    for eps in [-4.0, -1.5, 0.0, 0.7, 2.0] {
        for (sv, su) in [(0.5, 0.3), (1.0, 1.0), (2.0, 0.5), (0.7, 2.0)] {
            let e = density_eps_exponential(eps, sv, su).unwrap();
            let h = density_eps_halfnormal(eps, sv, su).unwrap();
            assert!(rel(e, convolution(eps, sv, su, false)) < 1e-7, "exp eps {eps} sv {sv} su {su}");
            assert!(rel(h, convolution(eps, sv, su, true)) < 1e-7, "hn eps {eps} sv {sv} su {su}");
        }
    }
}

#[test]
fn jensen_on_grid() {
    for eps in EPS {
        for sv in SV {
            for su in SU {
                for fam in continuous(su) {
                    let ti = ti_cond(&fam, eps, sv, 0.0).unwrap();
                    let te = te_cond(&fam, eps, sv, 0.0).unwrap();
                    assert!(te > (-ti).exp(), "{fam:?} {eps} {sv}");
                    assert!(ti >= 0.0 && te > 0.0 && te <= 1.0);
                }
            }
        }
    }
}

#[test]
fn unconditional_efficiency_decreasing() {
    let grid: Vec<f64> = (1..=500).map(|i| 0.01 * f64::from(i)).collect();
    for w in grid.windows(2) {
        assert!(te_uncond_exponential(w[1]) < te_uncond_exponential(w[0]));
        assert!(te_uncond_halfnormal(w[1]) < te_uncond_halfnormal(w[0]), "at {}", w[1]);
    }
}

#[test]
fn vanishing_inefficiency_limit() {
    for eps in [-3.0, -1.0, 0.0, 1.0, 3.0] {
        for sv in SV {
            for fam in continuous(1e-6) {
                assert!((te_cond(&fam, eps, sv, 0.0).unwrap() - 1.0).abs() < 1e-4);
                assert!(ti_cond(&fam, eps, sv, 0.0).unwrap().abs() < 1e-4);
            }
        }
    }
}

#[test]
fn discrete_efficiency_between_support_bounds() {
    let c = DiscreteComponents::new(0.8, 0.1, 0.89, true).unwrap();
    let fam = FamilyParams::Discrete(c);
    for z in [8.0, 8.7, 9.4] {
        for i in 0..=120 {
            let eps = -12.0 + 0.1 * f64::from(i);
            let te = te_cond(&fam, eps, 1.0, z).unwrap();
            assert!(te >= (-0.89 * z).exp() && te <= (-0.1 * z).exp());
        }
    }
}

#[test]
fn extreme_arguments_stay_finite() {
    // t = -ε/σ_v - σ_v/σ_u reaches -300 and below.
    for (eps, sv, su) in [(300.0, 1.0, 1.0), (0.0, 1.0, 1e-8), (-50.0, 0.5, 1e-8), (500.0, 2.0, 5.0)] {
        for fam in continuous(su) {
            let te = te_cond(&fam, eps, sv, 0.0).unwrap();
            let ti = ti_cond(&fam, eps, sv, 0.0).unwrap();
            assert!(te.is_finite() && te > 0.0 && te <= 1.0, "{fam:?} {eps}: {te}");
            assert!(ti.is_finite() && ti >= 0.0);
            assert!(log_density(eps, sv, &fam, 0.0).is_finite());
        }
    }
}
