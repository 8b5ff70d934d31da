//! Shared fixtures for the benchmarks.

use sfa_core::simulate::gen_generic;
use sfa_core::{Dataset, DiscreteComponents, FamilyParams, Params, ScaleLink};

/// Parameters used to simulate benchmark samples, one per family.
pub fn truth(family: &str) -> Params {
    let inefficiency = match family {
        "exponential" => FamilyParams::Exponential(ScaleLink::new(-1.0, 0.3)),
        "half-normal" => FamilyParams::HalfNormal(ScaleLink::new(-0.5, 0.3)),
        "discrete" => FamilyParams::Discrete(DiscreteComponents {
            p: 0.7,
            u1: 0.1,
            u2: 0.6,
            z_scaled: true,
        }),
        other => panic!("unknown family {other}"),
    };
    Params::new(1.0, vec![1.0], 0.5, inefficiency)
}

/// Simulated sample of size `n` for `family`.
pub fn sample(family: &str, n: usize) -> (Dataset, Params) {
    let p = truth(family);
    let s = gen_generic(&p, n, 1).expect("valid benchmark parameters");
    (s.dataset, p)
}
