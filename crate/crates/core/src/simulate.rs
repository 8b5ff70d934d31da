//! Seeded data-generating processes.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64`. Draws are taken observation by observation in a fixed
//! order, so a seed identifies a sample. Uniforms are half-open `[a, b)`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfaError};
use crate::models::{Dataset, DiscreteComponents, FamilyParams, Params};
use crate::predictors::{te_cond, te_cond_discrete};

/// Name of the random-number algorithm recorded in sidecars.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.3, seed_from_u64)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSample {
    pub dataset: Dataset,
    pub u_true: Vec<f64>,
    pub v_true: Vec<f64>,
    /// True efficiency: unconditional `E(e^{-u})` at `z` for the mean-TE
    /// design, `E(e^{-u}|ε)` under the true model otherwise.
    pub te_true: Vec<f64>,
    pub sigma_u_true: Vec<f64>,
    pub eps_true: Vec<f64>,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub seed: u64,
    pub dgp: String,
}

/// Sidecar metadata written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub dgp: String,
    pub seed: u64,
    pub n: usize,
    pub rng: String,
    pub beta0: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanTeConfig {
    pub n: usize,
    /// Standard deviation of `v`; the default reads `N(0, 0.25)` as a variance.
    pub sigma_v: f64,
}

impl Default for MeanTeConfig {
    fn default() -> Self {
        Self { n: 1000, sigma_v: 0.5 }
    }
}

/// Probability of the low support point in the mean-TE design.
pub fn mean_te_p(z: f64) -> f64 {
    0.9 + 0.001 * z
}

/// `(u1, u2)` of the mean-TE design at `z`.
pub fn mean_te_support(z: f64) -> (f64, f64) {
    (0.1, 1.0 + 0.2 * z)
}

/// `E(u)` of the mean-TE design.
pub fn mean_te_mean_u(z: f64) -> f64 {
    let p = mean_te_p(z);
    let (u1, u2) = mean_te_support(z);
    u1 * p + u2 * (1.0 - p)
}

/// Standard deviation of `u` in the mean-TE design.
pub fn mean_te_sigma_u(z: f64) -> f64 {
    let p = mean_te_p(z);
    let (u1, u2) = mean_te_support(z);
    (p * (1.0 - p)).sqrt() * (u2 - u1)
}

/// `E(e^{-u})` of the mean-TE design.
pub fn mean_te_te(z: f64) -> f64 {
    let p = mean_te_p(z);
    let (u1, u2) = mean_te_support(z);
    p * (-u1).exp() + (1.0 - p) * (-u2).exp()
}

fn uniform(rng: &mut ChaCha20Rng, a: f64, b: f64) -> f64 {
    a + (b - a) * rng.gen::<f64>()
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Design with a two-point inefficiency whose mean and efficiency both rise
/// with `z` on the upper part of `[9, 17]`; `y = 1 + x + v - u`.
pub fn gen_mean_te(seed: u64) -> SimulatedSample {
    gen_mean_te_with(&MeanTeConfig::default(), seed)
}

pub fn gen_mean_te_with(config: &MeanTeConfig, seed: u64) -> SimulatedSample {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut s = Builder::new(config.n, "mean-te", seed, 1.0, vec![1.0]);
    for _ in 0..config.n {
        let x = uniform(&mut rng, 2.0, 7.0);
        let z = uniform(&mut rng, 9.0, 17.0);
        let v = config.sigma_v * normal(&mut rng);
        let r: f64 = rng.gen();
        let (u1, u2) = mean_te_support(z);
        let u = if r < mean_te_p(z) { u1 } else { u2 };
        s.push(vec![x], z, v, u, mean_te_te(z), mean_te_sigma_u(z));
    }
    s.finish()
}

/// True components of the observation-TE design.
pub fn obs_te_components() -> DiscreteComponents {
    DiscreteComponents {
        p: 0.8,
        u1: 0.1,
        u2: 0.89,
        z_scaled: true,
    }
}

/// Noise scale of the observation-TE design.
pub const OBS_TE_SIGMA_V: f64 = 1.0;

/// Design with `u = z u0`, `u0 ∈ {0.1, 0.89}` with probabilities
/// `(0.8, 0.2)`; `te_true` is the posterior efficiency at the realised `ε`.
pub fn gen_obs_te(seed: u64) -> SimulatedSample {
    let comps = obs_te_components();
    let n = 1000;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut s = Builder::new(n, "obs-te", seed, 1.0, vec![1.0]);
    for _ in 0..n {
        let x = uniform(&mut rng, 2.0, 2.3);
        let v = OBS_TE_SIGMA_V * normal(&mut rng);
        let z = uniform(&mut rng, 8.0, 9.4);
        let r: f64 = rng.gen();
        let u = z * if r < comps.p { comps.u1 } else { comps.u2 };
        let te = te_cond_discrete(v - u, OBS_TE_SIGMA_V, &comps, z);
        s.push(vec![x], z, v, u, te, comps.sigma_u(z));
    }
    s.finish()
}

/// Ranges of the regressors drawn by [`gen_generic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenericDesign {
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
}

impl Default for GenericDesign {
    fn default() -> Self {
        Self {
            x_range: (2.0, 7.0),
            z_range: (0.5, 4.5),
        }
    }
}

/// Sample from `params` with the default design.
pub fn gen_generic(params: &Params, n: usize, seed: u64) -> Result<SimulatedSample> {
    gen_generic_with(params, &GenericDesign::default(), n, seed)
}

/// Sample from `params`: exponential `u` by inverse CDF, half-normal `u` as
/// `σ_u |N(0,1)|`, two-point `u` by thresholding a uniform.
pub fn gen_generic_with(params: &Params, design: &GenericDesign, n: usize, seed: u64) -> Result<SimulatedSample> {
    params.validate()?;
    if n == 0 {
        return Err(SfaError::InvalidParameter("n must be at least 1".into()));
    }
    let (xa, xb) = design.x_range;
    let (za, zb) = design.z_range;
    if !(xa <= xb && za <= zb) {
        return Err(SfaError::InvalidParameter("empty design range".into()));
    }
    if let FamilyParams::Discrete(c) = &params.inefficiency {
        if c.z_scaled && !(za > 0.0) {
            return Err(SfaError::InvalidParameter("z-scaled support needs a positive z range".into()));
        }
    }
    let k = params.beta.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut s = Builder::new(n, "generic", seed, params.beta0, params.beta.clone());
    for _ in 0..n {
        let x: Vec<f64> = (0..k).map(|_| uniform(&mut rng, xa, xb)).collect();
        let z = uniform(&mut rng, za, zb);
        let v = params.sigma_v * normal(&mut rng);
        let u = match &params.inefficiency {
            FamilyParams::Exponential(l) => -l.sigma_u(z) * (-rng.gen::<f64>()).ln_1p(),
            FamilyParams::HalfNormal(l) => l.sigma_u(z) * normal(&mut rng).abs(),
            FamilyParams::Discrete(c) => {
                let (s1, s2) = c.support(z);
                if rng.gen::<f64>() < c.p {
                    s1
                } else {
                    s2
                }
            }
        };
        let te = te_cond(&params.inefficiency, v - u, params.sigma_v, z)?;
        s.push(x, z, v, u, te, params.inefficiency.sigma_u(z));
    }
    Ok(s.finish())
}

struct Builder {
    sample: SimulatedSample,
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    z: Vec<f64>,
}

impl Builder {
    fn new(n: usize, dgp: &str, seed: u64, beta0: f64, beta: Vec<f64>) -> Self {
        Self {
            sample: SimulatedSample {
                dataset: Dataset { y: vec![], x: vec![], z: vec![] },
                u_true: Vec::with_capacity(n),
                v_true: Vec::with_capacity(n),
                te_true: Vec::with_capacity(n),
                sigma_u_true: Vec::with_capacity(n),
                eps_true: Vec::with_capacity(n),
                beta0,
                beta,
                seed,
                dgp: dgp.to_string(),
            },
            y: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, x: Vec<f64>, z: f64, v: f64, u: f64, te: f64, sigma_u: f64) {
        let s = &mut self.sample;
        self.y.push(frontier(s.beta0, &s.beta, &x) + v - u);
        self.x.push(x);
        self.z.push(z);
        s.u_true.push(u);
        s.v_true.push(v);
        s.te_true.push(te);
        s.sigma_u_true.push(sigma_u);
        s.eps_true.push(v - u);
    }

    fn finish(mut self) -> SimulatedSample {
        self.sample.dataset = Dataset { y: self.y, x: self.x, z: self.z };
        self.sample
    }
}

/// `β0 + x'β` in the order used to build `y`.
pub fn frontier(beta0: f64, beta: &[f64], x: &[f64]) -> f64 {
    beta0 + beta.iter().zip(x).map(|(b, xi)| b * xi).sum::<f64>()
}

impl SimulatedSample {
    /// Largest `|y - (β0 + x'β + v - u)|` over the sample.
    pub fn reconstruction_error(&self) -> f64 {
        let d = &self.dataset;
        (0..d.len())
            .map(|i| (d.y[i] - (frontier(self.beta0, &self.beta, &d.x[i]) + self.v_true[i] - self.u_true[i])).abs())
            .fold(0.0, f64::max)
    }

    pub fn meta(&self) -> SampleMeta {
        SampleMeta {
            dgp: self.dgp.clone(),
            seed: self.seed,
            n: self.dataset.len(),
            rng: RNG_ALGORITHM.to_string(),
            beta0: self.beta0,
            beta: self.beta.clone(),
        }
    }

    /// Dataset columns followed by `u_true, te_true, sigma_u_true, eps_true`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let d = &self.dataset;
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "z".to_string()];
        header.extend((1..=d.n_inputs()).map(|j| format!("x{j}")));
        header.extend(["u_true", "te_true", "sigma_u_true", "eps_true"].map(String::from));
        wtr.write_record(&header)?;
        for i in 0..d.len() {
            let mut row = vec![d.y[i].to_string(), d.z[i].to_string()];
            row.extend(d.x[i].iter().map(f64::to_string));
            row.extend(
                [self.u_true[i], self.te_true[i], self.sigma_u_true[i], self.eps_true[i]].map(|v| v.to_string()),
            );
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `{stem}.csv` and `{stem}.json` into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(dir.join(format!("{stem}.json")), meta + "\n")?;
        Ok(())
    }
}
