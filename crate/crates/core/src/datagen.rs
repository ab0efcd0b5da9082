//! Seeded synthetic scenarios and the discrete toy model.
//!
//! All generators draw from a `ChaCha20Rng` seeded with [`seeds::data_rng`].
//! Normals use the Ziggurat sampler and Beta variates Cheng's rejection
//! algorithms, both from `rand_distr`. Within a dataset every point draws its
//! covariate (all coordinates) before its noise; all P points are drawn before
//! all Q points.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::cmmd::DiscreteConditionalModel;
use crate::doubly_robust::PropensityModel;
use crate::embeddings::PairedDataset;
use crate::error::{CmmdError, Result};
use crate::kernels::Point;
use crate::seeds::data_rng;

/// Noise scale shared by the scalar scenarios.
pub const NOISE_SCALE: f64 = 0.5;

/// Population squared CMMD₁ of the `dr` alternative under a linear outcome kernel.
pub const DR_CMMD1_TRUTH: f64 = 0.0591796875;

/// A conditional mean `x ↦ E[Y | X = x]` (scalar covariate).
pub type CondMean = fn(f64) -> f64;

pub fn sine_mean(x: f64) -> f64 {
    (-0.5 * x * x).exp() * (2.0 * x).sin()
}

pub fn linear_mean(x: f64) -> f64 {
    x
}

pub fn beta_p_mean(x: f64) -> f64 {
    (PI * x).sin()
}

pub fn dr_p_mean(x: f64) -> f64 {
    (4.0 * PI * x).cos() + 0.5 * x * x
}

pub fn dr_q_mean(x: f64) -> f64 {
    (4.0 * PI * x).cos()
}

/// Beta-setting conditional mean for Q, parameterized by θ.
pub fn beta_q_mean(setting: u8, theta: f64, x: f64) -> f64 {
    match setting {
        1 => (1.0 - theta) * (PI * x).sin() + theta * (3.0 * x - 0.5),
        _ => (1.0 - theta) * (PI * x).sin() + 0.5 * theta,
    }
}

fn noise<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    scale * z
}

fn scalar_sample<R: Rng>(
    rng: &mut R,
    n: usize,
    mut covariate: impl FnMut(&mut R) -> f64,
    mean: impl Fn(f64) -> f64,
) -> Result<PairedDataset> {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = covariate(rng);
        let e = noise(rng, NOISE_SCALE);
        xs.push(x);
        ys.push(mean(x) + e);
    }
    PairedDataset::from_scalars(&xs, &ys)
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(CmmdError::invalid("sample size must be at least 1"));
    }
    Ok(())
}

/// Conditional means `(P, Q)` of the sine-vs-linear scenario.
pub fn sine_vs_linear_means(null: bool) -> (CondMean, CondMean) {
    (sine_mean, if null { sine_mean } else { linear_mean })
}

/// `dr` scenario conditional means `(P, Q)`.
pub fn dr_means(null: bool) -> (CondMean, CondMean) {
    (dr_p_mean, if null { dr_p_mean } else { dr_q_mean })
}

/// `X ~ N(θ, 3/4)` for both samples; `Y = exp(-X²/2) sin(2X) + ε`, `Z = X + ε`.
/// With `null`, Z follows Y's conditional.
pub fn gen_sine_vs_linear(theta: f64, n: usize, seed: u64, null: bool) -> Result<(PairedDataset, PairedDataset)> {
    check_n(n)?;
    let mut rng = data_rng(seed);
    let cov = Normal::new(theta, 0.75f64.sqrt()).map_err(|e| CmmdError::invalid(e.to_string()))?;
    let (mp, mq) = sine_vs_linear_means(null);
    let p = scalar_sample(&mut rng, n, |r| cov.sample(r), mp)?;
    let q = scalar_sample(&mut rng, n, |r| cov.sample(r), mq)?;
    Ok((p, q))
}

/// Noise scale of coordinate `d` (1-based) in the multidimensional scenario.
pub fn multidim_noise_scale(d: usize) -> f64 {
    0.45 + 0.05 * d as f64
}

/// `D` independent copies of the sine-vs-linear conditionals with
/// `X_d ~ N(1/2, 3/4)` and noise scale `0.45 + 0.05 d`.
pub fn gen_multidim(dim: usize, n: usize, seed: u64, null: bool) -> Result<(PairedDataset, PairedDataset)> {
    check_n(n)?;
    if dim == 0 {
        return Err(CmmdError::invalid("dimension must be at least 1"));
    }
    let mut rng = data_rng(seed);
    let cov = Normal::new(0.5, 0.75f64.sqrt()).map_err(|e| CmmdError::invalid(e.to_string()))?;
    let (mp, mq) = sine_vs_linear_means(null);
    let mut draw = |mean: CondMean| -> Result<PairedDataset> {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..dim).map(|_| cov.sample(&mut rng)).collect();
            let y: Vec<f64> = (1..=dim).map(|d| mean(x[d - 1]) + noise(&mut rng, multidim_noise_scale(d))).collect();
            xs.push(Point::new(x)?);
            ys.push(Point::new(y)?);
        }
        PairedDataset::new(xs, ys)
    };
    let p = draw(mp)?;
    let q = draw(mq)?;
    Ok((p, q))
}

/// `X ~ Beta(4, 4)`, `Y = sin(πX) + ε`, Z according to `setting` (1 or 2).
pub fn gen_beta_settings(setting: u8, theta: f64, n: usize, seed: u64) -> Result<(PairedDataset, PairedDataset)> {
    check_n(n)?;
    if setting != 1 && setting != 2 {
        return Err(CmmdError::invalid(format!("beta setting must be 1 or 2, got {setting}")));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(CmmdError::invalid(format!("theta must lie in [0, 1], got {theta}")));
    }
    let mut rng = data_rng(seed);
    let cov = Beta::new(4.0, 4.0).map_err(|e| CmmdError::invalid(e.to_string()))?;
    let p = scalar_sample(&mut rng, n, |r| cov.sample(r), beta_p_mean)?;
    let q = scalar_sample(&mut rng, n, |r| cov.sample(r), |x| beta_q_mean(setting, theta, x))?;
    Ok((p, q))
}

/// `X ~ U(0, 1)` with `Y = cos(4πX) + X²/2 + ε`; `X' ~ Beta(1/2, 1/2)` with
/// `Z = cos(4πX') + ε`. With `null`, Z follows Y's conditional.
pub fn gen_dr_scenario(n: usize, seed: u64, null: bool) -> Result<(PairedDataset, PairedDataset)> {
    check_n(n)?;
    let mut rng = data_rng(seed);
    let arcsine = Beta::new(0.5, 0.5).map_err(|e| CmmdError::invalid(e.to_string()))?;
    let (mp, mq) = dr_means(null);
    let p = scalar_sample(&mut rng, n, |r| r.random::<f64>(), mp)?;
    let q = scalar_sample(&mut rng, n, |r| arcsine.sample(r), mq)?;
    Ok((p, q))
}

fn unit_interval(x: &Point) -> Result<f64> {
    if x.dim() != 1 {
        return Err(CmmdError::DimensionMismatch { expected: 1, got: x.dim() });
    }
    let v = x[0];
    if !(v > 0.0 && v < 1.0) {
        return Err(CmmdError::Domain(format!("propensity needs x in (0, 1), got {v}")));
    }
    Ok(v)
}

/// Propensity of the `dr` scenario with equal sample sizes:
/// `p / (p + q)` for the uniform and arcsine densities.
pub fn analytic_propensity_dr(x: &Point) -> Result<f64> {
    let v = unit_interval(x)?;
    Ok(1.0 / (1.0 + 1.0 / (PI * (v * (1.0 - v)).sqrt())))
}

/// The same propensity with positive exponents, kept for comparison.
pub fn printed_propensity_dr(x: &Point) -> Result<f64> {
    let v = unit_interval(x)?;
    Ok(1.0 / (1.0 + (v * (1.0 - v)).sqrt() / PI))
}

pub const PROPENSITY_DR: &str = "uniform_vs_beta_half";
pub const PROPENSITY_DR_PRINTED: &str = "uniform_vs_beta_half_printed";

/// Built-in propensity functions by name.
pub fn named_propensity(name: &str) -> Option<fn(&Point) -> Result<f64>> {
    match name {
        PROPENSITY_DR => Some(analytic_propensity_dr),
        PROPENSITY_DR_PRINTED => Some(printed_propensity_dr),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum Scenario {
    SineVsLinear {
        theta: f64,
        #[serde(default)]
        null: bool,
    },
    Multidim {
        dim: usize,
        #[serde(default)]
        null: bool,
    },
    Beta1 {
        theta: f64,
    },
    Beta2 {
        theta: f64,
    },
    Dr {
        #[serde(default)]
        null: bool,
        /// Use the positive-exponent propensity.
        #[serde(default)]
        printed_propensity: bool,
    },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SineVsLinear { .. } => "sine_vs_linear",
            Scenario::Multidim { .. } => "multidim",
            Scenario::Beta1 { .. } => "beta1",
            Scenario::Beta2 { .. } => "beta2",
            Scenario::Dr { .. } => "dr",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Scenario::SineVsLinear { theta, .. } if !(-1.0..=1.0).contains(&theta) => {
                Err(CmmdError::invalid(format!("theta must lie in [-1, 1], got {theta}")))
            }
            Scenario::Multidim { dim: 0, .. } => Err(CmmdError::invalid("dimension must be at least 1")),
            Scenario::Beta1 { theta } | Scenario::Beta2 { theta } if !(0.0..=1.0).contains(&theta) => {
                Err(CmmdError::invalid(format!("theta must lie in [0, 1], got {theta}")))
            }
            _ => Ok(()),
        }
    }

    /// The propensity appropriate for this scenario with equal sample sizes.
    pub fn propensity(&self) -> Result<PropensityModel> {
        match self {
            Scenario::Dr { printed_propensity, .. } => {
                PropensityModel::named(if *printed_propensity { PROPENSITY_DR_PRINTED } else { PROPENSITY_DR })
            }
            _ => PropensityModel::constant(0.5),
        }
    }
}

/// A scenario with its sample size (per distribution) and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn generate(&self) -> Result<(PairedDataset, PairedDataset)> {
        self.scenario.validate()?;
        let (n, seed) = (self.n, self.seed);
        match self.scenario {
            Scenario::SineVsLinear { theta, null } => gen_sine_vs_linear(theta, n, seed, null),
            Scenario::Multidim { dim, null } => gen_multidim(dim, n, seed, null),
            Scenario::Beta1 { theta } => gen_beta_settings(1, theta, n, seed),
            Scenario::Beta2 { theta } => gen_beta_settings(2, theta, n, seed),
            Scenario::Dr { null, .. } => gen_dr_scenario(n, seed, null),
        }
    }
}

/// The 2 x 3 toy model `P` and candidates `Q¹, Q², Q³`, all with marginal
/// `(0.3, 0.6, 0.1)`.
pub fn toy_tables() -> (DiscreteConditionalModel, [DiscreteConditionalModel; 3]) {
    let mu = DVector::from_vec(vec![0.3, 0.6, 0.1]);
    let model = |rows: [f64; 6]| {
        DiscreteConditionalModel::new(DMatrix::from_row_slice(2, 3, &rows), mu.clone())
            .expect("toy tables are valid")
    };
    (
        model([0.4, 0.5, 0.6, 0.6, 0.5, 0.4]),
        [
            model([0.4, 0.5, 0.9, 0.6, 0.5, 0.1]),
            model([0.3, 0.4, 0.5, 0.7, 0.6, 0.5]),
            model([0.3, 0.5, 0.8, 0.7, 0.5, 0.2]),
        ],
    )
}
