//! Bootstrap two-sample conditional tests.
//!
//! Two resampling schemes are provided. The pooled scheme (valid when both
//! samples share the covariate marginal) draws `n` of the `n + m` pooled
//! points without replacement for P and gives the rest to Q. The propensity
//! scheme assigns each pooled point to P independently with probability
//! `e(x)`.
//!
//! Kernel bandwidths and ridge parameters are resolved once on the original
//! split and frozen. Replicate `b` draws from its own ChaCha stream so the
//! result does not depend on the number of worker threads.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cmmd::{joint_mmd_from_grams, naive_from_grams, CmmdConfig, EstimatorKind, LevelRoute, PooledGrams};
use crate::doubly_robust::{assembly_from_grams, dr_value, select_shared_lambda, PropensityModel};
use crate::embeddings::{Lambda, PairedDataset};
use crate::error::{CmmdError, Result};
use crate::kernels::Point;
use crate::seeds::replicate_rng;

pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;
pub const DEFAULT_BOOTSTRAP: usize = 200;
/// Consecutive empty-side draws tolerated per propensity replicate.
pub const MAX_REDRAWS: u64 = 100;

#[derive(Debug, Clone)]
pub enum Algorithm {
    Pooled,
    Propensity(PropensityModel),
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Pooled => "pooled",
            Algorithm::Propensity(_) => "propensity",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestConfig {
    pub significance: f64,
    pub bootstrap: usize,
    pub seed: u64,
    pub statistic: CmmdConfig,
    pub algorithm: Algorithm,
    /// Propensity used inside the doubly robust statistic. Defaults to the
    /// resampling propensity, or the constant `n / (n + m)` under pooling.
    pub dr_propensity: Option<PropensityModel>,
    /// Worker threads for replicates; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl TestConfig {
    pub fn new(statistic: CmmdConfig, algorithm: Algorithm, seed: u64) -> Self {
        TestConfig {
            significance: DEFAULT_SIGNIFICANCE,
            bootstrap: DEFAULT_BOOTSTRAP,
            seed,
            statistic,
            algorithm,
            dr_propensity: None,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(CmmdError::invalid(format!("significance must lie in (0, 1), got {}", self.significance)));
        }
        if self.bootstrap == 0 {
            return Err(CmmdError::invalid("bootstrap count must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(CmmdError::invalid("worker count must be at least 1"));
        }
        self.statistic.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub bootstrap_statistics: Vec<f64>,
    pub p_value: f64,
    pub reject: bool,
    pub seed: u64,
    pub significance: f64,
    pub algorithm: String,
    /// The statistic configuration after bandwidth and λ resolution.
    pub config: CmmdConfig,
}

/// `(1 + #{S_b > S}) / (1 + B)`
pub fn p_value(statistic: f64, boots: &[f64]) -> f64 {
    let exceed = boots.iter().filter(|&&b| b > statistic).count();
    (1 + exceed) as f64 / (1 + boots.len()) as f64
}

/// Replicate `b` of the pooled scheme: `n` indices drawn without replacement
/// from `0..n_total` (sorted) and their complement.
pub fn pooled_partition(n_total: usize, n: usize, seed: u64, b: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = replicate_rng(seed, b, 0);
    let mut p = rand::seq::index::sample(&mut rng, n_total, n).into_vec();
    p.sort_unstable();
    let mut in_p = vec![false; n_total];
    p.iter().for_each(|&i| in_p[i] = true);
    let q = (0..n_total).filter(|&i| !in_p[i]).collect();
    (p, q)
}

/// Replicate `b` of the propensity scheme. Index `i` goes to P with
/// probability `e[i]`; a draw leaving either side empty is repeated with the
/// next attempt stream.
pub fn propensity_partition(e: &[f64], seed: u64, b: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    for attempt in 0..MAX_REDRAWS {
        let mut rng = replicate_rng(seed, b, attempt);
        let (mut p, mut q) = (Vec::new(), Vec::new());
        for (i, &ei) in e.iter().enumerate() {
            if rng.random::<f64>() < ei {
                p.push(i);
            } else {
                q.push(i);
            }
        }
        if !p.is_empty() && !q.is_empty() {
            return Ok((p, q));
        }
    }
    Err(CmmdError::DegeneratePropensity { attempts: MAX_REDRAWS as usize })
}

/// Statistic on arbitrary re-splits of a fixed pooled sample.
pub struct StatisticEngine {
    grams: PooledGrams,
    config: CmmdConfig,
    route: LevelRoute,
    lambda_p: f64,
    lambda_q: f64,
    /// Propensity at every pooled point (DR only).
    e_pooled: Option<DVector<f64>>,
    lambda_shared: f64,
}

impl StatisticEngine {
    pub fn new(p: &PairedDataset, q: &PairedDataset, cfg: &CmmdConfig, dr_propensity: Option<&PropensityModel>) -> Result<Self> {
        let config = cfg.resolve(p, q)?;
        let (lambda_p, lambda_q) = config.fixed_lambdas()?;
        let grams = PooledGrams::from_data(p, q, &config.kernel_x, &config.kernel_y)?;
        let route = if [0.0, 1.0, 2.0].contains(&config.level) { LevelRoute::Products } else { LevelRoute::Spectral };
        let mut engine = StatisticEngine { grams, config, route, lambda_p, lambda_q, e_pooled: None, lambda_shared: 0.0 };
        if engine.config.estimator == EstimatorKind::DoublyRobust {
            let pooled: Vec<Point> = p.covariates().iter().chain(q.covariates()).cloned().collect();
            let e = match dr_propensity {
                Some(model) => model.evaluate(&pooled)?,
                None => {
                    let frac = p.len() as f64 / pooled.len() as f64;
                    PropensityModel::constant(frac)?.evaluate(&pooled)?
                }
            };
            let assembly = assembly_from_grams(&engine.grams, e.clone(), lambda_p, lambda_q)?;
            engine.lambda_shared = select_shared_lambda(&assembly.psi_gram(), &engine.grams.k, &engine.config)?;
            engine.config.lambda_shared = Lambda::Fixed(engine.lambda_shared);
            engine.e_pooled = Some(e);
        }
        Ok(engine)
    }

    pub fn config(&self) -> &CmmdConfig {
        &self.config
    }

    pub fn n_total(&self) -> usize {
        self.grams.k.nrows()
    }

    fn value_on(&self, grams: &PooledGrams, order: Option<&[usize]>) -> Result<f64> {
        let cfg = &self.config;
        match cfg.estimator {
            EstimatorKind::Naive => naive_from_grams(grams, cfg.level, self.route, self.lambda_p, self.lambda_q, cfg.alpha),
            EstimatorKind::SharedMarginalMmd => Ok(joint_mmd_from_grams(grams)),
            EstimatorKind::DoublyRobust => {
                let e_all = self.e_pooled.as_ref().expect("propensity resolved for DR");
                let e = match order {
                    Some(idx) => DVector::from_iterator(idx.len(), idx.iter().map(|&i| e_all[i])),
                    None => e_all.clone(),
                };
                let assembly = assembly_from_grams(grams, e, self.lambda_p, self.lambda_q)?;
                dr_value(&assembly.psi_gram(), &grams.k, self.lambda_shared, cfg.level)
            }
        }
    }

    /// Statistic on the original split.
    pub fn observed(&self) -> Result<f64> {
        self.value_on(&self.grams, None)
    }

    /// Statistic with pooled indices `p_idx` playing P and `q_idx` playing Q.
    pub fn resplit(&self, p_idx: &[usize], q_idx: &[usize]) -> Result<f64> {
        let order: Vec<usize> = p_idx.iter().chain(q_idx).copied().collect();
        self.value_on(&self.grams.resplit(p_idx, q_idx), Some(&order))
    }
}

fn run_replicates<F>(cfg: &TestConfig, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    let job = || {
        (0..cfg.bootstrap as u64)
            .into_par_iter()
            .map(|b| f(b).map_err(|e| CmmdError::Replicate { index: b as usize, source: Box::new(e) }))
            .collect::<Result<Vec<f64>>>()
    };
    match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CmmdError::invalid(format!("cannot start worker pool: {e}")))?
            .install(job),
        None => job(),
    }
}

fn finish(cfg: &TestConfig, engine: &StatisticEngine, statistic: f64, boots: Vec<f64>) -> TestResult {
    let p = p_value(statistic, &boots);
    TestResult {
        statistic,
        bootstrap_statistics: boots,
        p_value: p,
        reject: p < cfg.significance,
        seed: cfg.seed,
        significance: cfg.significance,
        algorithm: cfg.algorithm.name().to_string(),
        config: engine.config().clone(),
    }
}

/// Permutation-style test for samples with a shared covariate marginal.
pub fn pooled_bootstrap_test(p: &PairedDataset, q: &PairedDataset, cfg: &TestConfig) -> Result<TestResult> {
    cfg.validate()?;
    if !matches!(cfg.algorithm, Algorithm::Pooled) {
        return Err(CmmdError::invalid("pooled_bootstrap_test needs the pooled algorithm"));
    }
    let engine = StatisticEngine::new(p, q, &cfg.statistic, cfg.dr_propensity.as_ref())?;
    let statistic = engine.observed()?;
    let (nt, n) = (engine.n_total(), p.len());
    let boots = run_replicates(cfg, |b| {
        let (pi, qi) = pooled_partition(nt, n, cfg.seed, b);
        engine.resplit(&pi, &qi)
    })?;
    Ok(finish(cfg, &engine, statistic, boots))
}

/// Test for samples whose covariate marginals may differ, resampling labels
/// from the propensity.
pub fn propensity_bootstrap_test(p: &PairedDataset, q: &PairedDataset, cfg: &TestConfig) -> Result<TestResult> {
    cfg.validate()?;
    let Algorithm::Propensity(model) = &cfg.algorithm else {
        return Err(CmmdError::invalid("propensity_bootstrap_test needs a propensity model"));
    };
    let pooled: Vec<Point> = p.covariates().iter().chain(q.covariates()).cloned().collect();
    let e = model.evaluate(&pooled)?;
    let dr_prop = cfg.dr_propensity.as_ref().unwrap_or(model);
    let engine = StatisticEngine::new(p, q, &cfg.statistic, Some(dr_prop))?;
    let statistic = engine.observed()?;
    let e = e.as_slice().to_vec();
    let boots = run_replicates(cfg, |b| {
        let (pi, qi) = propensity_partition(&e, cfg.seed, b)?;
        engine.resplit(&pi, &qi)
    })?;
    Ok(finish(cfg, &engine, statistic, boots))
}

/// Runs whichever test `cfg.algorithm` selects.
pub fn run_test(p: &PairedDataset, q: &PairedDataset, cfg: &TestConfig) -> Result<TestResult> {
    match cfg.algorithm {
        Algorithm::Pooled => pooled_bootstrap_test(p, q, cfg),
        Algorithm::Propensity(_) => propensity_bootstrap_test(p, q, cfg),
    }
}
