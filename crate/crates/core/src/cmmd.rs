//! Closed-form squared CMMD estimators.
//!
//! All naive estimators share one shape. With `W_P = (K_XX + λ_p n I)⁻¹`,
//! `W_Q = (K_X'X' + λ_q m I)⁻¹` and a pooled "smoothing Gram" `G` over the
//! concatenated covariates (P first),
//!
//! ```text
//! CMMD_s² = Tr(W_P L_YY W_P G_PP) - 2 Tr(W_P L_YZ W_Q G_QP) + Tr(W_Q L_ZZ W_Q G_QQ)
//! ```
//!
//! where `G = Φ̃* Ĉ^s Φ̃`. Level 0 uses `G = K̃`, level 1 `K̃ D K̃`, level 2
//! `K̃ D K̃ D K̃` with `D` the diagonal covariance weights, and a general `s`
//! goes through the spectrum of the weighted pooled Gram matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embeddings::{pooled_covariance_gram, select_lambda_cv, smoothed_gram, CvSettings, Lambda, PairedDataset};
use crate::error::{CmmdError, Result};
use crate::kernels::{gram, KernelSpec, Point};
use crate::linalg::{ridge_weights_on_range, trace_of_pair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "naive")]
    Naive,
    /// Joint-distribution MMD. Only valid when the covariate marginals agree;
    /// choosing it is the caller's assertion that they do.
    #[serde(rename = "joint_mmd", alias = "shared_marginal_mmd")]
    SharedMarginalMmd,
    #[serde(rename = "dr", alias = "doubly_robust")]
    DoublyRobust,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::SharedMarginalMmd => "joint_mmd",
            EstimatorKind::DoublyRobust => "dr",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "naive" => Ok(EstimatorKind::Naive),
            "joint_mmd" | "shared_marginal_mmd" => Ok(EstimatorKind::SharedMarginalMmd),
            "dr" | "doubly_robust" => Ok(EstimatorKind::DoublyRobust),
            _ => Err(format!("unknown estimator {s:?} (expected naive, joint_mmd or dr)")),
        }
    }
}

/// Everything needed to compute one squared-CMMD value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmmdConfig {
    /// Smoothing level `s >= 0`.
    pub level: f64,
    pub kernel_x: KernelSpec,
    pub kernel_y: KernelSpec,
    #[serde(default)]
    pub lambda_p: Lambda,
    #[serde(default)]
    pub lambda_q: Lambda,
    /// Ridge parameter of the doubly robust pseudo-outcome regression.
    #[serde(default = "cv_lambda")]
    pub lambda_shared: Lambda,
    /// Covariate mixture weight; `None` means `n / (n + m)`.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "naive_kind")]
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub cv: CvSettings,
}

fn cv_lambda() -> Lambda {
    Lambda::CrossValidated
}

fn naive_kind() -> EstimatorKind {
    EstimatorKind::Naive
}

impl CmmdConfig {
    /// Naive estimator at `level` with `λ_p = λ_q = 0.1`.
    pub fn new(level: f64, kernel_x: KernelSpec, kernel_y: KernelSpec) -> Self {
        CmmdConfig {
            level,
            kernel_x,
            kernel_y,
            lambda_p: Lambda::default(),
            lambda_q: Lambda::default(),
            lambda_shared: Lambda::CrossValidated,
            alpha: None,
            estimator: EstimatorKind::Naive,
            cv: CvSettings::default(),
        }
    }

    pub fn with_lambdas(mut self, lambda_p: f64, lambda_q: f64) -> Self {
        self.lambda_p = Lambda::Fixed(lambda_p);
        self.lambda_q = Lambda::Fixed(lambda_q);
        self
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level;
        self
    }

    pub fn with_estimator(mut self, kind: EstimatorKind) -> Self {
        self.estimator = kind;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0 && self.level.is_finite()) {
            return Err(CmmdError::invalid(format!("level must be a finite s >= 0, got {}", self.level)));
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(CmmdError::invalid(format!("mixture weight must lie in [0, 1], got {a}")));
            }
        }
        self.kernel_x.validate()?;
        self.kernel_y.validate()?;
        self.lambda_p.validate()?;
        self.lambda_q.validate()?;
        self.lambda_shared.validate()
    }

    /// Resolves median bandwidths on the pooled covariates and outcomes and
    /// cross-validates `λ_p` / `λ_q` on their own samples when requested.
    pub fn resolve(&self, p: &PairedDataset, q: &PairedDataset) -> Result<CmmdConfig> {
        self.validate()?;
        check_compatible(p, q)?;
        let mut out = self.clone();
        if self.kernel_x.needs_resolution() {
            let pooled: Vec<Point> = p.covariates().iter().chain(q.covariates()).cloned().collect();
            out.kernel_x = self.kernel_x.resolve(&pooled)?;
        }
        if self.kernel_y.needs_resolution() {
            let pooled: Vec<Point> = p.outcomes().iter().chain(q.outcomes()).cloned().collect();
            out.kernel_y = self.kernel_y.resolve(&pooled)?;
        }
        let cv = &self.cv;
        if self.lambda_p == Lambda::CrossValidated {
            out.lambda_p = Lambda::Fixed(select_lambda_cv(p, &out.kernel_x, &out.kernel_y, &cv.grid, cv.folds, cv.seed)?);
        }
        if self.lambda_q == Lambda::CrossValidated {
            out.lambda_q = Lambda::Fixed(select_lambda_cv(q, &out.kernel_x, &out.kernel_y, &cv.grid, cv.folds, cv.seed)?);
        }
        Ok(out)
    }

    pub(crate) fn fixed_lambdas(&self) -> Result<(f64, f64)> {
        match (self.lambda_p.fixed(), self.lambda_q.fixed()) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(CmmdError::invalid("lambda not resolved")),
        }
    }
}

/// A squared-CMMD value with the resolved configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmmdEstimate {
    pub value: f64,
    pub config: CmmdConfig,
    pub sample_sizes: (usize, usize),
}

pub(crate) fn check_compatible(p: &PairedDataset, q: &PairedDataset) -> Result<()> {
    if p.covariate_dim() != q.covariate_dim() {
        return Err(CmmdError::DimensionMismatch { expected: p.covariate_dim(), got: q.covariate_dim() });
    }
    if p.outcome_dim() != q.outcome_dim() {
        return Err(CmmdError::DimensionMismatch { expected: p.outcome_dim(), got: q.outcome_dim() });
    }
    Ok(())
}

/// Covariate and outcome Gram matrices over the pooled sample, P rows first.
#[derive(Debug, Clone)]
pub struct PooledGrams {
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub n: usize,
}

impl PooledGrams {
    pub fn from_data(p: &PairedDataset, q: &PairedDataset, kernel_x: &KernelSpec, kernel_y: &KernelSpec) -> Result<Self> {
        check_compatible(p, q)?;
        let xs: Vec<Point> = p.covariates().iter().chain(q.covariates()).cloned().collect();
        let ys: Vec<Point> = p.outcomes().iter().chain(q.outcomes()).cloned().collect();
        Ok(PooledGrams { k: gram(kernel_x, &xs, &xs)?, l: gram(kernel_y, &ys, &ys)?, n: p.len() })
    }

    pub fn m(&self) -> usize {
        self.k.nrows() - self.n
    }

    /// Re-split the pooled sample: `p_idx` become the P points, `q_idx` the Q points.
    pub fn resplit(&self, p_idx: &[usize], q_idx: &[usize]) -> PooledGrams {
        let order: Vec<usize> = p_idx.iter().chain(q_idx).copied().collect();
        PooledGrams {
            k: self.k.select_rows(&order).select_columns(&order),
            l: self.l.select_rows(&order).select_columns(&order),
            n: p_idx.len(),
        }
    }

    fn block(m: &DMatrix<f64>, rows: (usize, usize), cols: (usize, usize)) -> DMatrix<f64> {
        m.view((rows.0, cols.0), (rows.1, cols.1)).clone_owned()
    }

    fn p_range(&self) -> (usize, usize) {
        (0, self.n)
    }

    fn q_range(&self) -> (usize, usize) {
        (self.n, self.m())
    }

    pub fn covariance_weights(&self, alpha: Option<f64>) -> Result<DVector<f64>> {
        let n = self.n;
        let m = self.m();
        if n == 0 || m == 0 {
            return Err(CmmdError::invalid("both samples must be non-empty"));
        }
        // only the counts matter for the weights
        let dummy = |c: usize| vec![Point::scalar(0.0); c];
        Ok(pooled_covariance_gram(&dummy(n), &dummy(m), alpha)?.weights)
    }

    fn ridge(&self, lambda_p: f64, lambda_q: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (pr, qr) = (self.p_range(), self.q_range());
        let wp = ridge_weights_on_range(&Self::block(&self.k, pr, pr), lambda_p, self.n)?;
        let wq = ridge_weights_on_range(&Self::block(&self.k, qr, qr), lambda_q, self.m())?;
        Ok((wp, wq))
    }

    /// The three-term trace expression for a given pooled smoothing Gram `g`.
    pub fn three_term(&self, wp: &DMatrix<f64>, wq: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
        let (pr, qr) = (self.p_range(), self.q_range());
        let l_yy = Self::block(&self.l, pr, pr);
        let l_yz = Self::block(&self.l, pr, qr);
        let l_zz = Self::block(&self.l, qr, qr);
        let a = wp * l_yy * wp;
        let b = wp * l_yz * wq;
        let c = wq * l_zz * wq;
        trace_of_pair(&a, &Self::block(g, pr, pr)) - 2.0 * trace_of_pair(&b, &Self::block(g, qr, pr))
            + trace_of_pair(&c, &Self::block(g, qr, qr))
    }
}

/// Which route builds the smoothing Gram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelRoute {
    /// Products of Gram matrices, valid for integer levels 0, 1, 2.
    Products,
    /// Spectral powers of the weighted pooled Gram matrix, any `s >= 0`.
    Spectral,
}

/// Naive squared CMMD at level `s` from pooled Gram matrices.
pub fn naive_from_grams(
    grams: &PooledGrams,
    level: f64,
    route: LevelRoute,
    lambda_p: f64,
    lambda_q: f64,
    alpha: Option<f64>,
) -> Result<f64> {
    let weights = grams.covariance_weights(alpha)?;
    let (wp, wq) = grams.ridge(lambda_p, lambda_q)?;
    let g = match route {
        LevelRoute::Spectral => smoothed_gram(&grams.k, &weights, level)?,
        LevelRoute::Products => product_gram(&grams.k, &weights, level)?,
    };
    Ok(grams.three_term(&wp, &wq, &g))
}

/// `K̃ (D K̃)^s` for `s` in {0, 1, 2}.
fn product_gram(k: &DMatrix<f64>, weights: &DVector<f64>, level: f64) -> Result<DMatrix<f64>> {
    let steps = match level {
        l if l == 0.0 => 0,
        l if l == 1.0 => 1,
        l if l == 2.0 => 2,
        other => {
            return Err(CmmdError::invalid(format!(
                "product route supports levels 0, 1, 2 only, got {other}"
            )))
        }
    };
    let mut dk = k.clone();
    for (i, w) in weights.iter().enumerate() {
        dk.row_mut(i).scale_mut(*w);
    }
    let mut g = k.clone();
    for _ in 0..steps {
        g = &g * &dk;
    }
    Ok(crate::linalg::symmetrize(g))
}

fn naive_estimate(p: &PairedDataset, q: &PairedDataset, cfg: &CmmdConfig, level: f64, route: LevelRoute) -> Result<CmmdEstimate> {
    let resolved = cfg.resolve(p, q)?;
    let (lp, lq) = resolved.fixed_lambdas()?;
    let grams = PooledGrams::from_data(p, q, &resolved.kernel_x, &resolved.kernel_y)?;
    let value = naive_from_grams(&grams, level, route, lp, lq, resolved.alpha)?;
    let mut config = resolved;
    config.level = level;
    config.estimator = EstimatorKind::Naive;
    Ok(CmmdEstimate { value, config, sample_sizes: (p.len(), q.len()) })
}

/// Squared CMMD₀: Hilbert-Schmidt distance between the two CMO estimates.
pub fn cmmd0_sq(p: &PairedDataset, q: &PairedDataset, cfg: &CmmdConfig) -> Result<CmmdEstimate> {
    naive_estimate(p, q, cfg, 0.0, LevelRoute::Products)
}

/// Squared CMMD₁: mean squared CME distance over the pooled covariates.
pub fn cmmd1_sq(p: &PairedDataset, q: &PairedDataset, cfg: &CmmdConfig) -> Result<CmmdEstimate> {
    naive_estimate(p, q, cfg, 1.0, LevelRoute::Products)
}

/// Squared CMMD₂: `‖(Ĉ_{Y|X} - Ĉ_{Z|X}) Ĉ_XX‖²_HS`.
pub fn cmmd2_sq(p: &PairedDataset, q: &PairedDataset, cfg: &CmmdConfig) -> Result<CmmdEstimate> {
    naive_estimate(p, q, cfg, 2.0, LevelRoute::Products)
}

/// Squared CMMD at `cfg.level` through fractional powers of the pooled Gram matrix.
pub fn cmmd_s_sq(p: &PairedDataset, q: &PairedDataset, cfg: &CmmdConfig) -> Result<CmmdEstimate> {
    naive_estimate(p, q, cfg, cfg.level, LevelRoute::Spectral)
}

/// Joint-embedding MMD from pooled Grams (no ridge regression involved).
pub fn joint_mmd_from_grams(grams: &PooledGrams) -> f64 {
    let (n, m) = (grams.n as f64, grams.m() as f64);
    let (pr, qr) = (grams.p_range(), grams.q_range());
    let b = PooledGrams::block;
    trace_of_pair(&b(&grams.l, pr, pr), &b(&grams.k, pr, pr)) / (n * n)
        - 2.0 * trace_of_pair(&b(&grams.l, pr, qr), &b(&grams.k, qr, pr)) / (n * m)
        + trace_of_pair(&b(&grams.l, qr, qr), &b(&grams.k, qr, qr)) / (m * m)
}

/// Biased MMD² between the two joint samples under `k ⊗ ℓ`.
pub fn mmd_joint_sq(p: &PairedDataset, q: &PairedDataset, cfg: &CmmdConfig) -> Result<CmmdEstimate> {
    let mut resolved = cfg.clone();
    resolved.lambda_p = Lambda::Fixed(cfg.lambda_p.fixed().unwrap_or(crate::embeddings::DEFAULT_LAMBDA));
    resolved.lambda_q = Lambda::Fixed(cfg.lambda_q.fixed().unwrap_or(crate::embeddings::DEFAULT_LAMBDA));
    let mut resolved = resolved.resolve(p, q)?;
    resolved.estimator = EstimatorKind::SharedMarginalMmd;
    resolved.level = 2.0;
    let grams = PooledGrams::from_data(p, q, &resolved.kernel_x, &resolved.kernel_y)?;
    Ok(CmmdEstimate { value: joint_mmd_from_grams(&grams), config: resolved, sample_sizes: (p.len(), q.len()) })
}

/// Naive or joint-MMD estimate according to `cfg.estimator`. Integer levels
/// use the Gram-product formulas, other levels the spectral route.
pub fn estimate(p: &PairedDataset, q: &PairedDataset, cfg: &CmmdConfig) -> Result<CmmdEstimate> {
    match cfg.estimator {
        EstimatorKind::Naive if [0.0, 1.0, 2.0].contains(&cfg.level) => {
            naive_estimate(p, q, cfg, cfg.level, LevelRoute::Products)
        }
        EstimatorKind::Naive => cmmd_s_sq(p, q, cfg),
        EstimatorKind::SharedMarginalMmd => mmd_joint_sq(p, q, cfg),
        EstimatorKind::DoublyRobust => Err(CmmdError::invalid(
            "the doubly robust estimator needs a propensity model; use doubly_robust::estimate_dr",
        )),
    }
}

/// Conditional probability table plus covariate marginal on finite domains.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteConditionalModel {
    /// `|Y| x |X|`, column `j` is `P(Y = · | X = j)`.
    pub cond_table: DMatrix<f64>,
    pub marginal: DVector<f64>,
}

impl DiscreteConditionalModel {
    pub fn new(cond_table: DMatrix<f64>, marginal: DVector<f64>) -> Result<Self> {
        if cond_table.ncols() != marginal.len() {
            return Err(CmmdError::invalid(format!(
                "table has {} covariate columns but marginal has {} entries",
                cond_table.ncols(),
                marginal.len()
            )));
        }
        if cond_table.iter().chain(marginal.iter()).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CmmdError::invalid("probabilities must lie in [0, 1]"));
        }
        for (j, col) in cond_table.column_iter().enumerate() {
            if (col.sum() - 1.0).abs() > 1e-12 {
                return Err(CmmdError::invalid(format!("column {j} of the conditional table does not sum to 1")));
            }
        }
        if (marginal.sum() - 1.0).abs() > 1e-12 {
            return Err(CmmdError::invalid("marginal does not sum to 1"));
        }
        Ok(DiscreteConditionalModel { cond_table, marginal })
    }

    /// `P(X = j, Y = i)`
    pub fn joint_table(&self) -> DMatrix<f64> {
        let mut j = self.cond_table.clone();
        for (c, w) in self.marginal.iter().enumerate() {
            j.column_mut(c).scale_mut(*w);
        }
        j
    }
}

/// Exact population squared CMMD under delta kernels:
/// `Σ_j μ_j^s ‖C_P[:, j] - C_Q[:, j]‖²` (with `μ_j^0 = 1`).
pub fn discrete_cmmd_sq(p: &DiscreteConditionalModel, q: &DiscreteConditionalModel, level: f64) -> Result<f64> {
    if p.cond_table.shape() != q.cond_table.shape() {
        return Err(CmmdError::invalid("models have different domain sizes"));
    }
    if (&p.marginal - &q.marginal).amax() > 1e-12 {
        return Err(CmmdError::invalid("models must share the covariate marginal"));
    }
    if !(level >= 0.0 && level.is_finite()) {
        return Err(CmmdError::invalid(format!("level must be a finite s >= 0, got {level}")));
    }
    let diff = &p.cond_table - &q.cond_table;
    Ok(diff
        .column_iter()
        .zip(p.marginal.iter())
        .map(|(col, &mu)| {
            let w = if level == 0.0 { 1.0 } else { mu.powf(level) };
            w * col.norm_squared()
        })
        .sum())
}
