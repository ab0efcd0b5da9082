//! Conditional mean operator / embedding estimators.
//!
//! The dual estimator of the conditional mean operator is
//! `Ĉ_{Y|X} = Ψ_Y (K_XX + λ n I)⁻¹ Φ_X*`, so the conditional mean embedding
//! at `x` is the outcome-feature combination `Σ_i β_i(x) ℓ(·, y_i)` with
//! `β(x) = W K_{X,x}`. Inner products between embeddings therefore reduce to
//! quadratic forms in outcome Gram matrices.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{CmmdError, Result};
use crate::kernels::{gram, KernelSpec, Point};
use crate::linalg::{clamp_psd, needs_range_restriction, ridge_weights, ridge_weights_on_range, spectral_power, sym_eig, symmetrize};
use crate::seeds::data_rng;

/// Regularization used when a configuration leaves λ unspecified.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Covariate/outcome pairs drawn from one joint distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    covariates: Vec<Point>,
    outcomes: Vec<Point>,
}

impl PairedDataset {
    pub fn new(covariates: Vec<Point>, outcomes: Vec<Point>) -> Result<Self> {
        if covariates.len() != outcomes.len() {
            return Err(CmmdError::invalid(format!(
                "{} covariates but {} outcomes",
                covariates.len(),
                outcomes.len()
            )));
        }
        if covariates.is_empty() {
            return Err(CmmdError::invalid("dataset must contain at least one pair"));
        }
        for list in [&covariates, &outcomes] {
            let d = list[0].dim();
            if let Some(p) = list.iter().find(|p| p.dim() != d) {
                return Err(CmmdError::DimensionMismatch { expected: d, got: p.dim() });
            }
        }
        Ok(PairedDataset { covariates, outcomes })
    }

    /// One-dimensional covariates and outcomes.
    pub fn from_scalars(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let to_points = |v: &[f64]| v.iter().map(|&x| Point::new(vec![x])).collect::<Result<Vec<_>>>();
        PairedDataset::new(to_points(xs)?, to_points(ys)?)
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn covariates(&self) -> &[Point] {
        &self.covariates
    }

    pub fn outcomes(&self) -> &[Point] {
        &self.outcomes
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariates[0].dim()
    }

    pub fn outcome_dim(&self) -> usize {
        self.outcomes[0].dim()
    }

    /// Pairs at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        PairedDataset::new(
            indices.iter().map(|&i| self.covariates[i].clone()).collect(),
            indices.iter().map(|&i| self.outcomes[i].clone()).collect(),
        )
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &PairedDataset) -> Result<Self> {
        let mut c = self.covariates.clone();
        c.extend_from_slice(&other.covariates);
        let mut o = self.outcomes.clone();
        o.extend_from_slice(&other.outcomes);
        PairedDataset::new(c, o)
    }
}

/// Ridge parameter: a fixed value or a request for cross-validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    CrossValidated,
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Fixed(DEFAULT_LAMBDA)
    }
}

impl Lambda {
    pub fn fixed(&self) -> Option<f64> {
        match self {
            Lambda::Fixed(v) => Some(*v),
            Lambda::CrossValidated => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Lambda::Fixed(v) if !(*v > 0.0 && v.is_finite()) => {
                Err(CmmdError::invalid(format!("lambda must be positive, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Fixed(v) => write!(f, "{v}"),
            Lambda::CrossValidated => f.write_str("cv"),
        }
    }
}

impl FromStr for Lambda {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("cv") {
            return Ok(Lambda::CrossValidated);
        }
        let v: f64 = s.parse().map_err(|_| format!("lambda must be a number or \"cv\", got {s:?}"))?;
        let l = Lambda::Fixed(v);
        l.validate().map_err(|e| e.to_string())?;
        Ok(l)
    }
}

impl Serialize for Lambda {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lambda::Fixed(v) => s.serialize_f64(*v),
            Lambda::CrossValidated => s.serialize_str("cv"),
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct LVisitor;
        impl Visitor<'_> for LVisitor {
            type Value = Lambda;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or \"cv\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Lambda, E> {
                Ok(Lambda::Fixed(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Lambda, E> {
                Ok(Lambda::Fixed(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Lambda, E> {
                Ok(Lambda::Fixed(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Lambda, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(LVisitor)
    }
}

/// Cross-validation settings for [`Lambda::CrossValidated`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSettings {
    pub grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            grid: (-6..=0).map(|e| 10f64.powi(e)).collect(),
            folds: 5,
            seed: 0,
        }
    }
}

/// Fitted dual-form conditional mean operator.
#[derive(Debug, Clone)]
pub struct CmoModel {
    train: PairedDataset,
    kernel_x: KernelSpec,
    kernel_y: KernelSpec,
    lambda: f64,
    weights: DMatrix<f64>,
}

impl CmoModel {
    pub fn train(&self) -> &PairedDataset {
        &self.train
    }

    pub fn kernel_x(&self) -> &KernelSpec {
        &self.kernel_x
    }

    pub fn kernel_y(&self) -> &KernelSpec {
        &self.kernel_y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `W = (K_XX + λ n I)⁻¹`
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn cme_weights(&self, x: &Point) -> Result<DVector<f64>> {
        cme_weights(self, x)
    }

    /// Columns are `β(points[j])`.
    pub fn cme_weights_batch(&self, points: &[Point]) -> Result<DMatrix<f64>> {
        self.check_covariate_dim(points)?;
        let k = gram(&self.kernel_x, &self.train.covariates, points)?;
        Ok(&self.weights * k)
    }

    /// `‖μ̂_{Y|x}‖² = βᵀ L_YY β`
    pub fn cme_sq_norm(&self, x: &Point) -> Result<f64> {
        let beta = self.cme_weights(x)?;
        let l = gram(&self.kernel_y, &self.train.outcomes, &self.train.outcomes)?;
        Ok(beta.dot(&(l * &beta)))
    }

    fn check_covariate_dim(&self, points: &[Point]) -> Result<()> {
        let d = self.train.covariate_dim();
        match points.iter().find(|p| p.dim() != d) {
            Some(p) => Err(CmmdError::DimensionMismatch { expected: d, got: p.dim() }),
            None => Ok(()),
        }
    }
}

/// Fits the dual CMO estimator. Median bandwidths are resolved on this
/// dataset's covariates and outcomes respectively.
pub fn fit_cmo(
    data: &PairedDataset,
    kernel_x: &KernelSpec,
    kernel_y: &KernelSpec,
    lambda: f64,
) -> Result<CmoModel> {
    let kernel_x = kernel_x.resolve(data.covariates())?;
    let kernel_y = kernel_y.resolve(data.outcomes())?;
    let k = gram(&kernel_x, data.covariates(), data.covariates())?;
    let weights = ridge_weights_on_range(&k, lambda, data.len())?;
    Ok(CmoModel { train: data.clone(), kernel_x, kernel_y, lambda, weights })
}

/// Fits with a [`Lambda`], running cross-validation when requested.
pub fn fit_cmo_with(
    data: &PairedDataset,
    kernel_x: &KernelSpec,
    kernel_y: &KernelSpec,
    lambda: Lambda,
    cv: &CvSettings,
) -> Result<CmoModel> {
    let lam = match lambda {
        Lambda::Fixed(v) => v,
        Lambda::CrossValidated => {
            select_lambda_cv(data, kernel_x, kernel_y, &cv.grid, cv.folds, cv.seed)?
        }
    };
    fit_cmo(data, kernel_x, kernel_y, lam)
}

/// `β(x) = W K_{X,x}`
pub fn cme_weights(model: &CmoModel, x: &Point) -> Result<DVector<f64>> {
    let b = model.cme_weights_batch(std::slice::from_ref(x))?;
    Ok(b.column(0).into_owned())
}

/// Explicit finite-dimensional feature map used by the primal estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureMap {
    /// The coordinates themselves (induces the linear kernel).
    Identity { dim: usize },
    /// One-hot code of an integer label in `0..levels` (induces the delta kernel).
    OneHot { levels: usize },
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::OneHot { levels } => *levels,
        }
    }

    /// Kernel whose Gram matrix equals the feature inner products.
    pub fn induced_kernel(&self) -> KernelSpec {
        match self {
            FeatureMap::Identity { .. } => KernelSpec::Linear,
            FeatureMap::OneHot { .. } => KernelSpec::KroneckerDelta,
        }
    }

    pub fn feature(&self, p: &Point) -> Result<DVector<f64>> {
        match self {
            FeatureMap::Identity { dim } => {
                if p.dim() != *dim {
                    return Err(CmmdError::DimensionMismatch { expected: *dim, got: p.dim() });
                }
                Ok(DVector::from_column_slice(p.coords()))
            }
            FeatureMap::OneHot { levels } => {
                if p.dim() != 1 {
                    return Err(CmmdError::DimensionMismatch { expected: 1, got: p.dim() });
                }
                let v = p[0];
                if v.fract() != 0.0 || v < 0.0 || v >= *levels as f64 {
                    return Err(CmmdError::invalid(format!(
                        "label {v} is not an integer in 0..{levels}"
                    )));
                }
                let mut e = DVector::zeros(*levels);
                e[v as usize] = 1.0;
                Ok(e)
            }
        }
    }

    /// Row `i` is the feature vector of `points[i]`.
    pub fn features(&self, points: &[Point]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(points.len(), self.dim());
        for (i, p) in points.iter().enumerate() {
            m.row_mut(i).copy_from(&self.feature(p)?.transpose());
        }
        Ok(m)
    }
}

/// Primal-form conditional mean operator: an explicit `p x d` matrix from
/// covariate features to outcome features.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalCmoModel {
    pub weight_matrix: DMatrix<f64>,
}

impl PrimalCmoModel {
    pub fn input_dim(&self) -> usize {
        self.weight_matrix.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight_matrix.nrows()
    }

    /// Outcome-feature coordinates of the conditional mean embedding at a
    /// covariate feature vector.
    pub fn apply(&self, feature_x: &DVector<f64>) -> Result<DVector<f64>> {
        if feature_x.len() != self.input_dim() {
            return Err(CmmdError::DimensionMismatch { expected: self.input_dim(), got: feature_x.len() });
        }
        Ok(&self.weight_matrix * feature_x)
    }

    /// Fits on a dataset through explicit feature maps.
    pub fn fit(data: &PairedDataset, fx: &FeatureMap, fy: &FeatureMap, lambda: f64) -> Result<Self> {
        fit_cmo_primal(&fx.features(data.covariates())?, &fy.features(data.outcomes())?, lambda)
    }
}

/// `Ψ_Y Φ_Xᵀ (Φ_X Φ_Xᵀ + λ n I_d)⁻¹` where `features_x` is `n x d` and
/// `features_y` is `n x p` (rows are samples).
pub fn fit_cmo_primal(
    features_x: &DMatrix<f64>,
    features_y: &DMatrix<f64>,
    lambda: f64,
) -> Result<PrimalCmoModel> {
    let n = features_x.nrows();
    if n == 0 || features_y.nrows() != n {
        return Err(CmmdError::invalid(format!(
            "feature matrices must have the same positive number of rows, got {} and {}",
            n,
            features_y.nrows()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CmmdError::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let gram_x = symmetrize(features_x.transpose() * features_x);
    let inv = ridge_weights(&gram_x, lambda, n)?;
    let cross = features_y.transpose() * features_x;
    Ok(PrimalCmoModel { weight_matrix: cross * inv })
}

/// Pooled covariates with per-point covariance weights.
///
/// The covariance estimator is `Σ_i w_i k(·, x̃_i) ⊗ k(·, x̃_i)` with
/// `w_i = α/n` on the first `n` points and `(1 - α)/m` on the remaining `m`.
#[derive(Debug, Clone)]
pub struct PooledCovariance {
    pub points: Vec<Point>,
    pub weights: DVector<f64>,
    pub alpha: f64,
    pub n_p: usize,
}

/// Concatenates both covariate samples and attaches mixture weights.
/// `alpha = None` means `n / (n + m)`, giving every point weight `1/(n+m)`.
pub fn pooled_covariance_gram(
    p_covariates: &[Point],
    q_covariates: &[Point],
    alpha: Option<f64>,
) -> Result<PooledCovariance> {
    let (n, m) = (p_covariates.len(), q_covariates.len());
    let alpha = alpha.unwrap_or(n as f64 / (n + m) as f64);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CmmdError::invalid(format!("mixture weight must lie in [0, 1], got {alpha}")));
    }
    if (n == 0 && alpha > 0.0) || (m == 0 && alpha < 1.0) || n + m == 0 {
        return Err(CmmdError::invalid("a sample with positive mixture weight is empty"));
    }
    let wp = if n > 0 { alpha / n as f64 } else { 0.0 };
    let wq = if m > 0 { (1.0 - alpha) / m as f64 } else { 0.0 };
    let weights = DVector::from_iterator(n + m, (0..n + m).map(|i| if i < n { wp } else { wq }));
    let mut points = p_covariates.to_vec();
    points.extend_from_slice(q_covariates);
    Ok(PooledCovariance { points, weights, alpha, n_p: n })
}

impl PooledCovariance {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_uniform_weights(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|&w| w == w0)
    }
}

/// Relative eigenvalue cutoff for the pseudo-inverse powers needed when some
/// pooled points carry zero weight and `0 < s < 1`.
const PSEUDO_INVERSE_RTOL: f64 = 1e-10;

/// `Φ̃* Ĉ^s Φ̃` for the weighted covariance `Ĉ = Φ̃ D Φ̃*`, given the
/// pooled Gram matrix `K̃ = Φ̃* Φ̃`.
///
/// With all weights positive this is `D^{-1/2} M^{s+1} D^{-1/2}` for
/// `M = D^{1/2} K̃ D^{1/2}`; uniform weights `w` reduce it to
/// `(K̃ w)^{s+1} / w`. At `s = 0` it is `K̃` itself.
pub fn smoothed_gram(k_pooled: &DMatrix<f64>, weights: &DVector<f64>, s: f64) -> Result<DMatrix<f64>> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(CmmdError::invalid(format!("level must be a finite s >= 0, got {s}")));
    }
    let nt = k_pooled.nrows();
    if weights.len() != nt || !k_pooled.is_square() {
        return Err(CmmdError::invalid("weights do not match the pooled Gram matrix"));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(CmmdError::invalid("covariance weights must be non-negative"));
    }
    if s == 0.0 {
        return Ok(k_pooled.clone());
    }
    let support: Vec<usize> = (0..nt).filter(|&i| weights[i] > 0.0).collect();
    if support.is_empty() {
        return Err(CmmdError::invalid("all covariance weights are zero"));
    }
    let sqrt_w = DVector::from_iterator(support.len(), support.iter().map(|&i| weights[i].sqrt()));
    let k_ss = k_pooled.select_rows(&support).select_columns(&support);
    let m = scale_sym(&k_ss, &sqrt_w);
    let spectrum = clamp_psd(sym_eig(&m)?)?;

    if support.len() == nt {
        let inv_sqrt = sqrt_w.map(|v| 1.0 / v);
        return Ok(scale_sym(&spectral_power(&spectrum, s + 1.0), &inv_sqrt));
    }

    // Zero-weight points: Φ̃* Ĉ^s Φ̃ = K̃_{:,S} D^{1/2} M^{s-1} D^{1/2} K̃_{S,:},
    // with M^{s-1} a pseudo-inverse power when s < 1. The S x S block uses the
    // stable form above.
    let top = spectrum.max_eigenvalue().max(0.0);
    let cutoff = PSEUDO_INVERSE_RTOL * top;
    let mid = spectrum.map(|l| if l > cutoff { l.powf(s - 1.0) } else { 0.0 });
    let mut left = k_pooled.select_columns(&support);
    for (c, w) in sqrt_w.iter().enumerate() {
        left.column_mut(c).scale_mut(*w);
    }
    let mut g = symmetrize(&left * mid * left.transpose());
    let inv_sqrt = sqrt_w.map(|v| 1.0 / v);
    let block = scale_sym(&spectral_power(&spectrum, s + 1.0), &inv_sqrt);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            g[(i, j)] = block[(a, b)];
        }
    }
    Ok(g)
}

/// `diag(d) M diag(d)`
fn scale_sym(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| d[i] * m[(i, j)] * d[j])
}

/// Seeded shuffle split into `folds` contiguous blocks.
pub fn cv_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(CmmdError::invalid("cross-validation needs at least 2 folds"));
    }
    if folds > n {
        return Err(CmmdError::invalid(format!("{folds} folds requested for {n} samples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut data_rng(seed));
    Ok((0..folds).map(|f| idx[f * n / folds..(f + 1) * n / folds].to_vec()).collect())
}

/// Mean held-out RKHS regression loss for each grid value.
///
/// `k` is the covariate Gram matrix and `l` the Gram matrix of the regression
/// targets (outcome features or any other RKHS-valued responses). For a held
/// out index `j` the loss is `‖t_j - Σ_i β_i(x_j) t_i‖²`, expanded through `l`.
pub fn cv_losses(
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = k.nrows();
    if grid.is_empty() {
        return Err(CmmdError::invalid("lambda grid is empty"));
    }
    if let Some(bad) = grid.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(CmmdError::invalid(format!("lambda grid values must be positive, got {bad}")));
    }
    if l.nrows() != n || l.ncols() != n || k.ncols() != n {
        return Err(CmmdError::invalid("gram matrices must be square and equally sized"));
    }
    let blocks = cv_folds(n, folds, seed)?;
    let mut totals = vec![0.0; grid.len()];
    for test in &blocks {
        let train: Vec<usize> = {
            let mut mask = vec![true; n];
            test.iter().for_each(|&i| mask[i] = false);
            (0..n).filter(|&i| mask[i]).collect()
        };
        let n_tr = train.len();
        let k_tr = symmetrize(k.select_rows(&train).select_columns(&train));
        let k_cross = k.select_rows(&train).select_columns(test);
        let l_tr = l.select_rows(&train).select_columns(&train);
        let l_cross = l.select_rows(&train).select_columns(test);
        let l_diag: f64 = test.iter().map(|&j| l[(j, j)]).sum();
        let spec = clamp_psd(sym_eig(&k_tr)?)?;
        let proj = spec.eigenvectors.transpose() * k_cross;
        let tol = spec.max_eigenvalue() * n_tr as f64 * f64::EPSILON;
        for (g, &lam) in grid.iter().enumerate() {
            let shift = lam * n_tr as f64;
            // same switch as ridge_weights_on_range
            let cut = if needs_range_restriction(spec.max_eigenvalue(), shift, n_tr) { tol } else { -1.0 };
            let mut scaled = proj.clone();
            for (r, &ev) in spec.eigenvalues.iter().enumerate() {
                scaled.row_mut(r).scale_mut(if ev > cut { 1.0 / (ev + shift) } else { 0.0 });
            }
            let beta = &spec.eigenvectors * scaled;
            let cross_term = beta.component_mul(&l_cross).sum();
            let quad = beta.component_mul(&(&l_tr * &beta)).sum();
            totals[g] += l_diag - 2.0 * cross_term + quad;
        }
    }
    Ok(totals.into_iter().map(|t| t / n as f64).collect())
}

/// Grid value with the smallest loss; ties go to the larger λ.
pub fn argmin_lambda(grid: &[f64], losses: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut best = order[0];
    for &i in &order[1..] {
        let tol = 1e-12 * losses[best].abs().max(1e-300);
        if losses[i] < losses[best] - tol {
            best = i;
        }
    }
    grid[best]
}

/// k-fold cross-validated λ for the CMO regression of outcome features on
/// covariates.
pub fn select_lambda_cv(
    data: &PairedDataset,
    kernel_x: &KernelSpec,
    kernel_y: &KernelSpec,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(CmmdError::invalid("lambda grid is empty"));
    }
    if folds > data.len() {
        return Err(CmmdError::invalid(format!("{folds} folds requested for {} samples", data.len())));
    }
    if grid.len() == 1 {
        grid[0].gt(&0.0).then_some(()).ok_or_else(|| CmmdError::invalid("lambda must be positive"))?;
        return Ok(grid[0]);
    }
    let kx = kernel_x.resolve(data.covariates())?;
    let ky = kernel_y.resolve(data.outcomes())?;
    let k = gram(&kx, data.covariates(), data.covariates())?;
    let l = gram(&ky, data.outcomes(), data.outcomes())?;
    let losses = cv_losses(&k, &l, grid, folds, seed)?;
    Ok(argmin_lambda(grid, &losses))
}
