//! Doubly robust CMMD estimation from a single combined sample.
//!
//! Each pooled point `(t_i, x̃_i, w_i)` gets the pseudo-outcome
//!
//! ```text
//! ψ_i = ẽ_i (ℓ(·, w_i) - (1 - e_i) μ̂_{Y|x̃_i} - e_i μ̂_{Z|x̃_i}),   ẽ_i = (t_i - e_i) / (e_i (1 - e_i))
//! ```
//!
//! and the CMO difference is estimated by one ridge regression of the
//! pseudo-outcomes on the pooled covariates. Everything is expressed through
//! the Gram matrix `Ψ*Ψ`, assembled from outcome-kernel blocks.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cmmd::{check_compatible, CmmdConfig, CmmdEstimate, EstimatorKind, PooledGrams};
use crate::embeddings::{cv_losses, argmin_lambda, smoothed_gram, CmoModel, Lambda, PairedDataset};
use crate::error::{CmmdError, Result};
use crate::kernels::{gram, KernelSpec, Point};
use crate::linalg::{ridge_weights_on_range, symmetrize, trace_of_pair};

pub const DEFAULT_OVERLAP_DELTA: f64 = 1e-3;

type PropensityFn = Arc<dyn Fn(&Point) -> Result<f64> + Send + Sync>;

#[derive(Clone)]
pub enum PropensityKind {
    Analytic { name: String, f: PropensityFn },
    Constant(f64),
    /// Exact-match lookup on covariate coordinates.
    Tabulated(Vec<(Point, f64)>),
}

impl fmt::Debug for PropensityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropensityKind::Analytic { name, .. } => write!(f, "Analytic({name})"),
            PropensityKind::Constant(v) => write!(f, "Constant({v})"),
            PropensityKind::Tabulated(t) => write!(f, "Tabulated({} entries)", t.len()),
        }
    }
}

/// `e(x) = P(T = 1 | X = x)`, the probability that a pooled point came from P.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    pub kind: PropensityKind,
    /// Values outside `[δ, 1 - δ]` are rejected.
    pub delta: f64,
}

impl PropensityModel {
    pub fn constant(value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(CmmdError::invalid(format!("constant propensity must lie in (0, 1), got {value}")));
        }
        Ok(PropensityModel { kind: PropensityKind::Constant(value), delta: DEFAULT_OVERLAP_DELTA })
    }

    pub fn analytic(name: impl Into<String>, f: impl Fn(&Point) -> Result<f64> + Send + Sync + 'static) -> Self {
        PropensityModel {
            kind: PropensityKind::Analytic { name: name.into(), f: Arc::new(f) },
            delta: DEFAULT_OVERLAP_DELTA,
        }
    }

    /// One of the built-in propensities in [`crate::datagen`].
    pub fn named(name: &str) -> Result<Self> {
        let f = crate::datagen::named_propensity(name)
            .ok_or_else(|| CmmdError::invalid(format!("unknown propensity {name:?}")))?;
        Ok(Self::analytic(name, f))
    }

    pub fn tabulated(entries: Vec<(Point, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(CmmdError::invalid("propensity table is empty"));
        }
        Ok(PropensityModel { kind: PropensityKind::Tabulated(entries), delta: DEFAULT_OVERLAP_DELTA })
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&delta) {
            return Err(CmmdError::invalid(format!("overlap delta must lie in [0, 0.5), got {delta}")));
        }
        self.delta = delta;
        Ok(self)
    }

    /// `1 - e(x)`: the propensity after swapping the roles of P and Q.
    pub fn complement(&self) -> Self {
        let kind = match &self.kind {
            PropensityKind::Constant(v) => PropensityKind::Constant(1.0 - v),
            PropensityKind::Tabulated(t) => {
                PropensityKind::Tabulated(t.iter().map(|(p, v)| (p.clone(), 1.0 - v)).collect())
            }
            PropensityKind::Analytic { name, f } => {
                let f = f.clone();
                PropensityKind::Analytic {
                    name: format!("1-{name}"),
                    f: Arc::new(move |x: &Point| f(x).map(|v| 1.0 - v)),
                }
            }
        };
        PropensityModel { kind, delta: self.delta }
    }

    /// Raw value without the overlap check.
    pub fn value(&self, x: &Point) -> Result<f64> {
        match &self.kind {
            PropensityKind::Constant(v) => Ok(*v),
            PropensityKind::Analytic { f, .. } => f(x),
            PropensityKind::Tabulated(t) => t
                .iter()
                .find(|(p, _)| p.coords() == x.coords())
                .map(|(_, v)| *v)
                .ok_or_else(|| CmmdError::invalid(format!("no tabulated propensity for covariate {:?}", x.coords()))),
        }
    }

    /// Values at every point, enforcing overlap.
    pub fn evaluate(&self, points: &[Point]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(points.len());
        for (i, x) in points.iter().enumerate() {
            let v = self.value(x)?;
            if !(v > 0.0 && v < 1.0) || v < self.delta || v > 1.0 - self.delta {
                return Err(CmmdError::Overlap { index: i, value: v, delta: self.delta });
            }
            out[i] = v;
        }
        Ok(out)
    }
}

/// Serializable propensity description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PropensitySpec {
    Analytic { name: String },
    Constant { value: f64 },
}

impl PropensitySpec {
    pub fn build(&self) -> Result<PropensityModel> {
        match self {
            PropensitySpec::Analytic { name } => PropensityModel::named(name),
            PropensitySpec::Constant { value } => PropensityModel::constant(*value),
        }
    }
}

/// Pooled covariates and outcomes with their source labels (`true` = P).
#[derive(Debug, Clone)]
pub struct CombinedSample {
    covariates: Vec<Point>,
    outcomes: Vec<Point>,
    treatment: Vec<bool>,
}

impl CombinedSample {
    pub fn new(covariates: Vec<Point>, outcomes: Vec<Point>, treatment: Vec<bool>) -> Result<Self> {
        if covariates.len() != outcomes.len() || covariates.len() != treatment.len() {
            return Err(CmmdError::invalid(format!(
                "combined sample lengths differ: {} covariates, {} outcomes, {} labels",
                covariates.len(),
                outcomes.len(),
                treatment.len()
            )));
        }
        if !treatment.iter().any(|&t| t) || treatment.iter().all(|&t| t) {
            return Err(CmmdError::invalid("combined sample needs points from both distributions"));
        }
        // dimensions are validated by PairedDataset
        PairedDataset::new(covariates.clone(), outcomes.clone())?;
        Ok(CombinedSample { covariates, outcomes, treatment })
    }

    /// P points first, labelled 1, then Q points labelled 0.
    pub fn from_datasets(p: &PairedDataset, q: &PairedDataset) -> Result<Self> {
        check_compatible(p, q)?;
        let covariates = p.covariates().iter().chain(q.covariates()).cloned().collect();
        let outcomes = p.outcomes().iter().chain(q.outcomes()).cloned().collect();
        let treatment = std::iter::repeat_n(true, p.len()).chain(std::iter::repeat_n(false, q.len())).collect();
        Self::new(covariates, outcomes, treatment)
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

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    /// Flip every label.
    pub fn swapped(&self) -> Self {
        CombinedSample {
            treatment: self.treatment.iter().map(|t| !t).collect(),
            ..self.clone()
        }
    }
}

/// Blocks of the pseudo-outcome Gram matrix.
///
/// `b_y` (`n_Y x n_t`) and `b_z` (`n_Z x n_t`) hold the CME weights of the two
/// outcome models at every pooled covariate, so `μ̂_{Y|x̃_j} = Σ_k b_y[k, j] ℓ(·, y_k)`.
#[derive(Debug, Clone)]
pub struct PseudoOutcomeAssembly {
    pub e_hat: DVector<f64>,
    pub e_tilde: DVector<f64>,
    pub l_ww: DMatrix<f64>,
    pub l_w_yhat: DMatrix<f64>,
    pub l_w_zhat: DMatrix<f64>,
    pub l_yhat_yhat: DMatrix<f64>,
    pub l_yhat_zhat: DMatrix<f64>,
    pub l_zhat_zhat: DMatrix<f64>,
    pub b_y: DMatrix<f64>,
    pub b_z: DMatrix<f64>,
}

fn e_tilde(treatment: &[bool], e_hat: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        e_hat.len(),
        treatment.iter().zip(e_hat.iter()).map(|(&t, &e)| ((t as u8 as f64) - e) / (e * (1.0 - e))),
    )
}

impl PseudoOutcomeAssembly {
    /// Assemble from outcome Gram blocks. `l_wy` is `ℓ(w_i, y_k)` (`n_t x n_Y`),
    /// `l_wz` is `ℓ(w_i, z_k)`, and `l_yy`, `l_yz`, `l_zz` are the model outcome Grams.
    #[allow(clippy::too_many_arguments)]
    pub fn from_blocks(
        treatment: &[bool],
        e_hat: DVector<f64>,
        l_ww: DMatrix<f64>,
        l_wy: &DMatrix<f64>,
        l_wz: &DMatrix<f64>,
        l_yy: &DMatrix<f64>,
        l_yz: &DMatrix<f64>,
        l_zz: &DMatrix<f64>,
        b_y: DMatrix<f64>,
        b_z: DMatrix<f64>,
    ) -> Self {
        let e_tilde = e_tilde(treatment, &e_hat);
        PseudoOutcomeAssembly {
            l_w_yhat: l_wy * &b_y,
            l_w_zhat: l_wz * &b_z,
            l_yhat_yhat: symmetrize(b_y.transpose() * l_yy * &b_y),
            l_yhat_zhat: b_y.transpose() * l_yz * &b_z,
            l_zhat_zhat: symmetrize(b_z.transpose() * l_zz * &b_z),
            e_hat,
            e_tilde,
            l_ww,
            b_y,
            b_z,
        }
    }

    pub fn len(&self) -> usize {
        self.e_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_hat.is_empty()
    }

    /// `Ψ_DR* Ψ_DR` in factored form.
    pub fn psi_gram(&self) -> DMatrix<f64> {
        let e = &self.e_hat;
        let one_minus: DVector<f64> = e.map(|v| 1.0 - v);
        // right-multiplying by a diagonal scales columns, left-multiplying scales rows
        let cols = |m: &DMatrix<f64>, d: &DVector<f64>| {
            let mut out = m.clone();
            for (j, v) in d.iter().enumerate() {
                out.column_mut(j).scale_mut(*v);
            }
            out
        };
        let rows = |m: &DMatrix<f64>, d: &DVector<f64>| {
            let mut out = m.clone();
            for (i, v) in d.iter().enumerate() {
                out.row_mut(i).scale_mut(*v);
            }
            out
        };
        let l_yhat_w = self.l_w_yhat.transpose();
        let l_zhat_w = self.l_w_zhat.transpose();
        let l_zhat_yhat = self.l_yhat_zhat.transpose();

        let mut inner = self.l_ww.clone();
        inner -= cols(&self.l_w_yhat, &one_minus);
        inner -= cols(&self.l_w_zhat, e);
        inner -= rows(&l_yhat_w, &one_minus);
        inner += rows(&cols(&self.l_yhat_yhat, &one_minus), &one_minus);
        inner += rows(&cols(&self.l_yhat_zhat, e), &one_minus);
        inner -= rows(&l_zhat_w, e);
        inner += rows(&cols(&l_zhat_yhat, &one_minus), e);
        inner += rows(&cols(&self.l_zhat_zhat, e), e);
        symmetrize(rows(&cols(&inner, &self.e_tilde), &self.e_tilde))
    }

    /// `⟨g, ψ_i⟩` for `g = ℓ(·, y0)`, given `ℓ(y0, w_i)`, `ℓ(y0, y_k)` and `ℓ(y0, z_k)`.
    pub fn pseudo_outcome_values(&self, g_w: &DVector<f64>, g_y: &DVector<f64>, g_z: &DVector<f64>) -> DVector<f64> {
        let my = self.b_y.tr_mul(g_y);
        let mz = self.b_z.tr_mul(g_z);
        DVector::from_fn(self.len(), |i, _| {
            let e = self.e_hat[i];
            self.e_tilde[i] * (g_w[i] - (1.0 - e) * my[i] - e * mz[i])
        })
    }
}

fn check_model_kernel(model: &CmoModel, kernel_y: &KernelSpec) -> Result<()> {
    if model.kernel_y() != kernel_y {
        return Err(CmmdError::invalid(format!(
            "outcome model uses kernel {} but the assembly uses {}",
            model.kernel_y(),
            kernel_y
        )));
    }
    Ok(())
}

/// Builds the pseudo-outcome blocks for `sample` from fitted outcome models.
pub fn pseudo_outcome_assembly(
    sample: &CombinedSample,
    prop: &PropensityModel,
    model_y: &CmoModel,
    model_z: &CmoModel,
    kernel_y: &KernelSpec,
) -> Result<PseudoOutcomeAssembly> {
    check_model_kernel(model_y, kernel_y)?;
    check_model_kernel(model_z, kernel_y)?;
    let e_hat = prop.evaluate(sample.covariates())?;
    let ys = model_y.train().outcomes();
    let zs = model_z.train().outcomes();
    let w = sample.outcomes();
    Ok(PseudoOutcomeAssembly::from_blocks(
        sample.treatment(),
        e_hat,
        gram(kernel_y, w, w)?,
        &gram(kernel_y, w, ys)?,
        &gram(kernel_y, w, zs)?,
        &gram(kernel_y, ys, ys)?,
        &gram(kernel_y, ys, zs)?,
        &gram(kernel_y, zs, zs)?,
        model_y.cme_weights_batch(sample.covariates())?,
        model_z.cme_weights_batch(sample.covariates())?,
    ))
}

/// Assembly when the outcome models are the per-sample ridge regressions on
/// the pooled data itself (P rows first in `grams`).
pub fn assembly_from_grams(grams: &PooledGrams, e_hat: DVector<f64>, lambda_p: f64, lambda_q: f64) -> Result<PseudoOutcomeAssembly> {
    let (n, m) = (grams.n, grams.m());
    let nt = n + m;
    let k_p = grams.k.rows(0, n);
    let k_q = grams.k.rows(n, m);
    let w_p = ridge_weights_on_range(&k_p.columns(0, n).clone_owned(), lambda_p, n)?;
    let w_q = ridge_weights_on_range(&k_q.columns(n, m).clone_owned(), lambda_q, m)?;
    let b_y = &w_p * k_p;
    let b_z = &w_q * k_q;
    let treatment: Vec<bool> = (0..nt).map(|i| i < n).collect();
    let l = &grams.l;
    Ok(PseudoOutcomeAssembly::from_blocks(
        &treatment,
        e_hat,
        l.clone(),
        &l.columns(0, n).clone_owned(),
        &l.columns(n, m).clone_owned(),
        &l.view((0, 0), (n, n)).clone_owned(),
        &l.view((0, n), (n, m)).clone_owned(),
        &l.view((n, n), (m, m)).clone_owned(),
        b_y,
        b_z,
    ))
}

/// Pseudo-outcome ridge regression on the pooled covariates.
#[derive(Debug, Clone)]
pub struct DrRegression {
    pub assembly: PseudoOutcomeAssembly,
    pub covariates: Vec<Point>,
    pub kernel_x: KernelSpec,
    pub lambda: f64,
    /// `W̃ = (K̃ + n_t λ I)⁻¹`
    pub weights: DMatrix<f64>,
}

impl DrRegression {
    pub fn fit(assembly: PseudoOutcomeAssembly, covariates: Vec<Point>, kernel_x: &KernelSpec, lambda: f64) -> Result<Self> {
        if covariates.len() != assembly.len() {
            return Err(CmmdError::DimensionMismatch { expected: assembly.len(), got: covariates.len() });
        }
        let k = gram(kernel_x, &covariates, &covariates)?;
        let weights = ridge_weights_on_range(&k, lambda, covariates.len())?;
        Ok(DrRegression { assembly, covariates, kernel_x: kernel_x.clone(), lambda, weights })
    }

    pub fn difference_weights(&self, x: &Point) -> Result<DVector<f64>> {
        dr_difference_weights(self, x)
    }
}

/// `c(x) = W̃ K̃_{X̃,x}`, so that `Δ̂_DR k(·, x) = Σ_i c_i(x) ψ_i`.
pub fn dr_difference_weights(reg: &DrRegression, x: &Point) -> Result<DVector<f64>> {
    let d = reg.covariates[0].dim();
    if x.dim() != d {
        return Err(CmmdError::DimensionMismatch { expected: d, got: x.dim() });
    }
    let k = gram(&reg.kernel_x, &reg.covariates, std::slice::from_ref(x))?;
    Ok((&reg.weights * k).column(0).into_owned())
}

/// `Tr(Ψ*Ψ W̃ S_s W̃)` with `S_s = K̃ (K̃ / n_t)^s`.
pub fn dr_value(psi_gram: &DMatrix<f64>, k_pooled: &DMatrix<f64>, lambda: f64, level: f64) -> Result<f64> {
    let nt = k_pooled.nrows();
    let w = ridge_weights_on_range(k_pooled, lambda, nt)?;
    let uniform = DVector::from_element(nt, 1.0 / nt as f64);
    let s = smoothed_gram(k_pooled, &uniform, level)?;
    Ok(trace_of_pair(psi_gram, &(&w * s * &w)))
}

/// Cross-validated shared λ for the pseudo-outcome regression.
pub fn select_shared_lambda(psi_gram: &DMatrix<f64>, k_pooled: &DMatrix<f64>, cfg: &CmmdConfig) -> Result<f64> {
    match cfg.lambda_shared {
        Lambda::Fixed(v) => Ok(v),
        Lambda::CrossValidated => {
            let grid = &cfg.cv.grid;
            if grid.len() == 1 {
                return Ok(grid[0]);
            }
            let losses = cv_losses(k_pooled, psi_gram, grid, cfg.cv.folds, cfg.cv.seed)?;
            Ok(argmin_lambda(grid, &losses))
        }
    }
}

/// Doubly robust squared CMMD at `cfg.level`. `cfg.kernel_x` must be fixed
/// (median bandwidths are resolved on the pooled covariates here).
pub fn cmmd_dr_sq(
    sample: &CombinedSample,
    prop: &PropensityModel,
    model_y: &CmoModel,
    model_z: &CmoModel,
    cfg: &CmmdConfig,
) -> Result<CmmdEstimate> {
    cfg.validate()?;
    let mut config = cfg.clone();
    config.kernel_x = cfg.kernel_x.resolve(sample.covariates())?;
    config.kernel_y = model_y.kernel_y().clone();
    config.estimator = EstimatorKind::DoublyRobust;
    let assembly = pseudo_outcome_assembly(sample, prop, model_y, model_z, &config.kernel_y)?;
    let k = gram(&config.kernel_x, sample.covariates(), sample.covariates())?;
    let psi = assembly.psi_gram();
    let lambda = select_shared_lambda(&psi, &k, &config)?;
    config.lambda_shared = Lambda::Fixed(lambda);
    config.lambda_p = Lambda::Fixed(model_y.lambda());
    config.lambda_q = Lambda::Fixed(model_z.lambda());
    let value = dr_value(&psi, &k, lambda, config.level)?;
    let n_p = sample.treatment().iter().filter(|&&t| t).count();
    Ok(CmmdEstimate { value, config, sample_sizes: (n_p, sample.len() - n_p) })
}

/// Doubly robust estimate for two datasets with outcome models fitted on
/// each dataset (kernels resolved on the pooled sample).
pub fn estimate_dr(p: &PairedDataset, q: &PairedDataset, prop: &PropensityModel, cfg: &CmmdConfig) -> Result<CmmdEstimate> {
    let resolved = cfg.resolve(p, q)?;
    let (lp, lq) = resolved.fixed_lambdas()?;
    let sample = CombinedSample::from_datasets(p, q)?;
    let grams = PooledGrams::from_data(p, q, &resolved.kernel_x, &resolved.kernel_y)?;
    let e_hat = prop.evaluate(sample.covariates())?;
    let assembly = assembly_from_grams(&grams, e_hat, lp, lq)?;
    let psi = assembly.psi_gram();
    let lambda = select_shared_lambda(&psi, &grams.k, &resolved)?;
    let value = dr_value(&psi, &grams.k, lambda, resolved.level)?;
    let mut config = resolved;
    config.lambda_shared = Lambda::Fixed(lambda);
    config.estimator = EstimatorKind::DoublyRobust;
    Ok(CmmdEstimate { value, config, sample_sizes: (p.len(), q.len()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::fit_cmo;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(seed: u64, n: usize) -> PairedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).cos() + 0.2 * rng.random_range(-1.0..1.0)).collect();
        PairedDataset::from_scalars(&xs, &ys).unwrap()
    }

    fn logistic() -> PropensityModel {
        PropensityModel::analytic("logistic", |x: &Point| Ok(1.0 / (1.0 + (-(2.0 * x[0] - 1.0)).exp())))
    }

    /// Branch form: t = 1 gives `(ℓ(w) - μ_Y)/e + μ_Y - μ_Z`, t = 0 gives
    /// `-(ℓ(w) - μ_Z)/(1 - e) + μ_Y - μ_Z`. Inner products expand through
    /// the representer coefficients over (w, y, z) atoms.
    fn branch_gram(sample: &CombinedSample, e: &DVector<f64>, my: &CmoModel, mz: &CmoModel, ky: &KernelSpec) -> DMatrix<f64> {
        let ys = my.train().outcomes();
        let zs = mz.train().outcomes();
        let atoms: Vec<Point> = sample.outcomes().iter().chain(ys).chain(zs).cloned().collect();
        let g = gram(ky, &atoms, &atoms).unwrap();
        let nt = sample.len();
        let by = my.cme_weights_batch(sample.covariates()).unwrap();
        let bz = mz.cme_weights_batch(sample.covariates()).unwrap();
        let mut coef = DMatrix::<f64>::zeros(atoms.len(), nt);
        for i in 0..nt {
            let (cw, cy, cz) = if sample.treatment()[i] {
                (1.0 / e[i], 1.0 - 1.0 / e[i], -1.0)
            } else {
                (-1.0 / (1.0 - e[i]), 1.0, -1.0 + 1.0 / (1.0 - e[i]))
            };
            coef[(i, i)] += cw;
            for k in 0..ys.len() {
                coef[(nt + k, i)] += cy * by[(k, i)];
            }
            for k in 0..zs.len() {
                coef[(nt + ys.len() + k, i)] += cz * bz[(k, i)];
            }
        }
        coef.transpose() * g * coef
    }

    #[test]
    fn factored_form_matches_branch_form() {
        let p = random_data(1, 9);
        let q = random_data(2, 7);
        let kx = KernelSpec::gaussian(1.3);
        let ky = KernelSpec::gaussian(0.8);
        let my = fit_cmo(&p, &kx, &ky, 0.05).unwrap();
        let mz = fit_cmo(&q, &kx, &ky, 0.2).unwrap();
        let sample = CombinedSample::from_datasets(&p, &q).unwrap();
        for prop in [PropensityModel::constant(0.4).unwrap(), logistic()] {
            let asm = pseudo_outcome_assembly(&sample, &prop, &my, &mz, &ky).unwrap();
            let oracle = branch_gram(&sample, &asm.e_hat, &my, &mz, &ky);
            let diff = (asm.psi_gram() - oracle).amax();
            assert!(diff < 1e-10, "{diff}");
        }
    }

    #[test]
    fn gram_route_matches_model_route() {
        let p = random_data(3, 10);
        let q = random_data(4, 12);
        let kx = KernelSpec::gaussian(1.0);
        let ky = KernelSpec::Linear;
        let cfg = CmmdConfig::new(1.0, kx.clone(), ky.clone()).with_lambdas(0.1, 0.05);
        let mut cfg = cfg;
        cfg.lambda_shared = Lambda::Fixed(0.02);
        let prop = logistic();
        let a = estimate_dr(&p, &q, &prop, &cfg).unwrap().value;
        let my = fit_cmo(&p, &kx, &ky, 0.1).unwrap();
        let mz = fit_cmo(&q, &kx, &ky, 0.05).unwrap();
        let sample = CombinedSample::from_datasets(&p, &q).unwrap();
        let b = cmmd_dr_sq(&sample, &prop, &my, &mz, &cfg).unwrap().value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn single_point_coefficient_two() {
        // t = 1, e = 0.5, zero outcome models: ψ = 2 ℓ(·, w)
        let p = PairedDataset::from_scalars(&[0.0], &[3.0]).unwrap();
        let q = PairedDataset::from_scalars(&[1.0], &[0.0]).unwrap();
        let kx = KernelSpec::gaussian(1.0);
        let ky = KernelSpec::Linear;
        let my = fit_cmo(&p, &kx, &ky, 1e300).unwrap();
        let mz = fit_cmo(&q, &kx, &ky, 1e300).unwrap();
        let sample = CombinedSample::from_datasets(&p, &q).unwrap();
        let asm = pseudo_outcome_assembly(&sample, &PropensityModel::constant(0.5).unwrap(), &my, &mz, &ky).unwrap();
        assert_abs_diff_eq!(asm.e_tilde[0], 2.0, epsilon = 1e-15);
        let g = asm.psi_gram();
        assert_abs_diff_eq!(g[(0, 0)], 4.0 * 9.0, epsilon = 1e-9);
        let one = DVector::from_element(1, 1.0);
        let vals = asm.pseudo_outcome_values(&DVector::from_vec(vec![3.0, 0.0]), &DVector::from_vec(vec![3.0]), &DVector::from_vec(vec![0.0]));
        assert_abs_diff_eq!(vals[0], 6.0, epsilon = 1e-9);
        let _ = one;
    }

    #[test]
    fn overlap_violation() {
        let sample = CombinedSample::from_datasets(&random_data(5, 3), &random_data(6, 3)).unwrap();
        let near_one = PropensityModel::analytic("near_one", |_: &Point| Ok(1.0 - 1e-9));
        assert!(matches!(near_one.evaluate(sample.covariates()), Err(CmmdError::Overlap { .. })));
        assert!(PropensityModel::constant(1.0).is_err());
        let loose = near_one.with_delta(0.0).unwrap();
        assert!(loose.evaluate(sample.covariates()).is_ok());
    }

    #[test]
    fn single_class_rejected() {
        let d = random_data(7, 4);
        let s = CombinedSample::new(d.covariates().to_vec(), d.outcomes().to_vec(), vec![true; 4]);
        assert!(s.unwrap_err().is_input_error());
    }

    #[test]
    fn label_swap_invariance() {
        let p = random_data(8, 8);
        let q = random_data(9, 11);
        let kx = KernelSpec::gaussian(1.0);
        let ky = KernelSpec::gaussian(1.0);
        let my = fit_cmo(&p, &kx, &ky, 0.1).unwrap();
        let mz = fit_cmo(&q, &kx, &ky, 0.1).unwrap();
        let mut cfg = CmmdConfig::new(1.0, kx, ky);
        cfg.lambda_shared = Lambda::Fixed(0.05);
        let sample = CombinedSample::from_datasets(&p, &q).unwrap();
        let prop = logistic();
        for s in [0.0, 1.0, 2.0] {
            let c = cfg.clone().with_level(s);
            let a = cmmd_dr_sq(&sample, &prop, &my, &mz, &c).unwrap().value;
            let b = cmmd_dr_sq(&sample.swapped(), &prop.complement(), &mz, &my, &c).unwrap().value;
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "s={s}: {a} vs {b}");
            assert!(a >= -1e-10);
        }
    }

    #[test]
    fn difference_weights_decay_far_away() {
        let p = random_data(10, 6);
        let q = random_data(11, 6);
        let kx = KernelSpec::gaussian(1.0);
        let ky = KernelSpec::Linear;
        let sample = CombinedSample::from_datasets(&p, &q).unwrap();
        let my = fit_cmo(&p, &kx, &ky, 0.1).unwrap();
        let mz = fit_cmo(&q, &kx, &ky, 0.1).unwrap();
        let asm = pseudo_outcome_assembly(&sample, &PropensityModel::constant(0.5).unwrap(), &my, &mz, &ky).unwrap();
        let reg = DrRegression::fit(asm, sample.covariates().to_vec(), &kx, 0.1).unwrap();
        let c = reg.difference_weights(&Point::scalar(50.0)).unwrap();
        assert!(c.amax() < 1e-100);
        assert!(reg.difference_weights(&Point::new(vec![0.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn propensity_spec_serde() {
        let s: PropensitySpec = serde_json::from_str(r#"{"type":"constant","value":0.5}"#).unwrap();
        assert_eq!(s, PropensitySpec::Constant { value: 0.5 });
        let a: PropensitySpec = serde_json::from_str(r#"{"type":"analytic","name":"uniform_vs_beta_half"}"#).unwrap();
        let m = a.build().unwrap();
        assert_abs_diff_eq!(m.value(&Point::scalar(0.5)).unwrap(), 1.0 / (1.0 + 2.0 / std::f64::consts::PI), epsilon = 1e-15);
    }

    #[test]
    fn tabulated_lookup() {
        let t = PropensityModel::tabulated(vec![(Point::scalar(0.1), 0.3), (Point::scalar(0.2), 0.7)]).unwrap();
        assert_eq!(t.value(&Point::scalar(0.2)).unwrap(), 0.7);
        assert!(t.value(&Point::scalar(0.3)).unwrap_err().is_input_error());
    }
}
