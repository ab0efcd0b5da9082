//! Dense symmetric linear algebra used by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{CmmdError, Result};

/// Absolute asymmetry tolerance, scaled by `max(1, max|M|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as zero; anything lower is an error.
pub const PSD_CLAMP: f64 = 1e-8;

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: DVector<f64>,
    /// Orthogonal; column `i` belongs to `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `V diag(f(λ)) Vᵀ`
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let fj = f(lam);
            scaled.column_mut(j).scale_mut(fj);
        }
        symmetrize(scaled * v.transpose())
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map(|l| l)
    }
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(CmmdError::invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(CmmdError::invalid(format!("{what} is empty")));
    }
    let tol = SYMMETRY_TOL * m.amax().max(1.0);
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(CmmdError::invalid(format!(
                    "{what} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// `(M + Mᵀ) / 2`
pub fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// `W = (K + λ n I)⁻¹` through a Cholesky factorization.
pub fn ridge_weights(k: &DMatrix<f64>, lambda: f64, n: usize) -> Result<DMatrix<f64>> {
    check_symmetric(k, "kernel matrix")?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CmmdError::invalid(format!("ridge parameter must be positive, got {lambda}")));
    }
    if n == 0 {
        return Err(CmmdError::invalid("sample count must be positive"));
    }
    let dim = k.nrows();
    let mut a = k.clone();
    for i in 0..dim {
        a[(i, i)] += lambda * n as f64;
    }
    let chol = a.cholesky().ok_or_else(|| {
        CmmdError::Factorization("K + λnI is not positive definite; is K positive semidefinite?".into())
    })?;
    Ok(symmetrize(chol.inverse()))
}

/// Rounding in `W` reaches `W G W` products roughly as `cond² · dim · ε`;
/// above this the range-restricted inverse is used.
pub const RANGE_RESTRICT_ABOVE: f64 = 1e-10;

/// Whether `(K + shift I)⁻¹` is too ill-conditioned to form explicitly.
/// `norm_bound` is any upper bound on the largest eigenvalue of `K`.
pub(crate) fn needs_range_restriction(norm_bound: f64, shift: f64, dim: usize) -> bool {
    let cond = (norm_bound + shift) / shift;
    cond * cond * dim as f64 * f64::EPSILON > RANGE_RESTRICT_ABOVE
}

/// `(K + λ n I)⁻¹`, restricted to the numerical range of `K` when the plain
/// inverse is ill-conditioned.
///
/// The estimators only apply `W` to vectors `Φ*v`, which lie in the range of
/// `K`. For rank-deficient Grams (delta or polynomial kernels) at small `λ`
/// the plain inverse amplifies rounding in the null space of `K` by
/// `1 / (λ n)²`. Eigenvalues below `max(σ) · dim · ε` are dropped in that case.
/// Well-conditioned systems get the exact inverse from [`ridge_weights`].
pub fn ridge_weights_on_range(k: &DMatrix<f64>, lambda: f64, n: usize) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CmmdError::invalid(format!("ridge parameter must be positive, got {lambda}")));
    }
    if n == 0 {
        return Err(CmmdError::invalid("sample count must be positive"));
    }
    let shift = lambda * n as f64;
    // max absolute row sum bounds the spectral radius
    let row_bound = k.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if !needs_range_restriction(row_bound, shift, k.nrows()) {
        return ridge_weights(k, lambda, n);
    }
    let spec = clamp_psd(sym_eig(k)?)?;
    let tol = spec.max_eigenvalue().max(0.0) * k.nrows() as f64 * f64::EPSILON;
    Ok(spec.map(|s| if s > tol { 1.0 / (s + shift) } else { 0.0 }))
}

pub fn sym_eig(m: &DMatrix<f64>) -> Result<Spectrum> {
    check_symmetric(m, "matrix")?;
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = eig.eigenvectors.select_columns(&order);
    Ok(Spectrum { eigenvalues, eigenvectors })
}

/// Checks the PSD clamp on a spectrum and returns it with tiny negatives zeroed.
pub fn clamp_psd(mut spectrum: Spectrum) -> Result<Spectrum> {
    let min = spectrum.min_eigenvalue();
    if min < -PSD_CLAMP {
        return Err(CmmdError::NotPsd(min));
    }
    spectrum.eigenvalues.apply(|l| {
        if *l < 0.0 {
            *l = 0.0
        }
    });
    Ok(spectrum)
}

/// `K^s` for symmetric PSD `K` via its spectrum. Zero eigenvalues map to
/// zero for `s > 0`; `s = 0` returns the identity.
pub fn matrix_power(k: &DMatrix<f64>, s: f64) -> Result<DMatrix<f64>> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(CmmdError::invalid(format!("matrix power must be a finite s >= 0, got {s}")));
    }
    let spec = clamp_psd(sym_eig(k)?)?;
    Ok(spectral_power(&spec, s))
}

pub(crate) fn spectral_power(spec: &Spectrum, s: f64) -> DMatrix<f64> {
    if s == 0.0 {
        return DMatrix::identity(spec.eigenvalues.len(), spec.eigenvalues.len());
    }
    spec.map(|l| if l > 0.0 { l.powf(s) } else { 0.0 })
}

/// `Tr(A B) = Σ_ij A_ij B_ji` without forming the product.
pub fn trace_of_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    a.component_mul(&b.transpose()).sum()
}

/// Trace of the ordered product of `factors`.
///
/// All but the last factor are multiplied left to right; the final pairing
/// uses [`trace_of_pair`].
pub fn trace_product(factors: &[&DMatrix<f64>]) -> Result<f64> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| CmmdError::invalid("trace of an empty product"))?;
    for (i, pair) in factors.windows(2).enumerate() {
        if pair[0].ncols() != pair[1].nrows() {
            return Err(CmmdError::invalid(format!(
                "factors {i} ({}x{}) and {} ({}x{}) are not conformable",
                pair[0].nrows(),
                pair[0].ncols(),
                i + 1,
                pair[1].nrows(),
                pair[1].ncols()
            )));
        }
    }
    let last = factors[factors.len() - 1];
    if first.nrows() != last.ncols() {
        return Err(CmmdError::invalid("product is not square"));
    }
    match rest.split_last() {
        None => Ok(first.trace()),
        Some((last, middle)) => {
            let mut acc = (*first).clone();
            for f in middle {
                acc = acc * *f;
            }
            Ok(trace_of_pair(&acc, last))
        }
    }
}
