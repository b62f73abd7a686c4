//! Dense symmetric-matrix primitives.
//!
//! Everything downstream works on real symmetric `p x p` matrices: population
//! covariances, their square roots, and the trace functionals built from them.
//! This module provides the two carrier types ([`SymMat`], [`PsdMat`]), the
//! two matrix distances (`d_prop`, `d_zero`), the weighted inner product
//! `<A, B>_Sigma` that shows up in every asymptotic variance, and the
//! normalizations used by the simulation scenarios.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative asymmetry tolerated when ingesting a raw matrix.
const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalue slack when certifying positive semi-definiteness, relative to
/// the largest eigenvalue. Absorbs eigensolver noise on genuinely PSD inputs.
const PSD_TOL: f64 = 1e-10;

/// A dense real symmetric matrix.
///
/// Symmetry is checked (to `1e-12` relative) on construction and held exactly
/// afterwards: the stored entries satisfy `m[(i, j)] == m[(j, i)]` bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    m: DMatrix<f64>,
}

impl SymMat {
    /// Wraps a square matrix, verifying symmetry up to a small relative
    /// tolerance and then symmetrizing exactly via `(M + M^T) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.is_empty() {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
        let mut worst = 0.0f64;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if worst > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(worst / scale));
        }
        Ok(Self::from_nearly_symmetric(m))
    }

    /// Symmetrizes unconditionally. For internal results that are symmetric by
    /// construction and only perturbed by floating-point round-off.
    pub(crate) fn from_nearly_symmetric(mut m: DMatrix<f64>) -> Self {
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMat { m }
    }

    pub fn identity(p: usize) -> Self {
        SymMat {
            m: DMatrix::identity(p, p),
        }
    }

    pub fn zeros(p: usize) -> Self {
        SymMat {
            m: DMatrix::zeros(p, p),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let p = diag.len();
        let mut m = DMatrix::zeros(p, p);
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        SymMat { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    /// `tr(M^2)`, which for a symmetric matrix equals the squared Frobenius
    /// norm and needs no matrix product.
    pub fn trace_sq(&self) -> f64 {
        self.m.iter().map(|v| v * v).sum()
    }

    pub fn scale(&self, a: f64) -> SymMat {
        SymMat { m: &self.m * a }
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &SymMat) -> Result<SymMat> {
        check_same_dim(self, other)?;
        Ok(SymMat {
            m: &self.m + a * &other.m,
        })
    }

    /// `p^{-1} tr(M)`.
    pub fn spectral_mean(&self) -> f64 {
        self.trace() / self.dim() as f64
    }

    /// Eigendecomposition of the symmetric matrix: `(eigenvalues, eigenvectors)`.
    pub(crate) fn sym_eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        let eig = nalgebra::linalg::SymmetricEigen::new(self.m.clone());
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    }
}

/// A [`SymMat`] certified positive semi-definite at construction time.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMat {
    sym: SymMat,
}

impl PsdMat {
    /// Certifies positive semi-definiteness by eigendecomposition: every
    /// eigenvalue must be at least `-1e-10` times the largest one.
    pub fn certify(sym: SymMat) -> Result<Self> {
        let (eigs, _) = sym.sym_eigen();
        let max = eigs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let min = eigs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if !max.is_finite() || !min.is_finite() {
            return Err(Error::Numerical("eigendecomposition failure".into()));
        }
        let tol = PSD_TOL * max.max(0.0);
        if min < -tol {
            return Err(Error::NotPsd { min_eig: min, tol });
        }
        Ok(PsdMat { sym })
    }

    /// Wraps a matrix that is PSD by construction (e.g. `V diag(d>=0) V^T`).
    pub(crate) fn from_psd_unchecked(sym: SymMat) -> Self {
        PsdMat { sym }
    }

    pub fn identity(p: usize) -> Self {
        PsdMat {
            sym: SymMat::identity(p),
        }
    }

    /// Diagonal PSD matrix; all entries must be nonnegative.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "diagonal of a PSD matrix must be nonnegative and finite".into(),
            ));
        }
        Ok(PsdMat {
            sym: SymMat::from_diagonal(diag),
        })
    }

    /// Scales by a nonnegative factor; PSD is preserved without re-certifying.
    pub fn scaled(&self, a: f64) -> Result<PsdMat> {
        if a < 0.0 || !a.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scaling a PSD matrix requires a nonnegative finite factor, got {a}"
            )));
        }
        Ok(PsdMat {
            sym: self.sym.scale(a),
        })
    }

    /// Nonnegative combination `sum_k w_k M_k` of PSD matrices, PSD by closure.
    pub fn weighted_sum(parts: &[(f64, &PsdMat)]) -> Result<PsdMat> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty weighted sum".into()))?;
        let p = first.1.dim();
        let mut acc = DMatrix::zeros(p, p);
        for &(w, mat) in parts {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "weights in a PSD combination must be nonnegative, got {w}"
                )));
            }
            if mat.dim() != p {
                return Err(Error::DimensionMismatch(format!(
                    "weighted sum mixes dimensions {p} and {}",
                    mat.dim()
                )));
            }
            acc += w * mat.as_matrix();
        }
        Ok(PsdMat {
            sym: SymMat::from_nearly_symmetric(acc),
        })
    }

    pub fn sym(&self) -> &SymMat {
        &self.sym
    }

    pub fn into_sym(self) -> SymMat {
        self.sym
    }

    pub fn dim(&self) -> usize {
        self.sym.dim()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.sym.as_matrix()
    }

    pub fn trace(&self) -> f64 {
        self.sym.trace()
    }

    pub fn trace_sq(&self) -> f64 {
        self.sym.trace_sq()
    }
}

fn check_same_dim(a: &SymMat, b: &SymMat) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "matrix dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Proportionality distance
/// `d_prop(A, B) = p^{-2} tr[(tr B) A - (tr A) B]^2`.
///
/// Vanishes exactly when `A = w B` for some scalar `w`.
pub fn d_prop(a: &SymMat, b: &SymMat) -> Result<f64> {
    check_same_dim(a, b)?;
    let p = a.dim() as f64;
    let (ta, tb) = (a.trace(), b.trace());
    // tr(M^2) = ||M||_F^2 for the symmetric M = tb*A - ta*B.
    let mut acc = 0.0;
    for (x, y) in a.as_matrix().iter().zip(b.as_matrix().iter()) {
        let v = tb * x - ta * y;
        acc += v * v;
    }
    Ok(acc / (p * p))
}

/// Equality distance `d_0(A, B) = tr[(A - B)^2]`; zero iff `A == B`.
pub fn d_zero(a: &SymMat, b: &SymMat) -> Result<f64> {
    check_same_dim(a, b)?;
    let mut acc = 0.0;
    for (x, y) in a.as_matrix().iter().zip(b.as_matrix().iter()) {
        let v = x - y;
        acc += v * v;
    }
    Ok(acc)
}

/// `D(M)`: the diagonal matrix carrying `M`'s diagonal.
pub fn diag_part(m: &SymMat) -> SymMat {
    let diag: Vec<f64> = (0..m.dim()).map(|i| m.as_matrix()[(i, i)]).collect();
    SymMat::from_diagonal(&diag)
}

/// Symmetric PSD square root via eigendecomposition, with negative
/// eigenvalues clamped to zero. Satisfies `S * S == Sigma` to roughly 1e-9
/// relative accuracy.
pub fn psd_sqrt(sigma: &PsdMat) -> Result<PsdMat> {
    let (eigs, vecs) = sigma.sym().sym_eigen();
    if eigs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigendecomposition failure".into()));
    }
    let roots: Vec<f64> = eigs.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Ok(PsdMat::from_psd_unchecked(rotated_diagonal(&vecs, &roots)))
}

/// `U diag(d) U^T` for an orthogonal `U`; PSD-safe when `d >= 0`.
pub(crate) fn rotated_diagonal(u: &DMatrix<f64>, diag: &[f64]) -> SymMat {
    let mut scaled = u.clone();
    for (k, &d) in diag.iter().enumerate() {
        scaled.column_mut(k).scale_mut(d);
    }
    SymMat::from_nearly_symmetric(&scaled * u.transpose())
}

/// The Sigma-weighted inner product of symmetric matrices:
///
/// `<A, B>_Sigma = 2 p^{-1} tr(S A S . S B S) + (nu4 - 3) p^{-1} tr(D(S A S) D(S B S))`
///
/// with `S = Sigma^{1/2}`. This bilinear form is the atom of every asymptotic
/// variance in the test procedures; it is symmetric and positive
/// semi-definite in `(A, A)` whenever `nu4 >= 1`.
pub fn sigma_inner(a: &SymMat, b: &SymMat, sigma: &PsdMat, nu4: f64) -> Result<f64> {
    check_same_dim(a, sigma.sym())?;
    let root = psd_sqrt(sigma)?;
    sigma_inner_with_root(a, b, root.as_matrix(), nu4)
}

/// As [`sigma_inner`], with `Sigma^{1/2}` supplied by the caller. Useful when
/// one root is reused across many evaluations.
pub fn sigma_inner_with_root(
    a: &SymMat,
    b: &SymMat,
    root: &DMatrix<f64>,
    nu4: f64,
) -> Result<f64> {
    check_same_dim(a, b)?;
    if root.nrows() != a.dim() || root.ncols() != a.dim() {
        return Err(Error::DimensionMismatch(format!(
            "root is {}x{}, matrices are {}x{}",
            root.nrows(),
            root.ncols(),
            a.dim(),
            a.dim()
        )));
    }
    if nu4 < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "fourth moment of a unit-variance variable is at least 1, got {nu4}"
        )));
    }
    let p = a.dim() as f64;
    let ma = root * a.as_matrix() * root;
    let mb = if std::ptr::eq(a, b) {
        None
    } else {
        Some(root * b.as_matrix() * root)
    };
    let mb_ref = mb.as_ref().unwrap_or(&ma);
    let mut full = 0.0;
    for (x, y) in ma.iter().zip(mb_ref.iter()) {
        full += x * y;
    }
    let mut diag = 0.0;
    for i in 0..a.dim() {
        diag += ma[(i, i)] * mb_ref[(i, i)];
    }
    Ok(2.0 * full / p + (nu4 - 3.0) * diag / p)
}

/// Normalizes a `(Sigma, Lambda)` pair for the proportionality scenarios:
/// `Sigma0 = Sigma / (p^{-1} tr Sigma)` and
/// `Lambda0 = Lambda / sqrt(p^{-1} d_prop(Lambda, Sigma0))`,
/// so that `p^{-1} tr(Sigma0) = 1` and `p^{-1} d_prop(Sigma0, Lambda0) = 1`.
pub fn normalize_prop_basis(sigma: &PsdMat, lambda: &PsdMat) -> Result<(PsdMat, PsdMat)> {
    check_same_dim(sigma.sym(), lambda.sym())?;
    let p = sigma.dim() as f64;
    let mean_trace = sigma.trace() / p;
    if mean_trace <= 0.0 {
        return Err(Error::InvalidArgument(
            "trace of Sigma must be positive".into(),
        ));
    }
    let sigma0 = sigma.scaled(1.0 / mean_trace)?;
    let dist = d_prop(lambda.sym(), sigma0.sym())? / p;
    if dist <= 1e-12 {
        return Err(Error::InvalidArgument(
            "Lambda is proportional to Sigma; the normalizer would divide by ~0".into(),
        ));
    }
    let lambda0 = lambda.scaled(1.0 / dist.sqrt())?;
    Ok((sigma0, lambda0))
}

/// Frobenius normalization `M / sqrt(p^{-1} tr(M^2))`, so the output `N`
/// satisfies `p^{-1} tr(N^2) = 1`.
pub fn normalize_frob(m: &SymMat) -> Result<SymMat> {
    let p = m.dim() as f64;
    let ms = m.trace_sq() / p;
    if ms <= 0.0 {
        return Err(Error::InvalidArgument(
            "cannot Frobenius-normalize the zero matrix".into(),
        ));
    }
    Ok(m.scale(1.0 / ms.sqrt()))
}
