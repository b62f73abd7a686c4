//! Sample-side machinery: unbiased spectral-moment estimators, the pair
//! kernels, the pooled statistics and their variance estimators.
//!
//! For a `p x n` data matrix `X` with sample covariance `S = X X^T / n`
//! (divisor `n`, no centering), the naive plug-in moments `p^{-1} tr(S^2)`
//! and `(p^{-1} tr S)^2` are biased when `p / n` is not small. The bias is
//! removed exactly by solving a non-random, invertible 3x3 linear system in
//! the three sample statistics `nu2, nu12, nu4`; the resulting unbiased
//! estimators are traces of the matrices `R_12`, `R_2`, `R_4` below. The
//! pooled statistics `U_p` (proportionality) and `V_p` (equality) average a
//! pair kernel over all population pairs, but are evaluated through
//! single-pass identities that avoid the quadratic pair sum.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mat::SymMat;

/// One population's observations: a `p x n` matrix whose columns are the
/// `n` individual observation vectors. Requires `n >= 2` (every unbiased
/// estimator divides by `n - 1`).
#[derive(Debug, Clone)]
pub struct Sample {
    x: DMatrix<f64>,
}

impl Sample {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("sample has dimension zero".into()));
        }
        if x.ncols() < 2 {
            return Err(Error::InvalidArgument(format!(
                "sample size must be at least 2, got {}",
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "sample contains non-finite entries".into(),
            ));
        }
        Ok(Sample { x })
    }

    /// Dimension `p`.
    pub fn p(&self) -> usize {
        self.x.nrows()
    }

    /// Sample size `n`.
    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Concentration ratio `c = p / n`.
    pub fn concentration(&self) -> f64 {
        self.p() as f64 / self.n() as f64
    }

    /// Sample covariance `S = X X^T / n`.
    pub fn sample_cov(&self) -> SymMat {
        let n = self.n() as f64;
        SymMat::from_nearly_symmetric(&self.x * self.x.transpose() / n)
    }

    /// Restricts the sample to a subset of variables (rows).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Sample> {
        if rows.iter().any(|&r| r >= self.p()) {
            return Err(Error::InvalidArgument("row index out of range".into()));
        }
        let m = DMatrix::from_fn(rows.len(), self.n(), |i, j| self.x[(rows[i], j)]);
        Sample::new(m)
    }

    /// Subtracts each variable's sample mean. The covariance divisor stays
    /// `n` afterwards.
    pub fn centered(&self) -> Sample {
        let n = self.n() as f64;
        let mut x = self.x.clone();
        for mut row in x.row_iter_mut() {
            let mean = row.iter().sum::<f64>() / n;
            row.iter_mut().for_each(|v| *v -= mean);
        }
        Sample { x }
    }
}

/// The three matrices whose traces against a test matrix `A` give unbiased
/// estimates of `mu_12(A)`, `mu_2(A)` and `mu_4(A)`.
#[derive(Debug, Clone)]
pub struct RMatrices {
    pub r12: SymMat,
    pub r2: SymMat,
    pub r4: SymMat,
}

/// The 3x3 coefficient matrix linking the expectations of `(nu2, nu12, nu4)`
/// to `(mu_2, mu_12, mu_4)`, together with its closed-form inverse. Both
/// depend only on `p` and `n`.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    pub f: nalgebra::Matrix3<f64>,
    pub finv: nalgebra::Matrix3<f64>,
    pub p: usize,
    pub n: usize,
}

impl MomentSystem {
    /// `det F = 1 - 1/n`.
    pub fn det(&self) -> f64 {
        1.0 - 1.0 / self.n as f64
    }
}

/// Builds the moment system for dimension `p` and sample size `n >= 2`.
pub fn moment_system(p: usize, n: usize) -> Result<MomentSystem> {
    if p == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "the moment system is near-singular at n = 1; need n >= 2".into(),
        ));
    }
    let (pf, nf) = (p as f64, n as f64);
    let c = pf / nf;
    let f = nalgebra::Matrix3::new(
        1.0 + 1.0 / nf,
        c,
        1.0 / nf,
        2.0 / (pf * nf),
        1.0,
        1.0 / (pf * nf),
        2.0,
        0.0,
        1.0,
    );
    let factor = nf / (nf - 1.0);
    let finv = factor
        * nalgebra::Matrix3::new(
            1.0,
            -c,
            -(nf - 1.0) / (nf * nf),
            0.0,
            (nf - 1.0) / nf,
            -(nf - 1.0) / (pf * nf * nf),
            -2.0,
            2.0 * c,
            (nf - 1.0) * (nf + 2.0) / (nf * nf),
        );
    Ok(MomentSystem { f, finv, p, n })
}

fn check_matching(x: &Sample, a: &SymMat) -> Result<()> {
    if a.dim() != x.p() {
        let (d, p) = (a.dim(), x.p());
        return Err(Error::DimensionMismatch(format!(
            "test matrix is {d}x{d}, sample dimension is {p}"
        )));
    }
    Ok(())
}

fn check_pair(xi: &Sample, xj: &Sample) -> Result<()> {
    if xi.p() != xj.p() {
        return Err(Error::DimensionMismatch(format!(
            "samples have dimensions {} and {}",
            xi.p(),
            xj.p()
        )));
    }
    Ok(())
}

/// The raw sample moments `(nu2(A), nu12(A), nu4(A))`.
///
/// `nu4` is evaluated through its single-sum form
/// `(p (n-1))^{-1} sum_r { (x_r' x_r)(x_r' A x_r) - tr(S) tr(S A) }`,
/// which costs `O(n p^2)` instead of the `O(n^2)` pair sum it equals.
pub fn nu_hats(x: &Sample, a: &SymMat) -> Result<(f64, f64, f64)> {
    check_matching(x, a)?;
    let (p, n) = (x.p() as f64, x.n() as f64);
    let s = x.sample_cov();
    let tr_s = s.trace();
    let tr_sa = frob_inner(s.as_matrix(), a.as_matrix());
    let s2a = s.as_matrix() * a.as_matrix();
    let tr_s2a = frob_inner(s.as_matrix(), &s2a.transpose());

    let ax = a.as_matrix() * x.data();
    let mut quartic = 0.0;
    for k in 0..x.n() {
        let col = x.data().column(k);
        let w = col.dot(&col);
        let qa = col.dot(&ax.column(k));
        quartic += w * qa;
    }

    let nu2 = tr_s2a / p;
    let nu12 = (tr_s / p) * (tr_sa / p);
    let nu4 = (quartic - n * tr_s * tr_sa) / (p * (n - 1.0));
    Ok((nu2, nu12, nu4))
}

fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Column-scaled Gram product `B = X D(X^T X) X^T`, accumulated without the
/// `n x n` Gram matrix, plus its trace `sum_k ||x_k||^4`.
fn quartic_gram(x: &Sample) -> (DMatrix<f64>, f64) {
    let mut scaled = x.data().clone();
    let mut tr_b = 0.0;
    for k in 0..x.n() {
        let w = x.data().column(k).norm_squared();
        scaled.column_mut(k).scale_mut(w);
        tr_b += w * w;
    }
    let b = &scaled * x.data().transpose();
    (b, tr_b)
}

/// The matrices `R_12`, `R_2`, `R_4` of one sample.
pub fn r_matrices(x: &Sample) -> Result<RMatrices> {
    let (p, n) = (x.p() as f64, x.n() as f64);
    let s = x.sample_cov();
    let tr_s = s.trace();
    let (b, _) = quartic_gram(x);
    let s2 = s.as_matrix() * s.as_matrix();

    let r12 = SymMat::from_nearly_symmetric(
        s.as_matrix() * (n * tr_s / (p * (n - 1.0))) - &b / (p * n * (n - 1.0)),
    );
    let r2 = SymMat::from_nearly_symmetric(&s2 * (n / (n - 1.0)) - &b / (n * (n - 1.0)));
    let r4 = SymMat::from_nearly_symmetric(
        &b * ((n + 2.0) / (n * (n - 1.0)))
            - &s2 * (2.0 * n / (n - 1.0))
            - s.as_matrix() * (n * tr_s / (n - 1.0)),
    );
    Ok(RMatrices { r12, r2, r4 })
}

/// Unbiased estimators `(mu12_hat, mu2_hat)` of `(p^{-1} tr Sigma)^2` and
/// `p^{-1} tr(Sigma^2)`.
pub fn mu_hats(x: &Sample) -> Result<(f64, f64)> {
    let s = PopSummary::build(x);
    Ok((s.mu12, s.mu2))
}

/// Unbiased estimator of the cross term
/// `gamma_ij = (p^{-1} tr Sigma_i)(p^{-1} tr Sigma_i Sigma_j)(p^{-1} tr Sigma_j)`.
pub fn gamma_hat(xi: &Sample, xj: &Sample) -> Result<f64> {
    check_pair(xi, xj)?;
    let si = PopSummary::build(xi);
    let sj = PopSummary::build(xj);
    Ok(gamma_from_summaries(&si, &sj))
}

pub(crate) fn gamma_from_summaries(si: &PopSummary, sj: &PopSummary) -> f64 {
    frob_inner(&si.r12, &sj.r12) / si.p as f64
}

/// Pair kernel of the proportionality statistic; unbiased for
/// `d_prop(Sigma_i, Sigma_j)`.
pub fn h_kernel(xi: &Sample, xj: &Sample) -> Result<f64> {
    check_pair(xi, xj)?;
    let si = PopSummary::build(xi);
    let sj = PopSummary::build(xj);
    Ok(h_from_summaries(&si, &sj))
}

pub(crate) fn h_from_summaries(si: &PopSummary, sj: &PopSummary) -> f64 {
    let p = si.p as f64;
    p * (si.mu2 * sj.mu12 + sj.mu2 * si.mu12 - 2.0 * gamma_from_summaries(si, sj))
}

/// Pair kernel of the equality statistic; unbiased for
/// `d_0(Sigma_i, Sigma_j)`.
pub fn g_kernel(xi: &Sample, xj: &Sample) -> Result<f64> {
    check_pair(xi, xj)?;
    let si = PopSummary::build(xi);
    let sj = PopSummary::build(xj);
    Ok(g_from_summaries(&si, &sj))
}

pub(crate) fn g_from_summaries(si: &PopSummary, sj: &PopSummary) -> f64 {
    let p = si.p as f64;
    p * (si.mu2 + sj.mu2) - 2.0 * frob_inner(&si.s, &sj.s)
}

/// Per-population quantities shared by the pooled statistics. Everything the
/// tests need from a sample is condensed here once, in `O(p^2 n)`.
#[derive(Debug, Clone)]
pub(crate) struct PopSummary {
    pub p: usize,
    pub n: usize,
    /// Sample covariance `S`.
    pub s: DMatrix<f64>,
    /// `R_12`.
    pub r12: DMatrix<f64>,
    /// `tr(S^2)`.
    pub tr_s2: f64,
    pub mu2: f64,
    pub mu12: f64,
}

impl PopSummary {
    pub fn build(x: &Sample) -> Self {
        let (p, n) = (x.p() as f64, x.n() as f64);
        let s = x.sample_cov().into_matrix();
        let tr_s: f64 = s.diagonal().iter().sum();
        let tr_s2 = s.iter().map(|v| v * v).sum::<f64>();
        let (b, tr_b) = quartic_gram(x);
        let mut r12 = s.clone() * (n * tr_s / (p * (n - 1.0)));
        r12 -= &b / (p * n * (n - 1.0));
        let r12 = SymMat::from_nearly_symmetric(r12).into_matrix();
        let tr_r12: f64 = r12.diagonal().iter().sum();
        let mu12 = tr_r12 / p;
        let mu2 = (n * tr_s2 / (n - 1.0) - tr_b / (n * (n - 1.0))) / p;
        PopSummary {
            p: x.p(),
            n: x.n(),
            s,
            r12,
            tr_s2,
            mu2,
            mu12,
        }
    }

    pub fn concentration(&self) -> f64 {
        self.p as f64 / self.n as f64
    }
}

/// Builds all summaries, in parallel, after validating the dimensions agree.
pub(crate) fn summaries(samples: &[Sample]) -> Result<Vec<PopSummary>> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 populations, got {}",
            samples.len()
        )));
    }
    let p = samples[0].p();
    if samples.iter().any(|s| s.p() != p) {
        return Err(Error::DimensionMismatch(
            "populations have differing dimensions".into(),
        ));
    }
    Ok(samples.par_iter().map(PopSummary::build).collect())
}

/// Canonical aggregation order. Pooled statistics accumulate population
/// averages in this order, so the result is bit-identical under any
/// permutation of the input list.
pub(crate) fn canonical_order(sums: &[PopSummary]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sums.len()).collect();
    idx.sort_by(|&a, &b| {
        let ka = &sums[a];
        let kb = &sums[b];
        ka.n.cmp(&kb.n)
            .then(ka.tr_s2.total_cmp(&kb.tr_s2))
            .then(ka.mu2.total_cmp(&kb.mu2))
            .then(ka.mu12.total_cmp(&kb.mu12))
    });
    idx
}

/// The proportionality statistic `U_p`: the average of the `h` kernel over
/// all unordered pairs, evaluated through its single-pass identity in the
/// population means of `mu2_hat`, `mu12_hat` and `R_12`.
pub fn u_statistic(samples: &[Sample]) -> Result<f64> {
    let sums = summaries(samples)?;
    Ok(u_from_summaries(&sums))
}

pub(crate) fn u_from_summaries(sums: &[PopSummary]) -> f64 {
    let q = sums.len();
    if q == 2 {
        return h_from_summaries(&sums[0], &sums[1]);
    }
    let ord = canonical_order(sums);
    let p = sums[0].p;
    let (pf, qf) = (p as f64, q as f64);
    let mut mean_r12 = DMatrix::zeros(p, p);
    let (mut s_mu2, mut s_mu12, mut s_prod, mut s_tr) = (0.0, 0.0, 0.0, 0.0);
    for &i in &ord {
        let si = &sums[i];
        s_mu2 += si.mu2;
        s_mu12 += si.mu12;
        s_prod += si.mu2 * si.mu12;
        s_tr += frob_inner(&si.r12, &si.r12);
        mean_r12 += &si.r12;
    }
    mean_r12 /= qf;
    let tr_mean_sq = mean_r12.iter().map(|v| v * v).sum::<f64>();
    let lead =
        2.0 * pf * qf / (qf - 1.0) * ((s_mu2 / qf) * (s_mu12 / qf) - tr_mean_sq / pf);
    let corr = 2.0 * pf / (qf - 1.0) * (s_prod / qf - s_tr / (qf * pf));
    lead - corr
}

/// The equality statistic `V_p`: the average of the `g` kernel over all
/// unordered pairs, evaluated single-pass.
pub fn v_statistic(samples: &[Sample]) -> Result<f64> {
    let sums = summaries(samples)?;
    Ok(v_from_summaries(&sums))
}

pub(crate) fn v_from_summaries(sums: &[PopSummary]) -> f64 {
    let q = sums.len();
    if q == 2 {
        return g_from_summaries(&sums[0], &sums[1]);
    }
    let ord = canonical_order(sums);
    let p = sums[0].p;
    let (pf, qf) = (p as f64, q as f64);
    let mut mean_s = DMatrix::zeros(p, p);
    let (mut s_mu2, mut s_tr_s2) = (0.0, 0.0);
    for &i in &ord {
        s_mu2 += sums[i].mu2;
        s_tr_s2 += sums[i].tr_s2;
        mean_s += &sums[i].s;
    }
    mean_s /= qf;
    let tr_mean_sq = mean_s.iter().map(|v| v * v).sum::<f64>();
    2.0 * pf * s_mu2 / qf - 2.0 * qf / (qf - 1.0) * tr_mean_sq
        + 2.0 / (qf - 1.0) * (s_tr_s2 / qf)
}

/// Variance estimator of the studentized proportionality statistic:
/// `sigma_hat^2 = 16 {q^{-1} sum c_i^2 mu2_hat_i^2} {q^{-1} sum mu12_hat_i}^2`.
pub fn sigma_hat_sq(samples: &[Sample]) -> Result<f64> {
    let sums = summaries(samples)?;
    sigma_hat_sq_from_summaries(&sums)
}

pub(crate) fn sigma_hat_sq_from_summaries(sums: &[PopSummary]) -> Result<f64> {
    let ord = canonical_order(sums);
    let qf = sums.len() as f64;
    let (mut s_c2mu2sq, mut s_mu12) = (0.0, 0.0);
    for &i in &ord {
        let c = sums[i].concentration();
        s_c2mu2sq += c * c * sums[i].mu2 * sums[i].mu2;
        s_mu12 += sums[i].mu12;
    }
    let m12 = s_mu12 / qf;
    let v = 16.0 * (s_c2mu2sq / qf) * m12 * m12;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Numerical(format!(
            "variance estimate is unusable: {v}"
        )));
    }
    Ok(v)
}

/// Variance estimator of the studentized equality statistic:
/// `lambda_hat^2 = (16/q) sum c_i^2 mu2_hat_i^2`.
pub fn lambda_hat_sq(samples: &[Sample]) -> Result<f64> {
    let sums = summaries(samples)?;
    lambda_hat_sq_from_summaries(&sums)
}

pub(crate) fn lambda_hat_sq_from_summaries(sums: &[PopSummary]) -> Result<f64> {
    let ord = canonical_order(sums);
    let qf = sums.len() as f64;
    let mut acc = 0.0;
    for &i in &ord {
        let c = sums[i].concentration();
        acc += c * c * sums[i].mu2 * sums[i].mu2;
    }
    let v = 16.0 * acc / qf;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Numerical(format!(
            "variance estimate is unusable: {v}"
        )));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_sample(p: usize, n: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(&mut rng));
        Sample::new(x).unwrap()
    }

    /// Brute-force pair-sum form of `nu4(A)`; the implementation must match it.
    fn nu4_pair_sum(x: &Sample, a: &SymMat) -> f64 {
        let (p, n) = (x.p() as f64, x.n() as f64);
        let mut acc = 0.0;
        for r in 0..x.n() {
            for s in (r + 1)..x.n() {
                let xr = x.data().column(r);
                let xs = x.data().column(s);
                let wr = xr.dot(&xr);
                let ws = xs.dot(&xs);
                let qr = (a.as_matrix() * xr).dot(&xr);
                let qs = (a.as_matrix() * xs).dot(&xs);
                acc += (wr - ws) * (qr - qs);
            }
        }
        acc / (p * n * (n - 1.0))
    }

    #[test]
    fn nu4_single_sum_matches_pair_sum() {
        let x = random_sample(6, 8, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let raw = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let a = SymMat::from_nearly_symmetric(&raw + raw.transpose());
        let (_, _, nu4) = nu_hats(&x, &a).unwrap();
        let brute = nu4_pair_sum(&x, &a);
        assert_relative_eq!(nu4, brute, max_relative = 1e-10);
    }

    #[test]
    fn nu4_vanishes_on_repeated_column() {
        let col = [1.5, -0.5, 2.0];
        let x = Sample::new(DMatrix::from_fn(3, 2, |i, _| col[i])).unwrap();
        let a = SymMat::identity(3);
        let (_, _, nu4) = nu_hats(&x, &a).unwrap();
        assert_relative_eq!(nu4, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn moment_system_hand_inverse() {
        let ms = moment_system(10, 5).unwrap();
        let expect = nalgebra::Matrix3::new(1.25, -2.5, -0.2, 0.0, 1.0, -0.02, -2.5, 5.0, 1.4);
        assert_relative_eq!(ms.finv, expect, epsilon = 1e-12);
    }

    #[test]
    fn moment_system_inverse_identity() {
        for (p, n) in [(2, 2), (100, 50), (46, 40)] {
            let ms = moment_system(p, n).unwrap();
            let prod = ms.f * ms.finv;
            assert_relative_eq!(prod, nalgebra::Matrix3::identity(), epsilon = 1e-12);
        }
    }

    #[test]
    fn moment_system_determinant() {
        let ms = moment_system(7, 4).unwrap();
        assert_relative_eq!(ms.det(), 0.75, epsilon = 1e-14);
        assert_relative_eq!(ms.f.determinant(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn moment_system_rejects_n1() {
        assert!(moment_system(5, 1).is_err());
    }

    #[test]
    fn r_matrices_are_symmetric_and_match_definitions() {
        let x = random_sample(5, 7, 3);
        let rm = r_matrices(&x).unwrap();
        for m in [&rm.r12, &rm.r2, &rm.r4] {
            let raw = m.as_matrix();
            for i in 0..5 {
                for j in 0..5 {
                    assert!((raw[(i, j)] - raw[(j, i)]).abs() <= 1e-12);
                }
            }
        }
        // Independent re-evaluation of R_4 as its defining linear combination.
        let n = x.n() as f64;
        let s = x.sample_cov();
        let s2 = s.as_matrix() * s.as_matrix();
        let (b, _) = quartic_gram(&x);
        let expect = &b * ((n + 2.0) / (n * (n - 1.0)))
            - &s2 * (2.0 * n / (n - 1.0))
            - s.as_matrix() * (n * s.trace() / (n - 1.0));
        let diff = (rm.r4.as_matrix() - &expect).norm() / expect.norm();
        assert!(diff <= 1e-10);
    }

    #[test]
    fn gamma_hat_is_symmetric_in_arguments() {
        let xi = random_sample(4, 6, 21);
        let xj = random_sample(4, 9, 22);
        assert_eq!(
            gamma_hat(&xi, &xj).unwrap(),
            gamma_hat(&xj, &xi).unwrap()
        );
    }

    #[test]
    fn kernels_are_symmetric_in_arguments() {
        let xi = random_sample(5, 6, 31);
        let xj = random_sample(5, 8, 32);
        assert_eq!(h_kernel(&xi, &xj).unwrap(), h_kernel(&xj, &xi).unwrap());
        assert_eq!(g_kernel(&xi, &xj).unwrap(), g_kernel(&xj, &xi).unwrap());
    }

    #[test]
    fn kernels_reject_dimension_mismatch() {
        let xi = random_sample(4, 6, 41);
        let xj = random_sample(5, 6, 42);
        assert!(h_kernel(&xi, &xj).is_err());
        assert!(g_kernel(&xi, &xj).is_err());
        assert!(gamma_hat(&xi, &xj).is_err());
    }

    #[test]
    fn u_statistic_two_samples_equals_kernel() {
        let xi = random_sample(6, 7, 51);
        let xj = random_sample(6, 9, 52);
        let u = u_statistic(&[xi.clone(), xj.clone()]).unwrap();
        assert_eq!(u, h_kernel(&xi, &xj).unwrap());
        let v = v_statistic(&[xi.clone(), xj.clone()]).unwrap();
        assert_eq!(v, g_kernel(&xi, &xj).unwrap());
    }

    #[test]
    fn explicit_statistics_match_naive_pairwise_means() {
        let samples: Vec<Sample> = (0..5)
            .map(|k| random_sample(8, 6 + k, 100 + k as u64))
            .collect();
        let q = samples.len();
        let pairs = (q * (q - 1) / 2) as f64;
        let mut naive_u = 0.0;
        let mut naive_v = 0.0;
        for i in 0..q {
            for j in (i + 1)..q {
                naive_u += h_kernel(&samples[i], &samples[j]).unwrap();
                naive_v += g_kernel(&samples[i], &samples[j]).unwrap();
            }
        }
        naive_u /= pairs;
        naive_v /= pairs;
        let u = u_statistic(&samples).unwrap();
        let v = v_statistic(&samples).unwrap();
        assert_relative_eq!(u, naive_u, max_relative = 1e-9);
        assert_relative_eq!(v, naive_v, max_relative = 1e-9);
    }

    #[test]
    fn pooled_quantities_are_permutation_invariant() {
        let samples: Vec<Sample> = (0..6)
            .map(|k| random_sample(5, 6 + (k % 3), 200 + k as u64))
            .collect();
        let mut shuffled = samples.clone();
        shuffled.rotate_left(2);
        shuffled.swap(0, 3);
        assert_eq!(
            u_statistic(&samples).unwrap(),
            u_statistic(&shuffled).unwrap()
        );
        assert_eq!(
            v_statistic(&samples).unwrap(),
            v_statistic(&shuffled).unwrap()
        );
        assert_eq!(
            sigma_hat_sq(&samples).unwrap(),
            sigma_hat_sq(&shuffled).unwrap()
        );
        assert_eq!(
            lambda_hat_sq(&samples).unwrap(),
            lambda_hat_sq(&shuffled).unwrap()
        );
    }

    #[test]
    fn variance_estimators_are_nonnegative() {
        let samples: Vec<Sample> = (0..4).map(|k| random_sample(6, 8, 300 + k)).collect();
        assert!(sigma_hat_sq(&samples).unwrap() >= 0.0);
        assert!(lambda_hat_sq(&samples).unwrap() >= 0.0);
    }

    #[test]
    fn pooled_statistics_reject_single_population() {
        let x = random_sample(4, 5, 1);
        assert!(u_statistic(std::slice::from_ref(&x)).is_err());
        assert!(v_statistic(std::slice::from_ref(&x)).is_err());
        assert!(sigma_hat_sq(std::slice::from_ref(&x)).is_err());
    }

    #[test]
    fn sample_rejects_tiny_or_nonfinite() {
        assert!(Sample::new(DMatrix::from_element(3, 1, 1.0)).is_err());
        let mut m = DMatrix::from_element(3, 4, 1.0);
        m[(0, 0)] = f64::NAN;
        assert!(Sample::new(m).is_err());
    }

    #[test]
    fn centered_rows_sum_to_zero() {
        let x = random_sample(4, 9, 77);
        let c = x.centered();
        for i in 0..4 {
            let sum: f64 = c.data().row(i).iter().sum();
            assert!(sum.abs() <= 1e-12);
        }
    }
}
