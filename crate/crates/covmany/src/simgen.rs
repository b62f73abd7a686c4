//! Reproducible data generation and experiment drivers.
//!
//! Scenarios mirror the size/power experiment designs: a single outlier
//! covariance among `q - 1` conforming populations ("needle" scenarios, in a
//! proportionality and an equality flavor, each with two covariance
//! constructions), and two matrix-variate designs that separate column
//! independence from column-covariance proportionality.
//!
//! Reproducibility contract: every replication draws from a ChaCha stream
//! derived from `(seed, beta index, replication index)`, and aggregation is
//! a deterministic reduction in replication order, so results are
//! bit-identical for a given config regardless of thread count.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Sample;
use crate::mat::{self, PsdMat};
use crate::procedures::{self, TestReport, TransposableSample};
use crate::theory::{self, PopulationSpec};

/// Entry distribution of the noise matrix `Z`; i.i.d., zero mean, unit
/// variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// `Gamma(shape 4, rate 2) - 2`: mean 0, variance 1, fourth moment 4.5.
    Gamma42,
}

impl NoiseKind {
    /// The fourth moment `nu4` implied by the noise law.
    pub fn nu4(self) -> f64 {
        match self {
            NoiseKind::Gaussian => 3.0,
            NoiseKind::Gamma42 => 4.5,
        }
    }
}

/// I.i.d. noise matrix with the given shape.
pub fn draw_noise<R: Rng>(kind: NoiseKind, rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    match kind {
        NoiseKind::Gaussian => DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng)),
        NoiseKind::Gamma42 => {
            // shape 4, rate 2 (scale 1/2), shifted to zero mean
            let gamma = Gamma::new(4.0, 0.5).expect("valid gamma parameters");
            DMatrix::from_fn(rows, cols, |_, _| gamma.sample(rng) - 2.0)
        }
    }
}

/// Haar-distributed random orthogonal matrix: QR of an i.i.d. standard
/// normal matrix with the R-diagonal sign correction.
pub fn rand_orthogonal<R: Rng>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..p {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// Draws one sample `X = Sigma^{1/2} Z` of size `n`.
pub fn sample_population<R: Rng>(
    sqrt_sigma: &PsdMat,
    kind: NoiseKind,
    n: usize,
    rng: &mut R,
) -> Result<Sample> {
    if n < 2 {
        return Err(Error::InvalidArgument("sample size must be >= 2".into()));
    }
    let z = draw_noise(kind, sqrt_sigma.dim(), n, rng);
    Sample::new(sqrt_sigma.as_matrix() * z)
}

/// A covariance square root in the factored form `scale * root`, so that
/// populations sharing a base matrix do not duplicate it.
#[derive(Debug, Clone)]
pub struct CovRoot {
    pub scale: f64,
    pub root: Arc<DMatrix<f64>>,
}

impl CovRoot {
    pub fn new(scale: f64, root: Arc<DMatrix<f64>>) -> Self {
        CovRoot { scale, root }
    }

    pub fn dim(&self) -> usize {
        self.root.nrows()
    }

    fn draw<R: Rng>(&self, kind: NoiseKind, n: usize, rng: &mut R) -> Sample {
        let z = draw_noise(kind, self.dim(), n, rng);
        let mut x = &*self.root * z;
        if self.scale != 1.0 {
            x *= self.scale;
        }
        Sample::new(x).expect("generated sample is valid")
    }

    /// Applies the factor to a single noise vector.
    fn apply_vec(&self, z: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        let mut v = &*self.root * z;
        if self.scale != 1.0 {
            v *= self.scale;
        }
        v
    }
}

/// Which hypothesis family a needle scenario targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeedleFlavor {
    Proportionality,
    Equality,
}

/// One realized single-outlier scenario: `q - 1` conforming populations and
/// one outlier `Sigma_q = Sigma_0 + sqrt(beta) Lambda_0`.
#[derive(Debug, Clone)]
pub struct NeedleScenario {
    pub flavor: NeedleFlavor,
    pub noise: NoiseKind,
    pub beta: f64,
    /// Sample sizes, one per population.
    pub n_sizes: Vec<usize>,
    /// Proportionality factors for the conforming populations (all 1 in the
    /// equality flavor).
    pub weights: Vec<f64>,
    /// Normalized base `Sigma_0`.
    pub base: PsdMat,
    /// Outlier covariance `Sigma_0 + sqrt(beta) Lambda_0`.
    pub outlier: PsdMat,
    base_root: Arc<DMatrix<f64>>,
    outlier_root: Arc<DMatrix<f64>>,
}

impl NeedleScenario {
    pub fn p(&self) -> usize {
        self.base.dim()
    }

    pub fn q(&self) -> usize {
        self.n_sizes.len()
    }

    /// Per-population square roots used to generate data.
    pub fn sqrt_sigmas(&self) -> Vec<CovRoot> {
        let mut roots: Vec<CovRoot> = self
            .weights
            .iter()
            .map(|&w| CovRoot::new(w.sqrt(), Arc::clone(&self.base_root)))
            .collect();
        roots.push(CovRoot::new(1.0, Arc::clone(&self.outlier_root)));
        roots
    }

    /// Population specs for the theory module.
    pub fn specs(&self) -> Result<Vec<PopulationSpec>> {
        let nu4 = self.noise.nu4();
        let mut specs = Vec::with_capacity(self.q());
        for (i, &w) in self.weights.iter().enumerate() {
            specs.push(PopulationSpec::new(
                self.base.scaled(w)?,
                nu4,
                self.n_sizes[i],
            )?);
        }
        specs.push(PopulationSpec::new(
            self.outlier.clone(),
            nu4,
            self.n_sizes[self.q() - 1],
        )?);
        Ok(specs)
    }

    /// Draws the `q` samples, population by population.
    pub fn draw_samples<R: Rng>(&self, rng: &mut R) -> Vec<Sample> {
        self.sqrt_sigmas()
            .iter()
            .zip(&self.n_sizes)
            .map(|(root, &n)| root.draw(self.noise, n, rng))
            .collect()
    }

    /// Closed-form power at this scenario's realized weights and sample
    /// sizes.
    pub fn theoretical_power(&self, alpha: f64) -> Result<f64> {
        let p = self.p();
        let q = self.q();
        let qm1 = (q - 1) as f64;
        match self.flavor {
            NeedleFlavor::Proportionality => {
                let mu2 = self.base.trace_sq() / p as f64;
                let w2q = self
                    .weights
                    .iter()
                    .zip(&self.n_sizes)
                    .map(|(&w, &n)| {
                        let c = p as f64 / n as f64;
                        c * c * w.powi(4)
                    })
                    .sum::<f64>()
                    / qm1;
                theory::needle_power_prop(self.beta, p, q, mu2, w2q, alpha)
            }
            NeedleFlavor::Equality => {
                let cbar12 = self.n_sizes[..q - 1]
                    .iter()
                    .map(|&n| {
                        let c = p as f64 / n as f64;
                        c * c
                    })
                    .sum::<f64>()
                    / qm1;
                theory::needle_power_eq(self.beta, p, q, cbar12, alpha)
            }
        }
    }
}

fn draw_sizes<R: Rng>(q: usize, n_range: (usize, usize), rng: &mut R) -> Result<Vec<usize>> {
    let (lo, hi) = n_range;
    if lo < 2 || hi < lo {
        return Err(Error::InvalidArgument(format!(
            "invalid sample-size range {lo}..={hi}"
        )));
    }
    Ok((0..q).map(|_| rng.random_range(lo..=hi)).collect())
}

/// Single-outlier proportionality scenario. The base pair is normalized so
/// that `p^{-1} tr(Sigma_0) = 1` and `p^{-1} d_prop(Sigma_0, Lambda_0) = 1`;
/// conforming populations get factors `w_i ~ U(0.5, 1.5)`.
pub fn needle_scenario_prop<R: Rng>(
    sigma: &PsdMat,
    lambda: &PsdMat,
    q: usize,
    beta: f64,
    n_range: (usize, usize),
    noise: NoiseKind,
    rng: &mut R,
) -> Result<NeedleScenario> {
    if q < 2 {
        return Err(Error::InvalidArgument("need q >= 2".into()));
    }
    if beta < 0.0 {
        return Err(Error::InvalidArgument("beta must be nonnegative".into()));
    }
    let (base, dev) = mat::normalize_prop_basis(sigma, lambda)?;
    let outlier = PsdMat::weighted_sum(&[(1.0, &base), (beta.sqrt(), &dev)])?;
    let weights: Vec<f64> = (0..q - 1).map(|_| rng.random_range(0.5..1.5)).collect();
    let n_sizes = draw_sizes(q, n_range, rng)?;
    let base_root = Arc::new(mat::psd_sqrt(&base)?.into_sym().into_matrix());
    let outlier_root = Arc::new(mat::psd_sqrt(&outlier)?.into_sym().into_matrix());
    Ok(NeedleScenario {
        flavor: NeedleFlavor::Proportionality,
        noise,
        beta,
        n_sizes,
        weights,
        base,
        outlier,
        base_root,
        outlier_root,
    })
}

/// Single-outlier equality scenario. Both base matrices are Frobenius
/// normalized, so `d_0(Sigma_0, Sigma_q) = beta * p` exactly.
pub fn needle_scenario_eq<R: Rng>(
    sigma: &PsdMat,
    lambda: &PsdMat,
    q: usize,
    beta: f64,
    n_range: (usize, usize),
    noise: NoiseKind,
    rng: &mut R,
) -> Result<NeedleScenario> {
    if q < 2 {
        return Err(Error::InvalidArgument("need q >= 2".into()));
    }
    if beta < 0.0 {
        return Err(Error::InvalidArgument("beta must be nonnegative".into()));
    }
    let p = sigma.dim() as f64;
    let sig_norm = (sigma.trace_sq() / p).sqrt();
    let lam_norm = (lambda.trace_sq() / p).sqrt();
    if sig_norm <= 0.0 || lam_norm <= 0.0 {
        return Err(Error::InvalidArgument(
            "base matrices must be nonzero".into(),
        ));
    }
    let base = sigma.scaled(1.0 / sig_norm)?;
    let dev = lambda.scaled(1.0 / lam_norm)?;
    let outlier = PsdMat::weighted_sum(&[(1.0, &base), (beta.sqrt(), &dev)])?;
    let n_sizes = draw_sizes(q, n_range, rng)?;
    let base_root = Arc::new(mat::psd_sqrt(&base)?.into_sym().into_matrix());
    let outlier_root = Arc::new(mat::psd_sqrt(&outlier)?.into_sym().into_matrix());
    Ok(NeedleScenario {
        flavor: NeedleFlavor::Equality,
        noise,
        beta,
        n_sizes,
        weights: vec![1.0; q - 1],
        base,
        outlier,
        base_root,
        outlier_root,
    })
}

/// Base pair of design (a): `Sigma = I_p` and `Lambda = U diag(1,..,1,0,..,0)
/// U^T` with `p/2` ones and `U` Haar orthogonal. Requires even `p`.
pub fn case_a_pair<R: Rng>(p: usize, rng: &mut R) -> Result<(PsdMat, PsdMat)> {
    if p == 0 || p % 2 != 0 {
        return Err(Error::InvalidArgument(
            "design (a) needs a positive even dimension".into(),
        ));
    }
    let u = rand_orthogonal(p, rng);
    let mut diag = vec![1.0; p / 2];
    diag.extend(vec![0.0; p - p / 2]);
    let lambda = PsdMat::from_psd_unchecked(mat::rotated_diagonal(&u, &diag));
    Ok((PsdMat::identity(p), lambda))
}

/// Spectrum range for design (b).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumRange {
    /// Entries in `(e^{-3}, e^3)` (proportionality experiments).
    Wide,
    /// Entries in `(0.1, 10.1)` (equality experiments).
    Linear,
}

impl SpectrumRange {
    fn bounds(self) -> (f64, f64) {
        match self {
            SpectrumRange::Wide => ((-3.0f64).exp(), 3.0f64.exp()),
            SpectrumRange::Linear => (0.1, 10.1),
        }
    }
}

/// Base pair of design (b): two independently rotated random spectra with
/// diagonal entries uniform in the given range.
pub fn case_b_pair<R: Rng>(
    p: usize,
    spectrum: SpectrumRange,
    rng: &mut R,
) -> Result<(PsdMat, PsdMat)> {
    if p == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let (lo, hi) = spectrum.bounds();
    let draw_one = |rng: &mut R| {
        let u = rand_orthogonal(p, rng);
        let diag: Vec<f64> = (0..p).map(|_| rng.random_range(lo..hi)).collect();
        PsdMat::from_psd_unchecked(mat::rotated_diagonal(&u, &diag))
    };
    let sigma = draw_one(rng);
    let lambda = draw_one(rng);
    Ok((sigma, lambda))
}

/// Draws `n` i.i.d. transposable observations `Sigma_R^{1/2} Z Sigma_C^{1/2}`.
pub fn kron_sample<R: Rng>(
    sigma_r: &PsdMat,
    sigma_c_sqrt: &DMatrix<f64>,
    n: usize,
    noise: NoiseKind,
    rng: &mut R,
) -> Result<TransposableSample> {
    let root = mat::psd_sqrt(sigma_r)?;
    kron_sample_with_root(root.as_matrix(), sigma_c_sqrt, n, noise, rng)
}

fn kron_sample_with_root<R: Rng>(
    row_root: &DMatrix<f64>,
    sigma_c_sqrt: &DMatrix<f64>,
    n: usize,
    noise: NoiseKind,
    rng: &mut R,
) -> Result<TransposableSample> {
    if sigma_c_sqrt.nrows() != sigma_c_sqrt.ncols() {
        return Err(Error::DimensionMismatch(
            "column covariance root must be square".into(),
        ));
    }
    let (p, q) = (row_root.nrows(), sigma_c_sqrt.nrows());
    let obs: Vec<DMatrix<f64>> = (0..n)
        .map(|_| {
            let z = draw_noise(noise, p, q, rng);
            row_root * z * sigma_c_sqrt
        })
        .collect();
    TransposableSample::new(obs)
}

/// Case I: independent columns whose covariances interpolate between a
/// common basis and column-specific bases,
/// `Sigma_i = w_i [(1 - beta) Lambda_0 + beta Lambda_i]`.
#[derive(Debug, Clone)]
pub struct CaseIScenario {
    pub beta: f64,
    pub n: usize,
    pub noise: NoiseKind,
    column_covs: Vec<PsdMat>,
    column_roots: Vec<CovRoot>,
}

/// Case II: a true Kronecker structure whose column-covariance root picks up
/// a rank-2 off-diagonal perturbation,
/// `Sigma_C^{1/2} = diag(w) + beta (e_1 e_2^T + e_2 e_1^T)`.
#[derive(Debug, Clone)]
pub struct CaseIIScenario {
    pub beta: f64,
    pub n: usize,
    pub noise: NoiseKind,
    pub sigma_r: PsdMat,
    pub sigma_c_sqrt: DMatrix<f64>,
    row_root: Arc<DMatrix<f64>>,
}

fn rotated_spectrum<R: Rng>(p: usize, rng: &mut R) -> (DMatrix<f64>, Vec<f64>) {
    let (lo, hi) = SpectrumRange::Wide.bounds();
    let u = rand_orthogonal(p, rng);
    let d: Vec<f64> = (0..p).map(|_| rng.random_range(lo..hi)).collect();
    (u, d)
}

/// Builds a Case I scenario. `beta` must stay in `[0, 1]` so the convex
/// combination remains PSD.
pub fn case_i_scenario<R: Rng>(
    p: usize,
    q: usize,
    beta: f64,
    n: usize,
    noise: NoiseKind,
    rng: &mut R,
) -> Result<CaseIScenario> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(
            "Case I requires beta in [0, 1]".into(),
        ));
    }
    if q < 2 || n < 2 {
        return Err(Error::InvalidArgument("need q >= 2 and n >= 2".into()));
    }
    let (u0, d0) = rotated_spectrum(p, rng);
    let lambda0 = PsdMat::from_psd_unchecked(mat::rotated_diagonal(&u0, &d0));
    let shared_root: Arc<DMatrix<f64>> = Arc::new(
        mat::rotated_diagonal(&u0, &d0.iter().map(|v| v.sqrt()).collect::<Vec<_>>())
            .into_matrix(),
    );
    let mut column_covs = Vec::with_capacity(q);
    let mut column_roots = Vec::with_capacity(q);
    for _ in 0..q {
        let w: f64 = rng.random_range(0.5..1.5);
        let (ui, di) = rotated_spectrum(p, rng);
        let lambda_i = PsdMat::from_psd_unchecked(mat::rotated_diagonal(&ui, &di));
        let cov = PsdMat::weighted_sum(&[(w * (1.0 - beta), &lambda0), (w * beta, &lambda_i)])?;
        let root = if beta == 0.0 {
            CovRoot::new(w.sqrt(), Arc::clone(&shared_root))
        } else if beta == 1.0 {
            let root_i =
                mat::rotated_diagonal(&ui, &di.iter().map(|v| v.sqrt()).collect::<Vec<_>>());
            CovRoot::new(w.sqrt(), Arc::new(root_i.into_matrix()))
        } else {
            let root_i = mat::psd_sqrt(&cov)?;
            CovRoot::new(1.0, Arc::new(root_i.into_sym().into_matrix()))
        };
        column_covs.push(cov);
        column_roots.push(root);
    }
    Ok(CaseIScenario {
        beta,
        n,
        noise,
        column_covs,
        column_roots,
    })
}

impl CaseIScenario {
    pub fn p(&self) -> usize {
        self.column_covs[0].dim()
    }

    pub fn q(&self) -> usize {
        self.column_covs.len()
    }

    /// One transposable sample: `n` observations, each with independent
    /// columns `x_i = Sigma_i^{1/2} z_i`.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<TransposableSample> {
        let (p, q) = (self.p(), self.q());
        let obs: Vec<DMatrix<f64>> = (0..self.n)
            .map(|_| {
                let mut m = DMatrix::zeros(p, q);
                for (i, root) in self.column_roots.iter().enumerate() {
                    let z = draw_noise(self.noise, p, 1, rng);
                    let z = nalgebra::DVector::from_column_slice(z.as_slice());
                    m.set_column(i, &root.apply_vec(&z));
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        TransposableSample::new(obs)
    }

    /// The column covariances as population specs (for theory overlays).
    pub fn column_specs(&self) -> Result<Vec<PopulationSpec>> {
        self.column_covs
            .iter()
            .map(|c| PopulationSpec::new(c.clone(), self.noise.nu4(), self.n))
            .collect()
    }
}

/// Builds a Case II scenario. The row covariance is a rotated random
/// spectrum; the column-covariance root is `diag(w) + beta (e_1 e_2^T +
/// e_2 e_1^T)` with `w ~ U(0.5, 1.5)`.
pub fn case_ii_scenario<R: Rng>(
    p: usize,
    q: usize,
    beta: f64,
    n: usize,
    noise: NoiseKind,
    rng: &mut R,
) -> Result<CaseIIScenario> {
    if beta < 0.0 {
        return Err(Error::InvalidArgument("beta must be nonnegative".into()));
    }
    if q < 2 || n < 2 {
        return Err(Error::InvalidArgument("need q >= 2 and n >= 2".into()));
    }
    let (u0, d0) = rotated_spectrum(p, rng);
    let sigma_r = PsdMat::from_psd_unchecked(mat::rotated_diagonal(&u0, &d0));
    let row_root = Arc::new(
        mat::rotated_diagonal(&u0, &d0.iter().map(|v| v.sqrt()).collect::<Vec<_>>())
            .into_matrix(),
    );
    let mut sigma_c_sqrt = DMatrix::zeros(q, q);
    for j in 0..q {
        sigma_c_sqrt[(j, j)] = rng.random_range(0.5..1.5);
    }
    sigma_c_sqrt[(0, 1)] += beta;
    sigma_c_sqrt[(1, 0)] += beta;
    Ok(CaseIIScenario {
        beta,
        n,
        noise,
        sigma_r,
        sigma_c_sqrt,
        row_root,
    })
}

impl CaseIIScenario {
    pub fn p(&self) -> usize {
        self.sigma_r.dim()
    }

    pub fn q(&self) -> usize {
        self.sigma_c_sqrt.nrows()
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<TransposableSample> {
        kron_sample_with_root(&self.row_root, &self.sigma_c_sqrt, self.n, self.noise, rng)
    }

    /// Covariance of column `j` implied by the Kronecker structure:
    /// `||col_j(Sigma_C^{1/2})||^2 * Sigma_R`. Mutually proportional for
    /// every `beta`.
    pub fn implied_column_covs(&self) -> Result<Vec<PsdMat>> {
        (0..self.q())
            .map(|j| {
                let w = self.sigma_c_sqrt.column(j).norm_squared();
                self.sigma_r.scaled(w)
            })
            .collect()
    }
}

/// Simulation scenario selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PropCaseA,
    PropCaseB,
    EqCaseA,
    EqCaseB,
    KronCaseI,
    KronCaseII,
}

impl Scenario {
    pub fn is_kron(self) -> bool {
        matches!(self, Scenario::KronCaseI | Scenario::KronCaseII)
    }
}

/// Full description of one size/power experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub p: usize,
    pub q: usize,
    /// Inclusive range the per-population sample sizes are drawn from.
    pub n_range: (usize, usize),
    pub noise: NoiseKind,
    pub scenario: Scenario,
    /// Deviation grid; must be sorted ascending and start at 0.
    pub beta_grid: Vec<f64>,
    pub n_reps: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q < 2 {
            return Err(Error::InvalidArgument("need p >= 1 and q >= 2".into()));
        }
        if self.n_range.0 < 2 || self.n_range.1 < self.n_range.0 {
            return Err(Error::InvalidArgument(format!(
                "invalid sample-size range {:?}",
                self.n_range
            )));
        }
        if self.n_reps == 0 {
            return Err(Error::InvalidArgument("n_reps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(
                "alpha must lie strictly between 0 and 1".into(),
            ));
        }
        if self.beta_grid.is_empty() || self.beta_grid[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "beta grid must start at 0".into(),
            ));
        }
        if self.beta_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "beta grid must be strictly ascending".into(),
            ));
        }
        if matches!(self.scenario, Scenario::KronCaseI)
            && self.beta_grid.iter().any(|&b| b > 1.0)
        {
            return Err(Error::InvalidArgument(
                "Case I requires beta in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One cell of a size table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeRow {
    pub scenario: Scenario,
    pub noise: NoiseKind,
    pub p: usize,
    pub q: usize,
    pub n_reps: usize,
    pub rejects: usize,
    /// Empirical rejection rate under the null.
    pub rate: f64,
    /// Binomial standard error of the rate.
    pub se: f64,
    pub alpha: f64,
    pub seed: u64,
}

/// Empirical and theoretical rejection rates over the deviation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub beta: Vec<f64>,
    pub empirical: Vec<f64>,
    pub theoretical: Vec<f64>,
    pub n_reps: usize,
    pub seed: u64,
}

fn stream_id(beta_idx: usize, rep: usize) -> u64 {
    ((beta_idx as u64) << 32) | rep as u64
}

struct RepOutcome {
    reject: bool,
    /// Closed-form power at the replication's realized scenario; `None`
    /// when the overlay is computed once per grid point instead.
    theoretical: Option<f64>,
}

fn replicate(cfg: &ExperimentConfig, beta: f64, beta_idx: usize, rep: usize) -> Result<RepOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream_id(beta_idx, rep));
    let report: TestReport;
    let theoretical: Option<f64>;
    match cfg.scenario {
        Scenario::PropCaseA | Scenario::PropCaseB => {
            let (sigma, lambda) = if cfg.scenario == Scenario::PropCaseA {
                case_a_pair(cfg.p, &mut rng)?
            } else {
                case_b_pair(cfg.p, SpectrumRange::Wide, &mut rng)?
            };
            let scen = needle_scenario_prop(
                &sigma, &lambda, cfg.q, beta, cfg.n_range, cfg.noise, &mut rng,
            )?;
            let samples = scen.draw_samples(&mut rng);
            report = procedures::prop_test(&samples, cfg.alpha)?;
            theoretical = Some(scen.theoretical_power(cfg.alpha)?);
        }
        Scenario::EqCaseA | Scenario::EqCaseB => {
            let (sigma, lambda) = if cfg.scenario == Scenario::EqCaseA {
                case_a_pair(cfg.p, &mut rng)?
            } else {
                case_b_pair(cfg.p, SpectrumRange::Linear, &mut rng)?
            };
            let scen = needle_scenario_eq(
                &sigma, &lambda, cfg.q, beta, cfg.n_range, cfg.noise, &mut rng,
            )?;
            let samples = scen.draw_samples(&mut rng);
            report = procedures::eq_test(&samples, cfg.alpha)?;
            theoretical = Some(scen.theoretical_power(cfg.alpha)?);
        }
        Scenario::KronCaseI => {
            let n = rng.random_range(cfg.n_range.0..=cfg.n_range.1);
            let scen = case_i_scenario(cfg.p, cfg.q, beta, n, cfg.noise, &mut rng)?;
            let data = scen.draw(&mut rng)?;
            report = procedures::kron_spec_test(&data, cfg.alpha)?;
            theoretical = if rep == 0 {
                let specs = scen.column_specs()?;
                let drift = theory::mean_drift_prop(&specs)?;
                let decomp = theory::prop_variance(&specs)?;
                Some(theory::power_general(drift, &decomp, cfg.q, cfg.alpha)?)
            } else {
                None
            };
        }
        Scenario::KronCaseII => {
            let n = rng.random_range(cfg.n_range.0..=cfg.n_range.1);
            let scen = case_ii_scenario(cfg.p, cfg.q, beta, n, cfg.noise, &mut rng)?;
            let data = scen.draw(&mut rng)?;
            report = procedures::kron_spec_test(&data, cfg.alpha)?;
            // Column covariances stay proportional for every beta, so the
            // asymptotic rejection rate is alpha itself.
            theoretical = if rep == 0 { Some(cfg.alpha) } else { None };
        }
    }
    Ok(RepOutcome {
        reject: report.reject,
        theoretical,
    })
}

fn run_grid_point(cfg: &ExperimentConfig, beta: f64, beta_idx: usize) -> Result<(f64, f64, usize)> {
    let outcomes: Vec<RepOutcome> = (0..cfg.n_reps)
        .into_par_iter()
        .map(|rep| replicate(cfg, beta, beta_idx, rep))
        .collect::<Result<Vec<_>>>()?;
    let mut rejects = 0usize;
    let mut theo_sum = 0.0;
    let mut theo_count = 0usize;
    for o in &outcomes {
        rejects += o.reject as usize;
        if let Some(t) = o.theoretical {
            theo_sum += t;
            theo_count += 1;
        }
    }
    let empirical = rejects as f64 / cfg.n_reps as f64;
    let theoretical = if theo_count > 0 {
        theo_sum / theo_count as f64
    } else {
        f64::NAN
    };
    Ok((empirical, theoretical, rejects))
}

/// Runs the null (`beta = 0`) cell of the design and reports the empirical
/// size with its binomial standard error.
pub fn run_size_experiment(cfg: &ExperimentConfig) -> Result<SizeRow> {
    cfg.validate()?;
    let (rate, _theo, rejects) = run_grid_point(cfg, 0.0, 0)?;
    let se = (rate * (1.0 - rate) / cfg.n_reps as f64).sqrt();
    Ok(SizeRow {
        scenario: cfg.scenario,
        noise: cfg.noise,
        p: cfg.p,
        q: cfg.q,
        n_reps: cfg.n_reps,
        rejects,
        rate,
        se,
        alpha: cfg.alpha,
        seed: cfg.seed,
    })
}

/// Runs the whole deviation grid: empirical rejection rate per grid point
/// plus the matching closed-form curve.
pub fn run_power_experiment(cfg: &ExperimentConfig) -> Result<PowerCurve> {
    cfg.validate()?;
    let mut empirical = Vec::with_capacity(cfg.beta_grid.len());
    let mut theoretical = Vec::with_capacity(cfg.beta_grid.len());
    for (bi, &beta) in cfg.beta_grid.iter().enumerate() {
        let (emp, theo, _) = run_grid_point(cfg, beta, bi)?;
        empirical.push(emp);
        theoretical.push(theo);
    }
    Ok(PowerCurve {
        beta: cfg.beta_grid.clone(),
        empirical,
        theoretical,
        n_reps: cfg.n_reps,
        seed: cfg.seed,
    })
}

/// Heuristic top of the deviation grid: the `beta` at which the closed-form
/// curve of a freshly drawn scenario reaches 99% power (Kronecker designs
/// default to 1).
pub fn default_beta_max(
    scenario: Scenario,
    p: usize,
    q: usize,
    n_range: (usize, usize),
    noise: NoiseKind,
    alpha: f64,
    seed: u64,
) -> Result<f64> {
    if scenario.is_kron() {
        return Ok(1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let z_alpha = theory::upper_quantile(alpha)?;
    let z_target = theory::upper_quantile(0.01)?;
    let need = z_alpha + z_target;
    let beta = match scenario {
        Scenario::PropCaseA | Scenario::PropCaseB => {
            let (sigma, lambda) = if scenario == Scenario::PropCaseA {
                case_a_pair(p, &mut rng)?
            } else {
                case_b_pair(p, SpectrumRange::Wide, &mut rng)?
            };
            let scen =
                needle_scenario_prop(&sigma, &lambda, q, 0.0, n_range, noise, &mut rng)?;
            let mu2 = scen.base.trace_sq() / p as f64;
            let w2q = scen
                .weights
                .iter()
                .zip(&scen.n_sizes)
                .map(|(&w, &n)| (p as f64 / n as f64).powi(2) * w.powi(4))
                .sum::<f64>()
                / (q - 1) as f64;
            need * 2.0 * mu2 * (q as f64 * w2q).sqrt() / p as f64
        }
        Scenario::EqCaseA | Scenario::EqCaseB => {
            let scen = {
                let (sigma, lambda) = if scenario == Scenario::EqCaseA {
                    case_a_pair(p, &mut rng)?
                } else {
                    case_b_pair(p, SpectrumRange::Linear, &mut rng)?
                };
                needle_scenario_eq(&sigma, &lambda, q, 0.0, n_range, noise, &mut rng)?
            };
            let cbar12 = scen.n_sizes[..q - 1]
                .iter()
                .map(|&n| (p as f64 / n as f64).powi(2))
                .sum::<f64>()
                / (q - 1) as f64;
            need * 2.0 * (q as f64 * cbar12).sqrt() / p as f64
        }
        _ => unreachable!(),
    };
    Ok(beta)
}
