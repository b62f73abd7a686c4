//! Population-side quantities: mean drifts, asymptotic variance
//! decompositions, and closed-form power functions.
//!
//! These are the analytic counterparts of the sample statistics in
//! [`crate::estimators`]. They drive the theoretical power overlays in the
//! simulation experiments and serve as independent targets for the Monte
//! Carlo oracles.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mat::{self, PsdMat, SymMat};

/// Everything the theory needs to know about one population: its covariance,
/// the noise kurtosis parameter `nu4`, and the sample size `n`.
#[derive(Debug, Clone)]
pub struct PopulationSpec {
    pub sigma: PsdMat,
    pub nu4: f64,
    pub n: usize,
}

impl PopulationSpec {
    pub fn new(sigma: PsdMat, nu4: f64, n: usize) -> Result<Self> {
        if nu4 < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "nu4 must be at least 1, got {nu4}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "population sample size must be at least 2, got {n}"
            )));
        }
        Ok(PopulationSpec { sigma, nu4, n })
    }

    /// Concentration ratio `c = p / n`.
    pub fn concentration(&self) -> f64 {
        self.sigma.dim() as f64 / self.n as f64
    }

    /// First spectral moment `mu_1 = p^{-1} tr(Sigma)`.
    pub fn mu1(&self) -> f64 {
        self.sigma.trace() / self.sigma.dim() as f64
    }

    /// Second spectral moment `mu_2 = p^{-1} tr(Sigma^2)`.
    pub fn mu2(&self) -> f64 {
        self.sigma.trace_sq() / self.sigma.dim() as f64
    }
}

/// An asymptotic variance split into the part that survives under the null
/// (`sigma0_sq`) and the alternative-only remainder (`sigmar_sq`).
#[derive(Debug, Clone, Copy)]
pub struct VarianceDecomposition {
    pub sigma0_sq: f64,
    pub sigmar_sq: f64,
    pub total_sq: f64,
}

impl VarianceDecomposition {
    fn new(sigma0_sq: f64, sigmar_sq: f64) -> Result<Self> {
        if sigmar_sq < -1e-10 {
            return Err(Error::Numerical(format!(
                "remainder variance is negative: {sigmar_sq}"
            )));
        }
        Ok(VarianceDecomposition {
            sigma0_sq,
            sigmar_sq,
            total_sq: sigma0_sq + sigmar_sq,
        })
    }
}

fn validate_group(specs: &[PopulationSpec]) -> Result<usize> {
    if specs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 populations, got {}",
            specs.len()
        )));
    }
    let p = specs[0].sigma.dim();
    if specs.iter().any(|s| s.sigma.dim() != p) {
        return Err(Error::DimensionMismatch(
            "population dimensions differ".into(),
        ));
    }
    Ok(p)
}

/// Mean drift of the proportionality statistic:
/// the average of `d_prop(Sigma_i, Sigma_j)` over all unordered pairs.
pub fn mean_drift_prop(specs: &[PopulationSpec]) -> Result<f64> {
    validate_group(specs)?;
    pairwise_mean(specs, mat::d_prop)
}

/// Mean drift of the equality statistic: the average of
/// `d_0(Sigma_i, Sigma_j)` over all unordered pairs.
pub fn mean_drift_eq(specs: &[PopulationSpec]) -> Result<f64> {
    validate_group(specs)?;
    pairwise_mean(specs, mat::d_zero)
}

fn pairwise_mean(
    specs: &[PopulationSpec],
    dist: impl Fn(&SymMat, &SymMat) -> Result<f64>,
) -> Result<f64> {
    let q = specs.len();
    let mut acc = 0.0;
    for i in 0..q {
        for j in (i + 1)..q {
            acc += dist(specs[i].sigma.sym(), specs[j].sigma.sym())?;
        }
    }
    Ok(acc / (q * (q - 1) / 2) as f64)
}

/// Asymptotic variance of the proportionality statistic, decomposed.
///
/// Per population, with `alpha_i`, `beta_i`, `Lambda_i`, `kappa_i` the
/// leave-one-out averages of the other populations' spectral moments, the
/// matrix `Gamma_i = alpha_i Sigma_i - mu_1i Lambda_i + (mu_1i beta_i -
/// kappa_i) I` is zero exactly under proportionality; the remainder variance
/// collects `<Gamma_i, Gamma_i>_{Sigma_i}`.
pub fn prop_variance(specs: &[PopulationSpec]) -> Result<VarianceDecomposition> {
    let p = validate_group(specs)?;
    let q = specs.len();
    let (pf, qf) = (p as f64, q as f64);
    let mu1: Vec<f64> = specs.iter().map(|s| s.mu1()).collect();
    let mu2: Vec<f64> = specs.iter().map(|s| s.mu2()).collect();
    let sum_mu1_sq: f64 = mu1.iter().map(|v| v * v).sum();
    let sum_mu2: f64 = mu2.iter().sum();
    let mut total = nalgebra::DMatrix::zeros(p, p);
    for (s, &m1) in specs.iter().zip(&mu1) {
        total += s.sigma.as_matrix() * m1;
    }

    let terms: Vec<Result<(f64, f64)>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let c = spec.concentration();
            let alpha = (sum_mu1_sq - mu1[i] * mu1[i]) / (qf - 1.0);
            let beta = (sum_mu2 - mu2[i]) / (qf - 1.0);
            let lambda = (&total - spec.sigma.as_matrix() * mu1[i]) / (qf - 1.0);
            let kappa = lambda
                .iter()
                .zip(spec.sigma.as_matrix().iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / pf;
            let mut gamma = spec.sigma.as_matrix() * alpha - &lambda * mu1[i];
            let shift = mu1[i] * beta - kappa;
            for k in 0..p {
                gamma[(k, k)] += shift;
            }
            let gamma = SymMat::from_nearly_symmetric(gamma);
            let root = mat::psd_sqrt(&spec.sigma)?;
            let inner = mat::sigma_inner_with_root(&gamma, &gamma, root.as_matrix(), spec.nu4)?;
            Ok((
                c * c * alpha * alpha * mu2[i] * mu2[i],
                c * inner,
            ))
        })
        .collect();

    let (mut s0, mut sr) = (0.0, 0.0);
    for t in terms {
        let (a, b) = t?;
        s0 += a;
        sr += b;
    }
    VarianceDecomposition::new(16.0 * s0 / qf, 16.0 * sr / qf)
}

/// Asymptotic variance of the equality statistic, decomposed. Here
/// `Gamma_i = Sigma_i - (q-1)^{-1} sum_{j != i} Sigma_j` vanishes exactly
/// when all covariances are equal.
pub fn eq_variance(specs: &[PopulationSpec]) -> Result<VarianceDecomposition> {
    let p = validate_group(specs)?;
    let q = specs.len();
    let qf = q as f64;
    let mu2: Vec<f64> = specs.iter().map(|s| s.mu2()).collect();
    let mut total = nalgebra::DMatrix::zeros(p, p);
    for s in specs {
        total += s.sigma.as_matrix();
    }

    let terms: Vec<Result<(f64, f64)>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let c = spec.concentration();
            let mean_others = (&total - spec.sigma.as_matrix()) / (qf - 1.0);
            let gamma = SymMat::from_nearly_symmetric(spec.sigma.as_matrix() - mean_others);
            let root = mat::psd_sqrt(&spec.sigma)?;
            let inner = mat::sigma_inner_with_root(&gamma, &gamma, root.as_matrix(), spec.nu4)?;
            Ok((c * c * mu2[i] * mu2[i], c * inner))
        })
        .collect();

    let (mut l0, mut lr) = (0.0, 0.0);
    for t in terms {
        let (a, b) = t?;
        l0 += a;
        lr += b;
    }
    VarianceDecomposition::new(16.0 * l0 / qf, 16.0 * lr / qf)
}

/// General asymptotic power at level `alpha`:
/// `Phi( sqrt(q) * drift / sigma_p - (sigma_0p / sigma_p) z_alpha )`.
pub fn power_general(
    drift: f64,
    decomposition: &VarianceDecomposition,
    q: usize,
    alpha: f64,
) -> Result<f64> {
    if decomposition.total_sq <= 0.0 {
        return Err(Error::Numerical("degenerate asymptotic variance".into()));
    }
    let z = upper_quantile(alpha)?;
    let sigma = decomposition.total_sq.sqrt();
    let sigma0 = decomposition.sigma0_sq.max(0.0).sqrt();
    Ok(std_normal_cdf(
        (q as f64).sqrt() * drift / sigma - sigma0 / sigma * z,
    ))
}

/// Closed-form power of the proportionality test against the single-outlier
/// alternative, after the scenario normalization:
/// `Phi( beta p / (2 mu2 sqrt(q W2q)) - z_alpha )` with
/// `W2q = (q-1)^{-1} sum c_i^2 mu_1i^4` over the conforming populations.
///
/// The `-z_alpha` shift is kept so the curve passes through `alpha` at
/// `beta = 0`.
pub fn needle_power_prop(
    beta: f64,
    p: usize,
    q: usize,
    mu2: f64,
    w2q: f64,
    alpha: f64,
) -> Result<f64> {
    if mu2 <= 0.0 || w2q <= 0.0 {
        return Err(Error::InvalidArgument(
            "mu2 and w2q must be positive".into(),
        ));
    }
    let z = upper_quantile(alpha)?;
    let arg = beta * p as f64 / (2.0 * mu2 * (q as f64 * w2q).sqrt()) - z;
    Ok(std_normal_cdf(arg))
}

/// Closed-form power of the equality test against the single-outlier
/// alternative: `Phi( beta p / (2 sqrt(q cbar12)) - z_alpha )` with
/// `cbar12 = (q-1)^{-1} sum c_i^2`.
pub fn needle_power_eq(beta: f64, p: usize, q: usize, cbar12: f64, alpha: f64) -> Result<f64> {
    if cbar12 <= 0.0 {
        return Err(Error::InvalidArgument("cbar12 must be positive".into()));
    }
    let z = upper_quantile(alpha)?;
    let arg = beta * p as f64 / (2.0 * (q as f64 * cbar12).sqrt()) - z;
    Ok(std_normal_cdf(arg))
}

/// Extreme pairwise distances across the group; diagnostic only.
#[derive(Debug, Clone, Copy)]
pub struct GroupDiagnostics {
    pub dprop_min: f64,
    pub dprop_max: f64,
    pub dzero_min: f64,
    pub dzero_max: f64,
}

pub fn group_diagnostics(specs: &[PopulationSpec]) -> Result<GroupDiagnostics> {
    validate_group(specs)?;
    let q = specs.len();
    let mut d = GroupDiagnostics {
        dprop_min: f64::INFINITY,
        dprop_max: f64::NEG_INFINITY,
        dzero_min: f64::INFINITY,
        dzero_max: f64::NEG_INFINITY,
    };
    for i in 0..q {
        for j in (i + 1)..q {
            let dp = mat::d_prop(specs[i].sigma.sym(), specs[j].sigma.sym())?;
            let dz = mat::d_zero(specs[i].sigma.sym(), specs[j].sigma.sym())?;
            d.dprop_min = d.dprop_min.min(dp);
            d.dprop_max = d.dprop_max.max(dp);
            d.dzero_min = d.dzero_min.min(dz);
            d.dzero_max = d.dzero_max.max(dz);
        }
    }
    Ok(d)
}

/// Standard normal distribution function.
pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Upper `alpha`-quantile of the standard normal, accurate to well below
/// `1e-10` (library inverse followed by one Newton step against the CDF).
pub fn upper_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    let normal = Normal::standard();
    let mut z = normal.inverse_cdf(1.0 - alpha);
    for _ in 0..2 {
        let err = normal.cdf(z) - (1.0 - alpha);
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf > 0.0 {
            z -= err / pdf;
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec_from_diag(diag: &[f64], nu4: f64, n: usize) -> PopulationSpec {
        PopulationSpec::new(PsdMat::from_diagonal(diag).unwrap(), nu4, n).unwrap()
    }

    fn identity_spec(p: usize, nu4: f64, n: usize) -> PopulationSpec {
        PopulationSpec::new(PsdMat::identity(p), nu4, n).unwrap()
    }

    #[test]
    fn mean_drift_prop_examples() {
        // All proportional -> 0.
        let specs: Vec<_> = (1..=3)
            .map(|k| {
                PopulationSpec::new(
                    PsdMat::identity(4).scaled(k as f64).unwrap(),
                    3.0,
                    10,
                )
                .unwrap()
            })
            .collect();
        assert_relative_eq!(mean_drift_prop(&specs).unwrap(), 0.0, epsilon = 1e-12);

        // q = 2: I_2 vs diag(1, 3) -> d_prop = 2.
        let specs = vec![
            identity_spec(2, 3.0, 10),
            spec_from_diag(&[1.0, 3.0], 3.0, 10),
        ];
        assert_relative_eq!(mean_drift_prop(&specs).unwrap(), 2.0, max_relative = 1e-14);

        // Two identical + one outlier: M_p = (2/3) d_prop(Sigma, out).
        let specs = vec![
            identity_spec(2, 3.0, 10),
            identity_spec(2, 3.0, 10),
            spec_from_diag(&[1.0, 3.0], 3.0, 10),
        ];
        assert_relative_eq!(
            mean_drift_prop(&specs).unwrap(),
            2.0 / 3.0 * 2.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn mean_drift_eq_examples() {
        let s = spec_from_diag(&[1.0, 2.0], 3.0, 8);
        assert_relative_eq!(
            mean_drift_eq(&[s.clone(), s.clone()]).unwrap(),
            0.0,
            epsilon = 1e-14
        );

        let specs = vec![
            spec_from_diag(&[1.0, 2.0], 3.0, 8),
            spec_from_diag(&[2.0, 1.0], 3.0, 8),
        ];
        assert_relative_eq!(mean_drift_eq(&specs).unwrap(), 2.0, max_relative = 1e-14);

        let specs = vec![
            spec_from_diag(&[1.0, 2.0], 3.0, 8),
            spec_from_diag(&[1.0, 2.0], 3.0, 8),
            spec_from_diag(&[2.0, 1.0], 3.0, 8),
        ];
        assert_relative_eq!(
            mean_drift_eq(&specs).unwrap(),
            2.0 / 3.0 * 2.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn prop_variance_identity_population() {
        // All Sigma_i = I_p, c = 1, Gaussian: sigma0^2 = 16, sigmar^2 = 0.
        let p = 12;
        let specs: Vec<_> = (0..5).map(|_| identity_spec(p, 3.0, p)).collect();
        let v = prop_variance(&specs).unwrap();
        assert_relative_eq!(v.sigma0_sq, 16.0, max_relative = 1e-12);
        assert!(v.sigmar_sq.abs() <= 1e-10 * v.sigma0_sq);
        assert_relative_eq!(v.total_sq, v.sigma0_sq + v.sigmar_sq);
    }

    #[test]
    fn prop_variance_null_degeneracy_with_weights() {
        // Sigma_i = w_i Sigma: remainder vanishes as algebra, any weights.
        let base = PsdMat::from_diagonal(&[0.5, 1.0, 2.0, 4.0]).unwrap();
        let weights = [0.7, 1.0, 1.3, 0.9, 1.8];
        let specs: Vec<_> = weights
            .iter()
            .map(|&w| PopulationSpec::new(base.scaled(w).unwrap(), 4.5, 6).unwrap())
            .collect();
        let v = prop_variance(&specs).unwrap();
        assert!(v.sigmar_sq <= 1e-10 * v.sigma0_sq);
    }

    #[test]
    fn eq_variance_identity_and_alternating() {
        let p = 10;
        let specs: Vec<_> = (0..4).map(|_| identity_spec(p, 3.0, p)).collect();
        let v = eq_variance(&specs).unwrap();
        assert_relative_eq!(v.sigma0_sq, 16.0, max_relative = 1e-12);
        assert!(v.sigmar_sq <= 1e-10 * v.sigma0_sq);

        // Alternating I and 2I with q even: Gamma_i = -+ q/(2(q-1)) I.
        let q = 6;
        let n = p; // c = 1
        let nu4 = 3.0;
        let specs: Vec<_> = (0..q)
            .map(|i| {
                let scale = if i % 2 == 0 { 1.0 } else { 2.0 };
                PopulationSpec::new(PsdMat::identity(p).scaled(scale).unwrap(), nu4, n).unwrap()
            })
            .collect();
        let v = eq_variance(&specs).unwrap();
        let qf = q as f64;
        let a = qf / (2.0 * (qf - 1.0));
        // <aI, aI>_Sigma = a^2 * 2 * p^{-1} tr(Sigma^2) for Gaussian noise.
        let inner_1 = a * a * 2.0; // Sigma = I
        let inner_2 = a * a * 2.0 * 4.0; // Sigma = 2I
        let expect_lr = 16.0 / qf * (3.0 * inner_1 + 3.0 * inner_2);
        assert_relative_eq!(v.sigmar_sq, expect_lr, max_relative = 1e-9);
        let expect_l0 = 16.0 / qf * (3.0 * 1.0 + 3.0 * 16.0);
        assert_relative_eq!(v.sigma0_sq, expect_l0, max_relative = 1e-12);
    }

    #[test]
    fn needle_remainder_variance_shrinks_like_one_over_q() {
        // Single outlier: sigmar^2 = O(1/q).
        let p = 10;
        let base = PsdMat::identity(p);
        let outlier = PsdMat::from_diagonal(&vec![3.0; p / 2].into_iter().chain(vec![0.5; p / 2]).collect::<Vec<_>>()).unwrap();
        let build = |q: usize| -> Vec<PopulationSpec> {
            let mut v: Vec<PopulationSpec> = (0..q - 1)
                .map(|i| {
                    let w = 0.8 + 0.4 * ((i % 2) as f64);
                    PopulationSpec::new(base.scaled(w).unwrap(), 3.0, p).unwrap()
                })
                .collect();
            v.push(PopulationSpec::new(outlier.clone(), 3.0, p).unwrap());
            v
        };
        let v50 = prop_variance(&build(50)).unwrap();
        let v100 = prop_variance(&build(100)).unwrap();
        let v200 = prop_variance(&build(200)).unwrap();
        let r1 = v50.sigmar_sq / v100.sigmar_sq;
        let r2 = v100.sigmar_sq / v200.sigmar_sq;
        assert!((r1 - 2.0).abs() <= 0.6, "halving ratio {r1}");
        assert!((r2 - 2.0).abs() <= 0.6, "halving ratio {r2}");
    }

    #[test]
    fn power_general_boundary_and_hand_value() {
        let null = VarianceDecomposition::new(4.0, 0.0).unwrap();
        for alpha in [0.01, 0.05, 0.1] {
            assert_relative_eq!(
                power_general(0.0, &null, 50, alpha).unwrap(),
                alpha,
                epsilon = 1e-12
            );
        }
        // drift = 1, sigma_p = sigma_0p = 2, q = 100, alpha = 0.05.
        let v = power_general(1.0, &null, 100, 0.05).unwrap();
        assert_relative_eq!(v, 0.99960, max_relative = 2e-4);
        // Monotone: larger drift, more power, saturating at 1.
        let lo = power_general(0.5, &null, 100, 0.05).unwrap();
        let hi = power_general(5.0, &null, 100, 0.05).unwrap();
        assert!(lo < v && v < hi && hi <= 1.0);
        assert_relative_eq!(power_general(1e6, &null, 100, 0.05).unwrap(), 1.0);
    }

    #[test]
    fn needle_power_values() {
        assert_relative_eq!(
            needle_power_prop(0.0, 100, 50, 1.0, 1.0, 0.05).unwrap(),
            0.05,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            needle_power_prop(0.5, 100, 50, 1.0, 1.0, 0.05).unwrap(),
            0.9707,
            max_relative = 1e-3
        );
        assert_relative_eq!(
            needle_power_eq(0.0, 100, 100, 1.0, 0.05).unwrap(),
            0.05,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            needle_power_eq(0.4, 100, 100, 1.0, 0.05).unwrap(),
            0.6388,
            max_relative = 1e-3
        );
        // Nondecreasing in beta.
        let mut last = 0.0;
        for k in 0..30 {
            let v = needle_power_prop(0.05 * k as f64, 100, 50, 1.0, 1.0, 0.05).unwrap();
            assert!(v >= last - 1e-15);
            last = v;
        }
    }

    #[test]
    fn group_diagnostics_examples() {
        // All proportional.
        let specs: Vec<_> = [1.0, 2.0, 0.5]
            .iter()
            .map(|&w| {
                PopulationSpec::new(PsdMat::identity(3).scaled(w).unwrap(), 3.0, 9).unwrap()
            })
            .collect();
        let d = group_diagnostics(&specs).unwrap();
        assert!(d.dprop_max <= 1e-20);
        assert_eq!(d.dprop_min, 0.0);

        // q = 2: min == max.
        let two = vec![
            identity_spec(2, 3.0, 10),
            spec_from_diag(&[1.0, 3.0], 3.0, 10),
        ];
        let d = group_diagnostics(&two).unwrap();
        assert_eq!(d.dprop_min, d.dprop_max);
        assert_relative_eq!(d.dprop_max, 2.0, max_relative = 1e-14);

        // Hand-computed pairwise values {0, 2, 2} -> (0, 2).
        let three = vec![
            identity_spec(2, 3.0, 10),
            identity_spec(2, 3.0, 10),
            spec_from_diag(&[1.0, 3.0], 3.0, 10),
        ];
        let d = group_diagnostics(&three).unwrap();
        assert_relative_eq!(d.dprop_min, 0.0, epsilon = 1e-14);
        assert_relative_eq!(d.dprop_max, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn quantile_accuracy() {
        let z = upper_quantile(0.05).unwrap();
        assert_relative_eq!(z, 1.6448536269514722, epsilon = 1e-10);
        for alpha in [0.001, 0.01, 0.05, 0.1, 0.5, 0.9] {
            let z = upper_quantile(alpha).unwrap();
            assert_relative_eq!(std_normal_cdf(z), 1.0 - alpha, epsilon = 1e-12);
        }
        assert!(upper_quantile(0.0).is_err());
        assert!(upper_quantile(1.0).is_err());
    }

    #[test]
    fn proportional_drift_stays_zero_under_rescaling() {
        let base = PsdMat::from_diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let specs: Vec<_> = [1.0, 0.5, 2.0]
            .iter()
            .map(|&w| PopulationSpec::new(base.scaled(w).unwrap(), 3.0, 9).unwrap())
            .collect();
        assert!(mean_drift_prop(&specs).unwrap() <= 1e-18);
        let rescaled: Vec<_> = specs
            .iter()
            .zip([3.0, 0.1, 7.0])
            .map(|(s, w)| PopulationSpec::new(s.sigma.scaled(w).unwrap(), 3.0, 9).unwrap())
            .collect();
        assert!(mean_drift_prop(&rescaled).unwrap() <= 1e-18);
    }
}
