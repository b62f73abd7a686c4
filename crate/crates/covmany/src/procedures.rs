//! The user-facing test procedures.
//!
//! Both pooled statistics are asymptotically standard normal after
//! studentization, so each procedure reduces to a one-sided upper z-test:
//! reject when `z = sqrt(q) * statistic / sqrt(variance_hat)` exceeds the
//! upper `alpha`-quantile. The Kronecker specification test for transposable
//! data reduces to the proportionality test applied to the column samples.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    self, g_from_summaries, lambda_hat_sq_from_summaries, sigma_hat_sq_from_summaries,
    u_from_summaries, v_from_summaries, PopSummary, Sample,
};
use crate::theory;

/// Which hypothesis a report refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Proportionality,
    Equality,
    KroneckerSpec,
}

/// Outcome of one test run.
///
/// `n_list` is reported in ascending order so that the report is invariant
/// under permutations of the input populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub kind: TestKind,
    pub p: usize,
    pub q: usize,
    pub n_list: Vec<usize>,
    pub statistic: f64,
    pub variance_hat: f64,
    pub z: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

/// Assembles a report from a precomputed statistic and variance estimate.
///
/// This is the single decision path used by every test: `z = sqrt(q) *
/// statistic / sqrt(variance_hat)`, one-sided upper p-value `1 - Phi(z)`,
/// reject when `z > z_alpha`.
pub fn report_from_components(
    kind: TestKind,
    p: usize,
    q: usize,
    mut n_list: Vec<usize>,
    statistic: f64,
    variance_hat: f64,
    alpha: f64,
) -> Result<TestReport> {
    if q < 2 {
        return Err(Error::InvalidArgument("need at least 2 populations".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    if !(variance_hat > 0.0) || !variance_hat.is_finite() {
        return Err(Error::Numerical(format!(
            "variance estimate must be positive, got {variance_hat}"
        )));
    }
    n_list.sort_unstable();
    let z = (q as f64).sqrt() * statistic / variance_hat.sqrt();
    let z_alpha = theory::upper_quantile(alpha)?;
    Ok(TestReport {
        kind,
        p,
        q,
        n_list,
        statistic,
        variance_hat,
        z,
        p_value: 1.0 - theory::std_normal_cdf(z),
        alpha,
        reject: z > z_alpha,
    })
}

fn run_test(samples: &[Sample], alpha: f64, kind: TestKind) -> Result<TestReport> {
    let sums = estimators::summaries(samples)?;
    let (stat, var) = match kind {
        TestKind::Equality => (
            v_from_summaries(&sums),
            lambda_hat_sq_from_summaries(&sums)?,
        ),
        _ => (u_from_summaries(&sums), sigma_hat_sq_from_summaries(&sums)?),
    };
    report_from_components(
        kind,
        sums[0].p,
        sums.len(),
        sums.iter().map(|s| s.n).collect(),
        stat,
        var,
        alpha,
    )
}

/// Many-sample proportionality test: are all covariances scalar multiples of
/// one common matrix?
pub fn prop_test(samples: &[Sample], alpha: f64) -> Result<TestReport> {
    run_test(samples, alpha, TestKind::Proportionality)
}

/// Many-sample equality test: do all covariances coincide?
pub fn eq_test(samples: &[Sample], alpha: f64) -> Result<TestReport> {
    run_test(samples, alpha, TestKind::Equality)
}

/// A sample of matrix-valued observations: `n` i.i.d. draws of a `p x q`
/// transposable matrix whose rows and columns are both variable sets.
#[derive(Debug, Clone)]
pub struct TransposableSample {
    observations: Vec<DMatrix<f64>>,
}

impl TransposableSample {
    pub fn new(observations: Vec<DMatrix<f64>>) -> Result<Self> {
        if observations.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least 2 matrix observations".into(),
            ));
        }
        let (p, q) = (observations[0].nrows(), observations[0].ncols());
        if p == 0 || q < 2 {
            return Err(Error::InvalidArgument(format!(
                "observations must be p x q with p >= 1 and q >= 2, got {p} x {q}"
            )));
        }
        if observations
            .iter()
            .any(|m| m.nrows() != p || m.ncols() != q)
        {
            return Err(Error::DimensionMismatch(
                "matrix observations have differing shapes".into(),
            ));
        }
        Ok(TransposableSample { observations })
    }

    pub fn p(&self) -> usize {
        self.observations[0].nrows()
    }

    pub fn q(&self) -> usize {
        self.observations[0].ncols()
    }

    /// Number of matrix observations.
    pub fn n_obs(&self) -> usize {
        self.observations.len()
    }

    pub fn observations(&self) -> &[DMatrix<f64>] {
        &self.observations
    }

    /// Slices column `i` across the replicate matrices into one `p x n`
    /// sample per column variable.
    pub fn column_samples(&self) -> Result<Vec<Sample>> {
        let (p, n) = (self.p(), self.n_obs());
        (0..self.q())
            .map(|i| {
                let m = DMatrix::from_fn(p, n, |r, j| self.observations[j][(r, i)]);
                Sample::new(m)
            })
            .collect()
    }
}

/// Specification test for the Kronecker (separable) covariance structure
/// with a diagonal column covariance: equivalent to testing that the columns
/// have mutually proportional covariance matrices, which is exactly the
/// proportionality test on the column samples.
pub fn kron_spec_test(tdata: &TransposableSample, alpha: f64) -> Result<TestReport> {
    let columns = tdata.column_samples()?;
    let mut report = prop_test(&columns, alpha)?;
    report.kind = TestKind::KroneckerSpec;
    Ok(report)
}

/// Pairwise contributions `G_ij` to the equality statistic, with quartile
/// classes and the row ordering used for heat-map display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub q: usize,
    /// Symmetric `q x q` matrix of contributions, zero diagonal, in input
    /// population order.
    pub g_matrix: Vec<Vec<f64>>,
    /// Population indices sorted by descending row average of `g_matrix`.
    pub row_order: Vec<usize>,
    /// `(Q25, Q50, Q75)` of the off-diagonal values (type-7 interpolation).
    pub quartiles: (f64, f64, f64),
    /// Classes 1-4 against the quartiles; 0 on the diagonal. Ties go to the
    /// lower class.
    pub class_matrix: Vec<Vec<u8>>,
}

impl PairwiseReport {
    fn from_g(g: Vec<Vec<f64>>) -> Self {
        let q = g.len();
        let mut row_order: Vec<usize> = (0..q).collect();
        let row_avg: Vec<f64> = g
            .iter()
            .map(|row| row.iter().sum::<f64>() / q as f64)
            .collect();
        row_order.sort_by(|&a, &b| row_avg[b].total_cmp(&row_avg[a]).then(a.cmp(&b)));

        let mut upper: Vec<f64> = Vec::with_capacity(q * (q - 1) / 2);
        for i in 0..q {
            for j in (i + 1)..q {
                upper.push(g[i][j]);
            }
        }
        upper.sort_by(f64::total_cmp);
        let quartiles = (
            quantile_type7(&upper, 0.25),
            quantile_type7(&upper, 0.50),
            quantile_type7(&upper, 0.75),
        );
        let class_of = |v: f64| -> u8 {
            if v <= quartiles.0 {
                1
            } else if v <= quartiles.1 {
                2
            } else if v <= quartiles.2 {
                3
            } else {
                4
            }
        };
        let class_matrix: Vec<Vec<u8>> = (0..q)
            .map(|i| {
                (0..q)
                    .map(|j| if i == j { 0 } else { class_of(g[i][j]) })
                    .collect()
            })
            .collect();
        PairwiseReport {
            q,
            g_matrix: g,
            row_order,
            quartiles,
            class_matrix,
        }
    }
}

fn quantile_type7(sorted: &[f64], prob: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

fn g_contributions(sums: &[PopSummary]) -> Result<Vec<Vec<f64>>> {
    let q = sums.len();
    let lambda = lambda_hat_sq_from_summaries(sums)?;
    if !(lambda > 0.0) {
        return Err(Error::Numerical(
            "variance estimate vanished in pairwise contributions".into(),
        ));
    }
    let scale = (q as f64).sqrt() / lambda.sqrt();
    let mut g = vec![vec![0.0; q]; q];
    for i in 0..q {
        for j in (i + 1)..q {
            let v = scale * g_from_summaries(&sums[i], &sums[j]);
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    Ok(g)
}

fn draw_rows<R: Rng>(p_total: usize, p_sub: usize, rng: &mut R) -> Vec<usize> {
    if p_sub >= p_total {
        return (0..p_total).collect();
    }
    let mut rows: Vec<usize> = rand::seq::index::sample(rng, p_total, p_sub).into_vec();
    rows.sort_unstable();
    rows
}

/// Pairwise contributions `G_ij = sqrt(q) g(X_i, X_j) / lambda_hat`.
///
/// With `p_sub = None` and `n_rep = 1` this is a single full-dimension
/// evaluation. With `p_sub = Some(k)` the contributions are averaged over
/// `n_rep` random variable subsets (the same subset across all populations
/// within a repetition).
pub fn pairwise_contributions<R: Rng>(
    samples: &[Sample],
    n_rep: usize,
    p_sub: Option<usize>,
    rng: &mut R,
) -> Result<PairwiseReport> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 populations".into()));
    }
    if n_rep == 0 {
        return Err(Error::InvalidArgument("n_rep must be at least 1".into()));
    }
    let p_total = samples[0].p();
    let p_use = p_sub.unwrap_or(p_total);
    if p_use == 0 || p_use > p_total {
        return Err(Error::InvalidArgument(format!(
            "subset size {p_use} out of range 1..={p_total}"
        )));
    }
    let q = samples.len();
    let mut mean_g = vec![vec![0.0; q]; q];
    for _ in 0..n_rep {
        let rows = draw_rows(p_total, p_use, rng);
        let sliced = if p_use == p_total {
            samples.to_vec()
        } else {
            samples
                .iter()
                .map(|s| s.select_rows(&rows))
                .collect::<Result<Vec<_>>>()?
        };
        let sums = estimators::summaries(&sliced)?;
        let g = g_contributions(&sums)?;
        for i in 0..q {
            for j in 0..q {
                mean_g[i][j] += g[i][j] / n_rep as f64;
            }
        }
    }
    Ok(PairwiseReport::from_g(mean_g))
}

/// Aggregate of the sub-sampled equality scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub p_sub: usize,
    pub n_rep: usize,
    pub alpha: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub z_mean: f64,
    /// Fraction of sub-draws on which the equality test rejected.
    pub reject_rate: f64,
    /// Pairwise contributions averaged over the sub-draws.
    pub mean_pairwise: PairwiseReport,
}

/// Repeatedly draws `p_sub` variables (the same subset for every
/// population), optionally centers each population by its sample mean, runs
/// the equality test, and aggregates the z statistics and the pairwise
/// contributions.
pub fn subsampled_eq_scan<R: Rng>(
    populations: &[Sample],
    p_sub: usize,
    n_rep: usize,
    alpha: f64,
    center: bool,
    rng: &mut R,
) -> Result<ScanResult> {
    if populations.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 populations".into()));
    }
    if n_rep == 0 {
        return Err(Error::InvalidArgument("n_rep must be at least 1".into()));
    }
    let p_total = populations[0].p();
    if p_sub == 0 || p_sub > p_total {
        return Err(Error::InvalidArgument(format!(
            "subset size {p_sub} out of range 1..={p_total}"
        )));
    }
    let q = populations.len();
    let master_seed: u64 = rng.random();

    // Independent repetitions on per-repetition RNG streams.
    let reps: Vec<Result<(TestReport, Vec<Vec<f64>>)>> = (0..n_rep)
        .into_par_iter()
        .map(|rep| {
            let mut rep_rng = ChaCha8Rng::seed_from_u64(master_seed);
            rep_rng.set_stream(rep as u64);
            let rows = draw_rows(p_total, p_sub, &mut rep_rng);
            let sliced: Vec<Sample> = populations
                .iter()
                .map(|s| {
                    let sub = if p_sub == p_total {
                        s.clone()
                    } else {
                        s.select_rows(&rows)?
                    };
                    Ok(if center { sub.centered() } else { sub })
                })
                .collect::<Result<Vec<_>>>()?;
            let sums = estimators::summaries(&sliced)?;
            let report = report_from_components(
                TestKind::Equality,
                p_sub,
                q,
                sums.iter().map(|s| s.n).collect(),
                v_from_summaries(&sums),
                lambda_hat_sq_from_summaries(&sums)?,
                alpha,
            )?;
            let g = g_contributions(&sums)?;
            Ok((report, g))
        })
        .collect();

    let mut z_min = f64::INFINITY;
    let mut z_max = f64::NEG_INFINITY;
    let mut z_sum = 0.0;
    let mut rejects = 0usize;
    let mut mean_g = vec![vec![0.0; q]; q];
    for rep in reps {
        let (report, g) = rep?;
        z_min = z_min.min(report.z);
        z_max = z_max.max(report.z);
        z_sum += report.z;
        rejects += report.reject as usize;
        for i in 0..q {
            for j in 0..q {
                mean_g[i][j] += g[i][j] / n_rep as f64;
            }
        }
    }
    Ok(ScanResult {
        p_sub,
        n_rep,
        alpha,
        z_min,
        z_max,
        z_mean: z_sum / n_rep as f64,
        reject_rate: rejects as f64 / n_rep as f64,
        mean_pairwise: PairwiseReport::from_g(mean_g),
    })
}
