//! Command-line front end.
//!
//! Subcommands: `test` (manifest-driven test on CSV data), `pairwise`,
//! `scan`, `simulate-size`, `simulate-power`, and `oracle`. Exit codes:
//! 0 on success, 2 on input errors, 3 on numerical failures.
//!
//! JSON reports render every real as an IEEE-754 double with 17 significant
//! digits, so parsing a report recovers each value bit-exactly. Curve and
//! heat-map data additionally go to CSV companions of the JSON output.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimators::Sample;
use crate::mat::{PsdMat, SymMat};
use crate::oracle::{self, OracleReport};
use crate::procedures::{self, PairwiseReport, TransposableSample};
use crate::simgen::{self, ExperimentConfig, NoiseKind, PowerCurve, Scenario};

/// Process exit classification.
#[derive(Debug)]
enum CliError {
    /// Bad arguments, unreadable/malformed inputs. Exit code 2.
    Input(String),
    /// Numerical failure or output I/O failure. Exit code 3.
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) | Error::NotPsd { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Which test a manifest requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestTest {
    Prop,
    Eq,
    Kron,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationEntry {
    pub name: String,
    pub path: String,
}

/// Input description for `test`, `pairwise` and `scan`.
///
/// For `prop` and `eq`, each entry is one population: a CSV whose rows are
/// observations and whose columns are variables. For `kron`, each entry is
/// one matrix-valued observation: a CSV holding the `p x q` matrix itself.
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub populations: Vec<PopulationEntry>,
    #[serde(default)]
    pub center: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub test: ManifestTest,
    /// Whether the CSV files carry a header row.
    #[serde(default)]
    pub header: bool,
}

fn default_alpha() -> f64 {
    0.05
}

impl Manifest {
    pub fn load(path: &Path) -> std::result::Result<Manifest, String> {
        Self::load_inner(path).map_err(|e| e.to_string())
    }

    fn load_inner(path: &Path) -> CliResult<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("malformed manifest {}: {e}", path.display())))?;
        if manifest.populations.len() < 2 {
            return Err(CliError::Input(
                "manifest needs at least 2 populations".into(),
            ));
        }
        if !(manifest.alpha > 0.0 && manifest.alpha < 1.0) {
            return Err(CliError::Input(format!(
                "manifest alpha must lie in (0, 1), got {}",
                manifest.alpha
            )));
        }
        Ok(manifest)
    }

    fn resolved_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.populations
            .iter()
            .map(|e| {
                let p = Path::new(&e.path);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            })
            .collect()
    }

    fn names(&self) -> Vec<String> {
        self.populations.iter().map(|e| e.name.clone()).collect()
    }
}

/// Reads a numeric CSV into a row-major table, reporting 1-based line
/// numbers on errors.
fn read_csv_table(path: &Path, header: bool) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for record in reader.records() {
        let record =
            record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(rows.len() as u64 + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue; // skip blank lines
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(CliError::Input(format!(
                    "{}: ragged row at line {line}: expected {w} fields, got {}",
                    path.display(),
                    record.len()
                )));
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(record.len());
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: non-numeric value {:?} at line {line}, column {}",
                    path.display(),
                    field,
                    k + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!(
                    "{}: non-finite value at line {line}, column {}",
                    path.display(),
                    k + 1
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: empty file", path.display())));
    }
    Ok(rows)
}

/// Loads one population from CSV: rows are observations and columns are
/// variables, transposed into the internal `p x n` layout. Optionally
/// centers each variable by its sample mean.
pub fn load_population(path: &Path, center: bool, header: bool) -> std::result::Result<Sample, String> {
    load_population_inner(path, center, header).map_err(|e| e.to_string())
}

fn load_population_inner(path: &Path, center: bool, header: bool) -> CliResult<Sample> {
    let rows = read_csv_table(path, header)?;
    let n = rows.len();
    let p = rows[0].len();
    if n < 2 {
        return Err(CliError::Input(format!(
            "{}: a population needs at least 2 observations, got {n}",
            path.display()
        )));
    }
    let x = DMatrix::from_fn(p, n, |i, j| rows[j][i]);
    let sample = Sample::new(x).map_err(CliError::from)?;
    Ok(if center { sample.centered() } else { sample })
}

fn load_matrix(path: &Path, header: bool) -> CliResult<DMatrix<f64>> {
    let rows = read_csv_table(path, header)?;
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

// ---------------------------------------------------------------------------
// JSON / CSV writers

/// serde_json formatter that renders every f64 with 17 significant digits.
struct Sci17Formatter;

impl serde_json::ser::Formatter for Sci17Formatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes with 17-significant-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> std::result::Result<String, String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sci17Formatter);
    value
        .serialize(&mut ser)
        .map_err(|e| format!("serialization failed: {e}"))?;
    String::from_utf8(buf).map_err(|e| format!("serialization produced invalid UTF-8: {e}"))
}

/// Writes a JSON report to `path`, or to stdout when `path` is `None`.
pub fn write_report<T: Serialize>(value: &T, path: Option<&Path>) -> std::result::Result<(), String> {
    write_report_inner(value, path).map_err(|e| e.to_string())
}

fn write_report_inner<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let mut text = to_json_string(value).map_err(CliError::Numerical)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Numerical(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| CliError::Numerical(format!("cannot write to stdout: {e}")))
        }
    }
}

fn csv_sibling(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

fn write_power_csv(curve: &PowerCurve, path: &Path) -> CliResult<()> {
    let mut text = String::from("beta,empirical,theoretical\n");
    for k in 0..curve.beta.len() {
        text.push_str(&format!(
            "{:.16e},{:.16e},{:.16e}\n",
            curve.beta[k], curve.empirical[k], curve.theoretical[k]
        ));
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Numerical(format!("cannot write {}: {e}", path.display())))
}

/// Writes the pairwise contribution matrix with rows and columns reordered
/// by descending row average, matching the heat-map layout.
fn write_pairwise_csv(report: &PairwiseReport, names: &[String], path: &Path) -> CliResult<()> {
    let order = &report.row_order;
    let mut text = String::from("population");
    for &j in order {
        text.push(',');
        text.push_str(&names[j]);
    }
    text.push('\n');
    for &i in order {
        text.push_str(&names[i]);
        for &j in order {
            text.push_str(&format!(",{:.16e}", report.g_matrix[i][j]));
        }
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Numerical(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Argument parsing

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NoiseArg {
    Gaussian,
    Gamma,
}

impl From<NoiseArg> for NoiseKind {
    fn from(v: NoiseArg) -> NoiseKind {
        match v {
            NoiseArg::Gaussian => NoiseKind::Gaussian,
            NoiseArg::Gamma => NoiseKind::Gamma42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioArg {
    #[value(name = "prop_case_a")]
    PropCaseA,
    #[value(name = "prop_case_b")]
    PropCaseB,
    #[value(name = "eq_case_a")]
    EqCaseA,
    #[value(name = "eq_case_b")]
    EqCaseB,
    #[value(name = "kron_case_I", alias = "kron_case_i")]
    KronCaseI,
    #[value(name = "kron_case_II", alias = "kron_case_ii")]
    KronCaseII,
}

impl From<ScenarioArg> for Scenario {
    fn from(v: ScenarioArg) -> Scenario {
        match v {
            ScenarioArg::PropCaseA => Scenario::PropCaseA,
            ScenarioArg::PropCaseB => Scenario::PropCaseB,
            ScenarioArg::EqCaseA => Scenario::EqCaseA,
            ScenarioArg::EqCaseB => Scenario::EqCaseB,
            ScenarioArg::KronCaseI => Scenario::KronCaseI,
            ScenarioArg::KronCaseII => Scenario::KronCaseII,
        }
    }
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Simulation scenario.
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    /// Dimension of each population.
    #[arg(long)]
    p: usize,
    /// Number of populations (columns for the matrix-variate designs).
    #[arg(long)]
    q: usize,
    /// Lower end of the per-population sample-size range.
    #[arg(long, default_value_t = 50)]
    n_low: usize,
    /// Upper end of the per-population sample-size range (inclusive).
    #[arg(long, default_value_t = 150)]
    n_high: usize,
    /// Noise law of the data entries.
    #[arg(long, value_enum, default_value_t = NoiseArg::Gaussian)]
    noise: NoiseArg,
    /// Monte Carlo replications per grid point.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Master RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Parser)]
#[command(
    name = "covmany",
    version,
    about = "Many-sample tests for the equality and proportionality of large covariance matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the test described by a manifest on CSV data.
    Test {
        /// JSON manifest describing the populations and the test.
        #[arg(long)]
        manifest: PathBuf,
        /// Override the manifest's significance level.
        #[arg(long)]
        alpha: Option<f64>,
        /// Center each population by its sample mean (in addition to the
        /// manifest's setting).
        #[arg(long)]
        center: bool,
        /// Output path for the JSON report (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise equality contributions G_ij with quartile classes.
    Pairwise {
        #[arg(long)]
        manifest: PathBuf,
        /// Evaluate on random variable subsets of this size.
        #[arg(long)]
        p_sub: Option<usize>,
        /// Number of sub-sampling repetitions.
        #[arg(long, default_value_t = 1)]
        n_rep: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        center: bool,
        /// Output path; the ordered matrix also goes to the .csv sibling.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sub-sampled equality scan across random variable subsets.
    Scan {
        #[arg(long)]
        manifest: PathBuf,
        /// Variables drawn per repetition.
        #[arg(long)]
        p_sub: usize,
        #[arg(long, default_value_t = 100)]
        n_rep: usize,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        center: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical size of a test under its null scenario.
    SimulateSize {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical and theoretical power over a deviation grid.
    SimulatePower {
        #[command(flatten)]
        sim: SimArgs,
        /// Top of the deviation grid (defaults to a scenario-dependent
        /// heuristic reaching ~99% theoretical power).
        #[arg(long)]
        beta_max: Option<f64>,
        /// Grid step.
        #[arg(long, default_value_t = 0.1)]
        beta_step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo verification of the moment and covariance formulas.
    Oracle {
        /// Which check to run.
        #[arg(long, value_enum, default_value_t = OracleCheck::All)]
        check: OracleCheck,
        /// Monte Carlo draws per check.
        #[arg(long, default_value_t = 200_000)]
        n_draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleCheck {
    Moments,
    Expectations,
    Variance,
    Quadforms,
    All,
}

// ---------------------------------------------------------------------------
// Command implementations

fn cmd_test(
    manifest_path: &Path,
    alpha: Option<f64>,
    center_flag: bool,
    out: Option<&Path>,
) -> CliResult<()> {
    let manifest = Manifest::load_inner(manifest_path)?;
    let alpha = alpha.unwrap_or(manifest.alpha);
    let center = manifest.center || center_flag;
    let paths = manifest.resolved_paths(manifest_path);
    let report = match manifest.test {
        ManifestTest::Prop | ManifestTest::Eq => {
            let samples: Vec<Sample> = paths
                .iter()
                .map(|p| load_population_inner(p, center, manifest.header))
                .collect::<CliResult<_>>()?;
            if manifest.test == ManifestTest::Prop {
                procedures::prop_test(&samples, alpha)?
            } else {
                procedures::eq_test(&samples, alpha)?
            }
        }
        ManifestTest::Kron => {
            let obs: Vec<DMatrix<f64>> = paths
                .iter()
                .map(|p| load_matrix(p, manifest.header))
                .collect::<CliResult<_>>()?;
            let tdata = TransposableSample::new(obs)?;
            procedures::kron_spec_test(&tdata, alpha)?
        }
    };
    write_report_inner(&report, out)
}

fn cmd_pairwise(
    manifest_path: &Path,
    p_sub: Option<usize>,
    n_rep: usize,
    seed: u64,
    center_flag: bool,
    out: Option<&Path>,
) -> CliResult<()> {
    let manifest = Manifest::load_inner(manifest_path)?;
    if manifest.test == ManifestTest::Kron {
        return Err(CliError::Input(
            "pairwise contributions need a prop/eq manifest".into(),
        ));
    }
    let center = manifest.center || center_flag;
    let samples: Vec<Sample> = manifest
        .resolved_paths(manifest_path)
        .iter()
        .map(|p| load_population_inner(p, center, manifest.header))
        .collect::<CliResult<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = procedures::pairwise_contributions(&samples, n_rep, p_sub, &mut rng)?;
    if let Some(path) = out {
        write_pairwise_csv(&report, &manifest.names(), &csv_sibling(path))?;
    }
    write_report_inner(&report, out)
}

fn cmd_scan(
    manifest_path: &Path,
    p_sub: usize,
    n_rep: usize,
    alpha: Option<f64>,
    seed: u64,
    center_flag: bool,
    out: Option<&Path>,
) -> CliResult<()> {
    let manifest = Manifest::load_inner(manifest_path)?;
    if manifest.test == ManifestTest::Kron {
        return Err(CliError::Input("the scan needs a prop/eq manifest".into()));
    }
    let alpha = alpha.unwrap_or(manifest.alpha);
    let center = manifest.center || center_flag;
    let samples: Vec<Sample> = manifest
        .resolved_paths(manifest_path)
        .iter()
        .map(|p| load_population_inner(p, false, manifest.header))
        .collect::<CliResult<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = procedures::subsampled_eq_scan(&samples, p_sub, n_rep, alpha, center, &mut rng)?;
    if let Some(path) = out {
        write_pairwise_csv(&result.mean_pairwise, &manifest.names(), &csv_sibling(path))?;
    }
    write_report_inner(&result, out)
}

fn build_config(sim: &SimArgs, beta_grid: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        p: sim.p,
        q: sim.q,
        n_range: (sim.n_low, sim.n_high),
        noise: sim.noise.into(),
        scenario: sim.scenario.into(),
        beta_grid,
        n_reps: sim.reps,
        alpha: sim.alpha,
        seed: sim.seed,
    }
}

fn cmd_simulate_size(sim: &SimArgs, out: Option<&Path>) -> CliResult<()> {
    let cfg = build_config(sim, vec![0.0]);
    let row = simgen::run_size_experiment(&cfg)?;
    write_report_inner(&row, out)
}

/// JSON metadata accompanying a power curve.
#[derive(Debug, Serialize, Deserialize)]
pub struct PowerRun {
    pub config: ExperimentConfig,
    pub curve: PowerCurve,
}

fn cmd_simulate_power(
    sim: &SimArgs,
    beta_max: Option<f64>,
    beta_step: f64,
    out: Option<&Path>,
) -> CliResult<()> {
    if beta_step <= 0.0 {
        return Err(CliError::Input("beta step must be positive".into()));
    }
    let scenario: Scenario = sim.scenario.into();
    let beta_max = match beta_max {
        Some(b) => b,
        None => simgen::default_beta_max(
            scenario,
            sim.p,
            sim.q,
            (sim.n_low, sim.n_high),
            sim.noise.into(),
            sim.alpha,
            sim.seed,
        )?,
    };
    let mut grid = Vec::new();
    let mut b = 0.0;
    while b <= beta_max + 1e-12 {
        grid.push(b);
        b += beta_step;
    }
    let cfg = build_config(sim, grid);
    let curve = simgen::run_power_experiment(&cfg)?;
    if let Some(path) = out {
        write_power_csv(&curve, &csv_sibling(path))?;
    }
    write_report_inner(&PowerRun { config: cfg, curve }, out)
}

/// Canonical oracle configurations, run for both noise kinds.
fn cmd_oracle(check: OracleCheck, n_draws: usize, seed: u64, out: Option<&Path>) -> CliResult<()> {
    let mut reports: Vec<OracleReport> = Vec::new();
    let kinds = [NoiseKind::Gaussian, NoiseKind::Gamma42];
    if matches!(check, OracleCheck::Moments | OracleCheck::All) {
        let sigma = PsdMat::from_diagonal(&[1.0, 2.0, 3.0, 4.0]).map_err(CliError::from)?;
        let a = SymMat::identity(4);
        for (k, kind) in kinds.iter().enumerate() {
            reports.extend(oracle::check_moment_system(
                &sigma,
                12,
                &a,
                *kind,
                n_draws,
                seed.wrapping_add(k as u64),
            )?);
        }
    }
    if matches!(check, OracleCheck::Expectations | OracleCheck::All) {
        let sigma = PsdMat::from_diagonal(&[0.5, 1.0, 1.5, 2.0]).map_err(CliError::from)?;
        let a = SymMat::from_diagonal(&[2.0, 1.0, 1.0, 0.5]);
        for (k, kind) in kinds.iter().enumerate() {
            reports.extend(oracle::check_trace_expectations(
                &sigma,
                &a,
                10,
                *kind,
                n_draws,
                seed.wrapping_add(10 + k as u64),
            )?);
        }
    }
    if matches!(check, OracleCheck::Variance | OracleCheck::All) {
        // The leading-order remainder shrinks like ~1/n and is larger for
        // non-Gaussian kurtosis, hence the longer gamma run.
        let sigma = PsdMat::identity(50);
        reports.push(oracle::check_centered_trace_variance(
            &sigma,
            50,
            NoiseKind::Gaussian,
            n_draws,
            seed.wrapping_add(20),
        )?);
        reports.push(oracle::check_centered_trace_variance(
            &sigma,
            200,
            NoiseKind::Gamma42,
            n_draws,
            seed.wrapping_add(21),
        )?);
    }
    if matches!(check, OracleCheck::Quadforms | OracleCheck::All) {
        let p = 200;
        let i = SymMat::identity(p);
        let spectrum: Vec<f64> = (0..p).map(|k| 0.5 + 1.5 * (k as f64) / p as f64).collect();
        let d = SymMat::from_diagonal(&spectrum);
        for (k, kind) in kinds.iter().enumerate() {
            reports.extend(oracle::check_quadform_covariances(
                [&i, &d, &i, &d],
                *kind,
                n_draws,
                seed.wrapping_add(30 + k as u64),
            )?);
        }
    }
    let all_pass = reports.iter().all(|r| r.pass);
    write_report_inner(&reports, out)?;
    if !all_pass {
        return Err(CliError::Numerical(
            "one or more oracle checks failed".into(),
        ));
    }
    Ok(())
}

fn configure_threads() {
    if let Ok(v) = std::env::var("COVMANY_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                // Ignore the error if a global pool already exists.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Parses `argv` and runs the requested subcommand. Returns the process
/// exit code: 0 success, 2 input error, 3 numerical failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Let clap render help/version as requested; everything else is
            // an input error.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { 0 } else { 2 };
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::Test {
            manifest,
            alpha,
            center,
            out,
        } => cmd_test(manifest, *alpha, *center, out.as_deref()),
        Command::Pairwise {
            manifest,
            p_sub,
            n_rep,
            seed,
            center,
            out,
        } => cmd_pairwise(manifest, *p_sub, *n_rep, *seed, *center, out.as_deref()),
        Command::Scan {
            manifest,
            p_sub,
            n_rep,
            alpha,
            seed,
            center,
            out,
        } => cmd_scan(
            manifest,
            *p_sub,
            *n_rep,
            *alpha,
            *seed,
            *center,
            out.as_deref(),
        ),
        Command::SimulateSize { sim, out } => cmd_simulate_size(sim, out.as_deref()),
        Command::SimulatePower {
            sim,
            beta_max,
            beta_step,
            out,
        } => cmd_simulate_power(sim, *beta_max, *beta_step, out.as_deref()),
        Command::Oracle {
            check,
            n_draws,
            seed,
            out,
        } => cmd_oracle(*check, *n_draws, *seed, out.as_deref()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("covmany: {e}");
            e.code()
        }
    }
}
