//! Command-line front end: argument parsing, run configuration, report
//! writing and the exit-code contract (0 success, 2 data error, 3
//! numerical error).

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::aggregate::{estimate, resolve_split, resolve_zeta, stage_design, EstimateConfig, EstimateResult, Tuning};
use crate::error::{Error, Result};
use crate::exposures::construct_exposures;
use crate::inference::{ar_test, confidence_set, ConfidenceSet, GridSpec, TestResult};
use crate::linalg::OlsDesign;
use crate::panel::{read_panel_csv, scaling_factors, AggregateData, BalancedPanel, ExposureVector, LoadedPanel, PanelMetadata};
use crate::sim::{calibrate_from_panel, run_monte_carlo, synthetic_spec, write_error_dump, Design, McConfig, McReport, DEFAULT_RANK, TAU};
use crate::tsls::tsls_estimate;
use crate::tsmodel::{build_psi, LambdaScale, PsiSpec};
use crate::weights::{balance_diagnostics, default_zeta, BalanceReport};

#[derive(Debug, Parser)]
#[command(name = "aggshock", version, about = "Aggregate-shock IV estimation with balancing weights")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the effect, its variance, tests and a confidence set.
    Estimate(EstimateArgs),
    /// Construct exposures from pre-period regressions.
    Exposures(ExposuresArgs),
    /// Run the Monte Carlo designs.
    Simulate(SimulateArgs),
    /// Report representation, balance and conditioning diagnostics.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Long-format panel CSV: unit,time,y,w,z[,d][,psi_2..].
    #[arg(long)]
    pub panel: PathBuf,
    /// Polynomial trend degree added to the deterministic regressors.
    #[arg(long)]
    pub trend_degree: Option<usize>,
    /// CSV of extra aggregate regressors, one column each, T rows in time order.
    #[arg(long)]
    pub psi_file: Option<PathBuf>,
    /// JSON file with default option values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct WeightArgs {
    /// Pre-period length: `auto` or an integer.
    #[arg(long)]
    pub t0: Option<Tuning<usize>>,
    /// Regularization: `auto` or a positive number.
    #[arg(long)]
    pub zeta: Option<Tuning<f64>>,
    /// Require omega_i (D_i - mean D) >= 0.
    #[arg(long)]
    pub sign_constraint: bool,
    /// CSV `unit,x1..xq` of unit covariates to balance exactly.
    #[arg(long)]
    pub balance_covariates: Option<PathBuf>,
    /// Scale of the instrument moving-average matrix in the variance.
    #[arg(long)]
    pub lambda_scale: Option<LambdaScale>,
    /// Use the `d` column of the panel file as exposures.
    #[arg(long, conflicts_with = "construct_exposures")]
    pub d_col: bool,
    /// Construct exposures from pre-period regressions of W on (psi, Z).
    #[arg(long)]
    pub construct_exposures: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Test level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Null values to test; repeatable.
    #[arg(long)]
    pub tau0: Vec<f64>,
    /// Report a confidence set by test inversion.
    #[arg(long)]
    pub ci: bool,
    /// Grid `lo:hi:n` for the confidence set (implies --ci).
    #[arg(long)]
    pub ci_grid: Option<GridSpec>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExposuresArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of leading periods used (default floor(T/3)).
    #[arg(long)]
    pub t0: Option<usize>,
    /// Output CSV `unit,d,se,r2`; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Output JSON file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignChoice {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    #[value(name = "4")]
    Four,
    All,
}

impl DesignChoice {
    pub fn designs(self) -> Vec<Design> {
        match self {
            DesignChoice::One => vec![Design::One],
            DesignChoice::Two => vec![Design::Two],
            DesignChoice::Three => vec![Design::Three],
            DesignChoice::Four => vec![Design::Four],
            DesignChoice::All => Design::ALL.to_vec(),
        }
    }
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected n,T, got `{s}`"))?;
    let n = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let t = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
    Ok((n, t))
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Design 1-4, or `all`.
    #[arg(long, value_enum, default_value = "all")]
    pub design: DesignChoice,
    #[arg(long, default_value_t = 2000)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Calibrate the design to a panel CSV.
    #[arg(long, conflicts_with = "synthetic")]
    pub calibrate: Option<PathBuf>,
    /// Synthetic design of size `n,T`.
    #[arg(long, value_parser = parse_dims)]
    pub synthetic: Option<(usize, usize)>,
    /// Rank of the low-rank component when calibrating.
    #[arg(long, default_value_t = DEFAULT_RANK)]
    pub rank: usize,
    /// Multiplier on the noise covariance.
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    /// Null value of the ratio test (default: the true effect).
    #[arg(long)]
    pub tau0: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value = "unit")]
    pub lambda_scale: LambdaScale,
    /// Worker threads; results do not depend on this value.
    #[arg(long, env = "AGGSHOCK_THREADS")]
    pub threads: Option<usize>,
    /// Per-replication error CSV.
    #[arg(long)]
    pub dump_errors: Option<PathBuf>,
    /// Output JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Option defaults read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub trend_degree: Option<usize>,
    pub psi_file: Option<PathBuf>,
    pub t0: Option<Tuning<usize>>,
    pub zeta: Option<Tuning<f64>>,
    pub sign_constraint: Option<bool>,
    pub balance_covariates: Option<PathBuf>,
    pub lambda_scale: Option<LambdaScale>,
    pub alpha: Option<f64>,
    pub tau0: Option<Vec<f64>>,
    pub ci: Option<bool>,
    pub ci_grid: Option<GridSpec>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Ok(serde_json::from_reader(BufReader::new(File::open(p)?))?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureSource {
    Column,
    Constructed,
}

/// Fully resolved options, embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub panel: Option<String>,
    pub psi_file: Option<String>,
    pub trend_degree: usize,
    pub balance_covariates: Option<String>,
    pub exposures: Option<ExposureSource>,
    pub t0: Option<Tuning<usize>>,
    pub zeta: Option<Tuning<f64>>,
    pub sign_constraint: bool,
    pub lambda_scale: LambdaScale,
    pub alpha: Option<f64>,
    pub tau0: Vec<f64>,
    pub ci: bool,
    pub ci_grid: Option<GridSpec>,
    pub simulation: Option<SimulationConfig>,
    /// Output location; not serialized so reports do not depend on where they are written.
    #[serde(skip)]
    pub out: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub designs: Vec<u8>,
    pub reps: usize,
    pub source: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub rank: Option<usize>,
    pub noise_scale: f64,
    pub tau: f64,
    pub tau0: f64,
    pub alpha: f64,
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

impl RunConfig {
    fn base(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.into(),
            panel: None,
            psi_file: None,
            trend_degree: 0,
            balance_covariates: None,
            exposures: None,
            t0: None,
            zeta: None,
            sign_constraint: false,
            lambda_scale: LambdaScale::default(),
            alpha: None,
            tau0: Vec::new(),
            ci: false,
            ci_grid: None,
            simulation: None,
            out: None,
            seed: None,
        }
    }

    fn with_input(mut self, input: &InputArgs, file: &FileConfig) -> Self {
        self.panel = Some(input.panel.display().to_string());
        self.trend_degree = input.trend_degree.or(file.trend_degree).unwrap_or(0);
        self.psi_file = path_str(&input.psi_file.clone().or_else(|| file.psi_file.clone()));
        self
    }

    fn with_weights(mut self, w: &WeightArgs, file: &FileConfig) -> Self {
        self.t0 = Some(w.t0.or(file.t0).unwrap_or_default());
        self.zeta = Some(w.zeta.or(file.zeta).unwrap_or_default());
        self.sign_constraint = w.sign_constraint || file.sign_constraint.unwrap_or(false);
        self.balance_covariates = path_str(&w.balance_covariates.clone().or_else(|| file.balance_covariates.clone()));
        self.lambda_scale = w.lambda_scale.or(file.lambda_scale).unwrap_or_default();
        self.exposures = if w.construct_exposures {
            Some(ExposureSource::Constructed)
        } else if w.d_col {
            Some(ExposureSource::Column)
        } else {
            None
        };
        self
    }

    pub fn for_estimate(args: &EstimateArgs) -> Result<Self> {
        let file = FileConfig::load(args.input.config.as_deref())?;
        let mut cfg = Self::base("estimate").with_input(&args.input, &file).with_weights(&args.weights, &file);
        cfg.alpha = Some(args.alpha.or(file.alpha).unwrap_or(0.05));
        cfg.tau0 = if args.tau0.is_empty() { file.tau0.clone().unwrap_or_default() } else { args.tau0.clone() };
        cfg.ci_grid = args.ci_grid.or(file.ci_grid);
        cfg.ci = args.ci || cfg.ci_grid.is_some() || file.ci.unwrap_or(false);
        cfg.out = Some(args.out.display().to_string());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn for_diagnose(args: &DiagnoseArgs) -> Result<Self> {
        let file = FileConfig::load(args.input.config.as_deref())?;
        let mut cfg = Self::base("diagnose").with_input(&args.input, &file).with_weights(&args.weights, &file);
        cfg.out = path_str(&args.out);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn for_exposures(args: &ExposuresArgs) -> Result<Self> {
        let file = FileConfig::load(args.input.config.as_deref())?;
        let mut cfg = Self::base("exposures").with_input(&args.input, &file);
        cfg.t0 = args.t0.map(Tuning::Fixed).or(Some(Tuning::Auto));
        cfg.out = path_str(&args.out);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha {
            check_alpha(a)?;
        }
        if let Some(Tuning::Fixed(z)) = self.zeta {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::InvalidInput(format!("zeta must be positive, got {z}")));
            }
        }
        if self.tau0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("tau0 values must be finite".into()));
        }
        Ok(())
    }
}

fn read_numeric_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for row in rdr.records() {
        rows.push(row?.iter().map(str::to_string).collect());
    }
    Ok((headers, rows))
}

fn parse_cell(raw: &str, path: &Path, line: usize) -> Result<f64> {
    raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::NonFiniteValue {
        context: format!("{} line {} (value `{raw}`)", path.display(), line + 2),
    })
}

/// Extra regressors: every column except an optional `time` column.
pub fn read_psi_file(path: &Path, t: usize) -> Result<DMatrix<f64>> {
    let (headers, rows) = read_numeric_table(path)?;
    if rows.len() != t {
        return Err(Error::InvalidInput(format!("{} has {} rows, panel has {t} periods", path.display(), rows.len())));
    }
    let cols: Vec<usize> = (0..headers.len()).filter(|&k| headers[k] != "time").collect();
    let mut m = DMatrix::zeros(t, cols.len());
    for (r, row) in rows.iter().enumerate() {
        for (c, &k) in cols.iter().enumerate() {
            m[(r, c)] = parse_cell(&row[k], path, r)?;
        }
    }
    Ok(m)
}

/// Unit covariates `unit,x1..xq`, reordered to the panel's units.
pub fn read_covariates(path: &Path, units: &[String]) -> Result<DMatrix<f64>> {
    let (headers, rows) = read_numeric_table(path)?;
    let cu = headers
        .iter()
        .position(|h| h == "unit")
        .ok_or_else(|| Error::InvalidInput(format!("{} lacks a `unit` column", path.display())))?;
    let cols: Vec<usize> = (0..headers.len()).filter(|&k| k != cu).collect();
    let mut m = DMatrix::from_element(units.len(), cols.len(), f64::NAN);
    let mut seen = vec![false; units.len()];
    for (r, row) in rows.iter().enumerate() {
        let i = units
            .iter()
            .position(|u| u == &row[cu])
            .ok_or_else(|| Error::InvalidInput(format!("covariate unit `{}` is not in the panel", row[cu])))?;
        if seen[i] {
            return Err(Error::DuplicateCell { unit: row[cu].clone(), time: "covariates".into() });
        }
        seen[i] = true;
        for (c, &k) in cols.iter().enumerate() {
            m[(i, c)] = parse_cell(&row[k], path, r)?;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::UnbalancedPanel { unit: units[i].clone(), time: "covariates".into() });
    }
    Ok(m)
}

/// Panel plus the aggregate design implied by the run configuration.
pub struct Inputs {
    pub loaded: LoadedPanel,
    pub aggregate: AggregateData,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let path = cfg.panel.as_deref().ok_or_else(|| Error::InvalidInput("no panel given".into()))?;
    let loaded = read_panel_csv(BufReader::new(File::open(path)?))?;
    let t = loaded.panel.t();
    let base = loaded.aggregate.psi();
    let mut extras: Vec<DVector<f64>> = (1..base.ncols()).map(|k| base.column(k).into_owned()).collect();
    if let Some(p) = &cfg.psi_file {
        let m = read_psi_file(Path::new(p), t)?;
        extras.extend((0..m.ncols()).map(|k| m.column(k).into_owned()));
    }
    let spec = PsiSpec {
        trend_degree: cfg.trend_degree,
        extra: (!extras.is_empty()).then(|| DMatrix::from_columns(&extras)),
    };
    let aggregate = loaded.aggregate.with_psi(build_psi(t, &spec)?)?;
    Ok(Inputs { loaded, aggregate })
}

fn estimate_config(cfg: &RunConfig, units: &[String]) -> Result<EstimateConfig> {
    let covariates = match &cfg.balance_covariates {
        Some(p) => Some(read_covariates(Path::new(p), units)?),
        None => None,
    };
    Ok(EstimateConfig {
        t0: cfg.t0.unwrap_or_default(),
        zeta: cfg.zeta.unwrap_or_default(),
        sign_constraint: cfg.sign_constraint,
        covariate_constraints: covariates,
        lambda_scale: cfg.lambda_scale,
        skip_variance: false,
    })
}

/// Exposures from the file or from pre-period regressions, per the configuration.
fn resolve_exposures(cfg: &mut RunConfig, inputs: &Inputs) -> Result<ExposureVector> {
    let panel = &inputs.loaded.panel;
    let source = cfg.exposures.unwrap_or(if inputs.loaded.exposure.is_some() {
        ExposureSource::Column
    } else {
        ExposureSource::Constructed
    });
    cfg.exposures = Some(source);
    match source {
        ExposureSource::Column => inputs
            .loaded
            .exposure
            .clone()
            .ok_or_else(|| Error::InvalidInput("--d-col given but the panel has no `d` column".into())),
        ExposureSource::Constructed => {
            let split = resolve_split(panel.t(), inputs.aggregate.p(), cfg.t0.unwrap_or_default())?;
            Ok(construct_exposures(panel, &inputs.aggregate, split.t0())?.d)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub config: RunConfig,
    pub metadata: PanelMetadata,
    pub delta: f64,
    pub pi: f64,
    pub tau: f64,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub zeta: f64,
    pub zeta_inflated: bool,
    pub weak_first_stage: bool,
    pub sigma: Option<Matrix2<f64>>,
    pub rho_hat: Option<f64>,
    pub tests: Vec<TestResult>,
    pub confidence_set: Option<ConfidenceSet>,
    pub balance: BalanceReport,
    pub weights_ref: String,
    pub result: EstimateResult,
    pub warnings: Vec<String>,
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<EstimateReport> {
    let mut cfg = RunConfig::for_estimate(args)?;
    let inputs = load_inputs(&cfg)?;
    let panel = &inputs.loaded.panel;
    let d = resolve_exposures(&mut cfg, &inputs)?;
    let est_cfg = estimate_config(&cfg, panel.unit_ids())?;
    let result = estimate(panel, &inputs.aggregate, &d, &est_cfg)?;
    let alpha = cfg.alpha.unwrap_or(0.05);

    let mut warnings = result.warnings.clone();
    let (tests, cs) = match &result.sigma_hat {
        Some(sigma) => {
            let tests = cfg
                .tau0
                .iter()
                .map(|&t0| ar_test(result.delta, result.pi, sigma, t0, alpha))
                .collect::<Result<Vec<_>>>()?;
            let cs = if cfg.ci { Some(confidence_set(result.delta, result.pi, sigma, alpha, cfg.ci_grid)?) } else { None };
            (tests, cs)
        }
        None => {
            if !cfg.tau0.is_empty() || cfg.ci {
                warnings.push("tests and confidence set skipped: no variance estimate".into());
            }
            (Vec::new(), None)
        }
    };

    let out = args.out.as_path();
    fs::create_dir_all(out)?;
    write_weights_csv(&out.join("weights.csv"), panel.unit_ids(), &result.weight_solution.omega)?;
    let balance = balance_diagnostics(&result.weight_solution);
    write_balance_csv(&out.join("balance.csv"), panel.time_ids(), &balance)?;
    let t0 = result.t0;
    write_aggregates_csv(
        &out.join("aggregates.csv"),
        &panel.time_ids()[t0..],
        &result.aggregates_y,
        &result.aggregates_w,
        &inputs.aggregate.z().rows(t0, panel.t() - t0).into_owned(),
    )?;
    let report = EstimateReport {
        metadata: PanelMetadata::describe(panel, &inputs.aggregate),
        config: cfg,
        delta: result.delta,
        pi: result.pi,
        tau: result.tau,
        t0,
        zeta: result.zeta,
        zeta_inflated: result.flags.zeta_inflated,
        weak_first_stage: result.flags.weak_first_stage,
        sigma: result.sigma_hat,
        rho_hat: result.rho_hat,
        tests,
        confidence_set: cs,
        balance,
        weights_ref: "weights.csv".into(),
        warnings,
        result,
    };
    write_json(&out.join("estimate.json"), &report)?;
    Ok(report)
}

fn write_weights_csv(path: &Path, units: &[String], omega: &DVector<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["unit", "omega"])?;
    for (u, w) in units.iter().zip(omega.iter()) {
        wtr.write_record([u.as_str(), &w.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_balance_csv(path: &Path, times: &[String], b: &BalanceReport) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["time", "residual_y", "residual_w"])?;
    for (k, t) in times.iter().take(b.residual_y.len()).enumerate() {
        wtr.write_record([t.as_str(), &b.residual_y[k].to_string(), &b.residual_w[k].to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_aggregates_csv(path: &Path, times: &[String], y: &DVector<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["time", "y", "w", "z"])?;
    for (k, t) in times.iter().enumerate() {
        wtr.write_record([t.as_str(), &y[k].to_string(), &w[k].to_string(), &z[k].to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn cmd_exposures(args: &ExposuresArgs) -> Result<()> {
    let cfg = RunConfig::for_exposures(args)?;
    let inputs = load_inputs(&cfg)?;
    let panel = &inputs.loaded.panel;
    let split = resolve_split(panel.t(), inputs.aggregate.p(), cfg.t0.unwrap_or_default())?;
    let fit = construct_exposures(panel, &inputs.aggregate, split.t0())?;
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(["unit", "d", "se", "r2"])?;
    for (i, u) in panel.unit_ids().iter().enumerate() {
        wtr.write_record([
            u.as_str(),
            &fit.d.values()[i].to_string(),
            &fit.per_unit_se[i].to_string(),
            &fit.r2[i].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseReport {
    pub config: RunConfig,
    pub metadata: PanelMetadata,
    /// Gap between the fixed-effects and time-series forms of TSLS.
    pub representation_gap: f64,
    pub tsls_tau: f64,
    pub balance: BalanceReport,
    pub zeta: f64,
    pub zeta_default: Option<f64>,
    pub zeta_inflated: bool,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub rho_hat: Option<f64>,
    pub sigma2_y: f64,
    pub sigma2_w: f64,
    pub condition_pre: f64,
    pub condition_post: f64,
    pub kkt_residual: f64,
    pub active_set_size: usize,
    pub warnings: Vec<String>,
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<DiagnoseReport> {
    let mut cfg = RunConfig::for_diagnose(args)?;
    let inputs = load_inputs(&cfg)?;
    let panel = &inputs.loaded.panel;
    let agg = &inputs.aggregate;
    let d = resolve_exposures(&mut cfg, &inputs)?;
    let tsls = tsls_estimate(panel, &d, agg.z())?;
    let est_cfg = estimate_config(&cfg, panel.unit_ids())?;
    let split = resolve_split(panel.t(), agg.p(), est_cfg.t0)?;
    let zeta_default = default_zeta(panel).ok();
    resolve_zeta(panel, est_cfg.zeta)?;
    let result = estimate(panel, agg, &d, &est_cfg)?;
    let (sigma2_y, sigma2_w) = scaling_factors(panel, &split)?;
    let sol = &result.weight_solution;
    let report = DiagnoseReport {
        metadata: PanelMetadata::describe(panel, agg),
        config: cfg,
        representation_gap: tsls.discrepancy(),
        tsls_tau: tsls.tau,
        balance: balance_diagnostics(sol),
        zeta: result.zeta,
        zeta_default,
        zeta_inflated: result.flags.zeta_inflated,
        t0: result.t0,
        rho_hat: result.rho_hat,
        sigma2_y,
        sigma2_w,
        condition_pre: pre_condition(panel, agg, split.t0())?,
        condition_post: stage_design(agg, split.post())?.condition(),
        kkt_residual: sol.kkt_residual,
        active_set_size: sol.active_set.len(),
        warnings: result.warnings.clone(),
    };
    if let Some(p) = &args.out {
        write_json(p, &report)?;
    }
    Ok(report)
}

fn pre_condition(panel: &BalancedPanel, agg: &AggregateData, t0: usize) -> Result<f64> {
    let p = agg.p();
    let x = DMatrix::from_fn(t0, p + 1, |s, c| if c < p { agg.psi()[(s, c)] } else { agg.z()[s] });
    let _ = panel;
    OlsDesign::new(x)
        .map(|d| d.condition())
        .map_err(|_| Error::ColinearInstrumentPre)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub config: RunConfig,
    pub designs: Vec<McReport>,
}

pub fn simulation_config(args: &SimulateArgs) -> Result<RunConfig> {
    if args.reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    check_alpha(args.alpha)?;
    if !(args.noise_scale >= 0.0 && args.noise_scale.is_finite()) {
        return Err(Error::InvalidInput("noise scale must be a non-negative number".into()));
    }
    if args.threads == Some(0) {
        return Err(Error::InvalidInput("threads must be at least 1".into()));
    }
    let mut cfg = RunConfig::base("simulate");
    cfg.seed = Some(args.seed);
    cfg.out = path_str(&args.out);
    cfg.lambda_scale = args.lambda_scale;
    cfg.alpha = Some(args.alpha);
    let (source, n, t, rank) = match (&args.calibrate, args.synthetic) {
        (Some(p), _) => (format!("calibrate:{}", p.display()), 0, 0, Some(args.rank)),
        (None, Some((n, t))) => ("synthetic".to_string(), n, t, None),
        (None, None) => ("synthetic".to_string(), 51, 39, None),
    };
    if rank.is_none() && (n < 10 || t < 10) {
        return Err(Error::InvalidInput(format!("synthetic designs need n, T >= 10, got {n},{t}")));
    }
    cfg.simulation = Some(SimulationConfig {
        designs: args.design.designs().iter().map(|d| d.number()).collect(),
        reps: args.reps,
        source,
        n,
        t,
        rank,
        noise_scale: args.noise_scale,
        tau: TAU,
        tau0: args.tau0.unwrap_or(TAU),
        alpha: args.alpha,
    });
    Ok(cfg)
}

/// Runs every requested design; `progress` receives one line per design.
pub fn cmd_simulate(args: &SimulateArgs, progress: &mut dyn Write) -> Result<SimulateReport> {
    let mut cfg = simulation_config(args)?;
    let spec = match &args.calibrate {
        Some(p) => {
            let loaded = read_panel_csv(BufReader::new(File::open(p)?))?;
            calibrate_from_panel(&loaded.panel, loaded.aggregate.z(), args.rank, args.seed)?
        }
        None => {
            let sim = cfg.simulation.as_ref().expect("simulation config");
            synthetic_spec(sim.n, sim.t, args.seed)
        }
    };
    if let Some(sim) = cfg.simulation.as_mut() {
        sim.n = spec.n;
        sim.t = spec.t;
    }
    let spec = spec.with_noise_scale(args.noise_scale);
    let sim = cfg.simulation.clone().expect("simulation config");
    let mut mc = McConfig::new(args.reps, args.seed).with_test(sim.tau0, args.alpha);
    mc.threads = args.threads;
    mc.lambda_scale = args.lambda_scale;
    mc.keep_errors = args.dump_errors.is_some();

    let mut designs = Vec::new();
    for design in args.design.designs() {
        let report = run_monte_carlo(&spec, design, &mc)?;
        writeln!(progress, "design {design}: {} replications, {} failed", report.reps, report.failures)?;
        designs.push(report);
    }
    if let Some(p) = &args.dump_errors {
        write_error_dump(BufWriter::new(File::create(p)?), &designs)?;
        for r in designs.iter_mut() {
            r.errors = None;
        }
    }
    let report = SimulateReport { config: cfg, designs };
    if let Some(p) = &args.out {
        write_json(p, &report)?;
    }
    Ok(report)
}

/// Table-1 style layout: one block per design with RMSE and bias columns.
pub fn format_table(reports: &[McReport]) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:<10}", "estimator"));
    for r in reports {
        s.push_str(&format!(" | design {} RMSE    Bias", r.design));
    }
    s.push('\n');
    type Pick = fn(&McReport) -> (f64, f64);
    let rows: [(&str, Pick); 6] = [
        ("pi", |r| (r.ours.pi.rmse, r.ours.pi.bias)),
        ("pi_tsls", |r| (r.tsls.pi.rmse, r.tsls.pi.bias)),
        ("delta", |r| (r.ours.delta.rmse, r.ours.delta.bias)),
        ("delta_tsls", |r| (r.tsls.delta.rmse, r.tsls.delta.bias)),
        ("tau", |r| (r.ours.tau.rmse, r.ours.tau.bias)),
        ("tau_tsls", |r| (r.tsls.tau.rmse, r.tsls.tau.bias)),
    ];
    for (name, pick) in rows {
        s.push_str(&format!("{name:<10}"));
        for r in reports {
            let (rmse, bias) = pick(r);
            s.push_str(&format!(" | {rmse:>14.3} {bias:>7.3}"));
        }
        s.push('\n');
    }
    s.push_str(&format!("{:<10}", "reject"));
    for r in reports {
        match r.rejection_rate {
            Some(v) => s.push_str(&format!(" | {v:>22.3}")),
            None => s.push_str(&format!(" | {:>22}", "-")),
        }
    }
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

fn report_error(err: &Error, dir: Option<&Path>) {
    eprintln!("error[{}]: {err}", err.kind());
    if let Some(dir) = dir {
        let body = ErrorReport { kind: err.kind(), message: err.to_string(), exit_code: err.exit_code() };
        if fs::create_dir_all(dir).is_ok() {
            let _ = write_json(&dir.join("error.json"), &body);
        }
    }
}

/// Parse arguments, run the subcommand and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (outcome, err_dir): (Result<()>, Option<PathBuf>) = match &cli.command {
        Command::Estimate(a) => (
            cmd_estimate(a).map(|r| {
                println!("delta = {:.6}  pi = {:.6}  tau = {:.6}", r.delta, r.pi, r.tau);
                if let Some(s) = &r.sigma {
                    println!("sigma = [[{:e}, {:e}], [{:e}, {:e}]]", s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)]);
                }
                for t in &r.tests {
                    println!("tau0 = {}: statistic {:.6}, critical {:.6}, reject {}", t.tau0, t.statistic, t.critical, t.reject);
                }
                if let Some(cs) = &r.confidence_set {
                    println!("confidence set ({}): {:?}", 1.0 - cs.alpha, cs.intervals);
                }
                for w in &r.warnings {
                    eprintln!("warning: {w}");
                }
            }),
            Some(a.out.clone()),
        ),
        Command::Exposures(a) => (cmd_exposures(a), None),
        Command::Diagnose(a) => (
            cmd_diagnose(a).and_then(|r| {
                if a.out.is_none() {
                    println!("{}", serde_json::to_string_pretty(&r)?);
                } else {
                    println!("representation gap {:e}; balance ratio y {:.4}, w {:.4}", r.representation_gap, r.balance.ratio_y, r.balance.ratio_w);
                }
                for w in &r.warnings {
                    eprintln!("warning: {w}");
                }
                Ok(())
            }),
            None,
        ),
        Command::Simulate(a) => (
            cmd_simulate(a, &mut io::stderr()).map(|r| print!("{}", format_table(&r.designs))),
            None,
        ),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e, err_dir.as_deref());
            e.exit_code()
        }
    }
}
