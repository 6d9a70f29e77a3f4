//! Command-line entry point wiring ingestion, distances, matching,
//! estimation, and the simulation harness.
//!
//! Exit codes: 0 success, 1 validation/configuration errors, 2 numeric or
//! solver errors. Errors are emitted as a JSON object on stderr. Every run
//! writes an effective-config dump next to its primary output. Set
//! DIDMATCH_LOG=1 for progress messages on stderr.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use didmatch::distance::{
    build_distance_matrix_resolved, CombineMode, CovariateMetric, DistanceSpec,
};
use didmatch::error::{Error, Result};
use didmatch::estimator::{
    estimate, estimate_theta, load_paired_csv, randomization_test, write_paired_csv,
    EstimandSpec, EstimateOptions, EstimateReport, PairedData, PsiY, PsiZ, QMode, VarianceSpec,
    ZeroGapPolicy,
};
use didmatch::matching::{
    balance_report, greedy_match, matching_total, solve_with_odd_handling, to_matched_sample,
    BalanceReport, Certificate, Matching, EXACT_SOLVER_SOFT_LIMIT,
};
use didmatch::panel::{load_panel, validate_panel, CsvSchema};
use didmatch::sim::{coverage_study, run_bias_study, BiasTable, CoverageSummary, SimulationConfig};

const SCHEMA_VERSION: &str = "1";

#[derive(Parser, Debug, Serialize)]
#[command(name = "didmatch", version, about = "Design-based DID with non-bipartite matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Pair units by optimal matching and write pairs plus a balance report.
    Match(MatchArgs),
    /// Estimate the DID ratio from a matched-pairs file.
    Estimate(EstimateArgs),
    /// Run the simulation harness (bias study or coverage experiment).
    Simulate(SimulateArgs),
    /// Write the pairwise distance matrix as CSV.
    Distance(DistanceArgs),
}

#[derive(Args, Debug, Serialize)]
struct PanelInputArgs {
    /// Panel CSV with header row.
    #[arg(long)]
    input: PathBuf,
    /// Column holding unit ids.
    #[arg(long, default_value = "id")]
    id_col: String,
    /// Columns holding the doses and outcomes at the two periods.
    #[arg(long, default_value = "z0")]
    z0_col: String,
    #[arg(long, default_value = "z1")]
    z1_col: String,
    #[arg(long, default_value = "y0")]
    y0_col: String,
    #[arg(long, default_value = "y1")]
    y1_col: String,
    /// Comma-separated covariate columns; all unclaimed columns otherwise.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

impl PanelInputArgs {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            id: self.id_col.clone(),
            z0: self.z0_col.clone(),
            z1: self.z1_col.clone(),
            y0: self.y0_col.clone(),
            y1: self.y1_col.clone(),
            covariates: self.covariates.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DistanceKind {
    Ratio,
    Penalty,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MetricKind {
    Mahalanobis,
    RankMahalanobis,
    Euclidean,
}

#[derive(Args, Debug, Serialize)]
struct DistanceFlagArgs {
    /// How covariate distance and dose separation combine.
    #[arg(long = "distance", value_enum, default_value = "ratio")]
    distance: DistanceKind,
    #[arg(long, value_enum, default_value = "mahalanobis")]
    covariate_metric: MetricKind,
    /// Ratio-mode regularizer (data-adaptive when omitted).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Penalty magnitude (data-adaptive when omitted).
    #[arg(long)]
    big_m: Option<f64>,
    /// Penalty threshold on the dose-change gap (data-adaptive when omitted).
    #[arg(long)]
    xi: Option<f64>,
    /// Covariance regularizer (data-adaptive when omitted).
    #[arg(long)]
    ridge: Option<f64>,
}

impl DistanceFlagArgs {
    fn spec(&self) -> DistanceSpec {
        DistanceSpec {
            covariate_metric: match self.covariate_metric {
                MetricKind::Mahalanobis => CovariateMetric::Mahalanobis,
                MetricKind::RankMahalanobis => CovariateMetric::RankMahalanobis,
                MetricKind::Euclidean => CovariateMetric::Euclidean,
            },
            combine: match self.distance {
                DistanceKind::Ratio => CombineMode::Ratio,
                DistanceKind::Penalty => CombineMode::Penalty,
            },
            epsilon: self.epsilon,
            big_m: self.big_m,
            xi: self.xi,
            ridge: self.ridge,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct MatchArgs {
    #[command(flatten)]
    panel: PanelInputArgs,
    #[command(flatten)]
    distance_flags: DistanceFlagArgs,
    /// Matched-pairs CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Balance report JSON path (default: balance.json next to --out).
    #[arg(long)]
    balance_out: Option<PathBuf>,
    /// Use the greedy fallback instead of the exact solver when the panel
    /// exceeds the exact-solver soft limit.
    #[arg(long, default_value_t = false)]
    allow_greedy: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum QModeArg {
    InterceptOnly,
    CovariateMeans,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PsiYArg {
    Identity,
    Log,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PsiZArg {
    Difference,
    LogRatio,
}

#[derive(Args, Debug, Serialize)]
struct EstimateArgs {
    /// Matched-pairs CSV (as written by the match subcommand).
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "intercept-only")]
    q_mode: QModeArg,
    /// Covariates to include as Q columns (default: all).
    #[arg(long, value_delimiter = ',')]
    q_covariates: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "identity")]
    psi_y: PsiYArg,
    #[arg(long, value_enum, default_value = "difference")]
    psi_z: PsiZArg,
    /// Drop pairs whose dose gap is below this tolerance instead of failing.
    #[arg(long, num_args = 0..=1, default_missing_value = "1e-12")]
    drop_zero_gap: Option<f64>,
    /// Run the sign-flip randomization test against this null value.
    #[arg(long)]
    randomization_null: Option<f64>,
    /// Monte Carlo draws when the pair count exceeds the exact limit.
    #[arg(long, default_value_t = 10_000)]
    randomization_draws: u64,
    #[arg(long, default_value_t = 0)]
    randomization_seed: u64,
    /// One-sided (greater) randomization test instead of two-sided.
    #[arg(long, default_value_t = false)]
    one_sided: bool,
    /// Report JSON output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Comma-separated effect sizes.
    #[arg(long, value_delimiter = ',', default_value = "1.5,2,2.5,3")]
    beta_grid: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for replications (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Bias-table (or coverage-table) CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Summary JSON path (default: <out>.summary.json).
    #[arg(long)]
    summary_out: Option<PathBuf>,
    /// Run a coverage experiment instead of the bias study.
    #[arg(long, default_value_t = false)]
    coverage: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Unit-level effect heterogeneity (sd of slopes around beta).
    #[arg(long, default_value_t = 0.0)]
    het_sd: f64,
    /// Extra confounder loading at t = 1 into the dose (violation mode).
    #[arg(long, default_value_t = 0.0)]
    confounder_drift_dose: f64,
    /// Extra confounder loading at t = 1 into the outcome (violation mode).
    #[arg(long, default_value_t = 0.0)]
    confounder_drift_outcome: f64,
    /// Parametric comparator regresses on the dose change alone.
    #[arg(long, default_value_t = false)]
    dose_only_parametric: bool,
    #[arg(long, value_enum, default_value = "intercept-only")]
    q_mode: QModeArg,
}

#[derive(Args, Debug, Serialize)]
struct DistanceArgs {
    #[command(flatten)]
    panel: PanelInputArgs,
    #[command(flatten)]
    distance_flags: DistanceFlagArgs,
    /// Distance-matrix CSV output path.
    #[arg(long)]
    out: PathBuf,
}

fn verbose() -> bool {
    std::env::var("DIDMATCH_LOG")
        .map(|v| !v.is_empty() && v != "0" && !v.eq_ignore_ascii_case("off"))
        .unwrap_or(false)
}

macro_rules! vlog {
    ($($arg:tt)*) => {
        if verbose() {
            eprintln!("[didmatch] {}", format!($($arg)*));
        }
    };
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let payload = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "error": { "kind": e.kind(), "message": e.to_string() },
            });
            eprintln!("{payload}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Match(args) => run_match(args),
        Command::Estimate(args) => run_estimate(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Distance(args) => run_distance(args),
    }
}

/// Dump the effective configuration next to the primary output.
fn write_config_dump(out: &Path, config: &impl Serialize) -> Result<()> {
    let mut path = out.as_os_str().to_owned();
    path.push(".config.json");
    let payload = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "effective_config": config,
    });
    std::fs::write(PathBuf::from(path), pretty(&payload)?)?;
    Ok(())
}

fn pretty(value: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Validation(format!("cannot serialize output: {e}")))
}

#[derive(Serialize)]
struct MatchReport<'a> {
    schema_version: &'static str,
    n_units: usize,
    n_pairs: usize,
    excluded_unit: Option<String>,
    total_cost: f64,
    objective_certificate: Certificate,
    tie_count: usize,
    balance: &'a BalanceReport,
}

fn run_match(args: MatchArgs) -> Result<()> {
    let ds = load_panel(&args.panel.input, &args.panel.schema())?;
    let report = validate_panel(&ds);
    if report.has_flags() {
        return Err(Error::Validation(format!(
            "panel has non-finite values, e.g. unit \"{}\" ({})",
            report.non_finite[0].0, report.non_finite[0].1
        )));
    }
    vlog!("loaded {} units with {} covariates", ds.len(), ds.n_covariates());

    let spec = args.distance_flags.spec();
    let ctx = spec.resolve(&ds)?;
    let dm = build_distance_matrix_resolved(&ctx)?;

    let (matching, excluded_idx): (Matching, Option<usize>) =
        if ds.len() > EXACT_SOLVER_SOFT_LIMIT && args.allow_greedy {
            if ds.len() % 2 != 0 {
                return Err(Error::Validation(
                    "greedy fallback does not handle odd panels; drop one unit explicitly".into(),
                ));
            }
            vlog!("using greedy fallback for {} units", ds.len());
            (greedy_match(&dm)?, None)
        } else {
            solve_with_odd_handling(&dm)?
        };
    vlog!(
        "matched {} pairs, total cost {}",
        matching.pairs.len(),
        matching.total_cost
    );

    let ms = to_matched_sample(&matching, &ds)?;
    let balance = balance_report(&ms)?;
    let pd = PairedData::from_matched_sample(&ms);
    let distances: Vec<f64> = matching.pairs.iter().map(|&(a, b)| dm.cost(a, b)).collect();
    write_paired_csv(&pd, Some(&distances), &args.out)?;

    let excluded_unit = excluded_idx.map(|i| ds.units[i].id.clone());
    let balance_path = args
        .balance_out
        .clone()
        .unwrap_or_else(|| args.out.with_file_name("balance.json"));
    let match_report = MatchReport {
        schema_version: SCHEMA_VERSION,
        n_units: ds.len(),
        n_pairs: ms.n_pairs(),
        excluded_unit,
        total_cost: matching_total(&dm, &matching.pairs),
        objective_certificate: matching.objective_certificate,
        tie_count: ms.pairs.iter().filter(|p| p.tied).count(),
        balance: &balance,
    };
    std::fs::write(&balance_path, pretty(&match_report)?)?;

    #[derive(Serialize)]
    struct EffectiveMatchConfig<'a> {
        subcommand: &'static str,
        args: &'a MatchArgs,
        resolved_distance: &'a didmatch::distance::ResolvedDistanceSpec,
    }
    write_config_dump(
        &args.out,
        &EffectiveMatchConfig {
            subcommand: "match",
            args: &args,
            resolved_distance: &ctx.spec,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct RandomizationSection {
    tau0: f64,
    two_sided: bool,
    p_value: f64,
}

#[derive(Serialize)]
struct EstimateJson {
    schema_version: &'static str,
    n_pairs: usize,
    estimand: EstimandSpec,
    /// Transformed-family estimate; equals tau_hat for the identity spec.
    theta_hat: f64,
    randomization: Option<RandomizationSection>,
    #[serde(flatten)]
    report: EstimateReport,
}

fn run_estimate(args: EstimateArgs) -> Result<()> {
    if !(args.alpha > 0.0 && args.alpha < 0.5) {
        return Err(Error::Config(format!(
            "alpha must be in (0, 0.5), got {}",
            args.alpha
        )));
    }
    let pd = load_paired_csv(&args.pairs)?;
    vlog!("loaded {} pairs", pd.n_pairs());

    let zero_gap = match args.drop_zero_gap {
        Some(tol) => ZeroGapPolicy::Drop { tol },
        None => ZeroGapPolicy::Error,
    };
    let variance = VarianceSpec {
        q_mode: match args.q_mode {
            QModeArg::InterceptOnly => QMode::InterceptOnly,
            QModeArg::CovariateMeans => QMode::InterceptPlusCovariateMeans,
        },
        selected_covariates: args.q_covariates.clone().unwrap_or_default(),
    };
    let options = EstimateOptions {
        alpha: Some(args.alpha),
        variance,
        zero_gap,
    };
    let report = estimate(&pd, &options)?;

    let estimand = EstimandSpec {
        psi_y: match args.psi_y {
            PsiYArg::Identity => PsiY::Identity,
            PsiYArg::Log => PsiY::Log,
        },
        psi_z: match args.psi_z {
            PsiZArg::Difference => PsiZ::Difference,
            PsiZArg::LogRatio => PsiZ::LogRatio,
        },
    };
    // Evaluate the transformed family on the pairs that survived exclusion.
    let included = PairedData {
        pairs: pd
            .pairs
            .iter()
            .filter(|p| !report.excluded_pairs.iter().any(|e| e.pair_index == p.pair_index))
            .cloned()
            .collect(),
        covariate_names: pd.covariate_names.clone(),
    };
    let theta_hat = estimate_theta(&included, &estimand)?;

    let randomization = match args.randomization_null {
        Some(tau0) => Some(RandomizationSection {
            tau0,
            two_sided: !args.one_sided,
            p_value: randomization_test(
                &included,
                tau0,
                !args.one_sided,
                args.randomization_draws,
                args.randomization_seed,
            )?,
        }),
        None => None,
    };

    let out = EstimateJson {
        schema_version: SCHEMA_VERSION,
        n_pairs: report.pair_stats.len(),
        estimand,
        theta_hat,
        randomization,
        report,
    };
    std::fs::write(&args.out, pretty(&out)?)?;

    #[derive(Serialize)]
    struct EffectiveEstimateConfig<'a> {
        subcommand: &'static str,
        args: &'a EstimateArgs,
    }
    write_config_dump(
        &args.out,
        &EffectiveEstimateConfig {
            subcommand: "estimate",
            args: &args,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    schema_version: &'static str,
    mode: &'static str,
    n_units: usize,
    replications: usize,
    seed: u64,
    beta_grid: &'a [f64],
    bias_table: Option<&'a BiasTable>,
    coverage: Option<&'a CoverageSummary>,
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = SimulationConfig::new(*args.beta_grid.first().unwrap_or(&0.0), args.seed);
    cfg.n_units = args.n;
    cfg.replications = args.reps;
    cfg.effect_heterogeneity_sd = args.het_sd;
    cfg.confounder_drift = (args.confounder_drift_dose, args.confounder_drift_outcome);
    cfg.parametric_dose_only = args.dose_only_parametric;
    cfg.validate()?;

    let vspec = VarianceSpec {
        q_mode: match args.q_mode {
            QModeArg::InterceptOnly => QMode::InterceptOnly,
            QModeArg::CovariateMeans => QMode::InterceptPlusCovariateMeans,
        },
        selected_covariates: Vec::new(),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;

    let summary_path = args
        .summary_out
        .clone()
        .unwrap_or_else(|| {
            let mut p = args.out.as_os_str().to_owned();
            p.push(".summary.json");
            PathBuf::from(p)
        });

    if args.coverage {
        vlog!(
            "coverage: n = {}, reps = {}, alpha = {}",
            cfg.n_units,
            cfg.replications,
            args.alpha
        );
        let summary = pool.install(|| coverage_study(&cfg, args.alpha, &vspec))?;
        let csv = format!(
            "alpha,n_units,replications,covered,coverage,mean_ci_width\n{},{},{},{},{},{}\n",
            summary.alpha,
            summary.n_units,
            summary.replications,
            summary.covered,
            summary.coverage,
            summary.mean_ci_width
        );
        std::fs::write(&args.out, csv)?;
        let json = SimulateSummary {
            schema_version: SCHEMA_VERSION,
            mode: "coverage",
            n_units: cfg.n_units,
            replications: cfg.replications,
            seed: cfg.seed,
            beta_grid: &args.beta_grid,
            bias_table: None,
            coverage: Some(&summary),
        };
        std::fs::write(&summary_path, pretty(&json)?)?;
    } else {
        vlog!(
            "bias study: n = {}, reps = {}, grid {:?}",
            cfg.n_units,
            cfg.replications,
            args.beta_grid
        );
        let table = pool.install(|| run_bias_study(&cfg, &args.beta_grid))?;
        std::fs::write(&args.out, table.to_csv_string())?;
        let json = SimulateSummary {
            schema_version: SCHEMA_VERSION,
            mode: "bias",
            n_units: cfg.n_units,
            replications: cfg.replications,
            seed: cfg.seed,
            beta_grid: &args.beta_grid,
            bias_table: Some(&table),
            coverage: None,
        };
        std::fs::write(&summary_path, pretty(&json)?)?;
    }

    #[derive(Serialize)]
    struct EffectiveSimulateConfig<'a> {
        subcommand: &'static str,
        args: &'a SimulateArgs,
        config: &'a SimulationConfig,
    }
    write_config_dump(
        &args.out,
        &EffectiveSimulateConfig {
            subcommand: "simulate",
            args: &args,
            config: &cfg,
        },
    )?;
    Ok(())
}

fn run_distance(args: DistanceArgs) -> Result<()> {
    let ds = load_panel(&args.panel.input, &args.panel.schema())?;
    let spec = args.distance_flags.spec();
    let ctx = spec.resolve(&ds)?;
    let dm = build_distance_matrix_resolved(&ctx)?;

    let mut writer = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_path(&args.out)
        .map_err(|e| Error::Validation(format!("cannot write {}: {e}", args.out.display())))?;
    let mut header = vec!["id".to_string()];
    header.extend(ds.units.iter().map(|u| u.id.clone()));
    writer
        .write_record(&header)
        .map_err(|e| Error::Validation(e.to_string()))?;
    for a in 0..dm.n() {
        let mut record = vec![ds.units[a].id.clone()];
        for b in 0..dm.n() {
            if a == b {
                record.push(String::new());
            } else {
                record.push(format!("{}", dm.cost(a, b)));
            }
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Validation(e.to_string()))?;
    }
    writer.flush()?;

    #[derive(Serialize)]
    struct EffectiveDistanceConfig<'a> {
        subcommand: &'static str,
        args: &'a DistanceArgs,
        resolved_distance: &'a didmatch::distance::ResolvedDistanceSpec,
    }
    write_config_dump(
        &args.out,
        &EffectiveDistanceConfig {
            subcommand: "distance",
            args: &args,
            resolved_distance: &ctx.spec,
        },
    )?;
    Ok(())
}
