//! Subcommands of the `gst` binary.
//!
//! Every command returns its stdout text so it can be tested without a
//! process. Stochastic commands are pure functions of their flags and seed.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gst_core::dgm::{default_population, sample_trial, AugmentedPopulation, DgmConfig, Setting, DEFAULT_BASE_SEED};
use gst_core::estimators::{estimate, wald_statistic, EstimatorKind, WorkingModelSpec};
use gst_core::gsd::{
    estimate_joint_covariance, search_n_max, simulate_operating_characteristics, solve_boundaries, ErrorSpendingSpec, JointStatisticModel,
    PowerSpending, SimulationConfig, SimulationOptions, SolverOptions, StopReason,
};
use gst_core::precision::{aerss, are_arm, are_ate, baseline_curves, plug_in_summary, ratio_contour, ratio_r, short_term_curves, ArmSummary, PerArm, PrecisionSummary};
use gst_core::rng::{self, domain};
use gst_core::trial::{assign_enrollment, observed_fractions, snapshot_at, AnalysisSnapshot, DelayConfig, EnrollmentSchedule, DAYS_PER_YEAR};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::io::{read_records, write_records, write_rows};
use crate::pool::Pool;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gst", version, about = "Covariate-adjusted group sequential trial design and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Asymptotic relative efficiency of covariate adjustment.
    Are(AreArgs),
    /// Sample a synthetic trial to a participant CSV.
    Gen(GenArgs),
    /// Estimate the treatment effect from a participant CSV.
    Estimate(EstimateArgs),
    /// Solve efficacy, futility and decision boundaries.
    Design(DesignArgs),
    /// Operating characteristics of a design by simulation.
    Simulate(SimulateArgs),
    /// Smallest maximum sample size reaching the target power.
    Power(PowerArgs),
}

#[derive(Debug, Args)]
pub struct AreArgs {
    #[arg(long, default_value_t = 0.0)]
    pub r2w: f64,
    #[arg(long, default_value_t = 0.0)]
    pub r2lw: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub py: f64,
    #[arg(long, default_value_t = 1.0)]
    pub pl: f64,
    /// Efficiency for one arm's mean; --r2w and --r2lw are then that arm's values.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub arm: Option<u8>,
    #[arg(long, default_value_t = 0.5)]
    pub pa: f64,
    /// Print only the ratio r(p_y, p_l).
    #[arg(long)]
    pub ratio_r: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Unadjusted,
    Tmle,
}

impl From<Estimator> for EstimatorKind {
    fn from(e: Estimator) -> Self {
        match e {
            Estimator::Unadjusted => EstimatorKind::Unadjusted,
            Estimator::Tmle => EstimatorKind::Tmle,
        }
    }
}

fn parse_setting(s: &str) -> Result<Setting, String> {
    Setting::parse(s).ok_or_else(|| format!("unknown setting '{s}' (progn_WL, progn_W, progn_L, progn_none)"))
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_setting)]
    pub setting: Setting,
    /// Average treatment effect: 0 or 0.122.
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the synthetic base population.
    #[arg(long, default_value_t = DEFAULT_BASE_SEED)]
    pub base_seed: u64,
    /// Participants per year.
    #[arg(long, default_value_t = 140.0)]
    pub rate: f64,
    /// Poisson arrivals instead of equally spaced enrollment.
    #[arg(long)]
    pub poisson: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Analysis time in years since the first enrollment; all outcomes observed when absent.
    #[arg(long)]
    pub time: Option<f64>,
    #[arg(long, value_enum, default_value = "tmle")]
    pub estimator: Estimator,
    #[arg(long, default_value_t = 30.0)]
    pub d_l_days: f64,
    #[arg(long, default_value_t = 180.0)]
    pub d_y_days: f64,
}

/// Parameters shared by the design and simulation commands. Values given on
/// the command line override the `--config` file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_setting)]
    pub setting: Option<Setting>,
    #[arg(long, value_enum)]
    pub estimator: Option<Estimator>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub k_stages: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub delta_alt: Option<f64>,
    /// Exponent of both spending functions, total * min(t^rho, 1).
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub n_trials: Option<usize>,
    #[arg(long)]
    pub covariance_trials: Option<usize>,
    #[arg(long)]
    pub mvn_draws: Option<usize>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub target_power: Option<f64>,
    #[arg(long)]
    pub poisson: Option<bool>,
}

impl RunConfig {
    fn merged(&self, config: Option<&Path>) -> CliResult<Self> {
        let Some(path) = config else { return Ok(self.clone()) };
        let text = std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let file: RunConfig = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: self.$f.or(file.$f)),* } };
        }
        Ok(pick!(
            seed,
            setting,
            estimator,
            n_max,
            k_stages,
            alpha,
            beta,
            delta_alt,
            rho,
            n_trials,
            covariance_trials,
            mvn_draws,
            base_seed,
            workers,
            target_power,
            poisson
        ))
    }

    fn seed(&self) -> CliResult<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None => env_seed()?.ok_or_else(|| usage("a seed is required (--seed, config file or GST_SEED)")),
        }
    }

    fn spending(&self) -> CliResult<ErrorSpendingSpec> {
        let d = ErrorSpendingSpec::default();
        let alpha = self.alpha.unwrap_or(d.alpha);
        let beta = self.beta.unwrap_or(d.beta);
        let rho = self.rho.unwrap_or(d.f.rho);
        let spec = ErrorSpendingSpec {
            k_stages: self.k_stages.unwrap_or(d.k_stages),
            alpha,
            beta,
            delta_alt: self.delta_alt.unwrap_or(d.delta_alt),
            f: PowerSpending::new(alpha, rho),
            g: PowerSpending::new(beta, rho),
            i_max: None,
        };
        spec.validate().map_err(usage)?;
        Ok(spec)
    }

    fn options(&self) -> SimulationOptions {
        let d = SimulationOptions::default();
        SimulationOptions {
            n_trials: self.n_trials.unwrap_or(d.n_trials),
            covariance_trials: self.covariance_trials.unwrap_or(d.covariance_trials),
            solver: SolverOptions { n_draws: self.mvn_draws.unwrap_or(d.solver.n_draws), ..d.solver },
        }
    }

    fn pool(&self) -> CliResult<Pool> {
        Pool::new(self.workers.unwrap_or(0)).map_err(runtime)
    }

    fn population(&self) -> CliResult<AugmentedPopulation> {
        default_population(self.base_seed.unwrap_or(DEFAULT_BASE_SEED)).map_err(runtime)
    }

    fn simulation(&self, pop: &AugmentedPopulation, spec: &ErrorSpendingSpec) -> CliResult<SimulationConfig> {
        let n_max = self.n_max.ok_or_else(|| usage("--n-max is required"))?;
        let setting = self.setting.unwrap_or(Setting::PrognWL);
        let kind = self.estimator.unwrap_or(Estimator::Unadjusted).into();
        let mut cfg = SimulationConfig::new(DgmConfig::new(pop, setting, true), n_max, kind);
        cfg.k_stages = spec.k_stages;
        if self.poisson.unwrap_or(false) {
            cfg.enrollment = EnrollmentSchedule::Poisson;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub run: RunConfig,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interim information levels of an independent-increments model.
    #[arg(long, value_delimiter = ',', num_args = 1.., requires = "info_decision")]
    pub info_interim: Option<Vec<f64>>,
    /// Decision information levels of an independent-increments model.
    #[arg(long, value_delimiter = ',', num_args = 1.., requires = "info_interim")]
    pub info_decision: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunConfig,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-trial rows and a summary row.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for the ARE curve grids. Without --n-max only the grids are written.
    #[arg(long)]
    pub emit_figure_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[command(flatten)]
    pub run: RunConfig,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Are(a) => cmd_are(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Design(a) => cmd_design(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Power(a) => cmd_power(a),
    }
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(runtime)
}

#[derive(Debug, Serialize)]
struct AreOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    are: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aerss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
}

pub fn cmd_are(a: &AreArgs) -> CliResult<String> {
    if a.ratio_r {
        let r = ratio_r(a.py, a.pl).map_err(usage)?;
        return to_json(&AreOutput { are: None, aerss: None, r: Some(r) });
    }
    let out = match a.arm {
        None => {
            let are = are_ate(&PrecisionSummary::pooled(a.r2w, a.r2lw, a.gamma), a.py, a.pl).map_err(usage)?;
            AreOutput { are: Some(are), aerss: Some(aerss(are).map_err(usage)?), r: None }
        }
        Some(arm) => {
            let s = ArmSummary { r2_w: a.r2w, r2_l_given_w: a.r2lw, r2_resid: 1.0 - a.r2w - a.r2lw };
            let p = PrecisionSummary { per_arm: PerArm { arm0: s, arm1: s }, ..PrecisionSummary::pooled(a.r2w, a.r2lw, 0.0) };
            let are = are_arm(&p, arm, a.pa, a.py, a.pl).map_err(usage)?;
            AreOutput { are: Some(are), aerss: Some(aerss(are).map_err(usage)?), r: ratio_r(a.py, a.pl).ok() }
        }
    };
    to_json(&out)
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var("GST_SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| usage(format!("GST_SEED is not a 64-bit integer: '{v}'"))),
        Err(_) => Ok(None),
    }
}

const CALIBRATED_DELTA: f64 = 0.122;

pub fn cmd_gen(a: &GenArgs) -> CliResult<String> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.ok_or_else(|| usage("a seed is required (--seed or GST_SEED)"))?,
    };
    let effect = if a.delta == 0.0 {
        false
    } else if (a.delta - CALIBRATED_DELTA).abs() < 1e-9 {
        true
    } else {
        return Err(usage(format!("--delta must be 0 or {CALIBRATED_DELTA}")));
    };
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if !(a.rate > 0.0 && a.rate.is_finite()) {
        return Err(usage("--rate must be positive"));
    }
    let pop = default_population(a.base_seed).map_err(runtime)?;
    let mut recs = sample_trial(&pop, a.n, &DgmConfig::new(&pop, a.setting, effect), seed).map_err(runtime)?;
    let schedule = if a.poisson { EnrollmentSchedule::Poisson } else { EnrollmentSchedule::EquallySpaced };
    assign_enrollment(&mut recs, a.rate, schedule, &mut rng::stream(seed, domain::ENROLLMENT, 0));
    let file = File::create(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    write_records(BufWriter::new(file), &recs).map_err(runtime)?;
    to_json(&json!({
        "out": a.out.display().to_string(),
        "n": a.n,
        "setting": a.setting,
        "delta": a.delta,
        "seed": seed,
    }))
}

pub fn cmd_estimate(a: &EstimateArgs) -> CliResult<String> {
    let file = File::open(&a.data).map_err(|e| runtime(format!("{}: {e}", a.data.display())))?;
    let mut recs = read_records(BufReader::new(file)).map_err(runtime)?;
    let delay = DelayConfig { d_l: a.d_l_days / DAYS_PER_YEAR, d_y: a.d_y_days / DAYS_PER_YEAR, ..DelayConfig::default() };
    let snap: AnalysisSnapshot<'_> = match a.time {
        Some(t) => {
            recs.retain(|r| r.enroll_time <= t);
            snapshot_at(recs, t, &delay).map_err(runtime)?
        }
        None => AnalysisSnapshot::complete(recs).map_err(runtime)?,
    };
    let spec = WorkingModelSpec::main_terms(snap.records[0].w.len());
    let est = estimate(&snap, a.estimator.into(), &spec).map_err(runtime)?;
    let z = wald_statistic(&est).map_err(runtime)?;
    let (p_y, p_l) = observed_fractions(&snap);
    let summary = plug_in_summary(&snap, &spec).map_err(runtime)?;
    to_json(&json!({
        "estimate": est,
        "wald_statistic": z,
        "p_y": p_y,
        "p_l": p_l,
        "summary": summary,
    }))
}

pub fn cmd_design(a: &DesignArgs) -> CliResult<String> {
    let run = a.run.merged(a.config.as_deref())?;
    let mut spec = run.spending()?;
    let model = match (&a.info_interim, &a.info_decision) {
        (Some(i), Some(d)) => {
            if a.run.k_stages.is_none() {
                spec.k_stages = d.len();
            }
            JointStatisticModel::canonical(i, d).map_err(usage)?
        }
        _ => {
            let seed = run.seed()?;
            let pop = run.population()?;
            let cfg = run.simulation(&pop, &spec)?;
            let m = run.options().covariance_trials;
            estimate_joint_covariance(&pop, &cfg, m, seed, &run.pool()?).map_err(runtime)?
        }
    };
    let boundaries = solve_boundaries(&model, &spec, &run.options().solver).map_err(runtime)?;
    to_json(&json!({ "spec": spec, "model": model, "boundaries": boundaries }))
}

#[derive(Debug, Serialize)]
struct SimulationRow {
    row: &'static str,
    scenario: &'static str,
    trial: Option<usize>,
    status: Option<&'static str>,
    stop_stage: Option<usize>,
    reason: Option<StopReason>,
    reject: Option<bool>,
    n_enrolled: Option<usize>,
    decision_stat: Option<f64>,
    delta_hat: Option<f64>,
    type_i: Option<f64>,
    power: Option<f64>,
    ess_null: Option<f64>,
    ess_alt: Option<f64>,
}

fn write_figure_data(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let create = |name: &str| -> CliResult<BufWriter<File>> {
        let p = dir.join(name);
        Ok(BufWriter::new(File::create(&p).map_err(|e| runtime(format!("{}: {e}", p.display())))?))
    };
    write_rows(create("are_vs_py.csv")?, &baseline_curves(100)).map_err(runtime)?;
    write_rows(create("are_vs_py_over_pl.csv")?, &short_term_curves(100)).map_err(runtime)?;
    write_rows(create("ratio_r_contour.csv")?, &ratio_contour(100)).map_err(runtime)?;
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<String> {
    let run = a.run.merged(a.config.as_deref())?;
    if let Some(dir) = &a.emit_figure_data {
        write_figure_data(dir)?;
        if run.n_max.is_none() {
            return to_json(&json!({ "figure_data": dir.display().to_string() }));
        }
    }
    let seed = run.seed()?;
    let spec = run.spending()?;
    let pop = run.population()?;
    let cfg = run.simulation(&pop, &spec)?;
    let rep = simulate_operating_characteristics(&pop, &cfg, &spec, &run.options(), seed, &run.pool()?).map_err(runtime)?;
    if let Some(out) = &a.out {
        let mut rows = Vec::with_capacity(2 * rep.oc.n_trials + 1);
        for (scenario, sr) in [("null", &rep.null_run), ("alt", &rep.alt_run)] {
            for (i, o) in sr.outcomes.iter().enumerate() {
                rows.push(SimulationRow {
                    row: "trial",
                    scenario,
                    trial: Some(i),
                    status: Some(if o.is_some() { "ok" } else { "failed" }),
                    stop_stage: o.as_ref().map(|o| o.stop_stage),
                    reason: o.as_ref().map(|o| o.reason),
                    reject: o.as_ref().map(|o| o.reject),
                    n_enrolled: o.as_ref().map(|o| o.n_enrolled),
                    decision_stat: o.as_ref().map(|o| o.decision_stat),
                    delta_hat: o.as_ref().map(|o| o.decision_estimate.delta_hat),
                    type_i: None,
                    power: None,
                    ess_null: None,
                    ess_alt: None,
                });
            }
        }
        rows.push(SimulationRow {
            row: "summary",
            scenario: "both",
            trial: None,
            status: None,
            stop_stage: None,
            reason: None,
            reject: None,
            n_enrolled: None,
            decision_stat: None,
            delta_hat: None,
            type_i: Some(rep.oc.type_i),
            power: Some(rep.oc.power),
            ess_null: Some(rep.oc.ess_null),
            ess_alt: Some(rep.oc.ess_alt),
        });
        let file = File::create(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        write_rows(BufWriter::new(file), &rows).map_err(runtime)?;
    }
    to_json(&json!({
        "setting": cfg.dgm.setting,
        "estimator": cfg.kind,
        "n_max": cfg.n_max,
        "seed": seed,
        "operating_characteristics": rep.oc,
        "boundaries": rep.boundaries,
    }))
}

pub fn cmd_power(a: &PowerArgs) -> CliResult<String> {
    let mut run = a.run.merged(a.config.as_deref())?;
    let seed = run.seed()?;
    let spec = run.spending()?;
    let pop = run.population()?;
    run.n_max = Some(run.n_max.unwrap_or(gst_core::gsd::simulate::N_MAX_BRACKET.1));
    let cfg = run.simulation(&pop, &spec)?;
    let target = run.target_power.unwrap_or(1.0 - spec.beta);
    if !(target > 0.0 && target < 1.0) {
        return Err(usage("--target-power must lie in (0, 1)"));
    }
    let n = search_n_max(&pop, &cfg, &spec, target, &run.options(), seed, &run.pool()?).map_err(runtime)?;
    Ok(n.to_string())
}
