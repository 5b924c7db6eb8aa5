use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::design::{solve_boundaries, DesignBoundaries, JointStatisticModel, SolverOptions};
use super::procedure::{analysis_schedule, analyze_at, run_group_sequential, StopReason, TrialOutcome};
use super::spending::ErrorSpendingSpec;
use crate::dgm::{sample_trial_with, AugmentedPopulation, DgmConfig};
use crate::error::{invalid, Error, Result};
use crate::estimators::{EstimateResult, EstimatorKind, WorkingModelSpec};
use crate::rng::{self, domain};
use crate::trial::{assign_enrollment, DelayConfig, EnrollmentSchedule, ParticipantRecord};

/// Executes independent jobs `0..n`; results come back in index order.
pub trait Runner: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Runner for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Everything needed to simulate one kind of trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dgm: DgmConfig,
    pub n_max: usize,
    pub k_stages: usize,
    pub kind: EstimatorKind,
    pub working_spec: WorkingModelSpec,
    pub delay: DelayConfig,
    pub enrollment: EnrollmentSchedule,
}

impl SimulationConfig {
    pub fn new(dgm: DgmConfig, n_max: usize, kind: EstimatorKind) -> Self {
        Self {
            dgm,
            n_max,
            k_stages: 5,
            kind,
            working_spec: WorkingModelSpec::main_terms(crate::dgm::EXPORTED_W.len()),
            delay: DelayConfig::default(),
            enrollment: EnrollmentSchedule::EquallySpaced,
        }
    }

    pub fn with_n_max(&self, n_max: usize) -> Self {
        Self { n_max, ..self.clone() }
    }

    pub fn with_kind(&self, kind: EstimatorKind) -> Self {
        Self { kind, ..self.clone() }
    }
}

/// Draws the `n_max` potential enrollees of simulated trial `index`.
pub fn generate_trial(pop: &AugmentedPopulation, cfg: &SimulationConfig, dgm: &DgmConfig, seed: u64, stream: u64, index: usize) -> Vec<ParticipantRecord> {
    let mut r = rng::stream(seed, stream, index as u64);
    let mut recs = sample_trial_with(pop, cfg.n_max, dgm, &mut r);
    assign_enrollment(&mut recs, cfg.delay.enroll_rate, cfg.enrollment, &mut r);
    recs
}

/// Estimates at every interim and decision analysis of a trial run to completion.
pub fn analyze_without_stopping(trial: &[ParticipantRecord], cfg: &SimulationConfig, kind: EstimatorKind) -> Result<Vec<EstimateResult>> {
    let k = cfg.k_stages;
    let times: Vec<f64> = trial.iter().map(|r| r.enroll_time).collect();
    let sched = if cfg.enrollment == EnrollmentSchedule::EquallySpaced {
        analysis_schedule(trial.len(), k, &cfg.delay)?
    } else {
        // Poisson arrivals: interim k once k n_max / K have Y observed
        let mut s = analysis_schedule(trial.len(), k, &cfg.delay)?;
        for i in 0..k - 1 {
            let m = s.interim_complete[i];
            let t = times[m - 1] + cfg.delay.d_y;
            let n = times.partition_point(|&e| e <= t);
            s.interim_times[i] = t;
            s.interim_enrolled[i] = n;
            s.decision_times[i] = times[n - 1] + cfg.delay.d_y;
        }
        s.decision_times[k - 1] = times[trial.len() - 1] + cfg.delay.d_y;
        s
    };
    let mut out = Vec::with_capacity(2 * k - 1);
    for i in 0..k - 1 {
        out.push(analyze_at(trial, sched.interim_enrolled[i], sched.interim_times[i], kind, &cfg.working_spec, &cfg.delay)?.0);
    }
    for i in 0..k {
        let n = if i + 1 < k { sched.interim_enrolled[i] } else { trial.len() };
        out.push(analyze_at(trial, n, sched.decision_times[i], kind, &cfg.working_spec, &cfg.delay)?.0);
    }
    Ok(out)
}

/// Per-trial estimate paths in the joint model's label order; failed trials are `None`.
pub fn simulate_no_stopping<R: Runner>(
    pop: &AugmentedPopulation,
    cfg: &SimulationConfig,
    dgm: &DgmConfig,
    kinds: &[EstimatorKind],
    m_trials: usize,
    seed: u64,
    runner: &R,
) -> Vec<Vec<Option<Vec<EstimateResult>>>> {
    simulate_no_stopping_in(pop, cfg, dgm, kinds, m_trials, seed, domain::COVARIANCE, runner)
}

#[allow(clippy::too_many_arguments)]
fn simulate_no_stopping_in<R: Runner>(
    pop: &AugmentedPopulation,
    cfg: &SimulationConfig,
    dgm: &DgmConfig,
    kinds: &[EstimatorKind],
    m_trials: usize,
    seed: u64,
    stream: u64,
    runner: &R,
) -> Vec<Vec<Option<Vec<EstimateResult>>>> {
    runner.map(m_trials, |i| {
        let trial = generate_trial(pop, cfg, dgm, seed, stream, i);
        kinds.iter().map(|&kind| analyze_without_stopping(&trial, cfg, kind).ok()).collect()
    })
}

const MAX_FAILURE_RATE: f64 = 0.01;

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(())
}

fn wald_paths(paths: &[&Vec<EstimateResult>]) -> Vec<Vec<f64>> {
    paths.iter().map(|p| p.iter().map(|e| e.delta_hat / libm::sqrt(e.variance_hat)).collect()).collect()
}

fn column_means(rows: &[Vec<f64>], d: usize) -> Vec<f64> {
    let m = rows.len() as f64;
    (0..d).map(|j| rows.iter().map(|v| v[j]).sum::<f64>() / m).collect()
}

fn information(paths: &[&Vec<EstimateResult>], d: usize) -> Vec<f64> {
    let m = paths.len() as f64;
    (0..d)
        .map(|j| {
            let est: Vec<f64> = paths.iter().map(|p| p[j].delta_hat).collect();
            let (_, var) = crate::math::mean_var(&est);
            (m - 1.0) / (m * var)
        })
        .collect()
}

/// Correlation and scale come from the null paths. Information and drift
/// come from the alternative paths when given, otherwise from the null.
fn model_from_paths(null: &[&Vec<EstimateResult>], alt: Option<&[&Vec<EstimateResult>]>, k: usize) -> Result<JointStatisticModel> {
    let d = 2 * k - 1;
    let m = null.len() as f64;
    let z = wald_paths(null);
    let mean = column_means(&z, d);
    let mut cov = vec![0.0; d * d];
    for v in &z {
        for i in 0..d {
            for j in 0..=i {
                cov[i * d + j] += (v[i] - mean[i]) * (v[j] - mean[j]) / (m - 1.0);
            }
        }
    }
    let mut corr = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let c = cov[i * d + j] / libm::sqrt(cov[i * d + i] * cov[j * d + j]);
            corr[i * d + j] = c;
            corr[j * d + i] = c;
        }
        corr[i * d + i] = 1.0;
    }
    let scale: Vec<f64> = (0..d).map(|i| libm::sqrt(cov[i * d + i])).collect();
    let (info, drift) = match alt {
        Some(alt) => {
            let za = wald_paths(alt);
            let z_mean = column_means(&za, d);
            let est: Vec<Vec<f64>> = alt.iter().map(|p| p.iter().map(|e| e.delta_hat).collect()).collect();
            let est_mean = column_means(&est, d);
            let drift = (0..d).map(|j| z_mean[j] / (est_mean[j] * scale[j])).collect();
            (information(alt, d), drift)
        }
        None => {
            let info = information(null, d);
            let drift = info.iter().map(|i| libm::sqrt(*i)).collect();
            (info, drift)
        }
    };
    let model = JointStatisticModel {
        k_stages: k,
        info_interim: info[..k - 1].to_vec(),
        info_decision: info[k - 1..].to_vec(),
        corr,
        drift,
        scale,
    };
    model.validate()?;
    Ok(model)
}

/// Empirical joint model of the Wald statistics from trials run without
/// stopping. `m_trials` trials under the null version of `cfg.dgm` give the
/// correlation and each statistic's null standard deviation (its scale).
/// When `cfg.dgm` carries an effect, another `m_trials` trials under it give
/// the information, the reciprocal of the across-trial variance of the
/// estimator, and the drift per unit effect of the standardized statistics.
pub fn estimate_joint_covariance<R: Runner>(pop: &AugmentedPopulation, cfg: &SimulationConfig, m_trials: usize, seed: u64, runner: &R) -> Result<JointStatisticModel> {
    if m_trials < 1000 {
        return Err(invalid("m_trials must be at least 1000"));
    }
    let run = |dgm: &DgmConfig, stream: u64| -> Result<Vec<Vec<EstimateResult>>> {
        let sims = simulate_no_stopping_in(pop, cfg, dgm, &[cfg.kind], m_trials, seed, stream, runner);
        let ok: Vec<Vec<EstimateResult>> = sims.into_iter().filter_map(|mut v| v.pop().flatten()).collect();
        check_failures(m_trials - ok.len(), m_trials)?;
        Ok(ok)
    };
    let null = run(&cfg.dgm.null(), domain::COVARIANCE)?;
    let null_refs: Vec<&Vec<EstimateResult>> = null.iter().collect();
    if !cfg.dgm.effect {
        return model_from_paths(&null_refs, None, cfg.k_stages);
    }
    let alt = run(&cfg.dgm, domain::COVARIANCE_ALT)?;
    let alt_refs: Vec<&Vec<EstimateResult>> = alt.iter().collect();
    model_from_paths(&null_refs, Some(&alt_refs), cfg.k_stages)
}

/// Ratio of the empirical variances (unadjusted over `cfg.kind`) at every
/// analysis, from the same simulated trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeEfficiency {
    pub interim: Vec<f64>,
    pub decision: Vec<f64>,
    /// Ratio of mean estimated information, same layout flattened.
    pub info_ratio: Vec<f64>,
}

pub fn relative_efficiency<R: Runner>(pop: &AugmentedPopulation, cfg: &SimulationConfig, dgm: &DgmConfig, m_trials: usize, seed: u64, runner: &R) -> Result<RelativeEfficiency> {
    let sims = simulate_no_stopping(pop, cfg, dgm, &[EstimatorKind::Unadjusted, cfg.kind], m_trials, seed, runner);
    let ok: Vec<(&Vec<EstimateResult>, &Vec<EstimateResult>)> = sims.iter().filter_map(|v| Some((v[0].as_ref()?, v[1].as_ref()?))).collect();
    check_failures(m_trials - ok.len(), m_trials)?;
    let d = 2 * cfg.k_stages - 1;
    let var = |sel: &dyn Fn(&(&Vec<EstimateResult>, &Vec<EstimateResult>)) -> f64| -> f64 {
        let xs: Vec<f64> = ok.iter().map(sel).collect();
        crate::math::mean_var(&xs).1
    };
    let mut ratio = Vec::with_capacity(d);
    let mut info_ratio = Vec::with_capacity(d);
    for j in 0..d {
        ratio.push(var(&|p| p.0[j].delta_hat) / var(&|p| p.1[j].delta_hat));
        let mean_info = |k: usize| ok.iter().map(|p| if k == 0 { p.0[j].information } else { p.1[j].information }).sum::<f64>() / ok.len() as f64;
        info_ratio.push(mean_info(1) / mean_info(0));
    }
    Ok(RelativeEfficiency { interim: ratio[..cfg.k_stages - 1].to_vec(), decision: ratio[cfg.k_stages - 1..].to_vec(), info_ratio })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageHistogram {
    /// Trials stopping at stage `k`, index `k - 1`.
    pub counts: Vec<usize>,
    pub efficacy: Vec<usize>,
    pub futility: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub type_i: f64,
    pub power: f64,
    pub ess_null: f64,
    pub ess_alt: f64,
    pub stop_stage_null: StageHistogram,
    pub stop_stage_alt: StageHistogram,
    pub n_trials: usize,
    pub failed_null: usize,
    pub failed_alt: usize,
}

/// Per-trial outcomes and their summary for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub outcomes: Vec<Option<TrialOutcome>>,
    pub rejection_rate: f64,
    pub ess: f64,
    pub histogram: StageHistogram,
    pub failed: usize,
}

pub fn run_scenario<R: Runner>(
    pop: &AugmentedPopulation,
    cfg: &SimulationConfig,
    dgm: &DgmConfig,
    b: &DesignBoundaries,
    n_trials: usize,
    seed: u64,
    stream: u64,
    runner: &R,
) -> Result<ScenarioRun> {
    let outcomes = runner.map(n_trials, |i| {
        let trial = generate_trial(pop, cfg, dgm, seed, stream, i);
        run_group_sequential(&trial, b, cfg.kind, &cfg.working_spec, &cfg.delay).ok()
    });
    let ok: Vec<&TrialOutcome> = outcomes.iter().flatten().collect();
    let failed = n_trials - ok.len();
    check_failures(failed, n_trials)?;
    let m = ok.len() as f64;
    let k = cfg.k_stages;
    let mut h = StageHistogram { counts: vec![0; k], efficacy: vec![0; k], futility: vec![0; k] };
    for o in &ok {
        h.counts[o.stop_stage - 1] += 1;
        match o.reason {
            StopReason::Efficacy => h.efficacy[o.stop_stage - 1] += 1,
            StopReason::Futility => h.futility[o.stop_stage - 1] += 1,
            StopReason::Completed => {}
        }
    }
    Ok(ScenarioRun {
        rejection_rate: ok.iter().filter(|o| o.reject).count() as f64 / m,
        ess: ok.iter().map(|o| o.n_enrolled as f64).sum::<f64>() / m,
        histogram: h,
        failed,
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub n_trials: usize,
    pub covariance_trials: usize,
    pub solver: SolverOptions,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { n_trials: 5000, covariance_trials: 10_000, solver: SolverOptions::default() }
    }
}

/// Design and operating characteristics of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub model: JointStatisticModel,
    pub boundaries: DesignBoundaries,
    pub oc: OperatingCharacteristics,
    pub null_run: ScenarioRun,
    pub alt_run: ScenarioRun,
}

/// Covariance precomputation, boundary solving, then trials under the null
/// and under the configured effect.
pub fn simulate_operating_characteristics<R: Runner>(
    pop: &AugmentedPopulation,
    cfg: &SimulationConfig,
    spec: &ErrorSpendingSpec,
    opts: &SimulationOptions,
    seed: u64,
    runner: &R,
) -> Result<SimulationReport> {
    if spec.k_stages != cfg.k_stages {
        return Err(invalid("spending spec and simulation disagree on K"));
    }
    let model = estimate_joint_covariance(pop, cfg, opts.covariance_trials, seed, runner)?;
    let boundaries = solve_boundaries(&model, spec, &opts.solver)?;
    let null_run = run_scenario(pop, cfg, &cfg.dgm.null(), &boundaries, opts.n_trials, seed, domain::TRIAL_NULL, runner)?;
    let alt_dgm = DgmConfig { effect: true, ..cfg.dgm };
    let alt_run = run_scenario(pop, cfg, &alt_dgm, &boundaries, opts.n_trials, seed, domain::TRIAL_ALT, runner)?;
    let oc = OperatingCharacteristics {
        type_i: null_run.rejection_rate,
        power: alt_run.rejection_rate,
        ess_null: null_run.ess,
        ess_alt: alt_run.ess,
        stop_stage_null: null_run.histogram.clone(),
        stop_stage_alt: alt_run.histogram.clone(),
        n_trials: opts.n_trials,
        failed_null: null_run.failed,
        failed_alt: alt_run.failed,
    };
    Ok(SimulationReport { model, boundaries, oc, null_run, alt_run })
}

/// Power at `n_max`; a design too powerful to solve counts as power one.
pub fn probe_power<R: Runner>(pop: &AugmentedPopulation, cfg: &SimulationConfig, spec: &ErrorSpendingSpec, opts: &SimulationOptions, seed: u64, runner: &R) -> Result<f64> {
    let model = estimate_joint_covariance(pop, cfg, opts.covariance_trials, seed, runner)?;
    let boundaries = match solve_boundaries(&model, spec, &opts.solver) {
        Ok(b) => b,
        Err(Error::DesignSaturated { .. } | Error::InfeasibleDesign(_)) => return Ok(1.0),
        Err(e) => return Err(e),
    };
    let alt_dgm = DgmConfig { effect: true, ..cfg.dgm };
    Ok(run_scenario(pop, cfg, &alt_dgm, &boundaries, opts.n_trials, seed, domain::POWER_PROBE, runner)?.rejection_rate)
}

pub const N_MAX_BRACKET: (usize, usize) = (100, 1000);
pub const N_MAX_STEP: usize = 10;

/// Smallest `n_max` on the grid whose estimated power reaches `target - 0.01`.
pub fn search_n_max<R: Runner>(
    pop: &AugmentedPopulation,
    cfg: &SimulationConfig,
    spec: &ErrorSpendingSpec,
    target_power: f64,
    opts: &SimulationOptions,
    seed: u64,
    runner: &R,
) -> Result<usize> {
    if !(target_power > 0.0 && target_power < 1.0) {
        return Err(invalid("target power must lie in (0, 1)"));
    }
    let goal = target_power - 0.01;
    let (lo, hi) = (N_MAX_BRACKET.0 / N_MAX_STEP, N_MAX_BRACKET.1 / N_MAX_STEP);
    let power_at = |g: usize| probe_power(pop, &cfg.with_n_max(g * N_MAX_STEP), spec, opts, seed, runner);
    let top = power_at(hi)?;
    if top < goal {
        return Err(Error::BracketExhausted { n_max: hi * N_MAX_STEP, power: top });
    }
    let (mut a, mut b) = (lo, hi);
    if power_at(a)? >= goal {
        return Ok(a * N_MAX_STEP);
    }
    while b - a > 1 {
        let mid = (a + b) / 2;
        if power_at(mid)? >= goal {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(b * N_MAX_STEP)
}
