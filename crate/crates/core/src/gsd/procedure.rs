use alloc::borrow::Cow;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::design::DesignBoundaries;
use crate::error::{invalid, Result};
use crate::estimators::{estimate, wald_statistic, EstimateResult, EstimatorKind, WorkingModelSpec};
use crate::trial::{snapshot_at, DelayConfig, ParticipantRecord};

/// Calendar times of the interim and decision analyses for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSchedule {
    pub n_max: usize,
    /// Participants with Y observed at each interim.
    pub interim_complete: Vec<usize>,
    pub interim_times: Vec<f64>,
    /// Participants enrolled when enrollment stops at each interim.
    pub interim_enrolled: Vec<usize>,
    /// Decision times `1..K`.
    pub decision_times: Vec<f64>,
}

/// Schedule under equally spaced enrollment at `cfg.enroll_rate`: interim
/// `k` happens once `k n_max / K` participants have Y observed.
pub fn analysis_schedule(n_max: usize, k_stages: usize, cfg: &DelayConfig) -> Result<AnalysisSchedule> {
    cfg.validate()?;
    if k_stages < 2 || n_max < k_stages {
        return Err(invalid("need K >= 2 and n_max >= K"));
    }
    let times: Vec<f64> = (0..n_max).map(|i| i as f64 / cfg.enroll_rate).collect();
    Ok(schedule_for_times(&times, k_stages, cfg))
}

fn schedule_for_times(enroll: &[f64], k_stages: usize, cfg: &DelayConfig) -> AnalysisSchedule {
    let n_max = enroll.len();
    let mut s = AnalysisSchedule {
        n_max,
        interim_complete: Vec::new(),
        interim_times: Vec::new(),
        interim_enrolled: Vec::new(),
        decision_times: Vec::new(),
    };
    for k in 1..k_stages {
        let m = (k * n_max).div_ceil(k_stages);
        let t = enroll[m - 1] + cfg.d_y;
        let n = enroll.partition_point(|&e| e <= t);
        s.interim_complete.push(m);
        s.interim_times.push(t);
        s.interim_enrolled.push(n);
        s.decision_times.push(enroll[n - 1] + cfg.d_y);
    }
    s.decision_times.push(enroll[n_max - 1] + cfg.d_y);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Efficacy,
    Futility,
    /// No interim boundary was crossed.
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureTrace {
    pub stop_stage: usize,
    pub reason: StopReason,
    pub reject: bool,
    pub interim_stats: Vec<f64>,
    pub decision_stat: f64,
}

/// Applies the stop and decide rules to statistics produced on demand.
pub fn apply_procedure(
    b: &DesignBoundaries,
    mut interim_stat: impl FnMut(usize) -> Result<f64>,
    mut decision_stat: impl FnMut(usize) -> Result<f64>,
) -> Result<ProcedureTrace> {
    let k = b.c.len();
    if k < 2 || b.u.len() + 1 != k || b.l.len() + 1 != k {
        return Err(invalid("boundaries need K - 1 interim and K decision values"));
    }
    let mut interim_stats = Vec::with_capacity(k - 1);
    let mut stop = (k, StopReason::Completed);
    for stage in 1..k {
        let s = interim_stat(stage)?;
        interim_stats.push(s);
        if s >= b.u[stage - 1] {
            stop = (stage, StopReason::Efficacy);
            break;
        }
        if s <= b.l[stage - 1] {
            stop = (stage, StopReason::Futility);
            break;
        }
    }
    let decision = decision_stat(stop.0)?;
    Ok(ProcedureTrace {
        stop_stage: stop.0,
        reason: stop.1,
        reject: decision >= b.c[stop.0 - 1],
        interim_stats,
        decision_stat: decision,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub stop_stage: usize,
    pub reason: StopReason,
    pub reject: bool,
    pub n_enrolled: usize,
    pub interim_stats: Vec<f64>,
    pub decision_stat: f64,
    pub decision_estimate: EstimateResult,
}

/// Estimate and Wald statistic on the first `n` records analysed at time `t`.
pub fn analyze_at(records: &[ParticipantRecord], n: usize, t: f64, kind: EstimatorKind, spec: &WorkingModelSpec, cfg: &DelayConfig) -> Result<(EstimateResult, f64)> {
    let s = snapshot_at(Cow::Borrowed(&records[..n]), t, cfg)?;
    let e = estimate(&s, kind, spec)?;
    let z = wald_statistic(&e)?;
    Ok((e, z))
}

/// Runs one trial through the design. `trial` holds the `n_max` potential
/// enrollees sorted by enrollment time.
pub fn run_group_sequential(
    trial: &[ParticipantRecord],
    b: &DesignBoundaries,
    kind: EstimatorKind,
    spec: &WorkingModelSpec,
    cfg: &DelayConfig,
) -> Result<TrialOutcome> {
    let k = b.c.len();
    if trial.len() < k {
        return Err(invalid("trial has fewer participants than stages"));
    }
    if trial.windows(2).any(|w| w[1].enroll_time < w[0].enroll_time) {
        return Err(invalid("records must be sorted by enrollment time"));
    }
    let times: Vec<f64> = trial.iter().map(|r| r.enroll_time).collect();
    let sched = schedule_for_times(&times, k, cfg);
    let mut decision = None;
    let trace = apply_procedure(
        b,
        |stage| {
            let i = stage - 1;
            Ok(analyze_at(trial, sched.interim_enrolled[i], sched.interim_times[i], kind, spec, cfg)?.1)
        },
        |stage| {
            let n = if stage < k { sched.interim_enrolled[stage - 1] } else { trial.len() };
            let (e, z) = analyze_at(trial, n, sched.decision_times[stage - 1], kind, spec, cfg)?;
            decision = Some((e, n));
            Ok(z)
        },
    )?;
    let (decision_estimate, n_enrolled) = decision.expect("decision analysis ran");
    Ok(TrialOutcome {
        stop_stage: trace.stop_stage,
        reason: trace.reason,
        reject: trace.reject,
        n_enrolled,
        interim_stats: trace.interim_stats,
        decision_stat: trace.decision_stat,
        decision_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn bounds() -> DesignBoundaries {
        DesignBoundaries {
            u: vec![3.0, 2.7],
            l: vec![-1.0, 0.0],
            c: vec![1.2, 1.4, 2.0],
            info_fraction: vec![0.33, 0.67],
            type_i_spent: vec![],
            type_ii_spent: vec![],
        }
    }

    #[test]
    fn efficacy_stop_at_second_interim() {
        let path = [2.0, 2.8];
        let t = apply_procedure(&bounds(), |k| Ok(path[k - 1]), |_| Ok(2.5)).unwrap();
        assert_eq!((t.stop_stage, t.reason, t.reject), (2, StopReason::Efficacy, true));
        assert_eq!(t.interim_stats, vec![2.0, 2.8]);
    }

    #[test]
    fn no_crossing_goes_to_final_decision() {
        let t = apply_procedure(&bounds(), |_| Ok(1.0), |k| Ok(if k == 3 { 1.9 } else { 9.0 })).unwrap();
        assert_eq!((t.stop_stage, t.reason, t.reject), (3, StopReason::Completed, false));
    }

    #[test]
    fn futility_stop_can_still_reject() {
        let t = apply_procedure(&bounds(), |_| Ok(-1.5), |_| Ok(1.3)).unwrap();
        assert_eq!((t.stop_stage, t.reason, t.reject), (1, StopReason::Futility, true));
    }

    #[test]
    fn schedule_counts() {
        // reference times are rounded to one decimal
        let tol = 0.06;
        let cfg = DelayConfig::default();
        let s = analysis_schedule(480, 5, &cfg).unwrap();
        assert_eq!(s.interim_complete, vec![96, 192, 288, 384]);
        let expect_times = [1.2, 1.9, 2.6, 3.2];
        for (t, e) in s.interim_times.iter().zip(expect_times) {
            assert!((t - e).abs() < tol, "{t}");
        }
        for (n, e) in s.interim_enrolled.iter().zip([165, 261, 357, 453]) {
            assert!((*n as i64 - e).abs() <= 1, "{n}");
        }
        let expect_dec = [1.7, 2.4, 3.0, 3.7, 3.9];
        for (t, e) in s.decision_times.iter().zip(expect_dec) {
            assert!((t - e).abs() < tol, "{t}");
        }
        let s = analysis_schedule(300, 5, &cfg).unwrap();
        assert_eq!(s.interim_enrolled[3], 300);
        for (t, e) in s.interim_times.iter().zip([0.9, 1.4, 1.8, 2.2]) {
            assert!((t - e).abs() < tol, "{t}");
        }
    }
}
