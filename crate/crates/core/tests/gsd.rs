use std::sync::OnceLock;

use gst_core::dgm::*;
use gst_core::estimators::EstimatorKind;
use gst_core::gsd::*;
use gst_core::rng::{std_normal, stream};

fn population() -> &'static AugmentedPopulation {
    static POP: OnceLock<AugmentedPopulation> = OnceLock::new();
    POP.get_or_init(|| default_population(DEFAULT_BASE_SEED).unwrap())
}

fn canonical_equal_increments() -> (JointStatisticModel, Vec<f64>) {
    let info: Vec<f64> = (1..=5).map(|k| 100.0 * k as f64).collect();
    (JointStatisticModel::canonical(&info[..4], &info).unwrap(), info)
}

/// Replays the procedure on Brownian paths with decisions equal to interims
/// and returns the cumulative null rejection rate by stage.
fn replay_null(b: &DesignBoundaries, info: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let k = info.len();
    let mut rng = stream(seed, 0x51, 0);
    let mut rejected_by = vec![0usize; k];
    let mut z = vec![0.0; k];
    for _ in 0..n {
        let mut s = 0.0;
        let mut prev = 0.0;
        for (j, &i) in info.iter().enumerate() {
            s += (i - prev).sqrt() * std_normal(&mut rng);
            prev = i;
            z[j] = s / i.sqrt();
        }
        let t = apply_procedure(b, |st| Ok(z[st - 1]), |st| Ok(z[st - 1])).unwrap();
        if t.reject {
            rejected_by[t.stop_stage - 1] += 1;
        }
    }
    let mut acc = 0.0;
    rejected_by
        .iter()
        .map(|&c| {
            acc += c as f64 / n as f64;
            acc
        })
        .collect()
}

#[test]
fn canonical_design_spends_type_i_error_as_planned() {
    let (model, info) = canonical_equal_increments();
    let spec = ErrorSpendingSpec { delta_alt: 0.15, ..Default::default() };
    let b = solve_boundaries(&model, &spec, &SolverOptions::default()).unwrap();
    let cumulative = replay_null(&b, &info, 1_000_000, 9);
    for (k, c) in cumulative.iter().enumerate() {
        let f = spec.f.eval(info[k] / info[4]);
        assert!((c - f).abs() < 2e-3, "stage {}: {c} vs {f}", k + 1);
    }
}

#[test]
fn spending_adds_up() {
    let (model, _) = canonical_equal_increments();
    let spec = ErrorSpendingSpec { delta_alt: 0.15, ..Default::default() };
    let b = solve_boundaries(&model, &spec, &SolverOptions::default()).unwrap();
    let i_total: f64 = b.type_i_spent.iter().sum();
    let ii_interim: f64 = b.type_ii_spent[..4].iter().sum();
    assert!((i_total - spec.alpha).abs() < 1e-12);
    assert!((ii_interim - spec.g.eval(0.8)).abs() < 1e-12);
    assert!(b.u.windows(2).all(|w| w[0] >= w[1]), "{:?}", b.u);
    assert!(b.l.iter().zip(&b.u).all(|(l, u)| l < u));
}

#[test]
fn solver_is_deterministic() {
    let (model, _) = canonical_equal_increments();
    let spec = ErrorSpendingSpec { delta_alt: 0.15, ..Default::default() };
    let opts = SolverOptions::default();
    assert_eq!(solve_boundaries(&model, &spec, &opts).unwrap(), solve_boundaries(&model, &spec, &opts).unwrap());
}

#[test]
fn unadjusted_joint_model_follows_independent_increments() {
    let pop = population();
    let cfg = SimulationConfig::new(DgmConfig::new(pop, Setting::PrognWL, true), 480, EstimatorKind::Unadjusted);
    let m = estimate_joint_covariance(pop, &cfg, 10_000, 3, &Sequential).unwrap();
    let info = &m.info_interim;
    assert!(info.windows(2).all(|w| w[1] >= 0.98 * w[0]), "{info:?}");
    let d = m.dim();
    for j in 0..4 {
        for k in j + 1..4 {
            let want = (info[j] / info[k]).sqrt();
            let got = m.corr[j * d + k];
            assert!((got - want).abs() < 0.03, "corr({j}, {k}) = {got}, theory {want}");
        }
    }
}

#[test]
fn joint_model_needs_enough_trials() {
    let pop = population();
    let cfg = SimulationConfig::new(DgmConfig::new(pop, Setting::PrognWL, true), 200, EstimatorKind::Unadjusted);
    assert!(estimate_joint_covariance(pop, &cfg, 999, 3, &Sequential).is_err());
}

#[test]
fn adjustment_gains_information_under_prognostic_baseline() {
    let pop = population();
    let cfg = SimulationConfig::new(DgmConfig::new(pop, Setting::PrognW, true), 300, EstimatorKind::Tmle);
    let adj = estimate_joint_covariance(pop, &cfg, 2000, 5, &Sequential).unwrap();
    let unadj = estimate_joint_covariance(pop, &cfg.with_kind(EstimatorKind::Unadjusted), 2000, 5, &Sequential).unwrap();
    let ratio = adj.info_decision[4] / unadj.info_decision[4];
    assert!((ratio - 1.54).abs() < 0.07, "ratio {ratio}");
}

#[test]
fn null_rejection_rate_is_controlled() {
    let pop = population();
    let cfg = SimulationConfig::new(DgmConfig::new(pop, Setting::PrognWL, true), 480, EstimatorKind::Unadjusted);
    let opts = SimulationOptions { n_trials: 5000, covariance_trials: 2000, ..Default::default() };
    let rep = simulate_operating_characteristics(pop, &cfg, &ErrorSpendingSpec::default(), &opts, 21, &Sequential).unwrap();
    assert!(rep.oc.type_i <= 0.0316, "{:?}", rep.oc);
    assert_eq!(rep.oc.failed_null, 0);
    assert!(rep.oc.ess_null < 480.0 && rep.oc.ess_alt < 480.0);
}

#[test]
fn sample_size_search_lands_near_unadjusted_design() {
    let pop = population();
    let cfg = SimulationConfig::new(DgmConfig::new(pop, Setting::PrognWL, true), 480, EstimatorKind::Unadjusted);
    let opts = SimulationOptions { n_trials: 5000, ..Default::default() };
    let n = search_n_max(pop, &cfg, &ErrorSpendingSpec::default(), 0.8, &opts, 4, &Sequential).unwrap();
    assert!((450..=510).contains(&n), "n_max {n}");
    assert!(search_n_max(pop, &cfg, &ErrorSpendingSpec::default(), 1.2, &opts, 4, &Sequential).is_err());
}
