use std::collections::BTreeMap;
use std::sync::OnceLock;

use gst_core::dgm::*;
use gst_core::estimators::WorkingModelSpec;
use gst_core::precision::{plug_in_summary, PrecisionSummary};
use gst_core::trial::{AnalysisSnapshot, ParticipantRecord};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const DRAWS: usize = 1_000_000;

fn population() -> &'static AugmentedPopulation {
    static POP: OnceLock<AugmentedPopulation> = OnceLock::new();
    POP.get_or_init(|| default_population(DEFAULT_BASE_SEED).unwrap())
}

fn large_sample(setting: Setting, effect: bool, seed: u64) -> Vec<ParticipantRecord> {
    let pop = population();
    sample_trial(pop, DRAWS, &DgmConfig::new(pop, setting, effect), seed).unwrap()
}

fn summary_of(records: &[ParticipantRecord]) -> PrecisionSummary {
    let s = AnalysisSnapshot::complete(records).unwrap();
    plug_in_summary(&s, &WorkingModelSpec::main_terms(EXPORTED_W.len())).unwrap()
}

fn effect(records: &[ParticipantRecord]) -> f64 {
    let mut n = [0.0; 2];
    let mut y = [0.0; 2];
    for r in records {
        n[r.a as usize] += 1.0;
        y[r.a as usize] += r.y as f64;
    }
    y[1] / n[1] - y[0] / n[0]
}

/// Pearson goodness of fit of observed category counts against expected probabilities.
fn chi_square_p<K: Ord>(observed: &BTreeMap<K, f64>, expected: &BTreeMap<K, f64>) -> f64 {
    let total: f64 = observed.values().sum();
    let mut stat = 0.0;
    for (k, p) in expected {
        let e = p * total;
        let o = observed.get(k).copied().unwrap_or(0.0);
        stat += (o - e) * (o - e) / e;
    }
    assert_eq!(observed.keys().filter(|k| !expected.contains_key(k)).count(), 0);
    let df = (expected.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

fn exported_key(w: &[f64]) -> (i64, i64) {
    (w[0] as i64, w[1] as i64)
}

#[test]
fn base_population_is_deterministic_and_calibrated() {
    let (a, res) = calibrate(&CalibrationTargets::default(), DEFAULT_BASE_SEED);
    assert!(res.converged);
    assert_eq!(a, build_synthetic_base(DEFAULT_BASE_SEED));
    assert_eq!(a.rows.len(), BASE_SIZE);
    assert!((0.33..=0.38).contains(&res.achieved.r2_w), "{:?}", res.achieved);
    assert!((0.06..=0.10).contains(&res.achieved.r2_l_given_w));
    assert!(res.achieved.gamma <= 0.03);
    assert!((res.achieved_delta - 0.122).abs() < 1e-3);
}

#[test]
fn twins_balance_covariates_and_decorrelate_treatment() {
    let pop = population();
    assert_eq!(pop.rows.len(), 2 * BASE_SIZE);
    let mut counts: BTreeMap<[i64; 4], [usize; 2]> = BTreeMap::new();
    for r in &pop.rows {
        let key = r.w_full.map(|v| (v * 1e6) as i64);
        counts.entry(key).or_default()[r.a as usize] += 1;
    }
    assert!(counts.values().all(|c| c[0] == c[1]));
    let n = pop.rows.len() as f64;
    for j in 0..4 {
        let ma = pop.rows.iter().map(|r| r.a as f64).sum::<f64>() / n;
        let mw = pop.rows.iter().map(|r| r.w_full[j]).sum::<f64>() / n;
        let cov = pop.rows.iter().map(|r| (r.a as f64 - ma) * (r.w_full[j] - mw)).sum::<f64>() / n;
        assert!(cov.abs() < 1e-12, "covariate {j}: {cov}");
    }
}

#[test]
fn sample_trial_is_deterministic_and_rejects_empty_trials() {
    let pop = population();
    let cfg = DgmConfig::new(pop, Setting::PrognWL, true);
    let a = sample_trial(pop, 500, &cfg, 3).unwrap();
    assert_eq!(a, sample_trial(pop, 500, &cfg, 3).unwrap());
    assert_ne!(a, sample_trial(pop, 500, &cfg, 4).unwrap());
    assert!(sample_trial(pop, 0, &cfg, 3).is_err());
    let bad = DgmConfig { reset_noise_prob: 1.5, ..cfg };
    assert!(sample_trial(pop, 10, &bad, 3).is_err());
}

#[test]
fn no_prognostic_setting_has_no_precision_gain() {
    let s = summary_of(&large_sample(Setting::PrognNone, true, 11));
    assert!(s.r2_w < 0.02 && s.r2_l_given_w < 0.02 && s.gamma < 0.02, "{s:?}");
}

#[test]
fn null_setting_has_no_effect_or_heterogeneity() {
    let records = large_sample(Setting::PrognWL, false, 12);
    assert!(effect(&records).abs() < 0.003);
    assert!(summary_of(&records).gamma < 0.01);
}

#[test]
fn effect_matches_exact_law() {
    let records = large_sample(Setting::PrognWL, true, 13);
    let law = population_law(population(), &DgmConfig::new(population(), Setting::PrognWL, true));
    assert!((law.delta() - 0.122).abs() < 1e-3);
    assert!((effect(&records) - law.delta()).abs() < 0.003);
    let w: f64 = law.weights.iter().sum();
    assert!((w - 1.0).abs() < 1e-12);
}

#[test]
fn replaced_marginals_follow_base_population() {
    let pop = population();
    let n_base = pop.base_w.len() as f64;

    let mut expected_w = BTreeMap::new();
    for w in &pop.base_w {
        let e = exported_key(&[w[EXPORTED_W[0]], w[EXPORTED_W[1]]]);
        *expected_w.entry(e).or_insert(0.0) += 1.0 / n_base;
    }
    let mut observed_w = BTreeMap::new();
    for r in large_sample(Setting::PrognL, true, 21) {
        *observed_w.entry(exported_key(&r.w)).or_insert(0.0) += 1.0;
    }
    let p = chi_square_p(&observed_w, &expected_w);
    assert!(p > 0.001, "W marginal p = {p}");

    let p1 = pop.base_l1.iter().map(|&l| l as f64).sum::<f64>() / n_base;
    let expected_l = BTreeMap::from([(0u8, 1.0 - p1), (1u8, p1)]);
    let mut observed_l = BTreeMap::new();
    for r in large_sample(Setting::PrognW, true, 22) {
        *observed_l.entry(r.l).or_insert(0.0) += 1.0;
    }
    let p = chi_square_p(&observed_l, &expected_l);
    assert!(p > 0.001, "L marginal p = {p}");
}

#[test]
fn calibration_reaches_moderate_targets_without_effect() {
    let t = CalibrationTargets::new(PrecisionSummary::pooled(0.35, 0.08, 0.0), 0.0);
    let (_, res) = calibrate(&t, DEFAULT_BASE_SEED);
    assert!((res.achieved.r2_w - 0.35).abs() <= 0.02, "{:?}", res.achieved);
    assert!((res.achieved.r2_l_given_w - 0.08).abs() <= 0.02);
    assert!(res.achieved.gamma <= 0.02);
    assert!(res.achieved_delta.abs() <= 0.002);
}

#[test]
fn calibration_reaches_all_zero_targets() {
    let t = CalibrationTargets::new(PrecisionSummary::pooled(0.0, 0.0, 0.0), 0.0);
    let (_, res) = calibrate(&t, DEFAULT_BASE_SEED);
    assert!(res.converged, "{:?}", res.achieved);
    assert!(res.achieved.r2_w <= 0.01 && res.achieved.r2_l_given_w <= 0.01 && res.achieved.gamma <= 0.01);
}

#[test]
fn calibration_trace_is_reproducible() {
    let t = CalibrationTargets::new(PrecisionSummary::pooled(0.2, 0.2, 0.0), 0.05);
    let (a, ra) = calibrate_from(&t, 5, DgmKnobs::default(), 3);
    let (b, rb) = calibrate_from(&t, 5, DgmKnobs::default(), 3);
    assert_eq!(a, b);
    assert_eq!(ra.search_trace, rb.search_trace);
    assert!(!ra.search_trace.is_empty());
    assert!(ra.search_trace.windows(2).all(|w| w[1].objective <= w[0].objective));
}

#[test]
fn settings_parse_by_name() {
    for s in Setting::ALL {
        assert_eq!(Setting::parse(s.name()), Some(s));
    }
    assert_eq!(Setting::parse("progn_X"), None);
}
