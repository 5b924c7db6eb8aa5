use std::borrow::Cow;

use gst_core::estimators::WorkingModelSpec;
use gst_core::math::expit;
use gst_core::precision::*;
use gst_core::rng::{bernoulli, stream};
use gst_core::trial::{AnalysisSnapshot, ParticipantRecord};
use proptest::prelude::*;

fn random_dist(seed: u64, p_a: f64) -> DiscreteDistribution {
    let mut rng = stream(seed, 1, 0);
    DiscreteDistribution::random(&mut rng, 2, p_a).unwrap()
}

/// Sample variance of the summed EIF and of each arm's EIF over `m` draws.
fn mc_eif(d: &DiscreteDistribution, p_a: f64, p_y: f64, p_l: f64, m: usize, seed: u64) -> (f64, f64, f64) {
    let ev = EifEvaluator::new(d, p_a, p_y, p_l).unwrap();
    let mut rng = stream(seed, 2, 0);
    let (mut s, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for _ in 0..m {
        let sp = d.sample(&mut rng);
        let c_l = bernoulli(&mut rng, p_l);
        let c_y = c_l && bernoulli(&mut rng, p_y / p_l);
        let o = Observation { w: sp.w, a: sp.a, c_l, l: sp.l, c_y, y: sp.y };
        let v = ev.eval(&o).unwrap().sum();
        s += v;
        s2 += v * v;
        s4 += v * v * v * v;
    }
    let m = m as f64;
    let var = s2 / m - (s / m).powi(2);
    let se = ((s4 / m - (s2 / m).powi(2)) / m).sqrt();
    (var, se, s / m)
}

#[test]
fn bound_matches_eif_monte_carlo() {
    for k in 0..5 {
        let d = random_dist(k, 0.5);
        let (p_y, p_l) = (0.6, 0.85);
        let bound = variance_bound_ate(&d, p_y, p_l).unwrap();
        let (var, se, mean) = mc_eif(&d, 0.5, p_y, p_l, 200_000, k);
        assert!((var - bound).abs() < 4.0 * se, "dist {k}: {var} vs {bound} (se {se})");
        assert!(mean.abs() < 4.0 * (bound / 200_000.0).sqrt());
    }
}

#[test]
fn general_p_a_bound_matches_eif_monte_carlo() {
    let d = random_dist(17, 0.3);
    let bound = variance_bound_ate(&d, 0.5, 0.7).unwrap();
    let (var, se, _) = mc_eif(&d, 0.3, 0.5, 0.7, 300_000, 17);
    assert!((var - bound).abs() < 4.0 * se, "{var} vs {bound}");
}

#[test]
fn arm_bounds_combine_into_effect_bound() {
    for k in 0..20 {
        let p_a = 0.2 + 0.03 * k as f64;
        let d = random_dist(100 + k, p_a);
        let (p_y, p_l) = (0.55, 0.9);
        let total = variance_bound_ate(&d, p_y, p_l).unwrap();
        let b1 = variance_bound_arm(&d, 1, p_a, p_y, p_l).unwrap();
        let b0 = variance_bound_arm(&d, 0, p_a, p_y, p_l).unwrap();
        let cov = arm_mean_covariance(&d).unwrap();
        assert!((b1 + b0 - 2.0 * cov - total).abs() < 1e-12);
    }
}

#[test]
fn decomposition_identities() {
    for k in 0..30 {
        let d = random_dist(200 + k, 0.5);
        let s = summarize(&d).unwrap();
        for a in 0..2u8 {
            let (r, l, w) = decompose_variance(&d, a).unwrap();
            let v = outcome_variance(&d, a).unwrap();
            assert!((r + l + w - v).abs() < 1e-12);
            let arm = s.per_arm.get(a);
            assert!((arm.r2_w - w / v).abs() < 1e-12 && (arm.r2_l_given_w - l / v).abs() < 1e-12);
            assert!((arm.r2_w + arm.r2_l_given_w + arm.r2_resid - 1.0).abs() < 1e-12);
        }
        assert!(s.gamma <= 2.0 * s.r2_w + 1e-12);
    }
}

#[test]
fn identification_formula_recovers_effect() {
    for k in 0..20 {
        let d = random_dist(300 + k, 0.5);
        let (g, truth) = identification_check(&d, 0.4, 0.75).unwrap();
        assert!((g - truth).abs() < 1e-12);
    }
}

#[test]
fn per_arm_eif_variance_matches_arm_bound() {
    let d = random_dist(400, 0.5);
    let (p_y, p_l) = (0.7, 0.9);
    let ev = EifEvaluator::new(&d, 0.5, p_y, p_l).unwrap();
    for arm in 0..2u8 {
        let bound = variance_bound_arm(&d, arm, 0.5, p_y, p_l).unwrap();
        let mut rng = stream(401, 2, arm as u64);
        let m = 300_000;
        let (mut s2, mut s4) = (0.0, 0.0);
        for _ in 0..m {
            let sp = d.sample(&mut rng);
            let c_l = bernoulli(&mut rng, p_l);
            let c_y = c_l && bernoulli(&mut rng, p_y / p_l);
            let v = ev.eval_arm(&Observation { w: sp.w, a: sp.a, c_l, l: sp.l, c_y, y: sp.y }, arm).unwrap().sum();
            s2 += v * v;
            s4 += v.powi(4);
        }
        let var = s2 / m as f64;
        let se = ((s4 / m as f64 - var * var) / m as f64).sqrt();
        assert!((var - bound).abs() < 4.0 * se, "arm {arm}: {var} vs {bound}");
        // the bound and the arm efficiency formula agree
        let summary = summarize(&d).unwrap();
        let unadj = outcome_variance(&d, arm).unwrap() / (0.5 * p_y);
        assert!((unadj / bound - are_arm(&summary, arm, 0.5, p_y, p_l).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn plug_in_matches_enumeration_for_correct_models() {
    // logit P(Y | w, a, l) additive in (w, l) within each arm; binary W
    let coef = [[-0.4, 0.9, 1.1], [0.2, 0.7, 1.4]];
    let p_l = [[0.3, 0.45], [0.6, 0.7]];
    let p_w = [0.45, 0.55];
    let p_y: Vec<[[f64; 2]; 2]> = (0..2)
        .map(|w| {
            let f = |a: usize, l: usize| expit(coef[a][0] + coef[a][1] * w as f64 + coef[a][2] * l as f64);
            [[f(0, 0), f(0, 1)], [f(1, 0), f(1, 1)]]
        })
        .collect();
    let d = DiscreteDistribution::from_conditionals(&p_w, 0.5, &p_l, &p_y).unwrap();
    let exact = summarize(&d).unwrap();

    let mut rng = stream(5, 3, 0);
    let recs: Vec<ParticipantRecord> = (0..1_000_000)
        .map(|i| {
            let sp = d.sample(&mut rng);
            ParticipantRecord { id: i, enroll_time: 0.0, w: vec![sp.w as f64], a: sp.a, l: sp.l, y: sp.y }
        })
        .collect();
    let s = AnalysisSnapshot::complete(Cow::Owned(recs)).unwrap();
    let mut spec = WorkingModelSpec::main_terms(1);
    spec.arm_interactions = true;
    let est = plug_in_summary(&s, &spec).unwrap();
    // MC standard errors of these ratios at n = 1e6 are below 1e-3
    assert!((est.r2_w - exact.r2_w).abs() < 3e-3, "{} vs {}", est.r2_w, exact.r2_w);
    assert!((est.r2_l_given_w - exact.r2_l_given_w).abs() < 3e-3);
    assert!((est.gamma - exact.gamma).abs() < 3e-3);
}

#[test]
fn plug_in_is_null_for_shuffled_outcome() {
    let mut rng = stream(6, 3, 0);
    let recs: Vec<ParticipantRecord> = (0..100_000)
        .map(|i| {
            let w = gst_core::rng::std_normal(&mut rng);
            let a = bernoulli(&mut rng, 0.5) as u8;
            let l = bernoulli(&mut rng, expit(w)) as u8;
            let y = bernoulli(&mut rng, 0.4) as u8;
            ParticipantRecord { id: i, enroll_time: 0.0, w: vec![w], a, l, y }
        })
        .collect();
    let s = AnalysisSnapshot::complete(Cow::Owned(recs)).unwrap();
    let est = plug_in_summary(&s, &WorkingModelSpec::main_terms(1)).unwrap();
    assert!(est.r2_w < 0.02 && est.r2_l_given_w < 0.02 && est.gamma < 0.02, "{est:?}");
}

proptest! {
    #[test]
    fn denominator_never_exceeds_one(r2_w in 0.0f64..0.6, frac in 0.0f64..=1.0, r2_lw in 0.0f64..0.3, p_y in 0.05f64..=1.0, ratio in 0.05f64..=1.0) {
        let p = PrecisionSummary::pooled(r2_w, r2_lw, 2.0 * r2_w * frac);
        let p_l = (p_y / ratio).min(1.0);
        prop_assume!(p_y <= p_l);
        if let Ok(are) = are_ate(&p, p_y, p_l) {
            prop_assert!(are >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn monotone_in_py_and_r2w(r2_w in 0.05f64..0.5, frac in 0.01f64..=1.0, p_y in 0.05f64..0.95, dp in 0.001f64..0.05) {
        let gamma = 2.0 * r2_w * frac;
        let p = PrecisionSummary::pooled(r2_w, 0.0, gamma);
        let hi = (p_y + dp).min(1.0);
        prop_assert!(are_ate(&p, hi, 1.0).unwrap() <= are_ate(&p, p_y, 1.0).unwrap());
        let q = PrecisionSummary::pooled(r2_w + 0.01, 0.0, gamma);
        prop_assert!(are_ate(&q, p_y, 1.0).unwrap() >= are_ate(&p, p_y, 1.0).unwrap());
    }

    #[test]
    fn random_laws_respect_cauchy_schwarz(seed in 0u64..10_000, n_w in 1usize..5) {
        let mut rng = stream(seed, 4, 0);
        let d = DiscreteDistribution::random(&mut rng, n_w, 0.5).unwrap();
        let s = summarize(&d).unwrap();
        prop_assert!(s.gamma <= 2.0 * s.r2_w + 1e-12);
        prop_assert!(are_ate(&s, 0.7, 0.9).is_ok());
    }
}
