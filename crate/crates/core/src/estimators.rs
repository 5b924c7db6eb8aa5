//! Unadjusted and TMLE estimators of arm means and the average treatment effect.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::glm::{fit_logistic, predict, Design, LogisticFit};
use crate::math::{expit, logit};
use crate::rng::{self, domain};
use crate::trial::{AnalysisSnapshot, ParticipantRecord};

/// Covariate index sets (into `w`) for each working model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkingModelSpec {
    /// W terms in the model for E(Y | L, A, W).
    pub outcome_terms_lw: Vec<usize>,
    /// W terms in the sequential regression for E(Y | A, W).
    pub outcome_terms_w: Vec<usize>,
    /// W terms in P(C^L = 1 | A, W).
    pub censor_l_terms: Vec<usize>,
    /// W terms in P(C^Y = 1 | C^L = 1, L, A, W).
    pub censor_y_terms: Vec<usize>,
    /// W terms in P(A = 1 | W).
    pub arm_terms: Vec<usize>,
    /// Whether L enters the outcome and C^Y models.
    pub include_l: bool,
    /// Fit E(Y | L, A, W) separately in each arm instead of with a main term for A.
    pub arm_interactions: bool,
}

impl WorkingModelSpec {
    /// Main terms for every covariate in every model.
    pub fn main_terms(d_w: usize) -> Self {
        let all: Vec<usize> = (0..d_w).collect();
        Self {
            outcome_terms_lw: all.clone(),
            outcome_terms_w: all.clone(),
            censor_l_terms: all.clone(),
            censor_y_terms: all.clone(),
            arm_terms: all,
            include_l: true,
            arm_interactions: false,
        }
    }

    pub fn validate(&self, d_w: usize) -> Result<()> {
        let sets = [&self.outcome_terms_lw, &self.outcome_terms_w, &self.censor_l_terms, &self.censor_y_terms, &self.arm_terms];
        if sets.iter().any(|s| s.iter().any(|&j| j >= d_w)) {
            return Err(invalid(format!("covariate index out of range for dimension {d_w}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Unadjusted,
    Tmle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub delta_hat: f64,
    /// Estimated variance of `delta_hat`.
    pub variance_hat: f64,
    pub information: f64,
    pub n_enrolled: usize,
    pub estimator_kind: EstimatorKind,
    /// Estimated means for arm 0 and arm 1.
    pub arm_means: [f64; 2],
    /// Estimated variances of the arm means.
    pub arm_variances: [f64; 2],
    /// Set when a targeting step failed and the untargeted fit was kept.
    pub targeting_fallback: bool,
}

/// Mean of observed Y in one arm and the variance of that mean.
pub fn unadjusted_arm_mean(s: &AnalysisSnapshot<'_>, arm: u8) -> Result<(f64, f64)> {
    let mut count = 0usize;
    let mut sum = 0.0;
    for (r, &cy) in s.records.iter().zip(&s.c_y) {
        if cy && r.a == arm {
            count += 1;
            sum += r.y as f64;
        }
    }
    if count == 0 {
        return Err(Error::EmptyStratum(format!("no observed primary outcome in arm {arm}")));
    }
    let mean = sum / count as f64;
    Ok((mean, mean * (1.0 - mean) / count as f64))
}

pub fn unadjusted_ate(s: &AnalysisSnapshot<'_>) -> Result<EstimateResult> {
    let (m0, v0) = unadjusted_arm_mean(s, 0)?;
    let (m1, v1) = unadjusted_arm_mean(s, 1)?;
    finish(m1 - m0, v0 + v1, s.len(), EstimatorKind::Unadjusted, [m0, m1], [v0, v1], false)
}

fn finish(
    delta_hat: f64,
    variance_hat: f64,
    n_enrolled: usize,
    estimator_kind: EstimatorKind,
    arm_means: [f64; 2],
    arm_variances: [f64; 2],
    targeting_fallback: bool,
) -> Result<EstimateResult> {
    if !delta_hat.is_finite() || !variance_hat.is_finite() {
        return Err(Error::NonFinite("estimate"));
    }
    if variance_hat <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(EstimateResult {
        delta_hat,
        variance_hat,
        information: 1.0 / variance_hat,
        n_enrolled,
        estimator_kind,
        arm_means,
        arm_variances,
        targeting_fallback,
    })
}

pub fn estimate(s: &AnalysisSnapshot<'_>, kind: EstimatorKind, spec: &WorkingModelSpec) -> Result<EstimateResult> {
    match kind {
        EstimatorKind::Unadjusted => unadjusted_ate(s),
        EstimatorKind::Tmle => tmle_ate(s, spec),
    }
}

pub fn wald_statistic(e: &EstimateResult) -> Result<f64> {
    if !(e.variance_hat > 0.0) || !e.variance_hat.is_finite() {
        return Err(Error::DegenerateVariance);
    }
    Ok(e.delta_hat / libm::sqrt(e.variance_hat))
}

/// Column view of a snapshot used by the regression-based routines.
pub(crate) struct Columns<'s> {
    pub n: usize,
    pub records: &'s [ParticipantRecord],
    pub c_l: &'s [bool],
    pub c_y: &'s [bool],
}

impl<'s> Columns<'s> {
    pub fn new(s: &'s AnalysisSnapshot<'_>) -> Result<Self> {
        let d_w = s.records[0].w.len();
        if s.records.iter().any(|r| r.w.len() != d_w) {
            return Err(invalid("records have differing covariate dimensions"));
        }
        Ok(Self { n: s.len(), records: &s.records, c_l: &s.c_l, c_y: &s.c_y })
    }

    pub fn d_w(&self) -> usize {
        self.records[0].w.len()
    }

    /// Design with intercept over `rows`, filling the remaining columns via `fill`.
    pub fn design(&self, rows: &[usize], p: usize, mut fill: impl FnMut(&ParticipantRecord, &mut Vec<f64>)) -> Design {
        let mut data = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            data.push(1.0);
            fill(&self.records[i], &mut data);
        }
        Design::new(rows.len(), p, data).expect("design dimensions")
    }

    pub fn rows(&self, pred: impl Fn(usize, &ParticipantRecord) -> bool) -> Vec<usize> {
        (0..self.n).filter(|&i| pred(i, &self.records[i])).collect()
    }
}

pub(crate) fn push_terms(r: &ParticipantRecord, terms: &[usize], out: &mut Vec<f64>) {
    out.extend(terms.iter().map(|&j| r.w[j]));
}

/// A fitted probability model; constant when every response is one.
enum ProbModel {
    Constant(f64),
    Logistic(LogisticFit),
}

impl ProbModel {
    fn fit(x: &Design, y: &[f64]) -> Result<Self> {
        if y.iter().all(|&v| v >= 1.0) {
            return Ok(ProbModel::Constant(1.0));
        }
        let w = vec![1.0; y.len()];
        Ok(ProbModel::Logistic(fit_logistic(x, y, &w, None)?))
    }

    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            ProbModel::Constant(p) => *p,
            ProbModel::Logistic(f) => predict(f, row),
        }
    }
}

/// Fits `logit Q* = offset + eps` by weighted quasi-binomial regression.
/// Returns `None` when the fluctuation fails.
fn fluctuate(y: &[f64], weights: &[f64], offset: &[f64]) -> Option<f64> {
    let x = Design::intercept_only(y.len());
    match fit_logistic(&x, y, weights, Some(offset)) {
        Ok(f) if f.converged && !f.clipped => Some(f.coefficients[0]),
        _ => None,
    }
}

struct ArmFit {
    mean: f64,
    /// Estimated influence function at each record.
    eif: Vec<f64>,
    fallback: bool,
}

/// Treatment-specific mean for `arm` via TMLE.
pub fn tmle_arm_mean(s: &AnalysisSnapshot<'_>, spec: &WorkingModelSpec, arm: u8) -> Result<(f64, f64)> {
    let nuis = Nuisance::fit(s, spec)?;
    let fit = nuis.arm(arm)?;
    let n = nuis.cols.n as f64;
    let var = fit.eif.iter().map(|d| d * d).sum::<f64>() / (n * n);
    Ok((fit.mean, var))
}

pub fn tmle_ate(s: &AnalysisSnapshot<'_>, spec: &WorkingModelSpec) -> Result<EstimateResult> {
    let nuis = Nuisance::fit(s, spec)?;
    let f0 = nuis.arm(0)?;
    let f1 = nuis.arm(1)?;
    let n = nuis.cols.n as f64;
    let sq = |d: &[f64]| d.iter().map(|v| v * v).sum::<f64>() / (n * n);
    let diff: Vec<f64> = f1.eif.iter().zip(&f0.eif).map(|(a, b)| a - b).collect();
    finish(
        f1.mean - f0.mean,
        sq(&diff),
        nuis.cols.n,
        EstimatorKind::Tmle,
        [f0.mean, f1.mean],
        [sq(&f0.eif), sq(&f1.eif)],
        f0.fallback || f1.fallback,
    )
}

struct Nuisance<'s> {
    cols: Columns<'s>,
    spec: &'s WorkingModelSpec,
    /// P(A = 1 | W_i)
    g_a1: Vec<f64>,
    /// P(C^L = 1 | A_i, W_i)
    g_l: Vec<f64>,
    /// P(C^Y = 1 | C^L = 1, L_i, A_i, W_i); defined where C^L = 1.
    g_y: Vec<f64>,
    q2_pooled: Option<LogisticFit>,
    q2_by_arm: [Option<LogisticFit>; 2],
}

impl<'s> Nuisance<'s> {
    fn fit(s: &'s AnalysisSnapshot<'_>, spec: &'s WorkingModelSpec) -> Result<Self> {
        let cols = Columns::new(s)?;
        spec.validate(cols.d_w())?;
        let n = cols.n;
        let all: Vec<usize> = (0..n).collect();
        let li = spec.include_l as usize;

        let x_a = cols.design(&all, 1 + spec.arm_terms.len(), |r, o| push_terms(r, &spec.arm_terms, o));
        let ya: Vec<f64> = cols.records.iter().map(|r| r.a as f64).collect();
        if ya.iter().all(|&v| v == ya[0]) {
            return Err(Error::EmptyStratum(format!("no participants in arm {}", 1 - ya[0] as u8)));
        }
        let m_a = ProbModel::fit(&x_a, &ya)?;
        let g_a1: Vec<f64> = (0..n).map(|i| m_a.predict(x_a.row(i))).collect();

        let x_l = cols.design(&all, 2 + spec.censor_l_terms.len(), |r, o| {
            o.push(r.a as f64);
            push_terms(r, &spec.censor_l_terms, o);
        });
        let yl: Vec<f64> = cols.c_l.iter().map(|&c| c as u8 as f64).collect();
        let m_l = ProbModel::fit(&x_l, &yl)?;
        let g_l: Vec<f64> = (0..n).map(|i| m_l.predict(x_l.row(i))).collect();

        let rows_l = cols.rows(|i, _| cols.c_l[i]);
        let x_y = cols.design(&rows_l, 2 + spec.censor_y_terms.len() + li, |r, o| {
            o.push(r.a as f64);
            push_terms(r, &spec.censor_y_terms, o);
            if spec.include_l {
                o.push(r.l as f64);
            }
        });
        let yy: Vec<f64> = rows_l.iter().map(|&i| cols.c_y[i] as u8 as f64).collect();
        let m_y = ProbModel::fit(&x_y, &yy)?;
        let mut g_y = vec![f64::NAN; n];
        for (k, &i) in rows_l.iter().enumerate() {
            g_y[i] = m_y.predict(x_y.row(k));
        }

        let ones = |m: usize| vec![1.0; m];
        let mut q2_pooled = None;
        let mut q2_by_arm = [None, None];
        let q2_fill = |r: &ParticipantRecord, o: &mut Vec<f64>| {
            push_terms(r, &spec.outcome_terms_lw, o);
            if spec.include_l {
                o.push(r.l as f64);
            }
        };
        if spec.arm_interactions {
            for a in 0..2u8 {
                let rows = cols.rows(|i, r| cols.c_y[i] && r.a == a);
                if rows.is_empty() {
                    return Err(Error::EmptyStratum(format!("no observed primary outcome in arm {a}")));
                }
                let x = cols.design(&rows, 1 + spec.outcome_terms_lw.len() + li, q2_fill);
                let y: Vec<f64> = rows.iter().map(|&i| cols.records[i].y as f64).collect();
                q2_by_arm[a as usize] = Some(fit_logistic(&x, &y, &ones(rows.len()), None)?);
            }
        } else {
            let rows = cols.rows(|i, _| cols.c_y[i]);
            let x = cols.design(&rows, 2 + spec.outcome_terms_lw.len() + li, |r, o| {
                o.push(r.a as f64);
                q2_fill(r, o);
            });
            let y: Vec<f64> = rows.iter().map(|&i| cols.records[i].y as f64).collect();
            q2_pooled = Some(fit_logistic(&x, &y, &ones(rows.len()), None)?);
        }
        Ok(Self { cols, spec, g_a1, g_l, g_y, q2_pooled, q2_by_arm })
    }

    fn q2(&self, r: &ParticipantRecord, arm: u8, buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        buf.push(1.0);
        if let Some(f) = &self.q2_pooled {
            buf.push(arm as f64);
            push_terms(r, &self.spec.outcome_terms_lw, buf);
            if self.spec.include_l {
                buf.push(r.l as f64);
            }
            predict(f, buf)
        } else {
            push_terms(r, &self.spec.outcome_terms_lw, buf);
            if self.spec.include_l {
                buf.push(r.l as f64);
            }
            predict(self.q2_by_arm[arm as usize].as_ref().expect("arm model"), buf)
        }
    }

    fn arm(&self, arm: u8) -> Result<ArmFit> {
        let cols = &self.cols;
        let n = cols.n;
        let g_arm = |i: usize| if arm == 1 { self.g_a1[i] } else { 1.0 - self.g_a1[i] };
        let rows_l = cols.rows(|i, r| cols.c_l[i] && r.a == arm);
        if rows_l.is_empty() {
            return Err(Error::EmptyStratum(format!("no observed short-term outcome in arm {arm}")));
        }
        if !rows_l.iter().any(|&i| cols.c_y[i]) {
            return Err(Error::EmptyStratum(format!("no observed primary outcome in arm {arm}")));
        }
        let mut fallback = false;
        let mut buf = Vec::new();

        // Q2 and its targeting on {A = arm, C^Y = 1}
        let q2_init: Vec<f64> = rows_l.iter().map(|&i| self.q2(&cols.records[i], arm, &mut buf)).collect();
        let (mut y2, mut w2, mut o2) = (Vec::new(), Vec::new(), Vec::new());
        for (k, &i) in rows_l.iter().enumerate() {
            if cols.c_y[i] {
                y2.push(cols.records[i].y as f64);
                w2.push(1.0 / (g_arm(i) * self.g_l[i] * self.g_y[i]));
                o2.push(logit(q2_init[k]));
            }
        }
        let eps2 = fluctuate(&y2, &w2, &o2).unwrap_or_else(|| {
            fallback = true;
            0.0
        });
        let q2s: Vec<f64> = q2_init.iter().map(|&q| expit(logit(q) + eps2)).collect();

        // sequential regression of Q2* on W within {A = arm, C^L = 1}
        let p1 = 1 + self.spec.outcome_terms_w.len();
        let x1 = cols.design(&rows_l, p1, |r, o| push_terms(r, &self.spec.outcome_terms_w, o));
        let q1_fit = fit_logistic(&x1, &q2s, &vec![1.0; rows_l.len()], None)?;
        let all: Vec<usize> = (0..n).collect();
        let x1_all = cols.design(&all, p1, |r, o| push_terms(r, &self.spec.outcome_terms_w, o));
        let q1_init: Vec<f64> = (0..n).map(|i| predict(&q1_fit, x1_all.row(i))).collect();

        let w1: Vec<f64> = rows_l.iter().map(|&i| 1.0 / (g_arm(i) * self.g_l[i])).collect();
        let o1: Vec<f64> = rows_l.iter().map(|&i| logit(q1_init[i])).collect();
        let eps1 = fluctuate(&q2s, &w1, &o1).unwrap_or_else(|| {
            fallback = true;
            0.0
        });
        let q1s: Vec<f64> = q1_init.iter().map(|&q| expit(logit(q) + eps1)).collect();
        let mean = q1s.iter().sum::<f64>() / n as f64;

        let mut eif: Vec<f64> = q1s.iter().map(|q| q - mean).collect();
        for (k, &i) in rows_l.iter().enumerate() {
            eif[i] += w1[k] * (q2s[k] - q1s[i]);
            if cols.c_y[i] {
                let w = 1.0 / (g_arm(i) * self.g_l[i] * self.g_y[i]);
                eif[i] += w * (cols.records[i].y as f64 - q2s[k]);
            }
        }
        Ok(ArmFit { mean, eif, fallback })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub variance: f64,
    /// Percentile interval for the effect.
    pub lower: f64,
    pub upper: f64,
    pub resamples: usize,
    pub failed: usize,
}

/// Nonparametric bootstrap over participants, keeping each participant's censoring flags.
pub fn bootstrap(
    s: &AnalysisSnapshot<'_>,
    kind: EstimatorKind,
    spec: &WorkingModelSpec,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if resamples < 2 {
        return Err(invalid("bootstrap needs at least two resamples"));
    }
    let n = s.len();
    let mut deltas = Vec::with_capacity(resamples);
    let mut failed = 0;
    for b in 0..resamples {
        let mut rng = rng::stream(seed, domain::BOOTSTRAP, b as u64);
        let idx: Vec<usize> = (0..n).map(|_| rng::index(&mut rng, n)).collect();
        let recs: Vec<ParticipantRecord> = idx.iter().map(|&i| s.records[i].clone()).collect();
        let c_l = idx.iter().map(|&i| s.c_l[i]).collect();
        let c_y = idx.iter().map(|&i| s.c_y[i]).collect();
        let est = AnalysisSnapshot::from_flags(recs.into(), c_l, c_y, s.analysis_time).and_then(|bs| estimate(&bs, kind, spec));
        match est {
            Ok(e) => deltas.push(e.delta_hat),
            Err(_) => failed += 1,
        }
    }
    if deltas.len() < resamples / 2 || deltas.len() < 2 {
        return Err(Error::TooManyFailures { failed, total: resamples });
    }
    let (_, var) = crate::math::mean_var(&deltas);
    deltas.sort_by(f64::total_cmp);
    let q = |p: f64| deltas[(libm::round(p * (deltas.len() - 1) as f64) as usize).min(deltas.len() - 1)];
    Ok(BootstrapResult { variance: var, lower: q(0.025), upper: q(0.975), resamples, failed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::borrow::Cow;

    fn rec(a: u8, w: f64, l: u8, y: u8) -> ParticipantRecord {
        ParticipantRecord { id: 0, enroll_time: 0.0, w: vec![w], a, l, y }
    }

    fn complete(recs: Vec<ParticipantRecord>) -> AnalysisSnapshot<'static> {
        AnalysisSnapshot::complete(Cow::Owned(recs)).unwrap()
    }

    #[test]
    fn arm_mean_half() {
        let s = complete(vec![rec(1, 0.0, 0, 1), rec(1, 0.0, 0, 0)]);
        assert_eq!(unadjusted_arm_mean(&s, 1).unwrap().0, 0.5);
        assert!(unadjusted_arm_mean(&s, 0).is_err());
    }

    #[test]
    fn constant_arm_has_zero_variance() {
        let s = complete(vec![rec(1, 0.0, 0, 1), rec(1, 0.0, 0, 1)]);
        assert_eq!(unadjusted_arm_mean(&s, 1).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn difference_of_arm_means() {
        let mut recs = Vec::new();
        for k in 0..10 {
            recs.push(rec(1, 0.0, 0, (k < 7) as u8));
            recs.push(rec(0, 0.0, 0, (k < 5) as u8));
        }
        let s = complete(recs.clone());
        let e = unadjusted_ate(&s).unwrap();
        assert!((e.delta_hat - 0.2).abs() < 1e-12);
        for r in &mut recs {
            r.a = 1 - r.a;
        }
        let f = unadjusted_ate(&complete(recs)).unwrap();
        assert!((f.delta_hat + e.delta_hat).abs() < 1e-12);
        assert!((f.variance_hat - e.variance_hat).abs() < 1e-15);
    }

    #[test]
    fn wald() {
        let mut e = unadjusted_ate(&complete(vec![rec(1, 0.0, 0, 1), rec(1, 0.0, 0, 0), rec(0, 0.0, 0, 1), rec(0, 0.0, 0, 0)])).unwrap();
        e.delta_hat = 0.2;
        e.variance_hat = 0.01;
        assert!((wald_statistic(&e).unwrap() - 2.0).abs() < 1e-12);
        e.delta_hat = 0.0;
        assert_eq!(wald_statistic(&e).unwrap(), 0.0);
        e.variance_hat = 0.0;
        assert_eq!(wald_statistic(&e), Err(Error::DegenerateVariance));
    }

    #[test]
    fn spec_validation() {
        let mut spec = WorkingModelSpec::main_terms(2);
        assert!(spec.validate(2).is_ok());
        spec.arm_terms.push(5);
        assert!(spec.validate(2).is_err());
    }

    #[test]
    fn targeted_eif_is_centered() {
        let mut rng = crate::rng::stream(3, 0, 0);
        let mut recs = Vec::new();
        let (mut cl, mut cy) = (Vec::new(), Vec::new());
        for _ in 0..600 {
            let a = rng::bernoulli(&mut rng, 0.5) as u8;
            let w = rng::std_normal(&mut rng);
            let l = rng::bernoulli(&mut rng, expit(w)) as u8;
            let y = rng::bernoulli(&mut rng, expit(-0.3 + 0.5 * a as f64 + w + l as f64)) as u8;
            recs.push(rec(a, w, l, y));
            let c = rng::bernoulli(&mut rng, 0.9);
            cl.push(c);
            cy.push(c && rng::bernoulli(&mut rng, 0.8));
        }
        let s = AnalysisSnapshot::from_flags(Cow::Owned(recs), cl, cy, 0.0).unwrap();
        let spec = WorkingModelSpec::main_terms(1);
        let nuis = Nuisance::fit(&s, &spec).unwrap();
        for arm in 0..2 {
            let f = nuis.arm(arm).unwrap();
            assert!(!f.fallback);
            let mean = f.eif.iter().sum::<f64>() / f.eif.len() as f64;
            assert!(mean.abs() < 1e-6, "{mean}");
        }
    }
}
