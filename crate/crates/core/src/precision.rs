//! Closed-form precision quantities: variance lower bounds, R-squared
//! summaries, treatment effect heterogeneity, asymptotic relative efficiency
//! and the efficient influence function of a finite-support law.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{push_terms, Columns, WorkingModelSpec};
use crate::glm::{fit_logistic, predict, LogisticFit};
use crate::math::weighted_mean_var;
use crate::trial::{AnalysisSnapshot, ParticipantRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ArmSummary {
    pub r2_w: f64,
    pub r2_l_given_w: f64,
    pub r2_resid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PerArm {
    pub arm0: ArmSummary,
    pub arm1: ArmSummary,
}

impl PerArm {
    pub fn get(&self, arm: u8) -> &ArmSummary {
        if arm == 0 {
            &self.arm0
        } else {
            &self.arm1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PrecisionSummary {
    pub r2_w: f64,
    pub r2_l_given_w: f64,
    pub gamma: f64,
    pub per_arm: PerArm,
}

impl PrecisionSummary {
    /// Summary with only the pooled quantities set.
    pub fn pooled(r2_w: f64, r2_l_given_w: f64, gamma: f64) -> Self {
        Self { r2_w, r2_l_given_w, gamma, per_arm: PerArm::default() }
    }
}

fn check_fractions(p_y: f64, p_l: f64) -> Result<()> {
    if !(p_y > 0.0 && p_y <= p_l && p_l <= 1.0) {
        return Err(invalid("observed fractions must satisfy 0 < p_y <= p_l <= 1"));
    }
    Ok(())
}

fn efficiency(denominator: f64) -> Result<f64> {
    // the upper bound allows for rounding in the summary inputs
    if !(denominator > 0.0) || denominator > 1.0 + 1e-12 {
        return Err(Error::InconsistentSummary(denominator));
    }
    Ok(1.0 / denominator)
}

/// Efficiency of an efficient adjusted estimator of the average treatment
/// effect relative to the unadjusted difference in means.
pub fn are_ate(p: &PrecisionSummary, p_y: f64, p_l: f64) -> Result<f64> {
    check_fractions(p_y, p_l)?;
    efficiency(1.0 + 0.5 * p_y * p.gamma - p.r2_w - (1.0 - p_y / p_l) * p.r2_l_given_w)
}

/// Same comparison for the mean outcome in one arm.
pub fn are_arm(p: &PrecisionSummary, arm: u8, p_a: f64, p_y: f64, p_l: f64) -> Result<f64> {
    check_fractions(p_y, p_l)?;
    if !(p_a > 0.0 && p_a < 1.0) {
        return Err(invalid("p_a must lie in (0, 1)"));
    }
    let s = p.per_arm.get(arm);
    efficiency(1.0 - (1.0 - p_a * p_y) * s.r2_w - (1.0 - p_y / p_l) * s.r2_l_given_w)
}

/// Asymptotic equivalent reduction in sample size.
pub fn aerss(are: f64) -> Result<f64> {
    if !(are >= 1.0 - 1e-12) || !are.is_finite() {
        return Err(invalid("ARE must be at least 1"));
    }
    Ok(1.0 - 1.0 / are)
}

/// Ratio of sample-size reductions from a prognostic W versus an equally
/// prognostic L when estimating one arm's mean.
pub fn ratio_r(p_y: f64, p_l: f64) -> Result<f64> {
    check_fractions(p_y, p_l)?;
    if p_y >= p_l {
        return Err(Error::RatioUndefined);
    }
    Ok((1.0 - p_y / 2.0) / (1.0 - p_y / p_l))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    /// Label of the baseline stratum.
    pub w: u32,
    pub a: u8,
    pub l: u8,
    pub y: u8,
    pub prob: f64,
}

/// Finite-support joint law of `(W, A, L, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    pub support: Vec<SupportPoint>,
    pub p_a: f64,
}

impl DiscreteDistribution {
    /// Builds the law from `P(W = w)`, `P(L = 1 | w, a)` and `P(Y = 1 | w, a, l)`.
    pub fn from_conditionals(p_w: &[f64], p_a: f64, p_l: &[[f64; 2]], p_y: &[[[f64; 2]; 2]]) -> Result<Self> {
        if p_l.len() != p_w.len() || p_y.len() != p_w.len() {
            return Err(invalid("conditional tables must have one entry per stratum"));
        }
        let mut support = Vec::new();
        for (w, &pw) in p_w.iter().enumerate() {
            for a in 0..2u8 {
                let pa = if a == 1 { p_a } else { 1.0 - p_a };
                for l in 0..2u8 {
                    let pl = if l == 1 { p_l[w][a as usize] } else { 1.0 - p_l[w][a as usize] };
                    for y in 0..2u8 {
                        let q = p_y[w][a as usize][l as usize];
                        let py = if y == 1 { q } else { 1.0 - q };
                        support.push(SupportPoint { w: w as u32, a, l, y, prob: pw * pa * pl * py });
                    }
                }
            }
        }
        let d = Self { support, p_a };
        d.validate()?;
        Ok(d)
    }

    /// Random law over `n_w` strata with conditionals bounded away from 0 and 1.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_w: usize, p_a: f64) -> Result<Self> {
        let raw: Vec<f64> = (0..n_w).map(|_| 0.2 + rng.gen::<f64>()).collect();
        let tot: f64 = raw.iter().sum();
        let p_w: Vec<f64> = raw.iter().map(|v| v / tot).collect();
        let mut u = || 0.05 + 0.9 * rng.gen::<f64>();
        let p_l: Vec<[f64; 2]> = (0..n_w).map(|_| [u(), u()]).collect();
        let p_y: Vec<[[f64; 2]; 2]> = (0..n_w).map(|_| [[u(), u()], [u(), u()]]).collect();
        Self::from_conditionals(&p_w, p_a, &p_l, &p_y)
    }

    pub fn validate(&self) -> Result<()> {
        Table::new(self).map(|_| ())
    }

    /// Draws one full-data point `(w, a, l, y)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SupportPoint {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for sp in &self.support {
            acc += sp.prob;
            if u < acc {
                return *sp;
            }
        }
        *self.support.iter().rev().find(|s| s.prob > 0.0).expect("non-empty support")
    }
}

/// Dense probability table `P[w][a][l][y]` with the derived conditional means.
struct Table {
    p_a: f64,
    p_w: Vec<f64>,
    /// P(w, a, l, y)
    p: Vec<[[[f64; 2]; 2]; 2]>,
}

impl Table {
    fn new(d: &DiscreteDistribution) -> Result<Self> {
        if !(d.p_a > 0.0 && d.p_a < 1.0) {
            return Err(invalid("p_a must lie in (0, 1)"));
        }
        if d.support.is_empty() {
            return Err(invalid("empty support"));
        }
        let n_w = d.support.iter().map(|s| s.w as usize).max().unwrap_or(0) + 1;
        let mut p = vec![[[[0.0; 2]; 2]; 2]; n_w];
        let mut total = 0.0;
        for s in &d.support {
            if !(s.prob >= 0.0) || !s.prob.is_finite() || s.a > 1 || s.l > 1 || s.y > 1 {
                return Err(invalid("support probabilities must be finite and non-negative"));
            }
            p[s.w as usize][s.a as usize][s.l as usize][s.y as usize] += s.prob;
            total += s.prob;
        }
        if libm::fabs(total - 1.0) > 1e-9 {
            return Err(invalid("support probabilities must sum to 1"));
        }
        let mass = |c: &[[f64; 2]; 2]| c[0][0] + c[0][1] + c[1][0] + c[1][1];
        let mut p_w = Vec::with_capacity(n_w);
        for cell in &p {
            let (m0, m1) = (mass(&cell[0]), mass(&cell[1]));
            let pw = m0 + m1;
            if libm::fabs(m1 - d.p_a * pw) > 1e-9 {
                return Err(invalid("treatment must be independent of W with P(A = 1) = p_a"));
            }
            p_w.push(pw);
        }
        Ok(Self { p_a: d.p_a, p_w, p })
    }

    fn pa(&self, a: u8) -> f64 {
        if a == 1 {
            self.p_a
        } else {
            1.0 - self.p_a
        }
    }

    /// P(l | w, a)
    fn p_l(&self, w: usize, a: u8, l: u8) -> f64 {
        let c = &self.p[w][a as usize];
        let den = c[0][0] + c[0][1] + c[1][0] + c[1][1];
        if den > 0.0 {
            (c[l as usize][0] + c[l as usize][1]) / den
        } else {
            0.0
        }
    }

    /// E_a(Y | L = l, W = w)
    fn e_wl(&self, w: usize, a: u8, l: u8) -> f64 {
        let c = &self.p[w][a as usize][l as usize];
        let den = c[0] + c[1];
        if den > 0.0 {
            c[1] / den
        } else {
            0.0
        }
    }

    /// E_a(Y | W = w)
    fn e_w(&self, w: usize, a: u8) -> f64 {
        let c = &self.p[w][a as usize];
        let den = c[0][0] + c[0][1] + c[1][0] + c[1][1];
        if den > 0.0 {
            (c[0][1] + c[1][1]) / den
        } else {
            0.0
        }
    }

    /// E_a(Y), computed from the joint cells directly.
    fn e_a(&self, a: u8) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for cell in &self.p {
            let c = &cell[a as usize];
            num += c[0][1] + c[1][1];
            den += c[0][0] + c[0][1] + c[1][0] + c[1][1];
        }
        num / den
    }

    /// Returns `(v_resid, v_l_given_w, v_w, var_y)` for arm `a`.
    fn decompose(&self, a: u8) -> (f64, f64, f64, f64) {
        let ea = self.e_a(a);
        let (mut v_resid, mut v_lw, mut v_w) = (0.0, 0.0, 0.0);
        for (w, &pw) in self.p_w.iter().enumerate() {
            let ew = self.e_w(w, a);
            v_w += pw * (ew - ea) * (ew - ea);
            for l in 0..2u8 {
                let pwl = pw * self.p_l(w, a, l);
                let ewl = self.e_wl(w, a, l);
                v_lw += pwl * (ewl - ew) * (ewl - ew);
                v_resid += pwl * ewl * (1.0 - ewl);
            }
        }
        (v_resid, v_lw, v_w, ea * (1.0 - ea))
    }

    /// Var{E_1(Y | W) - E_0(Y | W)}
    fn heterogeneity(&self) -> f64 {
        let delta = self.e_a(1) - self.e_a(0);
        self.p_w
            .iter()
            .enumerate()
            .map(|(w, &pw)| {
                let d = self.e_w(w, 1) - self.e_w(w, 0) - delta;
                pw * d * d
            })
            .sum()
    }

    /// Cov{E_1(Y | W), E_0(Y | W)}
    fn arm_covariance(&self) -> f64 {
        let (m1, m0) = (self.e_a(1), self.e_a(0));
        self.p_w.iter().enumerate().map(|(w, &pw)| pw * (self.e_w(w, 1) - m1) * (self.e_w(w, 0) - m0)).sum()
    }
}

/// Semiparametric variance lower bound for the average treatment effect.
pub fn variance_bound_ate(d: &DiscreteDistribution, p_y: f64, p_l: f64) -> Result<f64> {
    check_fractions(p_y, p_l)?;
    let t = Table::new(d)?;
    let mut bound = t.heterogeneity();
    for a in 0..2u8 {
        let (v_resid, v_lw, _, _) = t.decompose(a);
        bound += v_lw / (t.pa(a) * p_l) + v_resid / (t.pa(a) * p_y);
    }
    Ok(bound)
}

/// Variance lower bound for the mean outcome in `arm`.
pub fn variance_bound_arm(d: &DiscreteDistribution, arm: u8, p_a: f64, p_y: f64, p_l: f64) -> Result<f64> {
    check_fractions(p_y, p_l)?;
    let t = Table::new(d)?;
    let pa = if arm == 1 { p_a } else { 1.0 - p_a };
    let (v_resid, v_lw, v_w, _) = t.decompose(arm);
    Ok(v_w + v_lw / (pa * p_l) + v_resid / (pa * p_y))
}

/// Cov{E_1(Y | W), E_0(Y | W)}, linking the arm bounds to the effect bound.
pub fn arm_mean_covariance(d: &DiscreteDistribution) -> Result<f64> {
    Ok(Table::new(d)?.arm_covariance())
}

/// One observed-data record, with censoring indicators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub w: u32,
    pub a: u8,
    pub c_l: bool,
    pub l: u8,
    pub c_y: bool,
    pub y: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EifComponents {
    pub d0: f64,
    pub d1: f64,
    pub d2: f64,
}

impl EifComponents {
    pub fn sum(&self) -> f64 {
        self.d0 + self.d1 + self.d2
    }
}

/// Evaluates the efficient influence function of the effect at many points.
pub struct EifEvaluator {
    table: Table,
    p_a: f64,
    p_y: f64,
    p_l: f64,
    mean: [f64; 2],
}

impl EifEvaluator {
    pub fn new(d: &DiscreteDistribution, p_a: f64, p_y: f64, p_l: f64) -> Result<Self> {
        check_fractions(p_y, p_l)?;
        if !(p_a > 0.0 && p_a < 1.0) {
            return Err(invalid("p_a must lie in (0, 1)"));
        }
        let table = Table::new(d)?;
        let mean = [table.e_a(0), table.e_a(1)];
        Ok(Self { table, p_a, p_y, p_l, mean })
    }

    pub fn eval(&self, o: &Observation) -> Result<EifComponents> {
        let t = &self.table;
        let w = o.w as usize;
        if o.a > 1 || o.l > 1 || o.y > 1 || (o.c_y && !o.c_l) {
            return Err(Error::OffSupport);
        }
        if w >= t.p_w.len() || !(t.p_w[w] > 0.0) {
            return Err(Error::OffSupport);
        }
        let a = o.a as usize;
        let cell = &t.p[w][a];
        if o.c_l && !(cell[o.l as usize][0] + cell[o.l as usize][1] > 0.0) {
            return Err(Error::OffSupport);
        }
        if o.c_y && !(cell[o.l as usize][o.y as usize] > 0.0) {
            return Err(Error::OffSupport);
        }
        let d0 = (t.e_w(w, 1) - self.mean[1]) - (t.e_w(w, 0) - self.mean[0]);
        let sign = if o.a == 1 { 1.0 } else { -1.0 };
        let pa = if o.a == 1 { self.p_a } else { 1.0 - self.p_a };
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        if o.c_l {
            let q_wl = t.e_wl(w, o.a, o.l);
            d1 = sign * (q_wl - t.e_w(w, o.a)) / (pa * self.p_l);
            if o.c_y {
                d2 = sign * (o.y as f64 - q_wl) / (pa * self.p_y);
            }
        }
        Ok(EifComponents { d0, d1, d2 })
    }

    /// Components of the efficient influence function for the mean in `arm`.
    pub fn eval_arm(&self, o: &Observation, arm: u8) -> Result<EifComponents> {
        let full = self.eval(o)?;
        let t = &self.table;
        let w = o.w as usize;
        let d0 = t.e_w(w, arm) - self.mean[arm as usize];
        if o.a != arm {
            return Ok(EifComponents { d0, d1: 0.0, d2: 0.0 });
        }
        // the effect components carry a sign for arm 0
        let sign = if arm == 1 { 1.0 } else { -1.0 };
        Ok(EifComponents { d0, d1: sign * full.d1, d2: sign * full.d2 })
    }
}

pub fn eif_components(obs: &Observation, d: &DiscreteDistribution, p_a: f64, p_y: f64, p_l: f64) -> Result<EifComponents> {
    EifEvaluator::new(d, p_a, p_y, p_l)?.eval(obs)
}

/// Returns `(v_resid, v_l_given_w, v_w)` for `arm`; their sum is Var_a(Y).
pub fn decompose_variance(d: &DiscreteDistribution, arm: u8) -> Result<(f64, f64, f64)> {
    let (r, l, w, _) = Table::new(d)?.decompose(arm);
    Ok((r, l, w))
}

/// Var_a(Y) computed directly from the arm mean.
pub fn outcome_variance(d: &DiscreteDistribution, arm: u8) -> Result<f64> {
    Ok(Table::new(d)?.decompose(arm).3)
}

pub fn summarize(d: &DiscreteDistribution) -> Result<PrecisionSummary> {
    let t = Table::new(d)?;
    let mut arms = [ArmSummary::default(); 2];
    let (mut tot_y, mut tot_w, mut tot_lw) = (0.0, 0.0, 0.0);
    for a in 0..2u8 {
        let (v_resid, v_lw, v_w, var_y) = t.decompose(a);
        if !(var_y > 0.0) {
            return Err(Error::ZeroOutcomeVariance(a));
        }
        arms[a as usize] = ArmSummary { r2_w: v_w / var_y, r2_l_given_w: v_lw / var_y, r2_resid: v_resid / var_y };
        tot_y += var_y;
        tot_w += v_w;
        tot_lw += v_lw;
    }
    Ok(PrecisionSummary {
        r2_w: tot_w / tot_y,
        r2_l_given_w: tot_lw / tot_y,
        gamma: t.heterogeneity() / tot_y,
        per_arm: PerArm { arm0: arms[0], arm1: arms[1] },
    })
}

/// Compares the g-computation formula on the observed-data law (with
/// independent monotone censoring at rates `p_l`, `p_y`) to E_1(Y) - E_0(Y).
/// Returns `(g_formula, truth)`.
pub fn identification_check(d: &DiscreteDistribution, p_y: f64, p_l: f64) -> Result<(f64, f64)> {
    check_fractions(p_y, p_l)?;
    let t = Table::new(d)?;
    let n_w = t.p_w.len();
    // observed-data cells: P(w, a, C^L = 1, l, C^Y = 1, y) and P(w, a, C^L = 1, l)
    let p_ly = p_y / p_l;
    let mut g = [0.0; 2];
    for (a, g_a) in g.iter_mut().enumerate() {
        for w in 0..n_w {
            let c = &t.p[w][a];
            let p_wa: f64 = c.iter().flatten().sum();
            if p_wa <= 0.0 {
                continue;
            }
            let obs_l: [f64; 2] = [p_l * (c[0][0] + c[0][1]), p_l * (c[1][0] + c[1][1])];
            let obs_l_tot = obs_l[0] + obs_l[1];
            let mut inner = 0.0;
            for l in 0..2 {
                let obs_y = [p_l * p_ly * c[l][0], p_l * p_ly * c[l][1]];
                let den = obs_y[0] + obs_y[1];
                if den > 0.0 {
                    inner += obs_l[l] / obs_l_tot * obs_y[1] / den;
                }
            }
            *g_a += t.p_w[w] * inner;
        }
    }
    Ok((g[1] - g[0], t.e_a(1) - t.e_a(0)))
}

enum OutcomeFit {
    Pooled(LogisticFit),
    ByArm([LogisticFit; 2]),
}

impl OutcomeFit {
    fn predict(&self, r: &ParticipantRecord, a: u8, terms: &[usize], with_l: bool, buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        buf.push(1.0);
        let fit = match self {
            OutcomeFit::Pooled(f) => {
                buf.push(a as f64);
                f
            }
            OutcomeFit::ByArm(fits) => &fits[a as usize],
        };
        push_terms(r, terms, buf);
        if with_l {
            buf.push(r.l as f64);
        }
        predict(fit, buf)
    }
}

/// Plug-in R-squared and heterogeneity estimates from working-model fits.

/// R-squared models are pooled over arms with a main term for A unless
/// `spec.arm_interactions` is set; heterogeneity always uses per-arm fits.
pub fn plug_in_summary(s: &AnalysisSnapshot<'_>, spec: &WorkingModelSpec) -> Result<PrecisionSummary> {
    let weights = vec![1.0; s.len()];
    plug_in_summary_weighted(s, &weights, spec)
}

/// As [`plug_in_summary`] with a probability weight per record, so an
/// enumerated finite population can be summarized exactly.
pub fn plug_in_summary_weighted(s: &AnalysisSnapshot<'_>, weights: &[f64], spec: &WorkingModelSpec) -> Result<PrecisionSummary> {
    let cols = Columns::new(s)?;
    spec.validate(cols.d_w())?;
    if weights.len() != cols.n {
        return Err(invalid("one weight per record is required"));
    }
    let recs = cols.records;
    let tw = &spec.outcome_terms_w;
    let tlw = &spec.outcome_terms_lw;
    let rows_y = cols.rows(|i, _| cols.c_y[i] && weights[i] > 0.0);
    for a in 0..2u8 {
        if !rows_y.iter().any(|&i| recs[i].a == a) {
            return Err(Error::EmptyStratum(alloc::format!("no observed primary outcome in arm {a}")));
        }
    }
    let y_of = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&i| recs[i].y as f64).collect() };
    let w_of = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&i| weights[i]).collect() };

    let fit_model = |terms: &[usize], with_l: bool, pooled: bool| -> Result<OutcomeFit> {
        let extra = terms.len() + with_l as usize;
        let fill = |r: &ParticipantRecord, o: &mut Vec<f64>| {
            push_terms(r, terms, o);
            if with_l {
                o.push(r.l as f64);
            }
        };
        if pooled {
            let x = cols.design(&rows_y, 2 + extra, |r, o| {
                o.push(r.a as f64);
                fill(r, o);
            });
            return Ok(OutcomeFit::Pooled(fit_logistic(&x, &y_of(&rows_y), &w_of(&rows_y), None)?));
        }
        let mut fits = [None, None];
        for a in 0..2u8 {
            let rows: Vec<usize> = rows_y.iter().copied().filter(|&i| recs[i].a == a).collect();
            let x = cols.design(&rows, 1 + extra, fill);
            fits[a as usize] = Some(fit_logistic(&x, &y_of(&rows), &w_of(&rows), None)?);
        }
        let [f0, f1] = fits;
        Ok(OutcomeFit::ByArm([f0.expect("arm 0 fit"), f1.expect("arm 1 fit")]))
    };
    let pooled = !spec.arm_interactions;
    let m_w = fit_model(tw, false, pooled)?;
    let m_lw = fit_model(tlw, spec.include_l, pooled)?;
    // heterogeneity always uses arm-specific fits
    let m_het = fit_model(tw, false, false)?;

    let mut buf = Vec::new();
    let mut var_y = [0.0; 2];
    let mut var_w = [0.0; 2];
    let mut var_lw = [0.0; 2];
    for a in 0..2u8 {
        var_y[a as usize] = weighted_mean_var(rows_y.iter().filter(|&&i| recs[i].a == a).map(|&i| (recs[i].y as f64, weights[i]))).1;
        var_w[a as usize] = weighted_mean_var((0..cols.n).map(|i| (m_w.predict(&recs[i], a, tw, false, &mut buf), weights[i]))).1;
        let rows_l: Vec<usize> = (0..cols.n).filter(|&i| cols.c_l[i] && recs[i].a == a).collect();
        var_lw[a as usize] = weighted_mean_var(rows_l.iter().map(|&i| {
            let q = m_lw.predict(&recs[i], a, tlw, spec.include_l, &mut buf) - m_w.predict(&recs[i], a, tw, false, &mut buf);
            (q, weights[i])
        }))
        .1;
    }
    let het = weighted_mean_var((0..cols.n).map(|i| {
        let d = m_het.predict(&recs[i], 1, tw, false, &mut buf) - m_het.predict(&recs[i], 0, tw, false, &mut buf);
        (d, weights[i])
    }))
    .1;

    let tot = var_y[0] + var_y[1];
    if !(var_y[0] > 0.0) {
        return Err(Error::ZeroOutcomeVariance(0));
    }
    if !(var_y[1] > 0.0) {
        return Err(Error::ZeroOutcomeVariance(1));
    }
    let arm = |a: usize| {
        let r2_w = var_w[a] / var_y[a];
        let r2_l_given_w = var_lw[a] / var_y[a];
        ArmSummary { r2_w, r2_l_given_w, r2_resid: 1.0 - r2_w - r2_l_given_w }
    };
    Ok(PrecisionSummary {
        r2_w: (var_w[0] + var_w[1]) / tot,
        r2_l_given_w: (var_lw[0] + var_lw[1]) / tot,
        gamma: het / tot,
        per_arm: PerArm { arm0: arm(0), arm1: arm(1) },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineCurvePoint {
    pub r2_w: f64,
    pub gamma: f64,
    pub p_y: f64,
    pub are: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortTermCurvePoint {
    pub r2_l_given_w: f64,
    pub ratio_py_pl: f64,
    pub are: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioContourPoint {
    pub p_l: f64,
    pub p_y: f64,
    pub r: f64,
}

fn grid(steps: usize) -> impl Iterator<Item = f64> {
    (1..=steps).map(move |i| i as f64 / steps as f64)
}

/// ARE against p_y when only W is prognostic, for several (R²_W, γ) pairs.
pub fn baseline_curves(steps: usize) -> Vec<BaselineCurvePoint> {
    let mut out = Vec::new();
    for r2_w in [0.1, 0.25, 0.5] {
        for gamma in [0.0, r2_w, 2.0 * r2_w] {
            let p = PrecisionSummary::pooled(r2_w, 0.0, gamma);
            for p_y in grid(steps) {
                if let Ok(are) = are_ate(&p, p_y, 1.0) {
                    out.push(BaselineCurvePoint { r2_w, gamma, p_y, are });
                }
            }
        }
    }
    out
}

/// ARE against p_y / p_l when only L is prognostic.
pub fn short_term_curves(steps: usize) -> Vec<ShortTermCurvePoint> {
    let mut out = Vec::new();
    for r2 in [0.1, 0.25] {
        let p = PrecisionSummary::pooled(0.0, r2, 0.0);
        for ratio in grid(steps) {
            if let Ok(are) = are_ate(&p, ratio, 1.0) {
                out.push(ShortTermCurvePoint { r2_l_given_w: r2, ratio_py_pl: ratio, are });
            }
        }
    }
    out
}

/// Values of `r(p_l, p_y)` on the region `p_y < p_l`.
pub fn ratio_contour(steps: usize) -> Vec<RatioContourPoint> {
    let mut out = Vec::new();
    for p_l in grid(steps) {
        for p_y in grid(steps) {
            if let Ok(r) = ratio_r(p_y, p_l) {
                out.push(RatioContourPoint { p_l, p_y, r });
            }
        }
    }
    out
}
