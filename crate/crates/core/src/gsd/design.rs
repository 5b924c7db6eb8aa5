use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::mvn::{cholesky_psd, PrefixCache};
use super::spending::ErrorSpendingSpec;
use crate::error::{invalid, Error, Result};

const BOUND: f64 = 12.0;
const MAX_BISECT: usize = 60;
const BISECT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "stage")]
pub enum AnalysisLabel {
    Interim(usize),
    Decision(usize),
}

/// Joint normal model of the interim statistics `S_1..S_{K-1}` followed by
/// the decision statistics `S~_1..S~_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointStatisticModel {
    pub k_stages: usize,
    pub info_interim: Vec<f64>,
    pub info_decision: Vec<f64>,
    /// Row-major correlation of the `2K - 1` statistics.
    pub corr: Vec<f64>,
    /// Mean of each standardized statistic per unit effect.
    pub drift: Vec<f64>,
    /// Null standard deviation of each statistic; boundaries are solved for
    /// the standardized statistics and multiplied back by this.
    pub scale: Vec<f64>,
}

impl JointStatisticModel {
    pub fn dim(&self) -> usize {
        2 * self.k_stages - 1
    }

    pub fn labels(&self) -> Vec<AnalysisLabel> {
        let k = self.k_stages;
        (1..k).map(AnalysisLabel::Interim).chain((1..=k).map(AnalysisLabel::Decision)).collect()
    }

    pub fn interim_index(&self, stage: usize) -> usize {
        stage - 1
    }

    pub fn decision_index(&self, stage: usize) -> usize {
        self.k_stages - 1 + stage - 1
    }

    /// Information of every statistic in label order.
    pub fn info(&self) -> Vec<f64> {
        self.info_interim.iter().chain(&self.info_decision).copied().collect()
    }

    /// Independent-increments model: `corr = sqrt(I_min / I_max)` and drift `sqrt(I)`.
    pub fn canonical(info_interim: &[f64], info_decision: &[f64]) -> Result<Self> {
        let k = info_decision.len();
        if k < 2 || info_interim.len() + 1 != k {
            return Err(invalid("need K - 1 interim and K decision information levels"));
        }
        let info: Vec<f64> = info_interim.iter().chain(info_decision).copied().collect();
        let d = info.len();
        let mut corr = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let (a, b) = (info[i], info[j]);
                corr[i * d + j] = libm::sqrt(a.min(b) / a.max(b));
            }
        }
        let m = Self {
            k_stages: k,
            info_interim: info_interim.to_vec(),
            info_decision: info_decision.to_vec(),
            corr,
            drift: info.iter().map(|i| libm::sqrt(*i)).collect(),
            scale: vec![1.0; d],
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k_stages;
        let d = 2 * k - 1;
        if k < 2 || self.info_interim.len() != k - 1 || self.info_decision.len() != k || self.corr.len() != d * d || self.drift.len() != d || self.scale.len() != d {
            return Err(invalid("joint model dimensions disagree"));
        }
        if self.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid("statistic scales must be positive"));
        }
        if self.info().iter().any(|i| !(*i > 0.0) || !i.is_finite()) {
            return Err(invalid("information levels must be positive"));
        }
        for i in 0..d {
            if libm::fabs(self.corr[i * d + i] - 1.0) > 1e-9 {
                return Err(invalid("correlation matrix needs a unit diagonal"));
            }
            for j in 0..i {
                if libm::fabs(self.corr[i * d + j] - self.corr[j * d + i]) > 1e-9 {
                    return Err(invalid("correlation matrix must be symmetric"));
                }
            }
        }
        cholesky_psd(&self.corr, d)?;
        Ok(())
    }

    /// Maximum information used for information fractions.
    pub fn i_max(&self) -> f64 {
        self.info_decision[self.k_stages - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignBoundaries {
    /// Efficacy boundaries at interims `1..K-1`.
    pub u: Vec<f64>,
    /// Futility boundaries at interims `1..K-1`.
    pub l: Vec<f64>,
    /// Critical values at decisions `1..K`.
    pub c: Vec<f64>,
    /// Information fractions `I_k / I_max` at the interims.
    pub info_fraction: Vec<f64>,
    /// Type I error spent per stage (`K` entries, the last is the remainder).
    pub type_i_spent: Vec<f64>,
    /// Type II error spent per stage (`K` entries, the last is the remainder).
    pub type_ii_spent: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { n_draws: 50_000, seed: 20_200_101 }
    }
}

/// Bisection for a monotone function; `increasing` tells the direction.
fn bisect(mut lo: f64, mut hi: f64, target: f64, increasing: bool, mut f: impl FnMut(f64) -> f64) -> f64 {
    for _ in 0..MAX_BISECT {
        let mid = 0.5 * (lo + hi);
        let above = f(mid) > target;
        if above == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < BISECT_TOL {
            break;
        }
    }
    0.5 * (lo + hi)
}

struct Region {
    coords: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

fn prefix_cache(model: &JointStatisticModel, region: &Region, last: usize, effect: f64, opts: &SolverOptions, salt: u64) -> Result<PrefixCache> {
    let d_full = model.dim();
    let mut idx = region.coords.clone();
    idx.push(last);
    let d = idx.len();
    let mut sub = vec![0.0; d * d];
    for (i, &a) in idx.iter().enumerate() {
        for (j, &b) in idx.iter().enumerate() {
            sub[i * d + j] = model.corr[a * d_full + b];
        }
    }
    let chol = cholesky_psd(&sub, d)?;
    let mean: Vec<f64> = idx.iter().map(|&i| effect * model.drift[i]).collect();
    PrefixCache::new(&chol, d, &mean, &region.lower, &region.upper, opts.n_draws, opts.seed.wrapping_add(salt))
}

/// Solves the efficacy, futility and critical values stage by stage.
pub fn solve_boundaries(model: &JointStatisticModel, spec: &ErrorSpendingSpec, opts: &SolverOptions) -> Result<DesignBoundaries> {
    spec.validate()?;
    model.validate()?;
    if model.k_stages != spec.k_stages {
        return Err(invalid(format!("model has {} stages but the spec has {}", model.k_stages, spec.k_stages)));
    }
    let k = spec.k_stages;
    let i_max = spec.i_max.unwrap_or_else(|| model.i_max());
    let inf = f64::INFINITY;
    let mut b = DesignBoundaries {
        u: Vec::with_capacity(k - 1),
        l: Vec::with_capacity(k - 1),
        c: Vec::with_capacity(k),
        info_fraction: model.info_interim.iter().map(|i| i / i_max).collect(),
        type_i_spent: Vec::with_capacity(k),
        type_ii_spent: Vec::with_capacity(k),
    };
    let mut region = Region { coords: Vec::new(), lower: Vec::new(), upper: Vec::new() };
    let (mut f_prev, mut g_prev) = (0.0, 0.0);
    for stage in 1..k {
        let t = b.info_fraction[stage - 1];
        let (f_t, g_t) = (spec.f.eval(t), spec.g.eval(t));
        let (df, dg) = (f_t - f_prev, g_t - g_prev);
        let s_idx = model.interim_index(stage);
        let salt = 16 * stage as u64;

        let null = prefix_cache(model, &region, s_idx, 0.0, opts, salt)?;
        let avail = null.prob(-BOUND, inf).0;
        if df >= avail {
            return Err(Error::InfeasibleDesign(format!("Type I spending {df:.3e} at stage {stage} exceeds the available {avail:.3e}")));
        }
        let u = bisect(-BOUND, BOUND, df, false, |x| null.prob(x, inf).0);

        let alt = prefix_cache(model, &region, s_idx, spec.delta_alt, opts, salt + 1)?;
        let avail = alt.prob(-inf, BOUND).0;
        if dg >= avail {
            return Err(Error::InfeasibleDesign(format!("Type II spending {dg:.3e} at stage {stage} exceeds the available {avail:.3e}")));
        }
        let l = bisect(-BOUND, BOUND, dg, true, |x| alt.prob(-inf, x).0);
        if l >= u {
            return Err(Error::DesignSaturated { stage, lower: l, upper: u });
        }

        // balance the two ways of a decision contradicting its interim
        let d_idx = model.decision_index(stage);
        let mut eff = Region { coords: region.coords.clone(), lower: region.lower.clone(), upper: region.upper.clone() };
        eff.coords.push(s_idx);
        eff.lower.push(u);
        eff.upper.push(inf);
        let mut fut = Region { coords: region.coords.clone(), lower: region.lower.clone(), upper: region.upper.clone() };
        fut.coords.push(s_idx);
        fut.lower.push(-inf);
        fut.upper.push(l);
        let eff_cache = prefix_cache(model, &eff, d_idx, 0.0, opts, salt + 2)?;
        let fut_cache = prefix_cache(model, &fut, d_idx, 0.0, opts, salt + 3)?;
        let c = bisect(-BOUND, BOUND, 0.0, true, |x| eff_cache.prob(-inf, x).0 - fut_cache.prob(x, inf).0);

        b.u.push(u);
        b.l.push(l);
        b.c.push(c);
        b.type_i_spent.push(df);
        b.type_ii_spent.push(dg);
        region.coords.push(s_idx);
        region.lower.push(l);
        region.upper.push(u);
        f_prev = f_t;
        g_prev = g_t;
    }
    let remaining = spec.alpha - f_prev;
    let last = prefix_cache(model, &region, model.decision_index(k), 0.0, opts, 16 * k as u64)?;
    let avail = last.prob(-BOUND, inf).0;
    if remaining >= avail || remaining <= 0.0 {
        return Err(Error::InfeasibleDesign(format!("final Type I error {remaining:.3e} cannot be spent (available {avail:.3e})")));
    }
    b.c.push(bisect(-BOUND, BOUND, remaining, false, |x| last.prob(x, inf).0));
    b.type_i_spent.push(remaining);
    b.type_ii_spent.push(spec.beta - g_prev);
    for stage in 1..k {
        let s = model.scale[model.interim_index(stage)];
        b.u[stage - 1] *= s;
        b.l[stage - 1] *= s;
    }
    for stage in 1..=k {
        b.c[stage - 1] *= model.scale[model.decision_index(stage)];
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::norm_quantile;

    #[test]
    fn first_stage_reduces_to_quantiles() {
        // info fraction 0.2 and drift sqrt(I_1) * delta = 1
        let delta = 0.122;
        let i1 = 1.0 / (delta * delta);
        let model = JointStatisticModel::canonical(&[i1], &[i1, 5.0 * i1]).unwrap();
        let spec = ErrorSpendingSpec { k_stages: 2, ..Default::default() };
        let b = solve_boundaries(&model, &spec, &SolverOptions::default()).unwrap();
        assert!((b.u[0] - norm_quantile(0.999)).abs() < 1e-6, "{}", b.u[0]);
        assert!((b.u[0] - 3.0902).abs() < 0.01);
        assert!((b.l[0] - (1.0 + norm_quantile(0.008))).abs() < 1e-6, "{}", b.l[0]);
        assert!((b.l[0] + 1.4089).abs() < 0.01);
    }

    #[test]
    fn canonical_five_stage_design_is_monotone() {
        let unit: Vec<f64> = (1..=5).map(|k| 100.0 * k as f64).collect();
        let model = JointStatisticModel::canonical(&unit[..4], &unit).unwrap();
        let spec = ErrorSpendingSpec { delta_alt: 0.15, ..Default::default() };
        let b = solve_boundaries(&model, &spec, &SolverOptions::default()).unwrap();
        assert!(b.u.windows(2).all(|w| w[0] >= w[1]), "{:?}", b.u);
        assert!(b.l.iter().zip(&b.u).all(|(l, u)| l < u));
        let total: f64 = b.type_i_spent.iter().sum();
        assert!((total - 0.025).abs() < 1e-12);
    }

    #[test]
    fn overpowered_design_is_rejected() {
        let unit: Vec<f64> = (1..=5).map(|k| 2000.0 * k as f64).collect();
        let model = JointStatisticModel::canonical(&unit[..4], &unit).unwrap();
        let err = solve_boundaries(&model, &ErrorSpendingSpec::default(), &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DesignSaturated { .. } | Error::InfeasibleDesign(_)), "{err:?}");
    }
}
