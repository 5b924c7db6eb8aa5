//! Rectangle probabilities of the multivariate normal distribution by
//! Genz's separation of variables with randomly shifted Richtmyer lattices.
//!
//! The last coordinate is integrated in closed form, so a probability whose
//! only varying bound is on the last coordinate can be re-evaluated cheaply
//! ([`PrefixCache`]); this is what the boundary bisections use.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{norm_cdf, norm_quantile};
use crate::rng::{self, domain};

const N_SHIFTS: usize = 10;
const PIVOT_EPS: f64 = 1e-12;
const PRIMES: [f64; 24] = [2., 3., 5., 7., 11., 13., 17., 19., 23., 29., 31., 37., 41., 43., 47., 53., 59., 61., 67., 71., 73., 79., 83., 89.];

/// Lower Cholesky factor of a positive semidefinite matrix; columns with a
/// vanishing pivot are set to zero.
pub fn cholesky_psd(a: &[f64], d: usize) -> Result<Vec<f64>> {
    if a.len() != d * d {
        return Err(invalid("matrix size mismatch"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance matrix"));
    }
    for jitter in [0.0, 1e-10] {
        if let Some(l) = try_cholesky(a, d, jitter) {
            return Ok(l);
        }
    }
    Err(Error::NotPositiveSemidefinite)
}

fn try_cholesky(a: &[f64], d: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut s = a[j * d + j] + jitter;
        for k in 0..j {
            s -= l[j * d + k] * l[j * d + k];
        }
        let scale = libm::fabs(a[j * d + j]).max(1.0);
        if s < -1e-9 * scale {
            return None;
        }
        if s <= PIVOT_EPS * scale {
            continue;
        }
        let piv = libm::sqrt(s);
        l[j * d + j] = piv;
        for i in j + 1..d {
            let mut t = a[i * d + j];
            for k in 0..j {
                t -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = t / piv;
        }
    }
    Some(l)
}

/// Prefix weights and conditional moments of the last coordinate at every
/// quasi-random point.
#[derive(Debug, Clone)]
pub struct PrefixCache {
    weight: Vec<f64>,
    cond_mean: Vec<f64>,
    cond_sd: f64,
    per_shift: usize,
}

impl PrefixCache {
    /// `lower`/`upper` bound the first `d - 1` coordinates; the last one is left free.
    pub fn new(chol: &[f64], d: usize, mean: &[f64], lower: &[f64], upper: &[f64], n_draws: usize, seed: u64) -> Result<Self> {
        if d == 0 || mean.len() != d || lower.len() + 1 != d || upper.len() + 1 != d {
            return Err(invalid("dimension mismatch in rectangle probability"));
        }
        if lower.iter().zip(upper).any(|(a, b)| a.is_nan() || b.is_nan() || a > b) || mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("invalid rectangle bounds"));
        }
        let last = d - 1;
        let cond_sd = chol[last * d + last];
        if last == 0 {
            return Ok(Self { weight: vec![1.0], cond_mean: vec![mean[0]], cond_sd, per_shift: 1 });
        }
        let per_shift = n_draws.div_ceil(N_SHIFTS).max(1);
        let total = per_shift * N_SHIFTS;
        let mut weight = Vec::with_capacity(total);
        let mut cond_mean = Vec::with_capacity(total);
        let alpha: Vec<f64> = (0..last).map(|j| frac(libm::sqrt(PRIMES[j % PRIMES.len()]) * (1 + j / PRIMES.len()) as f64)).collect();
        let mut z = vec![0.0; last];
        for s in 0..N_SHIFTS {
            let mut r = rng::stream(seed, domain::MVN, s as u64);
            let shift: Vec<f64> = (0..last).map(|_| rng::uniform(&mut r)).collect();
            for i in 0..per_shift {
                let mut f = 1.0;
                for j in 0..last {
                    let mu = mean[j] + (0..j).map(|k| chol[j * d + k] * z[k]).sum::<f64>();
                    let piv = chol[j * d + j];
                    if piv == 0.0 {
                        if mu < lower[j] || mu > upper[j] {
                            f = 0.0;
                            break;
                        }
                        z[j] = 0.0;
                        continue;
                    }
                    let lo = norm_cdf((lower[j] - mu) / piv);
                    let hi = norm_cdf((upper[j] - mu) / piv);
                    f *= hi - lo;
                    if f <= 0.0 {
                        f = 0.0;
                        break;
                    }
                    // tent-transformed lattice coordinate
                    let u = frac((i + 1) as f64 * alpha[j] + shift[j]);
                    let w = libm::fabs(2.0 * u - 1.0);
                    let p = (lo + w * (hi - lo)).clamp(1e-300, 1.0 - 1e-16);
                    z[j] = norm_quantile(p);
                }
                let m = if f > 0.0 { mean[last] + (0..last).map(|k| chol[last * d + k] * z[k]).sum::<f64>() } else { 0.0 };
                weight.push(f);
                cond_mean.push(m);
            }
        }
        Ok(Self { weight, cond_mean, cond_sd, per_shift })
    }

    /// Probability that the prefix holds and the last coordinate lies in `[a, b]`,
    /// with the standard error across random shifts.
    pub fn prob(&self, a: f64, b: f64) -> (f64, f64) {
        let n_shift = self.weight.len() / self.per_shift;
        let mut est = [0.0; N_SHIFTS];
        for (s, e) in est.iter_mut().enumerate().take(n_shift) {
            let mut acc = 0.0;
            for i in s * self.per_shift..(s + 1) * self.per_shift {
                let f = self.weight[i];
                if f == 0.0 {
                    continue;
                }
                let m = self.cond_mean[i];
                acc += f * if self.cond_sd > 0.0 {
                    norm_cdf((b - m) / self.cond_sd) - norm_cdf((a - m) / self.cond_sd)
                } else {
                    (m >= a && m <= b) as u8 as f64
                };
            }
            *e = acc / self.per_shift as f64;
        }
        let est = &est[..n_shift];
        let mean = est.iter().sum::<f64>() / n_shift as f64;
        if n_shift < 2 {
            return (mean, 0.0);
        }
        let var = est.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / ((n_shift - 1) * n_shift) as f64;
        (mean, libm::sqrt(var))
    }
}

#[inline]
fn frac(x: f64) -> f64 {
    x - libm::floor(x)
}

/// `P(lower <= X <= upper)` for `X ~ N(mean, corr)`; returns the estimate and its standard error.
pub fn mvn_rect_prob(corr: &[f64], mean: &[f64], lower: &[f64], upper: &[f64], n_draws: usize, seed: u64) -> Result<(f64, f64)> {
    let d = mean.len();
    if d == 0 || lower.len() != d || upper.len() != d || corr.len() != d * d {
        return Err(invalid("dimension mismatch in rectangle probability"));
    }
    let chol = cholesky_psd(corr, d)?;
    let cache = PrefixCache::new(&chol, d, mean, &lower[..d - 1], &upper[..d - 1], n_draws, seed)?;
    if lower[d - 1] > upper[d - 1] {
        return Err(invalid("invalid rectangle bounds"));
    }
    Ok(cache.prob(lower[d - 1], upper[d - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn univariate_tail() {
        let (p, se) = mvn_rect_prob(&[1.0], &[0.0], &[1.959964], &[INF], 1000, 1).unwrap();
        assert!((p - 0.025).abs() < 1e-6 && se == 0.0);
    }

    #[test]
    fn independent_orthant() {
        let (p, _) = mvn_rect_prob(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], &[INF, INF], 20_000, 2).unwrap();
        assert!((p - 0.25).abs() < 1e-9);
    }

    #[test]
    fn correlated_orthant_matches_arcsine() {
        let (p, se) = mvn_rect_prob(&[1.0, 0.5, 0.5, 1.0], &[0.0, 0.0], &[0.0, 0.0], &[INF, INF], 50_000, 3).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-4 && se < 1e-4, "{p} {se}");
    }

    #[test]
    fn degenerate_coordinate_is_an_indicator() {
        // X2 = X1 exactly
        let (p, _) = mvn_rect_prob(&[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0], &[1.0, -INF], &[INF, 0.5], 20_000, 4).unwrap();
        assert!(p.abs() < 1e-12);
        let (p, _) = mvn_rect_prob(&[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0], &[1.0, 0.5], &[INF, INF], 20_000, 4).unwrap();
        assert!((p - norm_cdf(-1.0)).abs() < 1e-3);
    }

    #[test]
    fn rejects_indefinite() {
        assert_eq!(mvn_rect_prob(&[1.0, 2.0, 2.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], &[INF, INF], 100, 1), Err(Error::NotPositiveSemidefinite));
    }

    #[test]
    fn same_seed_same_answer() {
        let c = [1.0, 0.3, 0.2, 0.3, 1.0, 0.6, 0.2, 0.6, 1.0];
        let a = mvn_rect_prob(&c, &[0.1, 0.0, -0.2], &[-1.0, -0.5, 0.0], &[2.0, INF, 1.0], 5_000, 9).unwrap();
        let b = mvn_rect_prob(&c, &[0.1, 0.0, -0.2], &[-1.0, -0.5, 0.0], &[2.0, INF, 1.0], 5_000, 9).unwrap();
        assert_eq!(a, b);
    }
}
