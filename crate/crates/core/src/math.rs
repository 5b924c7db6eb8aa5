//! Scalar numerics: normal distribution functions and logistic links.

use core::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `P(Z > x)` without cancellation.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI)
}

/// Inverse standard normal CDF (Wichura's AS 241, about 1e-16 relative accuracy).
///
/// Returns `-inf` / `+inf` at 0 and 1 and NaN outside `[0, 1]`.
pub fn norm_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if libm::fabs(q) <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
                + 67265.770_927_008_7)
                * r
                + 45921.953_931_549_87)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545 * r + 28729.085_735_721_943) * r
                + 39307.895_800_092_71)
                * r
                + 21213.794_301_586_597)
                * r
                + 5394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_91)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = libm::sqrt(-libm::log(r));
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

/// Weighted mean and (population-moment) variance.
pub fn weighted_mean_var(values: impl IntoIterator<Item = (f64, f64)>) -> (f64, f64) {
    let mut sw = 0.0;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (x, w) in values {
        if w == 0.0 {
            continue;
        }
        sw += w;
        let d = x - mean;
        mean += d * w / sw;
        m2 += w * d * (x - mean);
    }
    if sw == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    (mean, (m2 / sw).max(0.0))
}

/// Mean and population-moment variance of a slice.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    weighted_mean_var(values.iter().map(|&x| (x, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_matches_known_values() {
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((norm_quantile(0.999) - 3.090_232_306_167_813_5).abs() < 1e-12);
        assert!((norm_quantile(0.008) + 2.408_915_545_815_28).abs() < 1e-9);
        assert!((norm_quantile(1e-12) + 7.034_483_825_301_131).abs() < 1e-9);
        assert_eq!(norm_quantile(0.5), 0.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let x = norm_quantile(p);
            assert!((norm_cdf(x) - p).abs() < 1e-14, "p = {p}");
        }
    }

    #[test]
    fn expit_logit_roundtrip() {
        for &x in &[-30.0, -3.0, 0.0, 0.7, 12.0] {
            assert!((logit(expit(x)) - x).abs() < 1e-6 * (1.0 + libm::fabs(x)));
        }
        assert_eq!(expit(0.0), 0.5);
    }

    #[test]
    fn weighted_moments() {
        let (m, v) = weighted_mean_var([(1.0, 1.0), (0.0, 1.0), (1.0, 2.0)]);
        assert!((m - 0.75).abs() < 1e-15);
        assert!((v - 0.1875).abs() < 1e-15);
    }
}
