use gst_core::glm::{fit_logistic, Design};
use proptest::prelude::*;

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

proptest! {
    #[test]
    fn intercept_only_reproduces_weighted_mean(
        data in prop::collection::vec((0.0f64..=1.0, 0.1f64..3.0), 2..40)
    ) {
        let y: Vec<f64> = data.iter().map(|d| d.0).collect();
        let w: Vec<f64> = data.iter().map(|d| d.1).collect();
        let mean = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        prop_assume!(mean > 0.01 && mean < 0.99);
        let fit = fit_logistic(&Design::intercept_only(y.len()), &y, &w, None).unwrap();
        prop_assert!(fit.converged);
        prop_assert!((expit(fit.coefficients[0]) - mean).abs() < 1e-8);
    }

    #[test]
    fn score_vanishes_without_clipping(
        data in prop::collection::vec((-2.0f64..2.0, 0u8..2, 0.2f64..2.0), 10..60)
    ) {
        let rows: Vec<[f64; 1]> = data.iter().map(|d| [d.0]).collect();
        let y: Vec<f64> = data.iter().map(|d| d.1 as f64).collect();
        let w: Vec<f64> = data.iter().map(|d| d.2).collect();
        let x = Design::with_intercept(rows.iter().map(|r| &r[..]), 1);
        let fit = fit_logistic(&x, &y, &w, None).unwrap();
        prop_assume!(!fit.clipped);
        prop_assert!(fit.converged);
        let mut s = [0.0; 2];
        for i in 0..y.len() {
            let p = expit(fit.coefficients[0] + fit.coefficients[1] * rows[i][0]);
            s[0] += w[i] * (y[i] - p);
            s[1] += w[i] * (y[i] - p) * rows[i][0];
        }
        prop_assert!(s[0].abs() < 1e-6 && s[1].abs() < 1e-6, "{:?}", s);
    }
}
