use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use qber_risk::risk::{
    eve_detection_bound, risk_loss_gamma, risk_measure, risk_reduction_rate, risk_reference, sample_risk_weights,
    RiskWeightSpec,
};

/// Mean of `clamp(X, 0, 1)` for `X ~ N(m, m)` by Simpson quadrature over
/// `[0, 1]` plus the point mass at 1.
fn clamped_normal_mean(m: f64) -> f64 {
    let pdf = |x: f64| (-(x - m).powi(2) / (2.0 * m * m)).exp() / (m * (2.0 * std::f64::consts::PI).sqrt());
    let steps = 2000;
    let h = 1.0 / steps as f64;
    let mut acc = 0.0 + pdf(1.0);
    let mut mass = pdf(0.0) + pdf(1.0);
    for i in 1..steps {
        let x = i as f64 * h;
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * x * pdf(x);
        mass += w * pdf(x);
    }
    let inner = acc * h / 3.0;
    let below_one = mass * h / 3.0 + 0.5 * (1.0 + libm_erf(-1.0 / std::f64::consts::SQRT_2));
    inner + (1.0 - below_one)
}

/// erf by its Taylor series; adequate for |x| < 3.
fn libm_erf(x: f64) -> f64 {
    let (mut sum, mut term, mut k) = (0.0, x, 0.0);
    while term.abs() > 1e-17 {
        sum += term / (2.0 * k + 1.0);
        k += 1.0;
        term *= -x * x / k;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

#[test]
fn weights_match_clamped_normal_oracle() {
    let spec = RiskWeightSpec::default();
    let w = sample_risk_weights(200_000, &spec, 3);
    let empirical = w.iter().sum::<f64>() / w.len() as f64;
    // Average the oracle over m ~ U[0.5, 1].
    let steps = 200;
    let mut acc = 0.0;
    for i in 0..=steps {
        let m = 0.5 + 0.5 * i as f64 / steps as f64;
        let c = if i == 0 || i == steps { 0.5 } else { 1.0 };
        acc += c * clamped_normal_mean(m);
    }
    let want = acc / steps as f64;
    assert_abs_diff_eq!(empirical, want, epsilon = 2e-3);
    assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
}

#[test]
fn reference_peaks_at_half() {
    assert_abs_diff_eq!(risk_reference(&[0.5; 7]), 0.25, epsilon = 1e-12);
    assert_eq!(risk_reduction_rate(0.5).percent, 50.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn gamma_is_a_probability(de in 0.0f64..=1.0, dv in 0.0f64..=1.0, pv in 0.0f64..=1.0,
                              pr in 0.0f64..=1.0, fit in 0.0f64..=1.0) {
        let g = risk_loss_gamma(de, dv, pv, pr, fit);
        prop_assert!((0.0..=1.0 + 1e-15).contains(&g), "gamma = {}", g);
    }

    #[test]
    fn reference_never_exceeds_quarter(gamma in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
        prop_assert!(risk_reference(&gamma) <= 0.25);
    }

    #[test]
    fn measure_is_bounded_by_mean_gamma(gamma in proptest::collection::vec(0.0f64..=1.0, 1..64), h in 0.0f64..=1.0) {
        let weights = vec![h; gamma.len()];
        let r = risk_measure(&gamma, &weights).unwrap();
        let mean = gamma.iter().sum::<f64>() / gamma.len() as f64;
        prop_assert!(r <= mean + 1e-15);
    }

    #[test]
    fn beta_is_gamma_in_percent(g in 0.0f64..=1.0) {
        prop_assert_eq!(risk_reduction_rate(g).percent, g * 100.0);
    }

    /// The counting bound that does hold: windows at least `varphi` away
    /// from their gate are at most `tau_upper` of the total.
    #[test]
    fn markov_bound_on_far_windows(etas in proptest::collection::vec(0.0f64..=1.0, 1..50),
                                   alpha in 0.0f64..=0.01, varphi in 1e-4f64..0.1) {
        let gates = vec![alpha; etas.len()];
        let b = eve_detection_bound(&etas, &gates, 0.95, varphi).unwrap();
        let far = etas.iter().filter(|&&e| (e - alpha).abs() >= varphi).count() as f64 / etas.len() as f64;
        prop_assert!(far <= b.tau_upper + 1e-12);
        prop_assert!(b.psi_lower >= 0.975 - 1e-15 && b.psi_lower <= 1.0);
    }
}
