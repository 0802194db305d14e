use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use qber_risk::gmm::{aic, em_fit, free_parameters, normal_sf, EmInit, GmmModel};

/// Complementary error function by its Taylor series for small arguments and
/// the Laplace continued fraction otherwise; independent of the library.
fn erfc_oracle(x: f64) -> f64 {
    if x < 2.5 {
        // erf(x) = 2/sqrt(pi) * sum (-1)^k x^(2k+1) / (k! (2k+1))
        let mut sum = 0.0;
        let mut term = x;
        let mut k = 0.0;
        while term.abs() > 1e-18 {
            sum += term / (2.0 * k + 1.0);
            k += 1.0;
            term *= -x * x / k;
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut frac = x;
        for k in (1..200).rev() {
            frac = x + (k as f64 / 2.0) / frac;
        }
        (-x * x).exp() / std::f64::consts::PI.sqrt() / frac
    }
}

fn phi_bar_oracle(z: f64) -> f64 {
    0.5 * erfc_oracle(z / std::f64::consts::SQRT_2)
}

#[test]
fn normal_tail_matches_series_oracle() {
    for &z in &[-3.0, -1.0, 0.0, 0.5, 1.0, 2.0, 3.0, 4.5, 6.0] {
        let want = if z < 0.0 {
            1.0 - phi_bar_oracle(-z)
        } else {
            phi_bar_oracle(z)
        };
        let got = normal_sf(z);
        assert!(
            (got - want).abs() <= 1e-15 + 1e-13 * want.abs(),
            "z = {z}: {got} vs {want}"
        );
    }
    assert_abs_diff_eq!(phi_bar_oracle(6.0), 9.865_876_450_377e-10, epsilon = 1e-20);
}

#[test]
fn confidence_scaled_tail_at_one_sigma() {
    let m = GmmModel::normal(0.0, 1.0).unwrap();
    let want = 0.95 * phi_bar_oracle(1.0);
    assert_abs_diff_eq!(0.95 * m.tail(1.0), want, epsilon = 1e-12);
    assert_abs_diff_eq!(want, 0.1507, epsilon = 1e-4);
}

#[test]
fn pdf_integrates_to_one() {
    let m = GmmModel::new(vec![0.2, 0.5, 0.3], vec![0.01, 0.02, 0.05], vec![1e-5, 4e-6, 2.5e-5]).unwrap();
    // Composite Simpson over +-12 sd of the widest component.
    let (a, b, steps) = (-0.06, 0.12, 20_000);
    let h = (b - a) / steps as f64;
    let mut acc = m.pdf(a) + m.pdf(b);
    for i in 1..steps {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * m.pdf(a + i as f64 * h);
    }
    assert_abs_diff_eq!(acc * h / 3.0, 1.0, epsilon = 1e-9);
}

#[test]
fn tail_matches_pdf_quadrature() {
    let m = GmmModel::new(vec![0.6, 0.4], vec![0.02, 0.03], vec![9e-6, 1.6e-5]).unwrap();
    let (t, b, steps) = (0.025, 0.1, 20_000);
    let h = (b - t) / steps as f64;
    let mut acc = m.pdf(t) + m.pdf(b);
    for i in 1..steps {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * m.pdf(t + i as f64 * h);
    }
    assert_abs_diff_eq!(m.tail(t), acc * h / 3.0, epsilon = 1e-9);
}

#[test]
fn single_component_recovers_moments() {
    let truth = GmmModel::normal(0.02, 9e-6).unwrap();
    let data = truth.sample(20_000, 11);
    let (fit, _) = em_fit(&data, 1, &EmInit::Seed(1), 100).unwrap();
    assert_abs_diff_eq!(fit.means()[0], 0.02, epsilon = 1e-4);
    assert!((fit.variances()[0] / 9e-6 - 1.0).abs() < 0.05);
}

#[test]
fn two_component_recovery() {
    let truth = GmmModel::new(vec![0.3, 0.7], vec![0.01, 0.03], vec![4e-6, 4e-6]).unwrap();
    let data = truth.sample(20_000, 12);
    let (fit, trace) = em_fit(&data, 2, &EmInit::Seed(2), 500).unwrap();
    assert!(trace.converged);
    let mut comps: Vec<(f64, f64)> = fit.means().iter().copied().zip(fit.weights().iter().copied()).collect();
    comps.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert_abs_diff_eq!(comps[0].0, 0.01, epsilon = 2e-4);
    assert_abs_diff_eq!(comps[1].0, 0.03, epsilon = 2e-4);
    assert_abs_diff_eq!(comps[0].1, 0.3, epsilon = 0.02);
}

#[test]
fn aic_penalises_parameters() {
    let truth = GmmModel::normal(0.02, 4e-6).unwrap();
    let data = truth.sample(500, 3);
    let ll = truth.log_likelihood(&data);
    assert_abs_diff_eq!(
        aic(&truth, &data),
        2.0 * free_parameters(1) as f64 - 2.0 * ll,
        epsilon = 1e-9
    );
    assert_eq!(free_parameters(4), 11);
}

fn mixture() -> impl Strategy<Value = GmmModel> {
    (1usize..=4)
        .prop_flat_map(|c| {
            (
                proptest::collection::vec(0.1f64..1.0, c),
                proptest::collection::vec(0.0f64..0.1, c),
                proptest::collection::vec(1e-6f64..1e-4, c),
            )
        })
        .prop_map(|(w, m, v)| {
            let s: f64 = w.iter().sum();
            GmmModel::new(w.iter().map(|x| x / s).collect(), m, v).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn em_log_likelihood_never_decreases(truth in mixture(), c in 1usize..=5, seed in any::<u64>()) {
        let data = truth.sample(300, seed);
        let (_, trace) = em_fit(&data, c, &EmInit::Seed(seed ^ 1), 100).unwrap();
        prop_assert!(trace.max_decrease() <= 1e-8, "decrease {}", trace.max_decrease());
    }

    #[test]
    fn fitted_weights_are_a_distribution(truth in mixture(), c in 1usize..=5, seed in any::<u64>()) {
        let data = truth.sample(200, seed);
        let (fit, _) = em_fit(&data, c, &EmInit::Seed(seed), 50).unwrap();
        let s: f64 = fit.weights().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
        prop_assert!(fit.variances().iter().all(|&v| v >= 1e-10));
    }

    #[test]
    fn tail_is_monotone(m in mixture(), a in -0.05f64..0.15, b in -0.05f64..0.15) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(m.tail(lo) >= m.tail(hi));
        prop_assert!((0.0..=1.0).contains(&m.tail(lo)));
    }

    #[test]
    fn sampling_is_seed_deterministic(m in mixture(), seed in any::<u64>()) {
        prop_assert_eq!(m.sample(50, seed), m.sample(50, seed));
    }
}
