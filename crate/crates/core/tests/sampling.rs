use jbridge::levy::positive_stable;
use jbridge::moments::stationary_moments;
use jbridge::rng::path_stream;
use jbridge::sde::free_run;
use jbridge::{BridgeModel, LevyMeasure};
use proptest::prelude::*;
use statrs::function::gamma::gamma;

/// Sample mean and variance of `n` increments.
fn sample_stats(measure: &LevyMeasure, dt: f64, scale: f64, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = path_stream(seed, 0);
    let draws: Vec<f64> = (0..n).map(|_| measure.sample_increment(dt, scale, &mut rng)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

/// `(M1, M2, M4)` of `c·e^{−βz}·z^{−1−α}`.
fn tempered_moments(c: f64, beta: f64, alpha: f64) -> (f64, f64, f64) {
    let m = |k: f64| c * gamma(k - alpha) * beta.powf(alpha - k);
    (m(1.0), m(2.0), m(4.0))
}

#[test]
fn tempered_stable_increments_have_the_levy_cumulants() {
    let n = 400_000;
    for &(c, beta, alpha, dt) in &[(3.23, 0.031, 0.87, 1e-3), (1.0, 2.0, 0.3, 1e-2), (5.0, 1.0, 0.6, 1e-3)] {
        let driver = LevyMeasure::tempered_stable(c, beta, alpha).unwrap();
        let (m1, m2, m4) = tempered_moments(c, beta, alpha);
        let (mean, var) = sample_stats(&driver, dt, 1.0, n, 5);
        let (k2, k4) = (m2 * dt, m4 * dt);
        let z_mean = (mean - m1 * dt).abs() / (k2 / n as f64).sqrt();
        let z_var = (var - k2).abs() / ((k4 + 2.0 * k2 * k2) / n as f64).sqrt();
        assert!(z_mean < 4.0, "α={alpha}: mean z {z_mean}");
        assert!(z_var < 4.0, "α={alpha}: variance z {z_var}");
    }
}

#[test]
fn intensity_scale_multiplies_the_cumulants() {
    let driver = LevyMeasure::exp_cp(20.0, 5.0).unwrap();
    let (dt, scale, n) = (1e-2, 2.5, 400_000);
    let moments = driver.moments().unwrap();
    let (mean, var) = sample_stats(&driver, dt, scale, n, 6);
    let k2 = scale * moments.m2 * dt;
    assert!((mean - scale * moments.m1 * dt).abs() < 4.0 * (k2 / n as f64).sqrt());
    let k4 = scale * driver.raw_moment(4) * dt;
    assert!((var - k2).abs() < 4.0 * ((k4 + 2.0 * k2 * k2) / n as f64).sqrt());
}

#[test]
fn closed_form_moments_match_quadrature() {
    for driver in [
        LevyMeasure::exp_cp(2.0, 50.0).unwrap(),
        LevyMeasure::tempered_stable(3.23, 0.031, 0.87).unwrap(),
        LevyMeasure::tempered_stable(0.5, 4.0, 0.2).unwrap(),
    ] {
        for k in 1..=3 {
            let closed = driver.raw_moment(k);
            let quad = driver.moment_by_quadrature(k).unwrap();
            assert!((closed - quad).abs() <= 1e-10 * closed, "k={k}: {closed} vs {quad}");
        }
    }
}

#[test]
fn positive_stable_laplace_transform() {
    // E[exp(−S)] = exp(−1) for the standard one-sided stable law used here.
    let mut rng = path_stream(7, 0);
    for &alpha in &[0.3, 0.7, 0.95] {
        let n = 200_000;
        let mean = (0..n).map(|_| (-positive_stable(alpha, &mut rng)).exp()).sum::<f64>() / n as f64;
        assert!((mean - (-1.0f64).exp()).abs() < 4.0 * 0.5 / (n as f64).sqrt(), "α={alpha}: {mean}");
    }
}

#[test]
fn stationary_moments_match_a_long_free_run() {
    let driver = LevyMeasure::exp_cp(20.0, 5.0).unwrap();
    let model = BridgeModel::new(2.0, 0.5, 0.5, 0.0, driver).unwrap();
    let target = stationary_moments(&model).unwrap();
    let start = BridgeModel::new(2.0, 0.5, target.mean, 0.0, driver).unwrap();
    let mut rng = path_stream(11, 0);
    let xs = free_run(&start, 1e-3, 500, 200_000, &mut rng).unwrap();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let third = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    assert!((mean / target.mean - 1.0).abs() < 0.02, "{mean} vs {}", target.mean);
    assert!((var / target.variance() - 1.0).abs() < 0.04, "{var} vs {}", target.variance());
    assert!(
        (third / target.third_central() - 1.0).abs() < 0.10,
        "{third} vs {}",
        target.third_central()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn increments_are_nonnegative(seed in 0u64..1_000, alpha in 0.05f64..0.95, scale in 0.0f64..5.0) {
        let ts = LevyMeasure::tempered_stable(2.0, 0.5, alpha).unwrap();
        let cp = LevyMeasure::exp_cp(3.0, 2.0).unwrap();
        let mut rng = path_stream(seed, 1);
        for _ in 0..50 {
            prop_assert!(ts.sample_increment(1e-3, scale, &mut rng) >= 0.0);
            prop_assert!(cp.sample_increment(1e-3, scale, &mut rng) >= 0.0);
        }
    }

    #[test]
    fn same_stream_same_draws(seed in any::<u64>(), id in any::<u64>()) {
        let d = LevyMeasure::tempered_stable(1.0, 1.0, 0.5).unwrap();
        let mut a = path_stream(seed, id);
        let mut b = path_stream(seed, id);
        for _ in 0..10 {
            prop_assert_eq!(d.sample_increment(0.01, 1.0, &mut a), d.sample_increment(0.01, 1.0, &mut b));
        }
    }
}
