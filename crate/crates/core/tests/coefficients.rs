use approx::assert_relative_eq;
use jbridge::coefficients::{
    closed_form_mean, integrating_factor, kernels, limit_a, limit_b, FiniteFCoefficients, Feedback,
};
use jbridge::moments::ou_bridge_moments;
use jbridge::{BridgeModel, LevyMeasure};
use proptest::prelude::*;
use quadrature::double_exponential::integrate;

/// Backward RK4 of `A' = A² + 2ρA`, `B' = (ρ + A)B − κA` from `t = 1` to `t`.
fn rk4(rho: f64, kappa: f64, x_hat: f64, f: f64, t: f64, steps: usize) -> (f64, f64) {
    let h = (1.0 - t) / steps as f64;
    let rhs = |a: f64, b: f64| (a * a + 2.0 * rho * a, (rho + a) * b - kappa * a);
    let (mut a, mut b) = (f, -f * x_hat);
    for _ in 0..steps {
        let (k1a, k1b) = rhs(a, b);
        let (k2a, k2b) = rhs(a - 0.5 * h * k1a, b - 0.5 * h * k1b);
        let (k3a, k3b) = rhs(a - 0.5 * h * k2a, b - 0.5 * h * k2b);
        let (k4a, k4b) = rhs(a - h * k3a, b - h * k3b);
        a -= h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
        b -= h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
    }
    (a, b)
}

#[test]
fn finite_penalty_coefficients_solve_the_riccati_pair() {
    for &(rho, kappa, x_hat, f) in &[
        (10.0, 1e-3, 1.0, 100.0),
        (10.0, 0.8, -0.5, 5.0),
        (1.5, 0.2, 2.0, 1e4),
        (15.8, 36.0, 0.3, 0.1),
    ] {
        let c = FiniteFCoefficients::new(rho, kappa, x_hat, f, 0.0, 0.0).unwrap();
        for &t in &[0.0, 0.3, 0.9, 0.999] {
            let (a, b) = rk4(rho, kappa, x_hat, f, t, 200_000);
            assert_relative_eq!(c.a_at(t).unwrap(), a, max_relative = 1e-8);
            assert_relative_eq!(c.b_at(t).unwrap(), b, max_relative = 1e-8, epsilon = 1e-12);
        }
    }
}

#[test]
fn value_constant_satisfies_its_ode() {
    let (m1, m2) = (0.04, 0.0016);
    let c = FiniteFCoefficients::new(10.0, m1, 1.0, 100.0, m1, m2).unwrap();
    assert_relative_eq!(c.c_at(1.0).unwrap(), 50.0);
    let rhs = |s: f64| {
        let (a, b) = c.ab(s).unwrap();
        0.5 * b * b - m1 * b - 0.5 * m2 * a
    };
    for &t in &[0.0, 0.5, 0.9] {
        let integral = integrate(rhs, t, 1.0, 1e-12).integral;
        assert_relative_eq!(c.c_at(t).unwrap(), 50.0 - integral, max_relative = 1e-9);
    }
}

#[test]
fn limit_coefficients_grow_sharply_near_the_end() {
    let (rho, kappa, x_hat) = (10.0, 0.04, 1.0);
    let early = limit_a(rho, 0.1).unwrap();
    let late = limit_a(rho, 0.999).unwrap();
    assert!(early < 1e-6 && late > 900.0);
    let b_early = limit_b(rho, kappa, x_hat, 0.1).unwrap().abs();
    let b_late = limit_b(rho, kappa, x_hat, 0.999).unwrap().abs();
    assert!(b_late > 1e5 * b_early);
    assert!(limit_a(rho, 1.0).is_err());
}

#[test]
fn kernels_match_their_defining_integrals() {
    for &rho in &[0.7, 4.0, 10.0] {
        for &t in &[0.2, 0.6, 0.95] {
            let g = |s: f64| -(-2.0 * rho * (1.0 - s)).exp_m1();
            let i1 = integrate(|s| (2.0 * rho * s).exp() / g(s).powi(2), 0.0, t, 1e-13).integral;
            let i2 = integrate(
                |s| (2.0 * rho * s).exp() * -(-rho * (1.0 - s)).exp_m1() / g(s).powi(2),
                0.0,
                t,
                1e-13,
            )
            .integral;
            let i3 = integrate(|s| (rho * s).exp() / g(s), 0.0, t, 1e-13).integral;
            let k = kernels(rho, t).unwrap();
            assert_relative_eq!(k.i1, i1, max_relative = 1e-10);
            assert_relative_eq!(k.i2, i2, max_relative = 1e-10);
            assert_relative_eq!(k.i3, i3, max_relative = 1e-10);
        }
    }
}

#[test]
fn integrating_factor_matches_quadrature() {
    let rho = 6.0;
    for &(s, t) in &[(0.0, 0.5), (0.2, 0.9), (0.5, 0.99)] {
        let exponent = integrate(|u| rho + limit_a(rho, u).unwrap(), s, t, 1e-13).integral;
        assert_relative_eq!(
            integrating_factor(rho, s, t).unwrap(),
            (-exponent).exp(),
            max_relative = 1e-10
        );
    }
}

#[test]
fn closed_form_mean_tracks_the_moment_ode() {
    let driver = LevyMeasure::exp_cp(20.0, 5.0).unwrap();
    let model = BridgeModel::new(3.0, 0.0, -0.4, 1.2, driver).unwrap();
    let n = 200_000;
    let curves = ou_bridge_moments(&model, n).unwrap();
    for k in (0..curves.len()).step_by(997) {
        let t = curves.grid[k];
        assert!((curves.mean[k] - closed_form_mean(&model, t).unwrap()).abs() < 1e-4);
    }
    assert_relative_eq!(closed_form_mean(&model, 0.0).unwrap(), -0.4, epsilon = 1e-14);
}

proptest! {
    #[test]
    fn limit_a_is_positive_and_increasing(rho in 0.1f64..30.0, t in 0.0f64..0.99) {
        let a = limit_a(rho, t).unwrap();
        prop_assert!(a > 0.0);
        prop_assert!(limit_a(rho, t + 0.005).unwrap() > a);
    }

    #[test]
    fn finite_a_increases_with_penalty(rho in 0.1f64..20.0, t in 0.0f64..0.99, f in 0.01f64..1e4) {
        let lo = FiniteFCoefficients::new(rho, 0.0, 0.0, f, 0.0, 0.0).unwrap().a_at(t).unwrap();
        let hi = FiniteFCoefficients::new(rho, 0.0, 0.0, 2.0 * f, 0.0, 0.0).unwrap().a_at(t).unwrap();
        prop_assert!(hi >= lo);
        prop_assert!(hi <= limit_a(rho, t).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn integrating_factor_lies_in_unit_interval(rho in 0.1f64..20.0, s in 0.0f64..0.5, dt in 0.0f64..0.49) {
        let v = integrating_factor(rho, s, s + dt).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0);
    }
}
