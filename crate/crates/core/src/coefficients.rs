//! Closed-form pieces of the LQ solution on the unit horizon.
//!
//! With `τ = 1 − t`, the finite-penalty Riccati system
//!
//! ```text
//! dA/dt = A² + 2ρA,   dB/dt = (ρ + A)B − κA,   dC/dt = ½B² − M1·B − ½M2·A
//! A(1) = F,           B(1) = −F·x̂,             C(1) = F·x̂²/2
//! ```
//!
//! has, with `q = F/(F + 2ρ)`,
//!
//! ```text
//! A_F = 2ρq / (e^{2ρτ} − q)
//! B_F = (−2ρq·x̂ + 2qκ(1 − e^{−ρτ})) / (e^{ρτ}(1 − q·e^{−2ρτ}))
//! ```
//!
//! and letting `F → ∞` gives the bridge coefficients `A`, `B`. For the plain
//! OU bridge `(ρ, κ) = (r, M1)`; the self-exciting bridge uses `(R, m)`.
//! Every formula is written with `expm1`/`ln_1p` so that it keeps relative
//! accuracy as `τ → 0`.

use crate::error::{ensure_param, Error, Result};
use crate::model::BridgeModel;
use crate::quad;

/// Limit coefficients are refused for `t > 1 − POLE_GUARD`.
pub const POLE_GUARD: f64 = 1e-12;

/// Anything that yields the affine feedback `u = −(A·x + B)`.
pub trait Feedback {
    fn a(&self, t: f64) -> Result<f64>;
    fn b(&self, t: f64) -> Result<f64>;

    fn ab(&self, t: f64) -> Result<(f64, f64)> {
        Ok((self.a(t)?, self.b(t)?))
    }
}

/// `u*(t, x) = −(A(t)·x + B(t))`.
pub fn optimal_control<C: Feedback + ?Sized>(coeffs: &C, t: f64, x: f64) -> Result<f64> {
    let (a, b) = coeffs.ab(t)?;
    Ok(-(a * x + b))
}

fn check_closed_unit(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain {
            t,
            reason: "expected 0 <= t <= 1",
        });
    }
    Ok(())
}

fn check_before_pole(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) || t.is_nan() {
        return Err(Error::Domain {
            t,
            reason: "expected 0 <= t < 1",
        });
    }
    if t > 1.0 - POLE_GUARD {
        return Err(Error::Domain {
            t,
            reason: "too close to the terminal pole",
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteFCoefficients {
    rate: f64,
    constant: f64,
    x_hat: f64,
    f: f64,
    q: f64,
    jump_m1: f64,
    jump_m2: f64,
}

impl FiniteFCoefficients {
    pub fn new(
        rate: f64,
        constant: f64,
        x_hat: f64,
        f: f64,
        jump_m1: f64,
        jump_m2: f64,
    ) -> Result<Self> {
        ensure_param!(rate > 0.0 && rate.is_finite(), "rate must be > 0, got {rate}");
        ensure_param!(f > 0.0 && f.is_finite(), "F must be > 0, got {f}");
        Ok(Self {
            rate,
            constant,
            x_hat,
            f,
            q: f / (f + 2.0 * rate),
            jump_m1,
            jump_m2,
        })
    }

    pub fn penalty(&self) -> f64 {
        self.f
    }

    /// `q = F/(F + 2ρ)`.
    pub fn q(&self) -> f64 {
        self.q
    }

    fn one_minus_q(&self) -> f64 {
        2.0 * self.rate / (self.f + 2.0 * self.rate)
    }

    pub fn a_at(&self, t: f64) -> Result<f64> {
        check_closed_unit(t)?;
        let tau = 1.0 - t;
        // e^{2ρτ} − q = expm1(2ρτ) + (1 − q)
        let den = (2.0 * self.rate * tau).exp_m1() + self.one_minus_q();
        Ok(2.0 * self.rate * self.q / den)
    }

    pub fn b_at(&self, t: f64) -> Result<f64> {
        check_closed_unit(t)?;
        let tau = 1.0 - t;
        let rho = self.rate;
        let q = self.q;
        // F·(1 − q) = 2ρq keeps the target term exact for huge F.
        let num = -2.0 * rho * q * self.x_hat + 2.0 * q * self.constant * -(-rho * tau).exp_m1();
        let den = (rho * tau).exp() * (self.one_minus_q() - q * (-2.0 * rho * tau).exp_m1());
        Ok(num / den)
    }

    fn c_rhs(&self, s: f64) -> f64 {
        let a = self.a_at(s).unwrap_or(f64::NAN);
        let b = self.b_at(s).unwrap_or(f64::NAN);
        0.5 * b * b - self.jump_m1 * b - 0.5 * self.jump_m2 * a
    }

    pub fn c_terminal(&self) -> f64 {
        0.5 * self.f * self.x_hat * self.x_hat
    }

    /// `C_F(t) = C_F(1) − ∫_t^1 (½B² − M1·B − ½M2·A) ds` by adaptive Simpson.
    pub fn c_at(&self, t: f64) -> Result<f64> {
        check_closed_unit(t)?;
        if t == 1.0 {
            return Ok(self.c_terminal());
        }
        let f = |s: f64| self.c_rhs(s);
        // Rough magnitude of the integral to set a relative target.
        let probe = (f(t).abs() + f(0.5 * (t + 1.0)).abs() + f(1.0).abs()) * (1.0 - t);
        let tol = 1e-11 * probe.max(1e-300);
        let (integral, err) = quad::adaptive_simpson(&f, t, 1.0, tol, 50)?;
        let value = self.c_terminal() - integral;
        if err > 1e-8 * value.abs().max(integral.abs()).max(f64::MIN_POSITIVE) && err > 1e-14 {
            return Err(Error::Quadrature(format!(
                "C_F({t}) error estimate {err:.3e} too large for value {value:.6e}"
            )));
        }
        Ok(value)
    }

    /// `Φ(t, x) = ½A x² + B x + C`.
    pub fn value(&self, t: f64, x: f64) -> Result<f64> {
        let (a, b) = self.ab(t)?;
        Ok(0.5 * a * x * x + b * x + self.c_at(t)?)
    }
}

impl Feedback for FiniteFCoefficients {
    fn a(&self, t: f64) -> Result<f64> {
        self.a_at(t)
    }
    fn b(&self, t: f64) -> Result<f64> {
        self.b_at(t)
    }
}

/// Bridge coefficients, the `F → ∞` limits of [`FiniteFCoefficients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCoefficients {
    rate: f64,
    constant: f64,
    x_hat: f64,
}

impl LimitCoefficients {
    pub fn new(rate: f64, constant: f64, x_hat: f64) -> Self {
        Self {
            rate,
            constant,
            x_hat,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn a_at(&self, t: f64) -> Result<f64> {
        limit_a(self.rate, t)
    }

    pub fn b_at(&self, t: f64) -> Result<f64> {
        limit_b(self.rate, self.constant, self.x_hat, t)
    }
}

impl Feedback for LimitCoefficients {
    fn a(&self, t: f64) -> Result<f64> {
        self.a_at(t)
    }
    fn b(&self, t: f64) -> Result<f64> {
        self.b_at(t)
    }
}

/// `A(t) = 2ρ / (e^{2ρ(1−t)} − 1)`.
pub fn limit_a(rate: f64, t: f64) -> Result<f64> {
    check_before_pole(t)?;
    Ok(2.0 * rate / (2.0 * rate * (1.0 - t)).exp_m1())
}

/// `B(t) = 2ρ(−x̂ + (κ/ρ)(1 − e^{−ρ(1−t)})) / (e^{ρ(1−t)}(1 − e^{−2ρ(1−t)}))`.
pub fn limit_b(rate: f64, constant: f64, x_hat: f64, t: f64) -> Result<f64> {
    check_before_pole(t)?;
    let tau = 1.0 - t;
    let num = 2.0 * rate * -x_hat + 2.0 * constant * -(-rate * tau).exp_m1();
    let den = (rate * tau).exp() * -(-2.0 * rate * tau).exp_m1();
    Ok(num / den)
}

/// `exp(−∫_s^t (ρ + A_τ) dτ)` in closed form.
pub fn integrating_factor(rate: f64, s: f64, t: f64) -> Result<f64> {
    if s > t {
        return Err(Error::InvalidParameter(format!(
            "integrating factor needs s <= t, got s = {s}, t = {t}"
        )));
    }
    check_closed_unit(s)?;
    check_before_pole(t)?;
    if s == t {
        return Ok(1.0);
    }
    let num = -(-2.0 * rate * (1.0 - t)).exp_m1();
    let den = -(-2.0 * rate * (1.0 - s)).exp_m1();
    Ok((-rate * (t - s)).exp() * num / den)
}

/// Kernels of the closed-form bridge mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixKernels {
    pub k: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
}

/// `ln((e^ρ + e^{ρt}) / (e^ρ − e^{ρt}))` written in terms of `e^{−ρ(1−t)}`.
fn log_ratio(rate: f64, t: f64) -> f64 {
    let tau = 1.0 - t;
    let e = (-rate * tau).exp();
    e.ln_1p() - (-(-rate * tau).exp_m1()).ln()
}

/// `K(t) = e^{−ρt−ρ}(1 − e^{−2ρ(1−t)})`.
pub fn kernel_k(rate: f64, t: f64) -> Result<f64> {
    check_closed_unit(t)?;
    Ok((-rate * t - rate).exp() * -(-2.0 * rate * (1.0 - t)).exp_m1())
}

/// `K`, `I1`, `I2`, `I3` at `t`.
///
/// ```text
/// I1 = ∫_0^t e^{2ρs} / (1 − e^{−2ρ(1−s)})² ds
/// I2 = ∫_0^t e^{2ρs}(1 − e^{−ρ(1−s)}) / (1 − e^{−2ρ(1−s)})² ds
/// I3 = ∫_0^t e^{ρs} / (1 − e^{−2ρ(1−s)}) ds
/// ```
pub fn kernels(rate: f64, t: f64) -> Result<AppendixKernels> {
    ensure_param!(rate > 0.0 && rate.is_finite(), "rate must be > 0, got {rate}");
    check_before_pole(t)?;
    let k = kernel_k(rate, t)?;
    if t == 0.0 {
        return Ok(AppendixKernels {
            k,
            i1: 0.0,
            i2: 0.0,
            i3: 0.0,
        });
    }
    let tau = 1.0 - t;
    let g_t = -(-2.0 * rate * tau).exp_m1();
    let g_0 = -(-2.0 * rate).exp_m1();
    let i1 = (2.0 * rate * t).exp_m1() / (2.0 * rate * g_t * g_0);

    let dl = log_ratio(rate, t) - log_ratio(rate, 0.0);
    let i3 = rate.exp() / (2.0 * rate) * dl;

    // (e^{3ρ}/ρ)·½·(1/(e^ρ + e^{ρt}) − 1/(e^ρ + 1)) rewritten without e^{3ρ}.
    let rational = rate.exp() / (2.0 * rate) * (rate * t).exp_m1()
        / ((1.0 + (-rate * tau).exp()) * (1.0 + (-rate).exp()));
    let i2 = (2.0 * rate).exp() / (4.0 * rate) * dl - rational;

    Ok(AppendixKernels { k, i1, i2, i3 })
}

/// Closed-form `E[X*_t]` of the OU bridge (`p = 0` only).
pub fn closed_form_mean(model: &BridgeModel, t: f64) -> Result<f64> {
    if model.is_self_exciting() {
        return Err(Error::InvalidParameter(
            "closed-form mean is only available for the OU bridge (p = 0)".into(),
        ));
    }
    let r = model.r();
    let m1 = model.m1();
    let ker = kernels(r, t)?;
    let decay = integrating_factor(r, 0.0, t)?;
    let forced = ker.k * (2.0 * r * model.x_hat() * ker.i1 - 2.0 * m1 * ker.i2 + m1 * r.exp() * ker.i3);
    Ok(model.x0() * decay + forced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyMeasure;

    fn exp_model(x0: f64, x_hat: f64) -> BridgeModel {
        BridgeModel::new(10.0, 0.0, x0, x_hat, LevyMeasure::exp_cp(2.0, 50.0).unwrap()).unwrap()
    }

    #[test]
    fn finite_a_terminal_condition() {
        for (r, f) in [(10.0, 100.0), (0.5, 1e-3), (15.8, 1e8)] {
            let c = FiniteFCoefficients::new(r, 0.0, 1.0, f, 0.0, 0.0).unwrap();
            assert!((c.a_at(1.0).unwrap() - f).abs() <= 1e-12 * f);
            assert!((c.b_at(1.0).unwrap() + f).abs() <= 1e-12 * f);
        }
    }

    #[test]
    fn finite_b_terminal_with_jumps() {
        let c = FiniteFCoefficients::new(10.0, 8e-4, 1.3, 100.0, 8e-4, 3.2e-5).unwrap();
        assert!((c.b_at(1.0).unwrap() + 130.0).abs() < 1e-12);
    }

    #[test]
    fn finite_b_zero_case() {
        let c = FiniteFCoefficients::new(10.0, 0.0, 0.0, 100.0, 0.0, 0.0).unwrap();
        for t in [0.0, 0.3, 0.9, 1.0] {
            assert_eq!(c.b_at(t).unwrap(), 0.0);
        }
    }

    #[test]
    fn q_in_unit_interval() {
        for f in [1e-9, 1.0, 1e3, 1e12] {
            let c = FiniteFCoefficients::new(10.0, 0.0, 0.0, f, 0.0, 0.0).unwrap();
            assert!(c.q() > 0.0 && c.q() < 1.0);
        }
        let c = FiniteFCoefficients::new(10.0, 0.0, 0.0, 1e12, 0.0, 0.0).unwrap();
        assert!((1.0 - c.q()) < 1e-10);
    }

    #[test]
    fn value_function_terminal() {
        let c = FiniteFCoefficients::new(10.0, 8e-4, 0.7, 100.0, 8e-4, 3.2e-5).unwrap();
        assert!(c.value(1.0, 0.7).unwrap().abs() < 1e-12);
        assert!((c.value(1.0, 1.7).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn c_constant_without_forcing() {
        let c = FiniteFCoefficients::new(10.0, 0.0, 0.0, 100.0, 0.0, 0.0).unwrap();
        for t in [0.0, 0.5, 1.0] {
            assert_eq!(c.c_at(t).unwrap(), 0.0);
        }
    }

    #[test]
    fn limit_a_hand_value() {
        let t = 1.0 - 2f64.ln();
        assert!((limit_a(0.5, t).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn limit_a_growth_order() {
        let t = 1.0 - 1e-8;
        let v = limit_a(10.0, t).unwrap() * (1.0 - t);
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn limit_refuses_pole() {
        assert!(limit_a(10.0, 1.0).is_err());
        assert!(limit_b(10.0, 0.0, 0.0, 1.0).is_err());
        assert!(limit_a(10.0, 1.0 - 1e-13).is_err());
        assert!(limit_a(10.0, -0.1).is_err());
        assert!(kernels(10.0, 1.0).is_err());
    }

    #[test]
    fn limit_b_zero_case() {
        for t in [0.0, 0.5, 0.99] {
            assert_eq!(limit_b(10.0, 0.0, 0.0, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn control_root_and_zero() {
        struct Zero;
        impl Feedback for Zero {
            fn a(&self, _: f64) -> Result<f64> {
                Ok(0.0)
            }
            fn b(&self, _: f64) -> Result<f64> {
                Ok(0.0)
            }
        }
        assert_eq!(optimal_control(&Zero, 0.3, 5.0).unwrap(), 0.0);
        let lc = LimitCoefficients::new(10.0, 8e-4, 1.0);
        let (a, b) = lc.ab(0.4).unwrap();
        assert!(optimal_control(&lc, 0.4, -b / a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn integrating_factor_identity_and_order() {
        assert_eq!(integrating_factor(10.0, 0.3, 0.3).unwrap(), 1.0);
        assert!(integrating_factor(10.0, 0.5, 0.3).is_err());
    }

    #[test]
    fn kernels_vanish_at_origin() {
        let k = kernels(10.0, 0.0).unwrap();
        assert_eq!((k.i1, k.i2, k.i3), (0.0, 0.0, 0.0));
        assert!(kernel_k(10.0, 1.0).unwrap() == 0.0);
    }

    #[test]
    fn mean_starts_at_x0() {
        let m = exp_model(0.37, 1.0);
        assert!((closed_form_mean(&m, 0.0).unwrap() - 0.37).abs() < 1e-15);
    }

    #[test]
    fn mean_reaches_target() {
        let m = exp_model(0.0, 1.0);
        let v = closed_form_mean(&m, 1.0 - 1e-6).unwrap();
        assert!((v - 1.0).abs() < 1e-4, "{v}");
    }

    #[test]
    fn mean_rejects_self_exciting() {
        let m = BridgeModel::new(10.0, 2.0, 0.0, 0.0, LevyMeasure::exp_cp(2.0, 50.0).unwrap())
            .unwrap();
        assert!(closed_form_mean(&m, 0.5).is_err());
    }
}
