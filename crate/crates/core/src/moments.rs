//! Deterministic moment curves of the bridges and stationary moments of the
//! free processes.
//!
//! For the bridge with linear reversion `ρ` and jump intensity `(1 + p·X)ν`
//! (assumed positive, the regime in which the truncation is inactive):
//!
//! ```text
//! dE/dt  = −(ρ + A)E − B + M1(1 + pE)
//! dE2/dt = (−2(ρ + A) + 2pM1)E2 + (−2B + 2M1 + pM2)E + M2
//! dV/dt  = (−2(ρ + A) + 2pM1)V + M2(1 + pE),      V = E2 − E²
//! ```
//!
//! With `p = 0` and `ρ = r` these are the OU bridge equations. `E` and `V`
//! are integrated with forward Euler on the simulation grid, stopping at
//! `1 − dt`; `E2` is reported as `V + E²`.

use serde::Serialize;

use crate::coefficients::Feedback;
use crate::error::{ensure_param, Result};
use crate::model::BridgeModel;
use crate::sde::SeDrift;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCurves {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub second: Vec<f64>,
    pub variance: Vec<f64>,
}

impl MomentCurves {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Index of the grid point closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        let n = self.grid.len();
        if n < 2 {
            return 0;
        }
        let dt = self.grid[1] - self.grid[0];
        ((t / dt).round() as usize).min(n - 1)
    }

    pub fn last_time(&self) -> f64 {
        *self.grid.last().unwrap_or(&0.0)
    }
}

/// Moment curves of the OU bridge (`p = 0`).
pub fn ou_bridge_moments(model: &BridgeModel, n_steps: usize) -> Result<MomentCurves> {
    ensure_param!(
        !model.is_self_exciting(),
        "OU bridge moments require p = 0, got p = {}",
        model.p()
    );
    bridge_moments(model, n_steps, SeDrift::EffectiveRate)
}

/// Moment curves of the self-exciting bridge.
pub fn se_bridge_moments(
    model: &BridgeModel,
    n_steps: usize,
    se_drift: SeDrift,
) -> Result<MomentCurves> {
    bridge_moments(model, n_steps, se_drift)
}

fn bridge_moments(model: &BridgeModel, n_steps: usize, se_drift: SeDrift) -> Result<MomentCurves> {
    ensure_param!(n_steps >= 2, "n_steps must be >= 2, got {n_steps}");
    let coeffs = model.limit_coefficients();
    let rho = match se_drift {
        SeDrift::EffectiveRate => model.big_r(),
        SeDrift::RawRate => model.r(),
    };
    let p = model.p();
    let m1 = model.m1();
    let m2 = model.m2();
    let dt = 1.0 / n_steps as f64;

    let mut grid = Vec::with_capacity(n_steps);
    let mut mean = Vec::with_capacity(n_steps);
    let mut variance = Vec::with_capacity(n_steps);
    let mut e1 = model.x0();
    // The variance obeys its own linear ODE, obtained from the E and E2
    // equations; stepping it directly keeps it exactly zero without jumps.
    let mut var = 0.0;
    grid.push(0.0);
    mean.push(e1);
    variance.push(var);
    // Values at t_{k+1} for k + 1 <= n − 1, i.e. up to 1 − dt.
    for k in 0..n_steps - 1 {
        let t = k as f64 / n_steps as f64;
        let (a, b) = coeffs.ab(t)?;
        let d1 = -(rho + a) * e1 - b + m1 * (1.0 + p * e1);
        let dv = (-2.0 * (rho + a) + 2.0 * p * m1) * var + m2 * (1.0 + p * e1);
        e1 += d1 * dt;
        var += dv * dt;
        grid.push((k + 1) as f64 / n_steps as f64);
        mean.push(e1);
        variance.push(var);
    }
    let second = mean.iter().zip(&variance).map(|(m, v)| v + m * m).collect();
    Ok(MomentCurves {
        grid,
        mean,
        second,
        variance,
    })
}

/// Stationary raw moments of the free self-exciting process (OU when `p = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationaryMoments {
    pub mean: f64,
    pub second: f64,
    pub third: f64,
}

impl StationaryMoments {
    pub fn variance(&self) -> f64 {
        self.second - self.mean * self.mean
    }

    pub fn third_central(&self) -> f64 {
        self.third - 3.0 * self.mean * self.second + 2.0 * self.mean.powi(3)
    }
}

/// Zeros of the free-process moment equations
///
/// ```text
/// dE/dt  = −R·E + M1
/// dE2/dt = −2R·E2 + 2m·E + M2
/// dE3/dt = −3R·E3 + 3(M1 + p·M2)E2 + (3M2 + p·M3)E + M3
/// ```
pub fn stationary_moments(model: &BridgeModel) -> Result<StationaryMoments> {
    let big_r = model.big_r();
    ensure_param!(big_r > 0.0, "R = {big_r} <= 0: the process is not stationary");
    let p = model.p();
    let m1 = model.m1();
    let m2 = model.m2();
    let m3 = model.driver().raw_moment(3);
    let mean = m1 / big_r;
    let second = (2.0 * model.m() * mean + m2) / (2.0 * big_r);
    let third = (3.0 * (m1 + p * m2) * second + (3.0 * m2 + p * m3) * mean + m3) / (3.0 * big_r);
    Ok(StationaryMoments {
        mean,
        second,
        third,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyMeasure;

    #[test]
    fn zero_dynamics_give_zero_curves() {
        let m = BridgeModel::new(10.0, 0.0, 0.0, 0.0, LevyMeasure::null()).unwrap();
        let c = ou_bridge_moments(&m, 1000).unwrap();
        assert!(c.mean.iter().all(|&v| v == 0.0));
        assert!(c.variance.iter().all(|&v| v == 0.0));
        assert_eq!(c.len(), 1000);
        assert!((c.last_time() - 0.999).abs() < 1e-12);
    }

    #[test]
    fn se_with_zero_p_is_ou() {
        let m = BridgeModel::new(10.0, 0.0, 0.2, 0.5, LevyMeasure::exp_cp(2.0, 50.0).unwrap())
            .unwrap();
        assert_eq!(
            ou_bridge_moments(&m, 500).unwrap(),
            se_bridge_moments(&m, 500, SeDrift::EffectiveRate).unwrap()
        );
        assert_eq!(
            ou_bridge_moments(&m, 500).unwrap(),
            se_bridge_moments(&m, 500, SeDrift::RawRate).unwrap()
        );
    }

    #[test]
    fn initial_conditions() {
        let m = BridgeModel::new(10.0, 2.0, 0.3, 0.0, LevyMeasure::exp_cp(2.0, 50.0).unwrap())
            .unwrap();
        let c = se_bridge_moments(&m, 100, SeDrift::EffectiveRate).unwrap();
        assert_eq!(c.mean[0], 0.3);
        assert_eq!(c.second[0], 0.09);
    }

    #[test]
    fn ou_stationary_mean() {
        let m = BridgeModel::new(10.0, 0.0, 0.0, 0.0, LevyMeasure::exp_cp(2.0, 50.0).unwrap())
            .unwrap();
        let s = stationary_moments(&m).unwrap();
        assert!((s.mean - 8e-5).abs() < 1e-18);
        // OU cumulants: κ_n = M_n / (n r).
        assert!((s.variance() - 3.2e-5 / 20.0).abs() < 1e-15);
        let m3 = 2.0 * 6.0 / 50f64.powi(4);
        assert!((s.third_central() - m3 / 30.0).abs() < 1e-6 * m3 / 30.0);
    }

    #[test]
    fn ou_bridge_moments_reject_p() {
        let m = BridgeModel::new(10.0, 2.0, 0.0, 0.0, LevyMeasure::exp_cp(2.0, 50.0).unwrap())
            .unwrap();
        assert!(ou_bridge_moments(&m, 100).is_err());
    }
}
