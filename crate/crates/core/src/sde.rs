//! Euler–Maruyama simulation on the uniform grid `{0, dt, …, 1}`.
//!
//! All dynamics share one left-point step
//!
//! ```text
//! X_{k+1} = X_k + (−(ρ + A_k)·X_k − B_k)·dt + J_k,
//! J_k ~ increment of ν scaled by max(1 + p·X_k, 0) over dt
//! ```
//!
//! with `A = B = 0` for the free processes, finite-penalty coefficients for the
//! controlled process and the limit coefficients for the bridges. The bridge
//! coefficients are evaluated at `t_k`, so the last step uses `t = 1 − dt` and
//! the pole at `t = 1` is never touched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::Feedback;
use crate::error::{ensure_param, Error, Result};
use crate::model::BridgeModel;
use crate::rng::{path_stream, PathRng};

/// Jump/drift bookkeeping. The two forms are algebraically identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Uncompensated jumps, drift without the `+M1` term.
    #[default]
    Raw,
    /// Compensated jumps `J − scale·M1·dt` with `+scale·M1` in the drift.
    Compensated,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "compensated" => Ok(Self::Compensated),
            other => Err(Error::InvalidParameter(format!(
                "unknown scheme {other:?}, expected raw or compensated"
            ))),
        }
    }
}

/// Linear reversion used in the self-exciting bridge drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeDrift {
    /// `−(R + A)·X − B`, with `R = r − p·M1`.
    #[default]
    EffectiveRate,
    /// `−(r + A)·X − B`, i.e. `−r·X + u*` with the feedback applied verbatim.
    RawRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub se_drift: SeDrift,
}

impl SimConfig {
    pub fn new(n_steps: usize, seed: u64) -> Result<Self> {
        ensure_param!(n_steps >= 1, "n_steps must be >= 1");
        Ok(Self {
            n_steps,
            seed,
            scheme: Scheme::Raw,
            se_drift: SeDrift::EffectiveRate,
        })
    }

    /// Build from a step size; `1/dt` must be an integer.
    pub fn from_dt(dt: f64, seed: u64) -> Result<Self> {
        ensure_param!(dt > 0.0 && dt <= 1.0, "dt must lie in (0, 1], got {dt}");
        let n = (1.0 / dt).round();
        ensure_param!(
            (n * dt - 1.0).abs() < 1e-9,
            "dt = {dt} does not divide the unit horizon"
        );
        Self::new(n as usize, seed)
    }

    pub fn with_scheme(self, scheme: Scheme) -> Self {
        Self { scheme, ..self }
    }

    pub fn with_se_drift(self, se_drift: SeDrift) -> Self {
        Self { se_drift, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.n_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub path_id: u64,
    pub grid: Vec<f64>,
    pub states: Vec<f64>,
    pub terminal_value: f64,
    /// `(F/2)(X_1 − x̂)² + Σ ½u²·dt`; only for controlled runs.
    pub realized_cost: Option<f64>,
}

/// Which dynamics to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Dynamics {
    /// Free OU process driven by ν (requires `p = 0`).
    Ou,
    /// Free self-exciting process.
    Se,
    /// Finite-penalty optimally controlled process.
    Controlled { penalty: f64 },
    /// F → ∞ bridge (OU if `p = 0`, self-exciting otherwise).
    Bridge,
}

/// A prepared simulator: the model, grid and per-step coefficients shared by
/// every path of an ensemble.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: BridgeModel,
    config: SimConfig,
    dynamics: Dynamics,
    rate: f64,
    /// `(A_k, B_k)` at `t_k`, `k = 0..n_steps`; empty for free dynamics.
    table: Vec<(f64, f64)>,
}

/// Outcome of a single path when only streaming observations are needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    pub terminal_value: f64,
    pub min_value: f64,
    pub realized_cost: Option<f64>,
}

impl Simulator {
    pub fn new(model: &BridgeModel, config: &SimConfig, dynamics: Dynamics) -> Result<Self> {
        ensure_param!(config.n_steps >= 1, "n_steps must be >= 1");
        let n = config.n_steps;
        let (rate, table) = match dynamics {
            Dynamics::Ou => {
                ensure_param!(
                    !model.is_self_exciting(),
                    "OU simulation requires p = 0, got p = {}",
                    model.p()
                );
                (model.r(), Vec::new())
            }
            Dynamics::Se => (model.r(), Vec::new()),
            Dynamics::Controlled { penalty } => {
                let coeffs = model.finite_coefficients(penalty)?;
                (model.r(), tabulate(&coeffs, config)?)
            }
            Dynamics::Bridge => {
                let coeffs = model.limit_coefficients();
                let rate = if !model.is_self_exciting() {
                    model.r()
                } else {
                    match config.se_drift {
                        SeDrift::EffectiveRate => model.big_r(),
                        SeDrift::RawRate => model.r(),
                    }
                };
                (rate, tabulate(&coeffs, config)?)
            }
        };
        debug_assert!(table.is_empty() || table.len() == n);
        Ok(Self {
            model: *model,
            config: *config,
            dynamics,
            rate,
            table,
        })
    }

    pub fn model(&self) -> &BridgeModel {
        &self.model
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn dynamics(&self) -> Dynamics {
        self.dynamics
    }

    /// Coefficients used on step `k` (zero for free dynamics).
    pub fn coefficients(&self, k: usize) -> (f64, f64) {
        self.table.get(k).copied().unwrap_or((0.0, 0.0))
    }

    /// Run one path, calling `observe(k, x_k)` for every grid index `0..=n`.
    pub fn run_with<F: FnMut(usize, f64)>(&self, path_id: u64, mut observe: F) -> PathSummary {
        let mut rng = path_stream(self.config.seed, path_id);
        self.run_with_rng(&mut rng, &mut observe)
    }

    fn run_with_rng<R: Rng + ?Sized, F: FnMut(usize, f64)>(
        &self,
        rng: &mut R,
        observe: &mut F,
    ) -> PathSummary {
        let n = self.config.n_steps;
        let dt = self.config.dt();
        let driver = *self.model.driver();
        let m1 = self.model.m1();
        let compensated = self.config.scheme == Scheme::Compensated;
        let mut x = self.model.x0();
        let mut min_value = x;
        let mut control_energy = 0.0;
        observe(0, x);
        for k in 0..n {
            let (a, b) = self.coefficients(k);
            let scale = self.model.intensity_scale(x);
            let mut drift = -(self.rate + a) * x - b;
            let mut jump = driver.sample_increment(dt, scale, rng);
            if compensated {
                drift += scale * m1;
                jump -= scale * m1 * dt;
            }
            if let Dynamics::Controlled { .. } = self.dynamics {
                let u = -(a * x + b);
                control_energy += 0.5 * u * u * dt;
            }
            x += drift * dt + jump;
            min_value = min_value.min(x);
            observe(k + 1, x);
        }
        let realized_cost = match self.dynamics {
            Dynamics::Controlled { penalty } => {
                let miss = x - self.model.x_hat();
                Some(0.5 * penalty * miss * miss + control_energy)
            }
            _ => None,
        };
        PathSummary {
            terminal_value: x,
            min_value,
            realized_cost,
        }
    }

    /// Full path retained in memory.
    pub fn path(&self, path_id: u64) -> Path {
        let n = self.config.n_steps;
        let mut states = Vec::with_capacity(n + 1);
        let summary = self.run_with(path_id, |_, x| states.push(x));
        Path {
            path_id,
            grid: (0..=n).map(|k| self.config.time(k)).collect(),
            states,
            terminal_value: summary.terminal_value,
            realized_cost: summary.realized_cost,
        }
    }
}

fn tabulate<C: Feedback>(coeffs: &C, config: &SimConfig) -> Result<Vec<(f64, f64)>> {
    (0..config.n_steps).map(|k| coeffs.ab(config.time(k))).collect()
}

pub fn simulate_ou(model: &BridgeModel, config: &SimConfig, path_id: u64) -> Result<Path> {
    Ok(Simulator::new(model, config, Dynamics::Ou)?.path(path_id))
}

pub fn simulate_se(model: &BridgeModel, config: &SimConfig, path_id: u64) -> Result<Path> {
    Ok(Simulator::new(model, config, Dynamics::Se)?.path(path_id))
}

pub fn simulate_controlled(
    model: &BridgeModel,
    config: &SimConfig,
    penalty: f64,
    path_id: u64,
) -> Result<Path> {
    Ok(Simulator::new(model, config, Dynamics::Controlled { penalty })?.path(path_id))
}

pub fn simulate_bridge(model: &BridgeModel, config: &SimConfig, path_id: u64) -> Result<Path> {
    Ok(Simulator::new(model, config, Dynamics::Bridge)?.path(path_id))
}

/// Long free run of the self-exciting process (the OU process when `p = 0`)
/// starting from `model.x0()`, recording every `record_every` Euler steps of
/// size `dt`. Returns `n_records + 1` values including the start.
pub fn free_run(
    model: &BridgeModel,
    dt: f64,
    record_every: usize,
    n_records: usize,
    rng: &mut PathRng,
) -> Result<Vec<f64>> {
    ensure_param!(dt > 0.0 && dt.is_finite(), "dt must be > 0, got {dt}");
    ensure_param!(record_every >= 1, "record_every must be >= 1");
    let driver = *model.driver();
    let r = model.r();
    let mut x = model.x0();
    let mut out = Vec::with_capacity(n_records + 1);
    out.push(x);
    for _ in 0..n_records {
        for _ in 0..record_every {
            let scale = model.intensity_scale(x);
            x += -r * x * dt + driver.sample_increment(dt, scale, rng);
        }
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyMeasure;

    fn model(p: f64, x0: f64, x_hat: f64, driver: LevyMeasure) -> BridgeModel {
        BridgeModel::new(10.0, p, x0, x_hat, driver).unwrap()
    }

    #[test]
    fn dt_must_divide_horizon() {
        assert!(SimConfig::from_dt(0.3, 0).is_err());
        assert_eq!(SimConfig::from_dt(1.0 / 200_000.0, 0).unwrap().n_steps, 200_000);
    }

    #[test]
    fn path_shape() {
        let m = model(0.0, 0.25, 0.0, LevyMeasure::exp_cp(2.0, 50.0).unwrap());
        let cfg = SimConfig::new(100, 1).unwrap();
        let p = simulate_bridge(&m, &cfg, 0).unwrap();
        assert_eq!(p.states.len(), 101);
        assert_eq!(p.grid.len(), 101);
        assert_eq!(p.states[0], 0.25);
        assert_eq!(p.grid[100], 1.0);
        assert_eq!(p.terminal_value, p.states[100]);
    }

    #[test]
    fn jump_free_ou_decays_exponentially() {
        let m = model(0.0, 1.0, 0.0, LevyMeasure::null());
        let cfg = SimConfig::new(10_000, 3).unwrap();
        let p = simulate_ou(&m, &cfg, 0).unwrap();
        for (t, x) in p.grid.iter().zip(&p.states) {
            assert!((x - (-10.0 * t).exp()).abs() < 10.0 * cfg.dt());
        }
    }

    #[test]
    fn zero_bridge_stays_zero() {
        let m = model(0.0, 0.0, 0.0, LevyMeasure::null());
        let cfg = SimConfig::new(1000, 3).unwrap();
        let p = simulate_bridge(&m, &cfg, 0).unwrap();
        assert!(p.states.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn se_with_zero_p_matches_ou_bitwise() {
        let m = model(0.0, 0.1, 0.0, LevyMeasure::exp_cp(2.0, 50.0).unwrap());
        let cfg = SimConfig::new(2000, 11).unwrap();
        for id in 0..5 {
            assert_eq!(
                simulate_ou(&m, &cfg, id).unwrap(),
                simulate_se(&m, &cfg, id).unwrap()
            );
        }
    }

    #[test]
    fn ou_rejects_self_exciting_model() {
        let m = model(2.0, 0.0, 0.0, LevyMeasure::exp_cp(2.0, 50.0).unwrap());
        assert!(simulate_ou(&m, &SimConfig::new(10, 0).unwrap(), 0).is_err());
    }

    #[test]
    fn se_paths_stay_nonnegative() {
        let ts = LevyMeasure::tempered_stable(3.23, 0.031, 0.87).unwrap();
        let m = BridgeModel::new(15.8, 0.14, 0.5, 0.0, ts).unwrap();
        let cfg = SimConfig::new(5000, 5).unwrap();
        for id in 0..5 {
            let p = simulate_se(&m, &cfg, id).unwrap();
            assert!(p.states.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn determinism_per_path_id() {
        let m = model(2.0, 0.0, 0.0, LevyMeasure::exp_cp(2000.0, 50.0).unwrap());
        let cfg = SimConfig::new(500, 99).unwrap();
        let a = simulate_bridge(&m, &cfg, 7).unwrap();
        let b = simulate_bridge(&m, &cfg, 7).unwrap();
        let c = simulate_bridge(&m, &cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn compensated_scheme_agrees_with_raw() {
        let m = model(0.0, 0.0, 0.5, LevyMeasure::exp_cp(2.0, 50.0).unwrap());
        let cfg = SimConfig::new(1000, 5).unwrap();
        let raw = simulate_bridge(&m, &cfg, 1).unwrap();
        let comp = simulate_bridge(&m, &cfg.with_scheme(Scheme::Compensated), 1).unwrap();
        for (a, b) in raw.states.iter().zip(&comp.states) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_penalty_recovers_free_process() {
        let m = model(0.0, 0.2, 1.0, LevyMeasure::exp_cp(2.0, 50.0).unwrap());
        let cfg = SimConfig::new(1000, 5).unwrap();
        let free = simulate_ou(&m, &cfg, 2).unwrap();
        let mut prev = f64::INFINITY;
        for f in [1e-2, 1e-4, 1e-6] {
            let ctl = simulate_controlled(&m, &cfg, f, 2).unwrap();
            let gap = ctl
                .states
                .iter()
                .zip(&free.states)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn controlled_reports_cost() {
        let m = model(0.0, 0.0, 0.0, LevyMeasure::exp_cp(2.0, 50.0).unwrap());
        let cfg = SimConfig::new(100, 5).unwrap();
        let p = simulate_controlled(&m, &cfg, 100.0, 0).unwrap();
        assert!(p.realized_cost.unwrap() >= 0.0);
        assert!(simulate_bridge(&m, &cfg, 0).unwrap().realized_cost.is_none());
    }
}
