//! Run configuration: one JSON document plus command-line overrides.

use std::path::{Path, PathBuf};

use jbridge::calibration::{parse_interval, FitOptions};
use jbridge::sde::{Scheme, SeDrift, SimConfig};
use jbridge::{BridgeModel, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DESK_STEPS: usize = 20_000;
pub const DESK_PATHS: usize = 20_000;
pub const PAPER_STEPS: usize = 200_000;
pub const PAPER_PATHS: usize = 200_000;

fn desk_dt() -> f64 {
    1.0 / DESK_STEPS as f64
}
fn desk_paths() -> usize {
    DESK_PATHS
}
fn hundred() -> usize {
    100
}
fn ten() -> usize {
    10
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    #[serde(default = "desk_dt")]
    pub dt: f64,
    #[serde(default = "desk_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub se_drift: SeDrift,
    /// Keep every `decimation`-th grid point in path, moment and coefficient CSVs.
    #[serde(default = "hundred")]
    pub decimation: usize,
    /// Intervals of the ensemble mean/variance curves.
    #[serde(default = "hundred")]
    pub curve_points: usize,
}

impl Default for SimBlock {
    fn default() -> Self {
        Self {
            dt: desk_dt(),
            n_paths: desk_paths(),
            seed: 0,
            scheme: Scheme::default(),
            se_drift: SeDrift::default(),
            decimation: hundred(),
            curve_points: hundred(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    Ou,
    Se,
    Controlled,
    #[default]
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateTask {
    #[serde(default)]
    pub dynamics: DynamicsKind,
    /// Terminal penalty `F` for controlled runs.
    #[serde(default)]
    pub penalty: Option<f64>,
    /// Number of full paths written to the paths CSV.
    #[serde(default = "ten")]
    pub paths_to_write: usize,
}

impl Default for SimulateTask {
    fn default() -> Self {
        Self {
            dynamics: DynamicsKind::default(),
            penalty: None,
            paths_to_write: ten(),
        }
    }
}

fn sweep_default() -> Vec<f64> {
    vec![1.0 / 5_000.0, 1.0 / 10_000.0, 1.0 / 20_000.0]
}
fn deltas_default() -> Vec<f64> {
    vec![1e-1, 1e-2]
}
fn penalty_default() -> f64 {
    100.0
}
fn floor_p_default() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyTask {
    #[serde(default = "sweep_default")]
    pub sweep_dts: Vec<f64>,
    #[serde(default = "deltas_default")]
    pub variance_deltas: Vec<f64>,
    #[serde(default = "penalty_default")]
    pub riccati_penalty: f64,
    /// Self-excitation of the expected-fail path-floor control.
    #[serde(default = "floor_p_default")]
    pub floor_control_p: f64,
    /// Test hook: perturb the kernel `K` so the kernel-limit check must fail.
    #[serde(default)]
    pub corrupt_coefficient: bool,
}

impl Default for VerifyTask {
    fn default() -> Self {
        Self {
            sweep_dts: sweep_default(),
            variance_deltas: deltas_default(),
            riccati_penalty: penalty_default(),
            floor_control_p: floor_p_default(),
            corrupt_coefficient: false,
        }
    }
}

fn interval_default() -> String {
    "1h".into()
}
fn max_gap_default() -> String {
    "6h".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateTask {
    /// `timestamp,discharge` CSV; relative paths resolve against the config file.
    pub input: PathBuf,
    #[serde(default = "interval_default")]
    pub interval: String,
    #[serde(default = "max_gap_default")]
    pub max_gap: String,
    pub fit: FitOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrateTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub task: TaskBlock,
    /// Not echoed into artifacts: where files go does not change what they hold.
    #[serde(default = "default_out", skip_serializing)]
    pub output_dir: PathBuf,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub paper_scale: bool,
    pub scheme: Option<Scheme>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(seed) = overrides.seed {
            cfg.sim.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.output_dir = out.clone();
        }
        if overrides.paper_scale {
            cfg.sim.dt = 1.0 / PAPER_STEPS as f64;
            cfg.sim.n_paths = PAPER_PATHS;
        }
        if let Some(scheme) = overrides.scheme {
            cfg.sim.scheme = scheme;
        }
        if let Some(cal) = &mut cfg.task.calibrate {
            if cal.input.is_relative() {
                if let Some(dir) = path.parent() {
                    cal.input = dir.join(&cal.input);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let s = &self.sim;
        if s.n_paths < 2 {
            return Err(CliError::Config(format!("n_paths must be ≥ 2, got {}", s.n_paths)));
        }
        if s.decimation == 0 || s.curve_points == 0 {
            return Err(CliError::Config("decimation and curve_points must be ≥ 1".into()));
        }
        self.sim_config()?;
        if let Some(spec) = self.model {
            BridgeModel::from_spec(spec).map_err(|e| CliError::Config(format!("model: {e}")))?;
        }
        if let Some(cal) = &self.task.calibrate {
            parse_interval(&cal.interval).map_err(|e| CliError::Config(format!("interval: {e}")))?;
            parse_interval(&cal.max_gap).map_err(|e| CliError::Config(format!("max_gap: {e}")))?;
        }
        Ok(())
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        Ok(SimConfig::from_dt(self.sim.dt, self.sim.seed)
            .map_err(|e| CliError::Config(format!("sim: {e}")))?
            .with_scheme(self.sim.scheme)
            .with_se_drift(self.sim.se_drift))
    }

    pub fn model(&self) -> Result<BridgeModel, CliError> {
        let spec = self
            .model
            .ok_or_else(|| CliError::Config("this subcommand needs a `model` block".into()))?;
        BridgeModel::from_spec(spec).map_err(|e| CliError::Config(format!("model: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"model": {"r": 10, "x0": 0, "x_hat": 0, "driver": {"type": "exp_cp", "lambda": 2, "eta": 50}}, "sim": {"dtt": 0.1}}"#;
        let err = serde_json::from_str::<RunConfig>(text).unwrap_err().to_string();
        assert!(err.contains("dtt") && err.contains("line 1"), "{err}");
    }

    #[test]
    fn defaults_are_desk_scale() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.sim.n_paths, DESK_PATHS);
        assert_eq!(cfg.sim_config().unwrap().n_steps, DESK_STEPS);
    }
}
