//! Ensemble orchestration: many independent paths reduced into the terminal
//! error statistic, moment curves with batch-means standard errors, the path
//! floor and realized costs.
//!
//! Paths are grouped into contiguous batches and fixed-size chunks. Chunks are
//! simulated in parallel and merged in index order, so reports do not depend
//! on the number of worker threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure_param, Result};
use crate::model::{BridgeModel, ModelSpec};
use crate::moments::{ou_bridge_moments, se_bridge_moments};
use crate::sde::{Dynamics, SimConfig, Simulator};

pub const DEFAULT_BATCHES: usize = 20;
pub const DEFAULT_CURVE_POINTS: usize = 100;
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOptions {
    /// Number of equal-width curve intervals; curves are recorded on the grid
    /// indices `⌊j·n/curve_points⌋`, `j = 0..=curve_points`.
    pub curve_points: usize,
    pub batches: usize,
    /// Keep every terminal value (needed for the terminal CSV).
    pub keep_terminal: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            curve_points: DEFAULT_CURVE_POINTS,
            batches: DEFAULT_BATCHES,
            keep_terminal: false,
        }
    }
}

/// Echo of everything that determines an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleEcho {
    pub model: ModelSpec,
    pub sim: SimConfig,
    pub dynamics: Dynamics,
    pub n_paths: usize,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub n_paths: usize,
    pub seed: u64,
    /// Mean of `|X_1 − x̂|`.
    pub err: f64,
    pub err_se: f64,
    pub curve_t: Vec<f64>,
    pub mean_curve: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub var_curve: Vec<f64>,
    pub var_se: Vec<f64>,
    pub min_over_all_paths: f64,
    pub realized_cost_mean: Option<f64>,
    pub realized_cost_se: Option<f64>,
    pub config: EnsembleEcho,
    #[serde(skip)]
    pub terminal_values: Vec<f64>,
}

impl EnsembleReport {
    /// Index into the curves of the recorded time closest to `t`.
    pub fn curve_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.curve_t.iter().enumerate() {
            if (s - t).abs() < (self.curve_t[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

/// Per-index sums over a group of paths.
#[derive(Debug, Clone)]
struct Accum {
    count: usize,
    s1: Vec<f64>,
    s2: Vec<f64>,
    abs_err: f64,
    cost: f64,
    min: f64,
    terminal: Vec<f64>,
}

impl Accum {
    fn new(n_points: usize) -> Self {
        Self {
            count: 0,
            s1: vec![0.0; n_points],
            s2: vec![0.0; n_points],
            abs_err: 0.0,
            cost: 0.0,
            min: f64::INFINITY,
            terminal: Vec::new(),
        }
    }

    fn merge(&mut self, other: Accum) {
        self.count += other.count;
        for (a, b) in self.s1.iter_mut().zip(&other.s1) {
            *a += b;
        }
        for (a, b) in self.s2.iter_mut().zip(&other.s2) {
            *a += b;
        }
        self.abs_err += other.abs_err;
        self.cost += other.cost;
        self.min = self.min.min(other.min);
        self.terminal.extend(other.terminal);
    }

    fn mean(&self, j: usize) -> f64 {
        self.s1[j] / self.count as f64
    }

    fn var(&self, j: usize) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return 0.0;
        }
        let m = self.s1[j] / n;
        ((self.s2[j] - n * m * m) / (n - 1.0)).max(0.0)
    }
}

/// Record indices for `curve_points` intervals on an `n_steps` grid.
pub fn curve_indices(n_steps: usize, curve_points: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..=curve_points).map(|j| j * n_steps / curve_points).collect();
    idx.dedup();
    idx
}

/// Simulate `n_paths` paths and record statistics at `record` (sorted grid
/// indices).
fn simulate_batches(
    sim: &Simulator,
    n_paths: usize,
    batches: usize,
    record: &[usize],
    keep_terminal: bool,
) -> Vec<Accum> {
    let x_hat = sim.model().x_hat();
    let np = record.len();
    // (batch, first path, end path) work items.
    let mut items = Vec::new();
    for b in 0..batches {
        let lo = b * n_paths / batches;
        let hi = (b + 1) * n_paths / batches;
        let mut s = lo;
        while s < hi {
            let e = (s + CHUNK).min(hi);
            items.push((b, s, e));
            s = e;
        }
    }
    let chunks: Vec<(usize, Accum)> = items
        .par_iter()
        .map(|&(b, lo, hi)| {
            let mut acc = Accum::new(np);
            for id in lo..hi {
                let mut next = 0;
                let (s1, s2) = (&mut acc.s1, &mut acc.s2);
                let summary = sim.run_with(id as u64, |k, x| {
                    if next < np && record[next] == k {
                        s1[next] += x;
                        s2[next] += x * x;
                        next += 1;
                    }
                });
                acc.count += 1;
                acc.abs_err += (summary.terminal_value - x_hat).abs();
                acc.cost += summary.realized_cost.unwrap_or(0.0);
                acc.min = acc.min.min(summary.min_value);
                if keep_terminal {
                    acc.terminal.push(summary.terminal_value);
                }
            }
            (b, acc)
        })
        .collect();
    let mut out: Vec<Accum> = (0..batches).map(|_| Accum::new(np)).collect();
    for (b, acc) in chunks {
        out[b].merge(acc);
    }
    out
}

/// Batch-means standard error of a statistic evaluated per batch.
fn batch_se(values: &[f64]) -> f64 {
    let b = values.len();
    if b < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / b as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (b as f64 - 1.0) / b as f64).sqrt()
}

struct Reduced {
    total: Accum,
    batches: Vec<Accum>,
}

impl Reduced {
    fn new(batches: Vec<Accum>) -> Self {
        let mut total = Accum::new(batches[0].s1.len());
        for b in &batches {
            total.merge(b.clone());
        }
        Self { total, batches }
    }

    fn mean_and_se(&self, j: usize) -> (f64, f64) {
        let per: Vec<f64> = self.batches.iter().map(|b| b.mean(j)).collect();
        (self.total.mean(j), batch_se(&per))
    }

    fn var_and_se(&self, j: usize) -> (f64, f64) {
        let per: Vec<f64> = self.batches.iter().map(|b| b.var(j)).collect();
        (self.total.var(j), batch_se(&per))
    }

    fn per_batch(&self, f: impl Fn(&Accum) -> f64) -> Vec<f64> {
        self.batches.iter().map(f).collect()
    }
}

fn effective_batches(n_paths: usize, requested: usize) -> usize {
    requested.clamp(1, n_paths)
}

/// Run an ensemble of `n_paths` paths of the given dynamics.
pub fn run_ensemble(
    model: &BridgeModel,
    config: &SimConfig,
    n_paths: usize,
    dynamics: Dynamics,
    options: &EnsembleOptions,
) -> Result<EnsembleReport> {
    ensure_param!(n_paths >= 2, "n_paths must be >= 2, got {n_paths}");
    ensure_param!(options.curve_points >= 1, "curve_points must be >= 1");
    let sim = Simulator::new(model, config, dynamics)?;
    let batches = effective_batches(n_paths, options.batches);
    let record = curve_indices(config.n_steps, options.curve_points);
    let reduced = Reduced::new(simulate_batches(
        &sim,
        n_paths,
        batches,
        &record,
        options.keep_terminal,
    ));
    let total = &reduced.total;
    let n = total.count as f64;

    let mut mean_curve = Vec::with_capacity(record.len());
    let mut mean_se = Vec::with_capacity(record.len());
    let mut var_curve = Vec::with_capacity(record.len());
    let mut var_se = Vec::with_capacity(record.len());
    for j in 0..record.len() {
        let (m, s) = reduced.mean_and_se(j);
        mean_curve.push(m);
        mean_se.push(s);
        let (v, s) = reduced.var_and_se(j);
        var_curve.push(v);
        var_se.push(s);
    }
    let err = total.abs_err / n;
    let err_se = batch_se(&reduced.per_batch(|b| b.abs_err / b.count as f64));
    let (realized_cost_mean, realized_cost_se) = match dynamics {
        Dynamics::Controlled { .. } => (
            Some(total.cost / n),
            Some(batch_se(&reduced.per_batch(|b| b.cost / b.count as f64))),
        ),
        _ => (None, None),
    };

    Ok(EnsembleReport {
        n_paths,
        seed: config.seed,
        err,
        err_se,
        curve_t: record.iter().map(|&k| config.time(k)).collect(),
        mean_curve,
        mean_se,
        var_curve,
        var_se,
        min_over_all_paths: total.min,
        realized_cost_mean,
        realized_cost_se,
        config: EnsembleEcho {
            model: *model.spec(),
            sim: *config,
            dynamics,
            n_paths,
            batches,
        },
        terminal_values: reduced.total.terminal.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub dt: f64,
    pub n_steps: usize,
    pub err: f64,
    pub err_se: f64,
}

/// Bridge terminal error for each step size (same master seed per row).
pub fn terminal_convergence_sweep(
    model: &BridgeModel,
    base_config: &SimConfig,
    n_paths: usize,
    dts: &[f64],
) -> Result<Vec<SweepRow>> {
    ensure_param!(!dts.is_empty(), "dts must not be empty");
    ensure_param!(
        dts.windows(2).all(|w| w[0] > w[1]),
        "dts must be sorted decreasing"
    );
    let options = EnsembleOptions {
        curve_points: 1,
        ..EnsembleOptions::default()
    };
    dts.iter()
        .map(|&dt| {
            let cfg = SimConfig {
                n_steps: SimConfig::from_dt(dt, base_config.seed)?.n_steps,
                ..*base_config
            };
            let rep = run_ensemble(model, &cfg, n_paths, Dynamics::Bridge, &options)?;
            Ok(SweepRow {
                dt: cfg.dt(),
                n_steps: cfg.n_steps,
                err: rep.err,
                err_se: rep.err_se,
            })
        })
        .collect()
}

/// Least-squares fit of `err ≈ C·dt^γ`; returns `(C, γ)`.
pub fn fit_power_law(rows: &[SweepRow]) -> Result<(f64, f64)> {
    ensure_param!(rows.len() >= 2, "need at least two rows");
    ensure_param!(
        rows.iter().all(|r| r.err > 0.0),
        "power-law fit needs positive errors"
    );
    let xs: Vec<f64> = rows.iter().map(|r| r.dt.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.err.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let gamma = sxy / sxx;
    Ok(((my - gamma * mx).exp(), gamma))
}

/// Whether errors decrease row to row, allowing each row to exceed its
/// predecessor by at most `slack` (relative).
pub fn is_monotone_decreasing(rows: &[SweepRow], slack: f64) -> bool {
    rows.windows(2).all(|w| w[1].err <= w[0].err * (1.0 + slack))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceDecayRow {
    pub delta: f64,
    pub t: f64,
    pub mc_variance: f64,
    pub mc_se: f64,
    pub ode_variance: f64,
}

impl VarianceDecayRow {
    pub fn mc_ratio(&self) -> f64 {
        self.mc_variance / self.delta
    }
    pub fn ode_ratio(&self) -> f64 {
        self.ode_variance / self.delta
    }
}

/// Bridge variance at `t = 1 − δ` from Monte Carlo and from the moment ODEs.
pub fn variance_decay_check(
    model: &BridgeModel,
    config: &SimConfig,
    n_paths: usize,
    deltas: &[f64],
) -> Result<Vec<VarianceDecayRow>> {
    ensure_param!(n_paths >= 2, "n_paths must be >= 2, got {n_paths}");
    let dt = config.dt();
    let mut record = Vec::with_capacity(deltas.len());
    for &d in deltas {
        ensure_param!(
            d >= 10.0 * dt * (1.0 - 1e-9) && d <= 1.0,
            "delta = {d} must lie in [10·dt, 1]"
        );
        record.push(((1.0 - d) / dt).round() as usize);
    }
    let mut sorted = record.clone();
    sorted.sort_unstable();
    sorted.dedup();

    let sim = Simulator::new(model, config, Dynamics::Bridge)?;
    let batches = effective_batches(n_paths, DEFAULT_BATCHES);
    let reduced = Reduced::new(simulate_batches(&sim, n_paths, batches, &sorted, false));
    let curves = if model.is_self_exciting() {
        se_bridge_moments(model, config.n_steps, config.se_drift)?
    } else {
        ou_bridge_moments(model, config.n_steps)?
    };

    Ok(deltas
        .iter()
        .zip(&record)
        .map(|(&delta, &k)| {
            let j = sorted.binary_search(&k).expect("recorded index");
            let (mc_variance, mc_se) = reduced.var_and_se(j);
            VarianceDecayRow {
                delta,
                t: config.time(k),
                mc_variance,
                mc_se,
                ode_variance: curves.variance[k.min(curves.len() - 1)],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyMeasure;

    #[test]
    fn zero_driver_bridge_has_zero_error() {
        let m = BridgeModel::new(10.0, 0.0, 0.0, 0.0, LevyMeasure::null()).unwrap();
        let cfg = SimConfig::new(1000, 3).unwrap();
        let rep = run_ensemble(&m, &cfg, 2, Dynamics::Bridge, &EnsembleOptions::default()).unwrap();
        assert_eq!(rep.err, 0.0);
        assert_eq!(rep.min_over_all_paths, 0.0);
        assert!(rep.var_curve.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn curve_indices_cover_grid() {
        assert_eq!(curve_indices(1000, 10), (0..=10).map(|j| j * 100).collect::<Vec<_>>());
        assert_eq!(curve_indices(3, 10), vec![0, 1, 2, 3]);
    }

    #[test]
    fn report_is_reproducible_and_batch_layout_independent_of_threads() {
        let m = BridgeModel::new(10.0, 0.0, 0.0, 0.0, LevyMeasure::exp_cp(200.0, 50.0).unwrap())
            .unwrap();
        let cfg = SimConfig::new(200, 11).unwrap();
        let opts = EnsembleOptions::default();
        let a = run_ensemble(&m, &cfg, 1000, Dynamics::Bridge, &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool
            .install(|| run_ensemble(&m, &cfg, 1000, Dynamics::Bridge, &opts))
            .unwrap();
        assert_eq!(a, b);
        assert!(a.err > 0.0 && a.err_se > 0.0);
        assert!(a.mean_curve.iter().all(|&v| v >= a.min_over_all_paths));
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let rows: Vec<SweepRow> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&dt| SweepRow {
                dt,
                n_steps: (1.0 / dt) as usize,
                err: 3.0 * f64::powf(dt, 0.5),
                err_se: 0.0,
            })
            .collect();
        let (c, g) = fit_power_law(&rows).unwrap();
        assert!((g - 0.5).abs() < 1e-12);
        assert!((c - 3.0).abs() < 1e-10);
        assert!(is_monotone_decreasing(&rows, 0.0));
    }

    #[test]
    fn variance_decay_rejects_small_delta() {
        let m = BridgeModel::new(10.0, 0.0, 0.0, 0.0, LevyMeasure::null()).unwrap();
        let cfg = SimConfig::new(100, 0).unwrap();
        assert!(variance_decay_check(&m, &cfg, 10, &[0.05]).is_err());
        let rows = variance_decay_check(&m, &cfg, 10, &[1.0, 0.1]).unwrap();
        assert_eq!(rows[0].t, 0.0);
        assert_eq!(rows[0].mc_variance, 0.0);
    }
}
