//! The invariant suite behind `jbridge verify`.

use jbridge::coefficients::{closed_form_mean, kernels, limit_a, limit_b, FiniteFCoefficients};
use jbridge::ensemble::{
    is_monotone_decreasing, run_ensemble, terminal_convergence_sweep, variance_decay_check,
    EnsembleOptions, EnsembleReport,
};
use jbridge::moments::{ou_bridge_moments, se_bridge_moments, MomentCurves};
use jbridge::sde::{Dynamics, SimConfig};
use jbridge::{BridgeModel, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::VerifyTask;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// The check documents a failure the paper reports; it does not count
    /// towards the overall verdict.
    pub expected_fail: bool,
    pub detail: Value,
}

fn check(name: &'static str, passed: bool, detail: Value) -> Check {
    Check {
        name,
        passed,
        expected_fail: false,
        detail,
    }
}

const PROBE_TIMES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 0.99];

/// Backward RK4 for `A' = A² + 2ρA`, `B' = (ρ + A)B − κA` from `(F, −F·x̂)` at
/// `t = 1`, sampled at `probe`.
fn riccati_rk4(rate: f64, constant: f64, x_hat: f64, f: f64, h: f64, probe: &[f64]) -> Vec<(f64, f64)> {
    let rhs = |a: f64, b: f64| (a * a + 2.0 * rate * a, (rate + a) * b - constant * a);
    let n = (1.0 / h).round() as usize;
    let mut a = f;
    let mut b = -f * x_hat;
    let mut out = vec![(f64::NAN, f64::NAN); probe.len()];
    let record = |k: usize, a: f64, b: f64, out: &mut Vec<(f64, f64)>| {
        for (i, &t) in probe.iter().enumerate() {
            if ((1.0 - t) / h).round() as usize == k {
                out[i] = (a, b);
            }
        }
    };
    record(0, a, b, &mut out);
    for k in 0..n {
        // Integrate in τ = 1 − t: dA/dτ = −A'.
        let (k1a, k1b) = rhs(a, b);
        let (k2a, k2b) = rhs(a - 0.5 * h * k1a, b - 0.5 * h * k1b);
        let (k3a, k3b) = rhs(a - 0.5 * h * k2a, b - 0.5 * h * k2b);
        let (k4a, k4b) = rhs(a - h * k3a, b - h * k3b);
        a -= h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
        b -= h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        record(k + 1, a, b, &mut out);
    }
    out
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn riccati_check(model: &BridgeModel, penalty: f64) -> Result<Check> {
    let coeffs = model.finite_coefficients(penalty)?;
    let oracle = riccati_rk4(model.big_r(), model.m(), model.x_hat(), penalty, 1e-5, &PROBE_TIMES);
    let mut worst: f64 = 0.0;
    for (&t, &(a, b)) in PROBE_TIMES.iter().zip(&oracle) {
        worst = worst.max(rel(coeffs.a_at(t)?, a));
        if b != 0.0 {
            worst = worst.max(rel(coeffs.b_at(t)?, b));
        }
    }
    Ok(check(
        "riccati_closed_form_vs_rk4",
        worst <= 1e-6,
        json!({"penalty": penalty, "max_relative_error": worst, "tolerance": 1e-6}),
    ))
}

fn limit_check(model: &BridgeModel) -> Result<Check> {
    let big = FiniteFCoefficients::new(model.big_r(), model.m(), model.x_hat(), 1e12, model.m1(), model.m2())?;
    let mut worst: f64 = 0.0;
    for &t in &PROBE_TIMES {
        worst = worst.max(rel(big.a_at(t)?, limit_a(model.big_r(), t)?));
        let lb = limit_b(model.big_r(), model.m(), model.x_hat(), t)?;
        if lb != 0.0 {
            worst = worst.max(rel(big.b_at(t)?, lb));
        }
    }
    Ok(check(
        "finite_penalty_tends_to_limit",
        worst <= 1e-6,
        json!({"penalty": 1e12, "max_relative_error": worst, "tolerance": 1e-6}),
    ))
}

/// `(|2ρ·K·I1 − 1|, |K·I2|, |K·I3|)` at `t = 1 − δ`.
pub fn kernel_residuals(rate: f64, delta: f64, corrupt: bool) -> Result<[f64; 3]> {
    let mut ker = kernels(rate, 1.0 - delta)?;
    if corrupt {
        ker.k *= 1.0 + 1e-3;
    }
    Ok([
        (2.0 * rate * ker.k * ker.i1 - 1.0).abs(),
        (ker.k * ker.i2).abs(),
        (ker.k * ker.i3).abs(),
    ])
}

fn kernel_check(model: &BridgeModel, corrupt: bool) -> Result<Check> {
    let r = model.r();
    let coarse = kernel_residuals(r, 1e-6, corrupt)?;
    let fine = kernel_residuals(r, 1e-8, corrupt)?;
    let small = coarse.iter().all(|&e| e <= 1e-4);
    let shrinks = coarse.iter().zip(&fine).all(|(c, f)| f <= c);
    Ok(check(
        "kernel_limits",
        small && shrinks,
        json!({"rate": r, "delta_1e-6": coarse, "delta_1e-8": fine, "tolerance": 1e-4, "corrupted": corrupt}),
    ))
}

fn mean_check(model: &BridgeModel) -> Result<Check> {
    let ou = model.with_p(0.0)?;
    let n = 1_000_000;
    let curves = ou_bridge_moments(&ou, n)?;
    let mut sup: f64 = 0.0;
    for (k, &m) in curves.mean.iter().enumerate() {
        sup = sup.max((m - closed_form_mean(&ou, curves.grid[k])?).abs());
    }
    let near_end = curves.mean[curves.index_of(1.0 - 1e-4)];
    let end_gap = (near_end - ou.x_hat()).abs();
    Ok(check(
        "closed_form_mean_vs_ode",
        sup <= 1e-4 && end_gap <= 1e-3,
        json!({"dt": 1.0 / n as f64, "sup_norm": sup, "mean_gap_at_1-1e-4": end_gap}),
    ))
}

fn sweep_check(model: &BridgeModel, sim: &SimConfig, n_paths: usize, dts: &[f64]) -> Result<Check> {
    let ou = model.with_p(0.0)?;
    let rows = terminal_convergence_sweep(&ou, sim, n_paths, dts)?;
    let finest = rows.last().map(|r| r.err).unwrap_or(f64::NAN);
    let ok = is_monotone_decreasing(&rows, 0.10) && finest <= 5e-4;
    Ok(check(
        "terminal_error_convergence",
        ok,
        json!({"n_paths": n_paths, "rows": rows, "slack": 0.10, "finest_err_bound": 5e-4}),
    ))
}

fn variance_check(model: &BridgeModel, sim: &SimConfig, n_paths: usize, deltas: &[f64]) -> Result<Check> {
    let rows = variance_decay_check(model, sim, n_paths, deltas)?;
    let spread = |v: Vec<f64>| {
        let hi = v.iter().cloned().fold(f64::MIN, f64::max);
        let lo = v.iter().cloned().fold(f64::MAX, f64::min);
        hi / lo
    };
    let mc = spread(rows.iter().map(|r| r.mc_ratio()).collect());
    let ode = spread(rows.iter().map(|r| r.ode_ratio()).collect());
    Ok(check(
        "variance_decay",
        mc <= 3.0 && ode <= 3.0,
        json!({"rows": rows, "mc_ratio_spread": mc, "ode_ratio_spread": ode, "max_spread": 3.0}),
    ))
}

/// Largest deviation, in standard errors, of the ensemble mean and variance
/// from the ODE curves at the deciles.
pub fn decile_agreement(report: &EnsembleReport, curves: &MomentCurves) -> (f64, f64) {
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for d in 1..=9 {
        let t = d as f64 / 10.0;
        let j = report.curve_index(t);
        let k = curves.index_of(t);
        let z = |diff: f64, se: f64| {
            if se > 0.0 {
                diff.abs() / se
            } else if diff.abs() <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        };
        worst_mean = worst_mean.max(z(report.mean_curve[j] - curves.mean[k], report.mean_se[j]));
        worst_var = worst_var.max(z(report.var_curve[j] - curves.variance[k], report.var_se[j]));
    }
    (worst_mean, worst_var)
}

fn bridge_report(model: &BridgeModel, sim: &SimConfig, n_paths: usize) -> Result<EnsembleReport> {
    run_ensemble(model, sim, n_paths, Dynamics::Bridge, &EnsembleOptions::default())
}

fn curves_for(model: &BridgeModel, sim: &SimConfig) -> Result<MomentCurves> {
    if model.is_self_exciting() {
        se_bridge_moments(model, sim.n_steps, sim.se_drift)
    } else {
        ou_bridge_moments(model, sim.n_steps)
    }
}

pub fn run_all(model: &BridgeModel, sim: &SimConfig, n_paths: usize, task: &VerifyTask) -> Result<Vec<Check>> {
    let mut checks = vec![
        riccati_check(model, task.riccati_penalty)?,
        limit_check(model)?,
        kernel_check(model, task.corrupt_coefficient)?,
        mean_check(model)?,
        sweep_check(model, sim, n_paths, &task.sweep_dts)?,
        variance_check(model, sim, n_paths, &task.variance_deltas)?,
    ];

    let mut variants = vec![("ou", model.with_p(0.0)?)];
    if model.is_self_exciting() {
        variants.push(("se", *model));
    }
    for (label, m) in variants {
        let report = bridge_report(&m, sim, n_paths)?;
        let (zm, zv) = decile_agreement(&report, &curves_for(&m, sim)?);
        checks.push(check(
            if label == "ou" { "mc_vs_ode_ou" } else { "mc_vs_ode_se" },
            zm <= 3.0 && zv <= 3.0,
            json!({"max_mean_z": zm, "max_variance_z": zv, "bound": 3.0, "err": report.err}),
        ));
        if label == "se" {
            let floor = -1.0 / m.p();
            checks.push(check(
                "se_path_floor",
                report.min_over_all_paths > floor,
                json!({"p": m.p(), "floor": floor, "min_over_all_paths": report.min_over_all_paths}),
            ));
        }
    }

    let control_p = task.floor_control_p;
    match model.with_p(control_p) {
        Ok(m) => {
            let report = bridge_report(&m, sim, n_paths)?;
            let floor = -1.0 / control_p;
            let mut c = check(
                "se_path_floor_violation_large_p",
                report.min_over_all_paths <= floor,
                json!({
                    "p": control_p,
                    "floor": floor,
                    "min_over_all_paths": report.min_over_all_paths,
                    "note": "expected to show violations for large p; passes only if some path crosses the floor"
                }),
            );
            c.expected_fail = true;
            checks.push(c);
        }
        Err(e) => {
            let mut c = check(
                "se_path_floor_violation_large_p",
                false,
                json!({"p": control_p, "error": e.to_string()}),
            );
            c.expected_fail = true;
            checks.push(c);
        }
    }
    Ok(checks)
}
