//! Calibration from discharge-style series.
//!
//! Time is measured in months (365.25/12 days). The pipeline is
//!
//! 1. [`ingest_csv`]: parse `timestamp,discharge`, resample to a uniform grid,
//!    bridge short gaps linearly and split at long ones;
//! 2. [`fit_reversion`]: least-squares fit of `exp(−κ·lag·Δ)` to the empirical
//!    autocorrelation over the lags where it exceeds 0.05;
//! 3. [`fit_levy_and_p`]: stationary moment matching (mean, variance, third
//!    central moment, rate of large increments) by multi-start Nelder–Mead.
//!    With the self-exciting flag, `p` is estimated beforehand from the
//!    dependence of the large-increment rate on the current level.

use std::path::Path as FsPath;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{ensure_param, Error, Result};
use crate::levy::{DriverFamily, LevyMeasure};
use crate::model::{BridgeModel, ModelSpec};
use crate::moments::stationary_moments;
use crate::rng::{aux_stream, path_stream};
use crate::sde::free_run;

pub const SECONDS_PER_MONTH: f64 = 365.25 / 12.0 * 86_400.0;
const ACF_FLOOR: f64 = 0.05;
const BAD_COST: f64 = 1e30;

/// Uniformly sampled series; timestamps are Unix seconds (UTC).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub start: i64,
    pub interval_secs: i64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(start: i64, interval_secs: i64, values: Vec<f64>) -> Result<Self> {
        ensure_param!(interval_secs > 0, "interval must be positive, got {interval_secs} s");
        ensure_param!(!values.is_empty(), "empty series");
        ensure_param!(values.iter().all(|v| v.is_finite()), "series values must be finite");
        Ok(Self {
            start,
            interval_secs,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, k: usize) -> i64 {
        self.start + k as i64 * self.interval_secs
    }

    pub fn interval_months(&self) -> f64 {
        self.interval_secs as f64 / SECONDS_PER_MONTH
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gap {
    pub from: String,
    pub to: String,
    pub seconds: i64,
}

/// Result of ingestion: uniform segments separated by gaps longer than the
/// interpolation threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub segments: Vec<TimeSeries>,
    pub long_gaps: Vec<Gap>,
    pub raw_rows: usize,
}

impl Ingested {
    pub fn longest(&self) -> &TimeSeries {
        // Ingestion never yields zero segments; ties keep the earliest.
        let mut best = &self.segments[0];
        for s in &self.segments[1..] {
            if s.len() > best.len() {
                best = s;
            }
        }
        best
    }
}

pub fn format_timestamp(secs: i64) -> String {
    DateTime::from_timestamp(secs, 0)
        .map(|d| d.naive_utc().format("%Y-%m-%dT%H:%M:%S").to_string())
        .unwrap_or_else(|| secs.to_string())
}

/// ISO-8601 timestamp to Unix seconds; offsets are honoured, naive times are
/// taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(d) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(d.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|d| d.and_utc().timestamp())
}

/// Interval such as `3600`, `30m`, `1h`, `1d` to seconds.
pub fn parse_interval(s: &str) -> Result<i64> {
    let s = s.trim();
    let (num, unit) = match s.char_indices().find(|(_, c)| c.is_ascii_alphabetic()) {
        Some((i, _)) => (&s[..i], &s[i..]),
        None => (s, "s"),
    };
    let mult = match unit {
        "s" => 1,
        "m" | "min" => 60,
        "h" => 3600,
        "d" => 86_400,
        _ => return Err(Error::InvalidParameter(format!("unknown interval unit in {s:?}"))),
    };
    let n: i64 = num
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad interval {s:?}")))?;
    ensure_param!(n > 0, "interval must be positive, got {s:?}");
    Ok(n * mult)
}

/// Read `timestamp,discharge` rows, resample to `interval_secs` and fill gaps
/// of at most `max_gap_secs` by linear interpolation. Lines starting with `#`
/// are ignored.
pub fn ingest_csv(path: &FsPath, interval_secs: i64, max_gap_secs: i64) -> Result<Ingested> {
    ensure_param!(interval_secs > 0, "interval must be positive");
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "discharge" {
        return Err(Error::Data(format!(
            "expected header `timestamp,discharge`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut raw: Vec<(i64, f64)> = Vec::new();
    let mut problems = Vec::new();
    for rec in reader.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let Some(t) = rec.get(0).and_then(parse_timestamp) else {
            problems.push(format!("line {line}: unparseable timestamp {:?}", rec.get(0).unwrap_or("")));
            continue;
        };
        let v = match rec.get(1).map(str::parse::<f64>) {
            Some(Ok(v)) if v.is_finite() && v >= 0.0 => v,
            Some(Ok(v)) => {
                problems.push(format!("line {line}: discharge must be finite and >= 0, got {v}"));
                continue;
            }
            _ => {
                problems.push(format!("line {line}: unparseable discharge {:?}", rec.get(1).unwrap_or("")));
                continue;
            }
        };
        if let Some(&(prev, _)) = raw.last() {
            if t <= prev {
                problems.push(format!("line {line}: timestamps must be strictly increasing"));
                continue;
            }
        }
        raw.push((t, v));
    }
    if !problems.is_empty() {
        return Err(Error::Data(problems.join("; ")));
    }
    if raw.is_empty() {
        return Err(Error::Data("empty series".into()));
    }
    let raw_rows = raw.len();
    let (segments, long_gaps) = resample(&raw, interval_secs, max_gap_secs);
    Ok(Ingested {
        segments,
        long_gaps,
        raw_rows,
    })
}

fn resample(raw: &[(i64, f64)], dt: i64, max_gap: i64) -> (Vec<TimeSeries>, Vec<Gap>) {
    let mut segments = Vec::new();
    let mut gaps = Vec::new();
    let mut seg_start = raw[0].0;
    let mut values = vec![raw[0].1];
    let mut i = 0;
    loop {
        let g = seg_start + values.len() as i64 * dt;
        while i + 1 < raw.len() && raw[i + 1].0 < g {
            if raw[i + 1].0 - raw[i].0 > max_gap {
                break;
            }
            i += 1;
        }
        if i + 1 >= raw.len() {
            break;
        }
        let (t0, v0) = raw[i];
        let (t1, v1) = raw[i + 1];
        if t1 - t0 > max_gap {
            gaps.push(Gap {
                from: format_timestamp(t0),
                to: format_timestamp(t1),
                seconds: t1 - t0,
            });
            segments.push(TimeSeries {
                start: seg_start,
                interval_secs: dt,
                values: std::mem::take(&mut values),
            });
            seg_start = t1;
            values.push(v1);
            i += 1;
            continue;
        }
        let v = if g == t0 {
            v0
        } else if g == t1 {
            v1
        } else {
            v0 + (v1 - v0) * (g - t0) as f64 / (t1 - t0) as f64
        };
        values.push(v);
    }
    segments.push(TimeSeries {
        start: seg_start,
        interval_secs: dt,
        values,
    });
    (segments, gaps)
}

/// Write a series as `timestamp,discharge`.
pub fn write_series_csv(path: &FsPath, ts: &TimeSeries) -> Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "timestamp,discharge")?;
    for (k, v) in ts.values.iter().enumerate() {
        writeln!(w, "{},{v}", format_timestamp(ts.timestamp(k)))?;
    }
    w.flush()?;
    Ok(())
}

/// Long stationary sample of the free process, observed every
/// `interval_secs` with `substeps` Euler steps in between. Starts at the
/// stationary mean and discards a burn-in of ten relaxation times.
pub fn synthetic_series(
    model: &BridgeModel,
    interval_secs: i64,
    n: usize,
    substeps: usize,
    seed: u64,
) -> Result<TimeSeries> {
    ensure_param!(n >= 2, "need at least two samples");
    ensure_param!(substeps >= 1, "substeps must be >= 1");
    let step = interval_secs as f64 / SECONDS_PER_MONTH;
    let start = stationary_moments(model)?.mean;
    let free = BridgeModel::from_spec_unchecked_moments(ModelSpec {
        x0: start,
        ..*model.spec()
    })?;
    let burn = (10.0 / (model.big_r() * step)).ceil() as usize;
    let mut rng = path_stream(seed, 0);
    let mut values = free_run(&free, step / substeps as f64, substeps, burn + n - 1, &mut rng)?;
    values.drain(..burn);
    TimeSeries::new(946_684_800, interval_secs, values)
}

/// Biased sample autocorrelation for lags `0..=max_lag`.
pub fn autocorrelation(values: &[f64], max_lag: usize) -> Vec<f64> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum();
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|k| {
            if c0 == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / c0
        })
        .collect()
}

/// Which model rate the fitted autocorrelation decay is identified with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayIdentification {
    /// Decay rate = `r`.
    #[default]
    ReversionRate,
    /// Decay rate = `R = r − p·M1`.
    EffectiveRate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReversionFit {
    /// Fitted decay rate (1/month).
    pub decay_rate: f64,
    pub interval_months: f64,
    pub fitted_lags: usize,
    /// Empirical autocorrelation, lags `0..=max_lag`.
    pub acf: Vec<f64>,
    pub rms_residual: f64,
}

impl ReversionFit {
    pub fn fitted(&self, lag: usize) -> f64 {
        (-self.decay_rate * lag as f64 * self.interval_months).exp()
    }

    /// `(lag, acf, fitted)` rows.
    pub fn rows(&self) -> Vec<(usize, f64, f64)> {
        self.acf
            .iter()
            .enumerate()
            .map(|(k, &a)| (k, a, self.fitted(k)))
            .collect()
    }
}

/// Fit `ρ(k) = exp(−κ·k·Δ)` to the sample autocorrelation over the lags
/// `1..=K` where `K` is the last lag before it first drops to 0.05.
pub fn fit_reversion(ts: &TimeSeries, max_lag: usize) -> Result<ReversionFit> {
    ensure_param!(max_lag >= 1, "max_lag must be >= 1");
    ensure_param!(
        ts.len() > 10 * max_lag,
        "series of length {} too short for max_lag = {max_lag}",
        ts.len()
    );
    let acf = autocorrelation(&ts.values, max_lag);
    let step = ts.interval_months();
    let k_max = acf[1..].iter().take_while(|&&a| a > ACF_FLOOR).count();
    if k_max == 0 {
        return Err(Error::Fit(format!(
            "autocorrelation at lag 1 is {:.3} <= {ACF_FLOOR}: no decay to fit",
            acf[1]
        )));
    }
    if k_max == max_lag && acf[max_lag] > 0.5 {
        return Err(Error::Fit(format!(
            "autocorrelation still {:.3} at lag {max_lag}: not decaying",
            acf[max_lag]
        )));
    }
    let lags: Vec<(f64, f64)> = (1..=k_max).map(|k| (k as f64 * step, acf[k])).collect();
    let sse = |kappa: f64| -> f64 { lags.iter().map(|&(t, a)| (a - (-kappa * t).exp()).powi(2)).sum() };
    // Log-linear start, then Gauss–Newton with step halving.
    let num: f64 = lags.iter().map(|&(t, a)| -t * a.ln()).sum();
    let den: f64 = lags.iter().map(|&(t, _)| t * t).sum();
    let mut kappa = num / den;
    let mut current = sse(kappa);
    for _ in 0..100 {
        let (mut g, mut h) = (0.0, 0.0);
        for &(t, a) in &lags {
            let f = (-kappa * t).exp();
            g += (a - f) * t * f;
            h += (t * f).powi(2);
        }
        let mut delta = -g / h;
        let mut improved = false;
        for _ in 0..40 {
            let trial = kappa + delta;
            if trial > 0.0 {
                let s = sse(trial);
                if s <= current {
                    kappa = trial;
                    improved = (current - s) > 1e-15 * current.max(1e-300);
                    current = s;
                    break;
                }
            }
            delta /= 2.0;
        }
        if !improved {
            break;
        }
    }
    ensure_param!(kappa > 0.0 && kappa.is_finite(), "fitted decay rate {kappa} is not positive");
    Ok(ReversionFit {
        decay_rate: kappa,
        interval_months: step,
        fitted_lags: k_max,
        acf,
        rms_residual: (current / k_max as f64).sqrt(),
    })
}

fn default_starts() -> usize {
    10
}
fn default_significance() -> f64 {
    3.0
}
fn default_max_lag() -> usize {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub family: DriverFamily,
    /// Estimate `p`; otherwise `p = 0`.
    #[serde(default)]
    pub self_exciting: bool,
    #[serde(default)]
    pub decay: DecayIdentification,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    /// Threshold on the de-trended increments; chosen from the data if absent.
    #[serde(default)]
    pub jump_threshold: Option<f64>,
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// `p` is kept only if it exceeds this many standard errors.
    #[serde(default = "default_significance")]
    pub p_significance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FitOptions {
    pub fn new(family: DriverFamily) -> Self {
        Self {
            family,
            self_exciting: false,
            decay: DecayIdentification::default(),
            max_lag: default_max_lag(),
            jump_threshold: None,
            starts: default_starts(),
            p_significance: default_significance(),
            seed: 0,
        }
    }
}

/// Empirical targets of the moment matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalStats {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub third_central: f64,
    pub threshold: f64,
    /// Intervals whose de-trended increment exceeds the threshold, per month.
    pub exceedance_rate: f64,
}

impl EmpiricalStats {
    fn targets(&self) -> [f64; 4] {
        [self.mean, self.variance, self.third_central, self.exceedance_rate]
    }
}

/// Maximum-likelihood fit of the exceedance counts to a rate `a·(1 + p·X_k)`:
/// the events are conditionally Poisson given the level at the start of the
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PRegression {
    pub p_hat: f64,
    pub se: f64,
    pub events: usize,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub units: &'static str,
    pub interval_months: f64,
    pub decay_rate: f64,
    pub decay_identification: DecayIdentification,
    /// Rate used to de-trend increments for jump detection.
    pub relaxation_rate: f64,
    pub refinement_rounds: usize,
    pub r: f64,
    pub big_r: f64,
    pub p: f64,
    pub p_regression: Option<PRegression>,
    pub driver: LevyMeasure,
    pub acf_fitted_lags: usize,
    pub acf_rms_residual: f64,
    pub empirical: EmpiricalStats,
    /// Model values of `[mean, variance, third central, exceedance rate]`.
    pub model_targets: [f64; 4],
    pub moment_residuals: [f64; 4],
    pub objective: f64,
    pub best_start: usize,
    pub start_objectives: Vec<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// De-trended increments `X_{k+1} − e^{−κΔ} X_k`.
fn innovations(ts: &TimeSeries, decay: f64) -> Vec<f64> {
    let phi = (-decay * ts.interval_months()).exp();
    ts.values.windows(2).map(|w| w[1] - phi * w[0]).collect()
}

pub fn empirical_stats(ts: &TimeSeries, decay: f64, threshold: Option<f64>) -> Result<EmpiricalStats> {
    ensure_param!(ts.len() >= 3, "series too short");
    let n = ts.len() as f64;
    let mean = ts.values.iter().sum::<f64>() / n;
    let variance = ts.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let third_central = ts.values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let eps = innovations(ts, decay);
    let threshold = match threshold {
        Some(t) => t,
        None => {
            let mut e = eps.clone();
            let med = median(&mut e);
            let mut dev: Vec<f64> = eps.iter().map(|x| (x - med).abs()).collect();
            let mad = 1.4826 * median(&mut dev);
            // The floor keeps rarely-jumping series from counting discretization
            // residue as jumps.
            (med + 10.0 * mad).max(0.5 * variance.sqrt())
        }
    };
    ensure_param!(threshold > 0.0, "jump threshold must be > 0, got {threshold}");
    let count = eps.iter().filter(|&&e| e > threshold).count();
    Ok(EmpiricalStats {
        n: ts.len(),
        mean,
        variance,
        third_central,
        threshold,
        exceedance_rate: count as f64 / (eps.len() as f64 * ts.interval_months()),
    })
}

/// Estimate `p ≥ 0` by maximizing the profile log-likelihood
/// `ℓ(p) = Σ y_k ln(1 + p·X_k) − Y·ln Σ (1 + p·X_k)` of the exceedance
/// indicators `y_k`; the standard error comes from the observed information.
pub fn p_regression(ts: &TimeSeries, relax: f64, threshold: f64, significance: f64) -> Result<PRegression> {
    let eps = innovations(ts, relax);
    let xs = &ts.values[..eps.len()];
    ensure_param!(
        xs.iter().all(|&x| x >= 0.0),
        "p estimation needs a nonnegative series"
    );
    let hits: Vec<f64> = xs
        .iter()
        .zip(&eps)
        .filter(|(_, &e)| e > threshold)
        .map(|(&x, _)| x)
        .collect();
    let events = hits.len();
    if events < 10 {
        return Err(Error::Fit(format!(
            "only {events} threshold exceedances: p is not identifiable"
        )));
    }
    let n = xs.len() as f64;
    let sum_x: f64 = xs.iter().sum();
    let y = events as f64;
    // Derivatives of the profile log-likelihood.
    let d1 = |p: f64| hits.iter().map(|x| x / (1.0 + p * x)).sum::<f64>() - y * sum_x / (n + p * sum_x);
    let d2 = |p: f64| {
        -hits.iter().map(|x| (x / (1.0 + p * x)).powi(2)).sum::<f64>()
            + y * (sum_x / (n + p * sum_x)).powi(2)
    };
    // ℓ is concave in p; bracket the root of ℓ' and bisect.
    let p_hat = if d1(0.0) <= 0.0 {
        0.0
    } else {
        let mut hi = 1.0 / (sum_x / n).max(f64::MIN_POSITIVE);
        let mut grow = 0;
        while d1(hi) > 0.0 && grow < 200 {
            hi *= 2.0;
            grow += 1;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if d1(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let info = -d2(p_hat);
    let se = if info > 0.0 { 1.0 / info.sqrt() } else { f64::INFINITY };
    Ok(PRegression {
        p_hat,
        se,
        events,
        significant: p_hat > significance * se,
    })
}

/// Driver parameters from unconstrained coordinates (logs, logit for α).
fn driver_from(family: DriverFamily, z: &[f64]) -> Result<LevyMeasure> {
    match family {
        DriverFamily::ExpCp => LevyMeasure::exp_cp(z[0].exp(), z[1].exp()),
        DriverFamily::TemperedStable => {
            LevyMeasure::tempered_stable(z[0].exp(), z[1].exp(), 1.0 / (1.0 + (-z[2]).exp()))
        }
    }
}

fn coords_of(driver: &LevyMeasure) -> Vec<f64> {
    match driver {
        LevyMeasure::ExpCompoundPoisson(m) => vec![m.lambda.ln(), m.eta.ln()],
        LevyMeasure::TemperedStable(m) => {
            vec![m.c.ln(), m.beta.ln(), (m.alpha / (1.0 - m.alpha)).ln()]
        }
    }
}

/// Matching problem with `p` and the decay rate held fixed.
#[derive(Debug, Clone, Copy)]
struct MomentProblem {
    family: DriverFamily,
    decay: f64,
    relax: f64,
    identification: DecayIdentification,
    p: f64,
    interval: f64,
    stats: EmpiricalStats,
}

impl MomentProblem {
    fn model(&self, driver: LevyMeasure) -> Result<BridgeModel> {
        let r = match self.identification {
            DecayIdentification::ReversionRate => self.decay,
            DecayIdentification::EffectiveRate => {
                self.decay + self.p * driver.moments_unchecked().m1
            }
        };
        BridgeModel::from_spec_unchecked_moments(ModelSpec {
            r,
            p: self.p,
            x0: 0.0,
            x_hat: 0.0,
            driver,
        })
    }

    /// Exceedance rate implied by the model: jumps above θ after decaying over
    /// the rest of the interval, averaged by Simpson's rule.
    fn exceedance_rate(&self, model: &BridgeModel, mean: f64) -> Result<f64> {
        let th = self.stats.threshold;
        let k = self.relax * self.interval;
        let d = model.driver();
        let tail = d.tail_mass(th)? + 4.0 * d.tail_mass(th * (0.5 * k).exp())? + d.tail_mass(th * k.exp())?;
        Ok((1.0 + self.p * mean).max(0.0) * tail / 6.0)
    }

    fn targets(&self, driver: LevyMeasure) -> Result<[f64; 4]> {
        let model = self.model(driver)?;
        let s = stationary_moments(&model)?;
        Ok([
            s.mean,
            s.variance(),
            s.third_central(),
            self.exceedance_rate(&model, s.mean)?,
        ])
    }

    fn residuals(&self, driver: LevyMeasure) -> Result<[f64; 4]> {
        let m = self.targets(driver)?;
        let e = self.stats.targets();
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = (m[i] - e[i]) / e[i].abs().max(f64::MIN_POSITIVE);
        }
        Ok(out)
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let Ok(driver) = driver_from(self.family, z) else {
            return BAD_COST;
        };
        match self.residuals(driver) {
            Ok(r) => {
                let v: f64 = r.iter().map(|x| x * x).sum();
                if v.is_finite() {
                    v
                } else {
                    BAD_COST
                }
            }
            Err(_) => BAD_COST,
        }
    }

    /// Moment-based guess ignoring self-excitation.
    fn initial_guess(&self) -> Vec<f64> {
        let s = self.stats;
        let r = self.decay;
        match self.family {
            DriverFamily::ExpCp => {
                // mean = λ/(η² r), var = λ/(η³ r).
                let eta = (s.mean / s.variance).max(1e-12);
                let lambda = (s.mean * r * eta * eta).max(1e-12);
                vec![lambda.ln(), eta.ln()]
            }
            DriverFamily::TemperedStable => {
                let alpha: f64 = 0.5;
                // var/mean = (1 − α)/(2β).
                let beta = ((1.0 - alpha) * s.mean / (2.0 * s.variance)).max(1e-12);
                let c = (s.mean * r / (gamma(1.0 - alpha) * beta.powf(alpha - 1.0))).max(1e-12);
                vec![c.ln(), beta.ln(), 0.0]
            }
        }
    }
}

impl CostFunction for MomentProblem {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, z: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.objective(z))
    }
}

fn nelder_mead(problem: MomentProblem, start: Vec<f64>) -> (Vec<f64>, f64) {
    let mut simplex = vec![start.clone()];
    for i in 0..start.len() {
        let mut v = start.clone();
        v[i] += 0.5;
        simplex.push(v);
    }
    let run = NelderMead::new(simplex)
        .with_sd_tolerance(1e-12)
        .map_err(|e| e.to_string())
        .and_then(|solver| {
            Executor::new(problem, solver)
                .configure(|s| s.max_iters(3000))
                .run()
                .map_err(|e| e.to_string())
        });
    match run {
        Ok(res) => {
            let state = res.state();
            match state.get_best_param() {
                Some(p) => (p.clone(), state.get_best_cost()),
                None => (start, BAD_COST),
            }
        }
        Err(_) => (start, BAD_COST),
    }
}

/// Best of `options.starts` Nelder–Mead runs from jittered copies of the
/// moment-based guess: `(start index, coordinates, cost, all costs)`.
fn solve(problem: MomentProblem, options: &FitOptions) -> Result<(usize, Vec<f64>, f64, Vec<f64>)> {
    let base = problem.initial_guess();
    let mut rng = aux_stream(options.seed, 0xCA11);
    let starts: Vec<Vec<f64>> = (0..options.starts)
        .map(|i| {
            let jitter: Vec<f64> = base.iter().map(|_| rng.random_range(-1.5..1.5)).collect();
            if i == 0 {
                base.clone()
            } else {
                base.iter().zip(&jitter).map(|(b, j)| b + j).collect()
            }
        })
        .collect();
    let outcomes: Vec<(Vec<f64>, f64)> = starts
        .into_par_iter()
        .map(|s| nelder_mead(problem, s))
        .collect();
    let (best, (z, cost)) = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .expect("at least one start");
    if *cost >= BAD_COST {
        return Err(Error::Fit("Nelder–Mead failed from every start".into()));
    }
    Ok((best, z.clone(), *cost, outcomes.iter().map(|o| o.1).collect()))
}

/// Fit the driver (and `p` with the self-exciting flag) given the decay rate.
///
/// Between jumps a path relaxes at the raw rate `r`, so jump detection uses
/// innovations de-trended at `r`. When the decay is identified with `R`, `r`
/// depends on the fitted `p` and `M1`; the detection and fit are then repeated
/// until `p` settles.
pub fn fit_levy_and_p(
    ts: &TimeSeries,
    reversion: &ReversionFit,
    options: &FitOptions,
) -> Result<CalibrationResult> {
    ensure_param!(options.starts >= 1, "need at least one start");
    let decay = reversion.decay_rate;
    let first = empirical_stats(ts, decay, options.jump_threshold)?;
    ensure_param!(
        first.mean > 0.0 && first.variance > 0.0,
        "stationary mean and variance must be positive for a subordinator-driven fit"
    );
    let threshold = first.threshold;
    let mut relax = decay;
    let mut stats = first;
    let mut previous_p = f64::NAN;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let regression = if options.self_exciting {
            Some(p_regression(ts, relax, threshold, options.p_significance)?)
        } else {
            None
        };
        let p = match regression {
            Some(reg) if reg.significant => reg.p_hat,
            _ => 0.0,
        };
        let problem = MomentProblem {
            family: options.family,
            decay,
            relax,
            identification: options.decay,
            p,
            interval: ts.interval_months(),
            stats,
        };
        let (best_start, best_z, objective, start_objectives) = solve(problem, options)?;
        let driver = driver_from(options.family, &best_z)?;
        let model = problem
            .model(driver)
            .map_err(|e| Error::Fit(format!("fitted model invalid: {e}")))?;
        let settled = !options.self_exciting
            || options.decay == DecayIdentification::ReversionRate
            || (p - previous_p).abs() < 1e-4
            || rounds >= 8;
        if settled {
            return Ok(CalibrationResult {
                units: "month",
                interval_months: ts.interval_months(),
                decay_rate: decay,
                decay_identification: options.decay,
                relaxation_rate: relax,
                refinement_rounds: rounds,
                r: model.r(),
                big_r: model.big_r(),
                p,
                p_regression: regression,
                driver,
                acf_fitted_lags: reversion.fitted_lags,
                acf_rms_residual: reversion.rms_residual,
                empirical: stats,
                model_targets: problem.targets(driver)?,
                moment_residuals: problem.residuals(driver)?,
                objective,
                best_start,
                start_objectives,
            });
        }
        previous_p = p;
        relax = model.r();
        stats = empirical_stats(ts, relax, Some(threshold))?;
    }
}

/// Objective of the matching problem at an explicit driver (diagnostics and
/// tests), using the same empirical targets and `p` as `result`.
pub fn objective_at(result: &CalibrationResult, family: DriverFamily, driver: &LevyMeasure) -> f64 {
    let problem = MomentProblem {
        family,
        decay: result.decay_rate,
        relax: result.relaxation_rate,
        identification: result.decay_identification,
        p: result.p,
        interval: result.interval_months,
        stats: result.empirical,
    };
    problem.objective(&coords_of(driver))
}

/// Both stages on one series.
pub fn calibrate(ts: &TimeSeries, options: &FitOptions) -> Result<(ReversionFit, CalibrationResult)> {
    let rev = fit_reversion(ts, options.max_lag)?;
    let res = fit_levy_and_p(ts, &rev, options)?;
    Ok((rev, res))
}
