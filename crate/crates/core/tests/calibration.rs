use std::io::Write;

use jbridge::calibration::{
    calibrate, fit_reversion, ingest_csv, objective_at, synthetic_series, write_series_csv,
    FitOptions, TimeSeries,
};
use jbridge::levy::DriverFamily;
use jbridge::moments::stationary_moments;
use jbridge::{BridgeModel, Error, LevyMeasure};

const HOUR: i64 = 3_600;
const DAY: i64 = 86_400;

fn tempered_model() -> BridgeModel {
    BridgeModel::new(15.8, 0.0, 0.0, 0.0, LevyMeasure::tempered_stable(3.23, 0.031, 0.87).unwrap()).unwrap()
}

#[test]
fn series_survives_a_csv_round_trip() {
    let ts = synthetic_series(&tempered_model(), HOUR, 500, 2, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flow.csv");
    write_series_csv(&path, &ts).unwrap();
    let back = ingest_csv(&path, HOUR, 6 * HOUR).unwrap();
    assert_eq!(back.segments.len(), 1);
    assert_eq!(back.raw_rows, 500);
    let seg = back.longest();
    assert_eq!(seg.start, ts.start);
    for (a, b) in seg.values.iter().zip(&ts.values) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn malformed_rows_are_reported_by_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "timestamp,discharge\n2020-01-01T00:00:00Z,1.0\n2020-01-01T01:00:00Z,-3\n").unwrap();
    match ingest_csv(&path, HOUR, 6 * HOUR) {
        Err(Error::Data(msg)) => assert!(msg.contains("line 3"), "{msg}"),
        other => panic!("expected a data error, got {other:?}"),
    }

    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "time,flow\n2020-01-01T00:00:00Z,1.0").unwrap();
    assert!(matches!(ingest_csv(&path, HOUR, 6 * HOUR), Err(Error::Data(_))));
}

/// Decay estimates agree whether the series is read hourly or daily.
#[test]
fn reversion_rate_is_unit_coherent() {
    let ts = synthetic_series(&tempered_model(), HOUR, 24 * 4_000, 2, 8).unwrap();
    let hourly = fit_reversion(&ts, 200).unwrap();
    let daily_values: Vec<f64> = ts.values.iter().step_by(24).copied().collect();
    let daily = TimeSeries::new(ts.start, DAY, daily_values).unwrap();
    let daily = fit_reversion(&daily, 200).unwrap();
    let ratio = hourly.decay_rate / daily.decay_rate;
    assert!((ratio - 1.0).abs() < 0.10, "hourly {} vs daily {}", hourly.decay_rate, daily.decay_rate);
    assert!((hourly.decay_rate / 15.8 - 1.0).abs() < 0.10);
}

#[test]
fn fitted_objective_is_no_worse_than_the_truth() {
    let truth = tempered_model();
    let ts = synthetic_series(&truth, DAY, 200_000, 8, 2).unwrap();
    let (_, fit) = calibrate(&ts, &FitOptions::new(DriverFamily::TemperedStable)).unwrap();
    assert_eq!(fit.units, "month");
    assert_eq!(fit.p, 0.0);
    let at_truth = objective_at(&fit, DriverFamily::TemperedStable, truth.driver());
    assert!(fit.objective <= at_truth + 1e-8, "{} vs {at_truth}", fit.objective);

    let fitted = BridgeModel::new(fit.r, 0.0, 0.0, 0.0, fit.driver).unwrap();
    let mean = stationary_moments(&fitted).unwrap().mean;
    assert!((mean / fit.empirical.mean - 1.0).abs() < 0.05);
}
