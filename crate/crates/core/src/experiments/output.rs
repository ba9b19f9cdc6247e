//! CSV and JSON emission. Every CSV has a header row and fixed column
//! order; floats carry 17 significant digits so files are bit-reproducible
//! and lossless to reparse.

use std::fs::File;
use std::path::Path;

use crate::montecarlo::McStudy;
use crate::quad1d::HermiteBoundReport;
use crate::sparse_quad::AdaptiveRun;
use crate::value::QuadValue;

use super::{ExperimentError, LevelRow};

/// 17 significant digits, scientific notation.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>, ExperimentError> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

/// Per-step history of an adaptive run, with errors against a reference.
/// `value_column` is `quadrature_value` for scalar targets and `value_norm`
/// for vector-valued ones; `value_of` extracts the emitted number.
pub(crate) fn write_convergence_csv<V: QuadValue>(
    path: &Path,
    run: &AdaptiveRun<V>,
    errors: &[f64],
    value_column: &str,
    value_of: &dyn Fn(&V) -> f64,
) -> Result<(), ExperimentError> {
    assert_eq!(errors.len(), run.history.len());
    let mut out = writer(path)?;
    out.write_record([
        "step",
        "n_indices",
        "n_points_lambda",
        "n_points_lambda_bar",
        "raw_evals",
        "selected_index",
        "indicator_value",
        value_column,
        "error_vs_reference",
    ])?;
    for (record, error) in run.history.iter().zip(errors) {
        out.write_record([
            record.step.to_string(),
            record.n_indices.to_string(),
            record.n_points_lambda.to_string(),
            record.n_points_lambda_bar.to_string(),
            record.raw_evals.to_string(),
            serde_json::to_string(&record.selected)?,
            fmt_float(record.indicator),
            fmt_float(value_of(&record.value)),
            fmt_float(*error),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Monte Carlo study rows plus the fitted-slope summary row.
pub fn write_mc_csv(path: &Path, study: &McStudy) -> Result<(), ExperimentError> {
    let mut out = writer(path)?;
    out.write_record(["n_samples", "trial", "error"])?;
    for row in &study.rows {
        out.write_record([
            row.n_samples.to_string(),
            row.trial.to_string(),
            fmt_float(row.error),
        ])?;
    }
    out.write_record(["slope", "", &fmt_float(study.slope)])?;
    out.flush()?;
    Ok(())
}

/// Per-dimension maximum levels of an adaptive run.
pub fn write_levels_csv(path: &Path, rows: &[LevelRow]) -> Result<(), ExperimentError> {
    let mut out = writer(path)?;
    out.write_record(["dimension", "level", "activated_in_lambda"])?;
    for row in rows {
        out.write_record([
            row.dimension.to_string(),
            row.level.to_string(),
            (row.activated_in_lambda as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Sampled curves: one column per sample next to the data curve and the
/// sample mean.
pub(crate) fn write_samples_csv(
    path: &Path,
    xs: &[f64],
    data_name: &str,
    data: &[f64],
    mean: &[f64],
    samples: &[Vec<f64>],
) -> Result<(), ExperimentError> {
    let mut out = writer(path)?;
    let mut header = vec!["x".to_string(), data_name.to_string(), "mean".to_string()];
    for i in 0..samples.len() {
        header.push(format!("s{:03}", i + 1));
    }
    out.write_record(&header)?;
    for (i, &x) in xs.iter().enumerate() {
        let mut record = vec![fmt_float(x), fmt_float(data[i]), fmt_float(mean[i])];
        for sample in samples {
            record.push(fmt_float(sample[i]));
        }
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}

/// The `quadcheck` table `(nu, l, value)` in row-major order.
pub fn write_hermite_bound_csv(
    path: &Path,
    report: &HermiteBoundReport,
) -> Result<(), ExperimentError> {
    let mut out = writer(path)?;
    out.write_record(["nu", "l", "value"])?;
    for nu in 0..=report.nu_max {
        for l in 0..=report.l_max {
            out.write_record([
                nu.to_string(),
                l.to_string(),
                fmt_float(report.value(nu, l)),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_is_17_digits_and_lossless() {
        for &x in &[
            1.0,
            -0.1,
            std::f64::consts::PI,
            1.234_567_890_123_456_7e-12,
            6.02e23,
        ] {
            let text = fmt_float(x);
            assert!(text.contains('e'));
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{text}");
        }
    }
}
