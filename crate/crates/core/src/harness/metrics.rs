//! CSV persistence of the metrics series.
//!
//! Floats are written with Rust's shortest round-trip formatting so equal
//! series produce equal bytes.

use std::io::Write;
use std::path::Path;

use super::HarnessError;
use crate::federation::MetricsRow;

/// `round,acc,loss,acc_c0,…,acc_c{C−1},participation,secs`
pub fn metrics_header(classes: usize) -> Vec<String> {
    let mut h = vec!["round".to_string(), "acc".into(), "loss".into()];
    h.extend((0..classes).map(|c| format!("acc_c{c}")));
    h.push("participation".into());
    h.push("secs".into());
    h
}

pub fn write_metrics_to<W: Write>(w: W, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let first = rows.first().ok_or(HarnessError::EmptyMetrics)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(metrics_header(first.per_class.len()))?;
    for r in rows {
        let mut rec = vec![r.round.to_string(), r.acc.to_string(), r.loss.to_string()];
        rec.extend(r.per_class.iter().map(f64::to_string));
        rec.push(r.participation.to_string());
        rec.push(r.secs.to_string());
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_metrics_to(file, rows)
}

/// Long format `method,round,metric,value` with the metrics `acc`, `loss`
/// and `participation`, for any number of tagged series.
pub fn emit_plot_data_to<W: Write>(w: W, series: &[(&str, &[MetricsRow])]) -> Result<(), HarnessError> {
    if series.iter().all(|(_, rows)| rows.is_empty()) {
        return Err(HarnessError::EmptyMetrics);
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "round", "metric", "value"])?;
    for (method, rows) in series {
        for r in rows.iter() {
            for (name, value) in [("acc", r.acc), ("loss", r.loss), ("participation", r.participation)] {
                out.write_record([
                    method.to_string(),
                    r.round.to_string(),
                    name.to_string(),
                    value.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn emit_plot_data(path: &Path, series: &[(&str, &[MetricsRow])]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    emit_plot_data_to(file, series)
}
