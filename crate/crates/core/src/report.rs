//! Machine-readable report types emitted by the CLI.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::fit::{PhaseSummary, StepRecord};
use crate::loss::{LossReport, StageTimings};
use crate::metrics::MetricsReport;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Embedded in every report so a run can be reproduced from its output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    pub timings: StageTimings,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            version: VERSION.to_string(),
            seed: None,
            deterministic: false,
            threads: None,
            config,
            timings: StageTimings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoCdSection {
    pub value: f64,
    pub sentinel_fraction: f64,
    pub masked_fraction: f64,
    pub hops_used: usize,
    pub mask_threshold: Option<f64>,
    pub degenerate_edges: usize,
    pub mean_cross_distance: f64,
}

impl From<&LossReport> for GeoCdSection {
    fn from(r: &LossReport) -> Self {
        let d = &r.diagnostics;
        GeoCdSection {
            value: r.value,
            sentinel_fraction: d.sentinel_fraction,
            masked_fraction: d.masked_fraction,
            hops_used: d.hops_used,
            mask_threshold: d.mask_threshold,
            degenerate_edges: d.degenerate_edges,
            mean_cross_distance: d.mean_cross_distance,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComputeReport {
    pub manifest: RunManifest,
    pub normalized: bool,
    pub n_pred: usize,
    pub n_gt: usize,
    pub cd: f64,
    pub geocd: GeoCdSection,
    pub hd: f64,
    pub f1: f64,
    pub f1_percent: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold_used: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub manifest: RunManifest,
    pub n_pred: usize,
    pub n_gt: usize,
    pub initial_metrics: MetricsReport,
    pub final_metrics: MetricsReport,
    pub final_f1_percent: f64,
    pub phases: Vec<PhaseSummary>,
}

/// One row of a parameter sweep. Failed values keep `error` set and NaN
/// metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub status: String,
    pub cd: f64,
    pub hd: f64,
    pub f1: f64,
    pub f1_percent: f64,
    /// GeoCD value and mean cross-set geodesic distance at the start of the
    /// GeoCD phase (the CD-aligned cloud, shared by all rows).
    pub geocd_initial: f64,
    pub mean_cross_distance: f64,
    pub sentinel_fraction: f64,
    pub geocd_final: f64,
    pub total_s: f64,
}

impl SweepRow {
    pub fn failed(axis: &str, value: &str, err: &GeoError) -> Self {
        SweepRow {
            axis: axis.to_string(),
            value: value.to_string(),
            status: format!("error: {err}"),
            cd: f64::NAN,
            hd: f64::NAN,
            f1: f64::NAN,
            f1_percent: f64::NAN,
            geocd_initial: f64::NAN,
            mean_cross_distance: f64::NAN,
            sentinel_fraction: f64::NAN,
            geocd_final: f64::NAN,
            total_s: f64::NAN,
        }
    }
}

fn csv_err(e: csv::Error) -> GeoError {
    GeoError::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e),
    }
}

/// Serializes rows as CSV with a header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| GeoError::Io {
        path: "<csv>".into(),
        source,
    })
}

pub fn write_trace_csv<W: Write>(records: &[StepRecord], out: W) -> Result<()> {
    write_csv(records, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::Phase;

    #[test]
    fn trace_csv_header_and_rows() {
        let rec = StepRecord {
            phase: Phase::GeoCd,
            step: 3,
            loss: 0.5,
            cd: 0.25,
            hd: 0.1,
            f1: 0.75,
            elapsed_s: 0.0,
        };
        let mut buf = Vec::new();
        write_trace_csv(&[rec], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("phase,step,loss,cd,hd,f1,elapsed_s"));
        assert_eq!(lines.next(), Some("geocd,3,0.5,0.25,0.1,0.75,0.0"));
    }
}
