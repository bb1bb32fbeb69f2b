//! Evaluation report emission.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{EvaluationReport, StrategyRow};

pub const COLUMNS: [&str; 8] = [
    "strategy",
    "n_users",
    "compliance_probability",
    "mean_utility",
    "latency_p50_ms",
    "latency_p95_ms",
    "latency_p99_ms",
    "latency_max_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

/// Serializes the per-strategy rows. CSV always starts with the header row;
/// JSON is an array of objects with the same fields.
pub fn emit_report(report: &EvaluationReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(COLUMNS)?;
            for row in &report.rows {
                w.serialize(row)?;
            }
            w.into_inner()
                .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
        }
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(&report.rows).map_err(std::io::Error::from)?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

/// Parses rows written by [`emit_report`].
pub fn parse_report(bytes: &[u8], format: ReportFormat) -> Result<Vec<StrategyRow>> {
    match format {
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_reader(bytes);
            let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
            if header != COLUMNS {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unexpected columns {header:?}"),
                });
            }
            r.deserialize().map(|row| row.map_err(Error::from)).collect()
        }
        ReportFormat::Json => serde_json::from_slice(bytes).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        }),
    }
}
