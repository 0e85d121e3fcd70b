//! Report serialization: a fixed-column CSV and a JSON mirror of the same
//! values. Output is byte-stable for identical inputs.

use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::runner::ExperimentReport;
use crate::steganalysis::Verdict;

pub const CSV_HEADER: &str =
    "seed,recovered,overt_bps,upper_bps,lower_bps,detector,statistic,threshold,verdict";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Clean => "clean",
        Verdict::Suspicious => "suspicious",
    }
}

/// One CSV row per (seed, detector); a seed without detectors still gets a
/// row so recovery and bandwidth stay visible.
pub fn to_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for seed in &report.seeds {
        let prefix = format!(
            "{},{},{},{},{}",
            seed.seed, seed.recovered, seed.overt_bps, seed.upper_bps, seed.lower_bps
        );
        if seed.detectors.is_empty() {
            out.push_str(&format!("{prefix},,,,\n"));
        } else {
            for d in &seed.detectors {
                out.push_str(&format!(
                    "{prefix},{},{},{},{}\n",
                    d.detector,
                    d.statistic,
                    d.threshold,
                    verdict_str(d.verdict)
                ));
            }
        }
    }
    out
}

pub fn to_json(report: &ExperimentReport) -> Result<String, EmitError> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn emit(report: &ExperimentReport, format: Format, path: &Path) -> Result<(), EmitError> {
    let text = match format {
        Format::Csv => to_csv(report),
        Format::Json => to_json(report)?,
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}
