//! Experiment-level analyses: per-activity identification rates (IOA),
//! leave-one-subject-out attribute prediction with NNA retrieval, and the
//! JSON/CSV report tables.

mod ioa;
mod loocv;
mod report;

pub use ioa::{aggregate_ioa, compute_ioa, IoaAggregate, IoaClass, IoaReport};
pub use loocv::{run_loocv, LoocvConfig, LoocvFold, LoocvPreset, LoocvReport, RetrievalSummary};
pub use report::{emit_report, read_report, write_json_report, ReportFormat, SummaryRow, SummaryTable, REPORT_VERSION};

use crate::attributes::Retrieval;
use crate::error::{Error, Result};

/// Percent of retrievals whose group contains the true subject.
pub fn group_hit_rate(retrievals: &[Retrieval], truth: &[u32]) -> Result<f64> {
    if retrievals.len() != truth.len() || truth.is_empty() {
        return Err(Error::config("group hit scoring needs one truth per retrieval"));
    }
    let hits = retrievals.iter().zip(truth).filter(|(r, &t)| r.hits(t)).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}
