use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::MeanSd;

/// Version of the JSON report layout.
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(ReportFormat::Json),
            Some("csv") => Ok(ReportFormat::Csv),
            _ => Err(Error::config(format!(
                "cannot tell report format from {} (use .json or .csv)",
                path.display()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Activity, attribute level or metric name.
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl SummaryRow {
    pub fn new(name: impl Into<String>, stats: MeanSd) -> Self {
        SummaryRow {
            name: name.into(),
            mean: stats.mean,
            sd: stats.sd,
            n: stats.n,
        }
    }

    /// `"93.96 ± 0.03"`.
    pub fn display(&self) -> String {
        MeanSd {
            mean: self.mean,
            sd: self.sd,
            n: self.n,
        }
        .display()
    }
}

/// Tabular mean/SD summary: one row per activity, attribute level or metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub version: u32,
    pub kind: String,
    pub rows: Vec<SummaryRow>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    kind: String,
    name: String,
    mean: f64,
    sd: f64,
    n: usize,
    display: String,
}

impl SummaryTable {
    pub fn new(kind: impl Into<String>, rows: Vec<SummaryRow>) -> Result<Self> {
        let kind = kind.into();
        if rows.is_empty() {
            return Err(Error::config(format!("{kind} report has no rows")));
        }
        Ok(SummaryTable {
            version: REPORT_VERSION,
            kind,
            rows,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: SummaryTable = serde_json::from_str(text)?;
        if t.version != REPORT_VERSION {
            return Err(Error::data(format!("report version {} is not supported", t.version)));
        }
        SummaryTable::new(t.kind, t.rows)
    }

    /// Columns `kind,name,mean,sd,n,display`; floats are written in their
    /// shortest round-trip form.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow {
                kind: self.kind.clone(),
                name: r.name.clone(),
                mean: r.mean,
                sd: r.sd,
                n: r.n,
                display: r.display(),
            })
            .map_err(|e| Error::data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut rows = Vec::new();
        for (i, rec) in csv::Reader::from_reader(text.as_bytes()).deserialize::<CsvRow>().enumerate() {
            let r = rec.map_err(|e| Error::data(format!("report csv row {}: {e}", i + 1)))?;
            match &kind {
                None => kind = Some(r.kind.clone()),
                Some(k) if *k != r.kind => {
                    return Err(Error::data(format!("report csv mixes kinds {k} and {}", r.kind)))
                }
                _ => {}
            }
            rows.push(SummaryRow {
                name: r.name,
                mean: r.mean,
                sd: r.sd,
                n: r.n,
            });
        }
        SummaryTable::new(kind.unwrap_or_default(), rows)
    }
}

pub fn emit_report(table: &SummaryTable, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Json => table.to_json()?,
        ReportFormat::Csv => table.to_csv()?,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<SummaryTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match ReportFormat::from_path(path)? {
        ReportFormat::Json => SummaryTable::from_json(&text),
        ReportFormat::Csv => SummaryTable::from_csv(&text),
    }
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    version: u32,
    kind: &'a str,
    report: &'a T,
}

/// Writes a full report as `{"version", "kind", "report"}` JSON.
pub fn write_json_report<T: Serialize>(path: &Path, kind: &str, report: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Envelope {
        version: REPORT_VERSION,
        kind,
        report,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
