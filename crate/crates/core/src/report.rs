//! Summary CSV rows shared by simulation and analysis output.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{QueueKind, Scheme, SystemConfig};
use crate::queue::QueueClass;
use crate::simulator::{Estimate, Replications};
use crate::theory::TheoryResult;

/// Column order of the summary CSV.
pub const SUMMARY_COLUMNS: [&str; 17] = [
    "source",
    "scheme",
    "queue_kind",
    "S",
    "C",
    "lambda",
    "K",
    "L",
    "N",
    "class",
    "mean_sojourn_s",
    "ci_lo",
    "ci_hi",
    "mean_service_s",
    "services",
    "seed_count",
    "error",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Sim,
    Theory,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Sim => "sim",
            Source::Theory => "theory",
        })
    }
}

/// User population a row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowClass {
    All,
    Good,
    Bad,
}

impl From<QueueClass> for RowClass {
    fn from(c: QueueClass) -> Self {
        match c {
            QueueClass::Good => RowClass::Good,
            QueueClass::Bad => RowClass::Bad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub source: Source,
    pub scheme: Scheme,
    pub queue_kind: QueueKind,
    #[serde(rename = "S")]
    pub streams: usize,
    #[serde(rename = "C")]
    pub cycle: usize,
    pub lambda: f64,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "L")]
    pub antennas: usize,
    #[serde(rename = "N")]
    pub files: usize,
    pub class: RowClass,
    pub mean_sojourn_s: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub mean_service_s: Option<f64>,
    pub services: Option<usize>,
    pub seed_count: Option<usize>,
    /// Empty unless the point failed.
    pub error: String,
}

impl SummaryRow {
    fn blank(source: Source, config: &SystemConfig, class: RowClass) -> Self {
        SummaryRow {
            source,
            scheme: config.scheme,
            queue_kind: config.queue_kind,
            streams: config.streams,
            cycle: config.cycle,
            lambda: config.lambda_total,
            users: config.users,
            antennas: config.antennas,
            files: config.files,
            class,
            mean_sojourn_s: None,
            ci_lo: None,
            ci_hi: None,
            mean_service_s: None,
            services: None,
            seed_count: None,
            error: String::new(),
        }
    }

    /// One `all` row, plus `good`/`bad` rows when the users are split into
    /// classes.
    pub fn from_sim(config: &SystemConfig, reps: &Replications) -> Vec<SummaryRow> {
        let p = &reps.pooled;
        let row = |class, e: &Estimate| SummaryRow {
            mean_sojourn_s: Some(e.mean),
            ci_lo: Some(e.ci_lo),
            ci_hi: Some(e.ci_hi),
            mean_service_s: Some(p.mean_service_time),
            services: Some(p.services),
            seed_count: Some(reps.reports.len()),
            ..SummaryRow::blank(Source::Sim, config, class)
        };
        let mut rows = vec![row(RowClass::All, &p.sojourn)];
        rows.extend(p.good.iter().map(|e| row(RowClass::Good, e)));
        rows.extend(p.bad.iter().map(|e| row(RowClass::Bad, e)));
        rows
    }

    pub fn from_theory(config: &SystemConfig, result: &TheoryResult) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        let single = result.classes.len() == 1 && result.classes[0].class.is_none();
        if !single {
            rows.push(SummaryRow {
                mean_sojourn_s: Some(result.mean_sojourn()),
                ..SummaryRow::blank(Source::Theory, config, RowClass::All)
            });
        }
        for c in &result.classes {
            let class = c.class.map_or(RowClass::All, RowClass::from);
            rows.push(SummaryRow {
                mean_sojourn_s: Some(c.mean_sojourn),
                mean_service_s: Some(c.moments.mean),
                ..SummaryRow::blank(Source::Theory, config, class)
            });
        }
        rows
    }

    /// A row recording that the point could not be computed.
    pub fn failed(source: Source, config: &SystemConfig, error: &Error) -> SummaryRow {
        SummaryRow { error: error.to_string(), ..SummaryRow::blank(source, config, RowClass::All) }
    }

    pub fn is_failed(&self) -> bool {
        !self.error.is_empty()
    }
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(SUMMARY_COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_to_string(rows: &[SummaryRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_summary(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses a summary CSV, failing on the first column that departs from
/// the schema.
pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    for (i, expected) in SUMMARY_COLUMNS.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == *expected => {}
            Some(h) => {
                return Err(Error::Parse(format!("column {} is `{h}`, expected `{expected}`", i + 1)));
            }
            None => return Err(Error::Parse(format!("missing column `{expected}`"))),
        }
    }
    if let Some(extra) = headers.get(SUMMARY_COLUMNS.len()) {
        return Err(Error::Parse(format!("unexpected column `{extra}`")));
    }
    let mut rows = Vec::new();
    for (line, record) in r.deserialize().enumerate() {
        rows.push(record.map_err(|e: csv::Error| Error::Parse(format!("row {}: {e}", line + 1)))?);
    }
    Ok(rows)
}
