//! Report assembly with the ALL-split consistency check, and JSON, CSV and
//! plain-text renderings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::Stratum;

use super::{combine, Metric, MetricRow, MetricsError, SplitSel};

pub const NO_DATA: &str = "no data";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    /// `"ok"`, or the no-data marker when there are no rows.
    pub status: String,
    pub rows: Vec<MetricRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<serde_json::Value>,
}

type GroupKey = (String, Metric, Option<Stratum>);
type LineCells = BTreeMap<(String, Metric), BTreeMap<(Option<Stratum>, SplitSel), f64>>;

fn group_key(r: &MetricRow) -> GroupKey {
    (r.label.clone(), r.metric, r.stratum)
}

/// Orders rows, rejects duplicate and out-of-range cells, and checks every
/// ALL cell against the n-weighted mean of its IDD and OOD cells.
pub fn aggregate_report(rows: Vec<MetricRow>, manifest: Option<serde_json::Value>) -> Result<ReportDocument, MetricsError> {
    let mut cells: BTreeMap<GroupKey, BTreeMap<SplitSel, &MetricRow>> = BTreeMap::new();
    for r in &rows {
        if !(0.0..=100.0).contains(&r.value) {
            return Err(MetricsError::Inconsistent(format!("{} {} value {} outside [0,100]", r.label, r.metric, r.value)));
        }
        if cells.entry(group_key(r)).or_default().insert(r.split, r).is_some() {
            return Err(MetricsError::Inconsistent(format!("duplicate {} {} {} cell", r.label, r.metric, r.split.as_str())));
        }
    }
    for ((label, metric, stratum), by_split) in &cells {
        let cell = |s| by_split.get(&s).map_or((0.0, 0), |r: &&MetricRow| (r.value, r.n));
        let expected = combine(cell(SplitSel::Idd), cell(SplitSel::Ood));
        let actual = cell(SplitSel::All);
        if expected != actual {
            let stratum = stratum.map_or("overall", |s| s.as_str());
            return Err(MetricsError::Inconsistent(format!(
                "{label} {metric} {stratum}: ALL is {} over {} but IDD/OOD give {} over {}",
                actual.0, actual.1, expected.0, expected.1
            )));
        }
    }
    let mut rows = rows;
    rows.sort_by(|a, b| group_key(a).cmp(&group_key(b)).then(a.split.cmp(&b.split)));
    let status = if rows.is_empty() { NO_DATA } else { "ok" };
    Ok(ReportDocument { status: status.to_string(), rows, manifest })
}

impl ReportDocument {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> Result<String, MetricsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| MetricsError::Inconsistent(format!("csv: {e}"));
        w.write_record(["label", "metric", "stratum", "split", "value", "n"]).map_err(io)?;
        for r in &self.rows {
            let value = r.value.to_string();
            let n = r.n.to_string();
            w.write_record([
                r.label.as_str(),
                &r.metric.to_string(),
                r.stratum.map_or("", |s| s.as_str()),
                r.split.as_str(),
                &value,
                &n,
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| MetricsError::Inconsistent(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// One line per (label, metric); columns are the overall cells and then
    /// each stratum, each as ALL / IDD / OOD.
    pub fn to_text(&self) -> String {
        if self.rows.is_empty() {
            return format!("{NO_DATA}\n");
        }
        let strata: BTreeSet<Option<Stratum>> = self.rows.iter().map(|r| r.stratum).collect();
        let mut lines: LineCells = BTreeMap::new();
        for r in &self.rows {
            lines.entry((r.label.clone(), r.metric)).or_default().insert((r.stratum, r.split), r.value);
        }
        let label_w = lines.keys().map(|(l, m)| l.len() + m.to_string().len() + 1).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", "model");
        for s in &strata {
            let name = s.map_or("Overall", |s| s.as_str());
            for split in SplitSel::ORDER {
                let head = format!("{name}/{}", split.as_str());
                let _ = write!(out, " {head:>12}");
            }
        }
        out.push('\n');
        for ((label, metric), vals) in &lines {
            let _ = write!(out, "{:<label_w$}", format!("{label} {metric}"));
            for s in &strata {
                for split in SplitSel::ORDER {
                    match vals.get(&(*s, split)) {
                        Some(v) => {
                            let _ = write!(out, " {v:>12.1}");
                        }
                        None => {
                            let _ = write!(out, " {:>12}", "-");
                        }
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), MetricsError> {
        let io = |e: std::io::Error| MetricsError::Inconsistent(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        crate::domain::codec::write_json(&dir.join("report.json"), self)
            .map_err(|e| MetricsError::Inconsistent(e.to_string()))?;
        std::fs::write(dir.join("report.csv"), self.to_csv()?).map_err(io)?;
        Ok(())
    }
}
