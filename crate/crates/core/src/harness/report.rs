//! Experiment reports: JSON-lines records, summary tables and curve CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cv::CurveRow;
use super::metrics::{mean_std, stars};
use crate::error::{MimError, Result};

/// Outcome of one fine-tuning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub fold: usize,
    pub trial: usize,
    pub train_size: usize,
    pub best_epoch: usize,
    pub val_auc: f64,
    pub test_auc: f64,
}

/// Welch test of one report against a named baseline report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub t: f64,
    pub p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub train_size: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub train_per_class: Option<usize>,
    pub entries: Vec<ReportEntry>,
    pub mean: f64,
    pub std: f64,
    pub comparison: Option<Comparison>,
}

/// One line of the JSON-lines serialization.
#[derive(Serialize, Deserialize)]
struct Record {
    name: String,
    train_per_class: Option<usize>,
    #[serde(flatten)]
    entry: ReportEntry,
}

impl ExperimentReport {
    pub fn new(name: &str, train_per_class: Option<usize>, entries: Vec<ReportEntry>) -> Self {
        let aucs: Vec<f64> = entries.iter().map(|e| e.test_auc).collect();
        let (mean, std) = mean_std(&aucs);
        Self {
            name: name.to_string(),
            train_per_class,
            entries,
            mean,
            std,
            comparison: None,
        }
    }

    pub fn test_aucs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.test_auc).collect()
    }

    pub fn curve_point(&self) -> CurvePoint {
        CurvePoint {
            train_size: self.train_per_class.unwrap_or(0),
            mean_auc: self.mean,
            std_auc: self.std,
        }
    }

    /// One JSON object per (fold, trial), newline terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            let rec = Record {
                name: self.name.clone(),
                train_per_class: self.train_per_class,
                entry: e.clone(),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Groups JSON-lines records by report name, keeping first-seen order.
    pub fn from_jsonl(text: &str) -> Result<Vec<ExperimentReport>> {
        let mut groups: Vec<(String, Option<usize>, Vec<ReportEntry>)> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: Record = serde_json::from_str(line)?;
            match groups.iter_mut().find(|g| g.0 == rec.name) {
                Some(g) => g.2.push(rec.entry),
                None => groups.push((rec.name, rec.train_per_class, vec![rec.entry])),
            }
        }
        Ok(groups
            .into_iter()
            .map(|(n, k, e)| ExperimentReport::new(&n, k, e))
            .collect())
    }
}

/// Human-readable table with one row per report.
pub fn summary_table(reports: &[ExperimentReport]) -> String {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>5}  {:>8}  {:>8}  {:>8}  {:>10}  vs", "name", "runs", "mean_auc", "std_auc", "t", "p");
    for r in reports {
        let (t, p, base) = match &r.comparison {
            Some(c) => (format!("{:.4}", c.t), format!("{:.4}{}", c.p, stars(c.p)), c.baseline.as_str()),
            None => ("-".into(), "-".into(), "-"),
        };
        let _ = writeln!(
            s,
            "{:<width$}  {:>5}  {:>8.4}  {:>8.4}  {:>8}  {:>10}  {}",
            r.name,
            r.entries.len(),
            r.mean,
            r.std,
            t,
            p,
            base
        );
    }
    s
}

/// `train_size,mean_auc,std_auc` for one arm.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("train_size,mean_auc,std_auc\n");
    for p in points {
        let _ = writeln!(s, "{},{:?},{:?}", p.train_size, p.mean_auc, p.std_auc);
    }
    s
}

/// One row per (size, arm) with the t-test of pretrained against fresh.
pub fn curve_comparison_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("train_size,arm,mean_auc,std_auc,t,p,significance\n");
    for r in rows {
        for (arm, pt) in [("pretrained", r.pretrained), ("fresh", r.fresh)] {
            let _ = writeln!(
                s,
                "{},{arm},{:?},{:?},{:?},{:?},{}",
                r.train_size,
                pt.mean_auc,
                pt.std_auc,
                r.t,
                r.p,
                if r.p.is_finite() { stars(r.p) } else { "" }
            );
        }
    }
    s
}

/// Reads and merges every JSON-lines report in `paths`.
pub fn merge_reports(paths: &[impl AsRef<Path>]) -> Result<Vec<ExperimentReport>> {
    let mut out = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = fs::read_to_string(p).map_err(|source| MimError::File {
            path: p.to_path_buf(),
            source,
        })?;
        out.extend(ExperimentReport::from_jsonl(&text)?);
    }
    Ok(out)
}
