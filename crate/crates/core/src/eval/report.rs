//! Report export.
//!
//! A report `stem` in directory `dir` is written as:
//!
//! * `stem.json`: the whole [`EvalReport`] as pretty-printed JSON (keys
//!   `protocol`, `per_trial`, `aggregates`, `roc_curves`, `sr`)
//! * `stem_trials.csv`: `trial,seed,method,class_id,auc,f1,top1`, one row per
//!   class and one `class_id = all` row per trial and method; missing metrics
//!   are empty fields
//! * `stem_roc.csv`: `method,trial,class_id,fpr,tpr` (only when ROC points were recorded)
//! * `stem_sr.csv`: `class_id,sr,auc_method,auc_baseline,improvement` (only
//!   with SR diagnostics)

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::eval::experiment::{EvalReport, MetricValues};
use crate::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn metric_cols(m: &MetricValues) -> String {
    format!("{},{},{}", opt(m.auc), opt(m.f1), opt(m.top1))
}

pub fn trials_csv(report: &EvalReport) -> String {
    let mut out = String::from("trial,seed,method,class_id,auc,f1,top1\n");
    for r in &report.per_trial {
        for c in &r.per_class {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.trial,
                r.seed,
                r.method,
                c.class_id,
                metric_cols(&c.metrics)
            );
        }
        let _ = writeln!(
            out,
            "{},{},{},all,{}",
            r.trial,
            r.seed,
            r.method,
            metric_cols(&r.metrics)
        );
    }
    out
}

pub fn roc_csv(report: &EvalReport) -> String {
    let mut out = String::from("method,trial,class_id,fpr,tpr\n");
    for c in &report.roc_curves {
        for (fpr, tpr) in &c.points {
            let _ = writeln!(
                out,
                "{},{},{},{fpr:?},{tpr:?}",
                c.method, c.trial, c.class_id
            );
        }
    }
    out
}

pub fn sr_csv(report: &EvalReport) -> Option<String> {
    let sr = report.sr.as_ref()?;
    let mut out = String::from("class_id,sr,auc_method,auc_baseline,improvement\n");
    for p in &sr.points {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?}",
            p.class_id, p.sr, p.auc_method, p.auc_baseline, p.improvement
        );
    }
    Some(out)
}

pub fn report_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn parse_report_json(text: &str) -> Result<EvalReport> {
    serde_json::from_str(text).map_err(|e| Error::Invalid(format!("report json: {e}")))
}

/// File names and contents of every artifact for `report`.
pub fn report_files(report: &EvalReport, stem: &str) -> Vec<(String, String)> {
    let mut files = vec![
        (format!("{stem}.json"), report_json(report)),
        (format!("{stem}_trials.csv"), trials_csv(report)),
    ];
    if !report.roc_curves.is_empty() {
        files.push((format!("{stem}_roc.csv"), roc_csv(report)));
    }
    if let Some(sr) = sr_csv(report) {
        files.push((format!("{stem}_sr.csv"), sr));
    }
    files
}

/// Writes [`report_files`] into `dir` and returns the paths written.
pub fn write_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (name, content) in report_files(report, stem) {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
