//! Rendering of [`MetricsReport`] as JSON, an aligned text table and ROC CSV.

use std::fmt::Write as _;

use condadapt_core::eval::{Metrics, MetricsReport};

pub fn to_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn from_json(text: &str) -> Result<MetricsReport, serde_json::Error> {
    serde_json::from_str(text)
}

const HEADER: [&str; 10] = [
    "Scenario",
    "Clips",
    "Precision",
    "DR",
    "F",
    "Accuracy",
    "Acc(gl)",
    "Acc(h)",
    "Acc(m)",
    "Acc(e)",
];

fn row(name: &str, clips: usize, m: (f64, f64, f64, f64), heads: Option<[f64; 4]>) -> Vec<String> {
    let mut r = vec![name.to_owned(), clips.to_string()];
    r.extend([m.0, m.1, m.2, m.3].iter().map(|v| format!("{v:.4}")));
    match heads {
        Some(h) => r.extend(h.iter().map(|v| format!("{v:.4}"))),
        None => r.extend(std::iter::repeat_n("-".to_owned(), 4)),
    }
    r
}

fn quad(m: &Metrics) -> (f64, f64, f64, f64) {
    (m.precision, m.detection_rate, m.f_measure, m.accuracy)
}

/// Per-scenario detection metrics and scene-head accuracies, one row per
/// scenario followed by the unweighted average and the pooled totals.
pub fn render_text(report: &MetricsReport) -> String {
    let mut rows: Vec<Vec<String>> = vec![HEADER.iter().map(|s| s.to_string()).collect()];
    for s in &report.scenarios {
        let mut r = row(&s.name, s.clips, quad(&s.metrics), Some(s.head_accuracy));
        if s.metrics.degenerate.any() {
            r[0].push('*');
        }
        rows.push(r);
    }
    let a = &report.average;
    let used: usize = report.scenarios.iter().map(|s| s.clips).sum();
    rows.push(row(
        "Average",
        used,
        (a.precision, a.detection_rate, a.f_measure, a.accuracy),
        Some(a.head_accuracy),
    ));
    rows.push(row("Pooled", report.clips, quad(&report.overall), None));

    let widths: Vec<usize> = (0..HEADER.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| {
                if c == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 || i == report.scenarios.len() {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    match report.auc {
        Some(auc) => writeln!(out, "AUC {auc:.4}").unwrap(),
        None => out.push_str("AUC undefined (one class only)\n"),
    }
    if report.scenarios.iter().any(|s| s.metrics.degenerate.any()) {
        out.push_str("* a metric had a zero denominator and is reported as 0\n");
    }
    if !report.skipped.is_empty() {
        writeln!(out, "Skipped (no clips): {}", report.skipped.join(", ")).unwrap();
    }
    out
}

/// `threshold,fpr,tpr` rows; the origin point has an empty threshold.
pub fn roc_csv(report: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "fpr", "tpr"]).expect("in-memory write");
    for p in &report.roc {
        let t = p.threshold.map(|t| t.to_string()).unwrap_or_default();
        w.write_record([t, p.fpr.to_string(), p.tpr.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII output")
}
