//! Fixed-width metric tables: one row per configuration, four decimals.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// Renders `reports` as a table with columns `mIoU`, `WeightIoU` (when any
/// report has it) and one `VCn` column per window length present. Missing
/// cells print as `-`.
pub fn emit_report<S: AsRef<str>>(reports: &[MetricReport], row_labels: &[S]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::validation("nothing to report"));
    }
    if reports.len() != row_labels.len() {
        return Err(Error::validation(format!(
            "{} reports but {} row labels",
            reports.len(),
            row_labels.len()
        )));
    }
    let with_weighted = reports.iter().any(|r| r.weighted_iou.is_some());
    let windows: BTreeSet<usize> = reports.iter().flat_map(|r| r.vc.keys().copied()).collect();

    let mut header = vec!["mIoU".to_string()];
    if with_weighted {
        header.push("WeightIoU".into());
    }
    header.extend(windows.iter().map(|n| format!("VC{n}")));

    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![cell(Some(r.miou))];
            if with_weighted {
                row.push(cell(r.weighted_iou));
            }
            row.extend(windows.iter().map(|n| cell(r.vc.get(n).copied())));
            row
        })
        .collect();

    let label_w = row_labels
        .iter()
        .map(|l| l.as_ref().len())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap();
    let col_w: Vec<usize> = header.iter().map(|h| h.len().max(6)).collect();

    let mut out = format!("{:<label_w$}", "Method");
    for (h, w) in header.iter().zip(&col_w) {
        out.push_str(&format!("  {h:>w$}"));
    }
    out.push('\n');
    for (label, row) in row_labels.iter().zip(&rows) {
        out.push_str(&format!("{:<label_w$}", label.as_ref()));
        for (v, w) in row.iter().zip(&col_w) {
            out.push_str(&format!("  {v:>w$}"));
        }
        out.push('\n');
    }
    Ok(out)
}
