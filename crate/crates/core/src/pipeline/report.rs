//! Per-stage retention bookkeeping with exact rational arithmetic.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

/// `n / d`, with `0 / 0` read as zero.
fn ratio(n: u64, d: u64) -> Ratio<u64> {
    if d == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(n, d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub input: u64,
    pub kept: u64,
    pub rejected: u64,
    /// Total documents entering the pipeline.
    pub original: u64,
    pub reasons: BTreeMap<String, u64>,
}

impl StageReport {
    pub fn new(stage: impl Into<String>, input: u64, kept: u64, original: u64) -> Self {
        assert!(kept <= input && input <= original, "retention counts out of order");
        StageReport { stage: stage.into(), input, kept, rejected: input - kept, original, reasons: BTreeMap::new() }
    }

    pub fn stage_retention(&self) -> Ratio<u64> {
        ratio(self.kept, self.input)
    }

    pub fn cumulative_retention(&self) -> Ratio<u64> {
        ratio(self.kept, self.original)
    }

    pub fn is_conserved(&self) -> bool {
        self.kept + self.rejected == self.input
    }
}

/// Percentage rounded half-up to one decimal, computed without floats.
pub fn percent_1dp(r: Ratio<u64>) -> String {
    let (n, d) = (*r.numer() as u128, *r.denom() as u128);
    let tenths = (n * 1000 * 2 + d) / (2 * d);
    format!("{}.{}", tenths / 10, tenths % 10)
}

#[derive(Serialize)]
struct ReportRow<'a> {
    stage: &'a str,
    input: u64,
    kept: u64,
    rejected: u64,
    stage_retention: String,
    cumulative_retention: String,
    stage_retention_exact: String,
    cumulative_retention_exact: String,
    reasons: &'a BTreeMap<String, u64>,
}

/// Plain-text retention table.
pub fn retention_report(reports: &[StageReport]) -> String {
    let mut s = format!("{:<10}{:>10}{:>10}{:>10}{:>9}{:>13}\n", "stage", "input", "kept", "rejected", "stage%", "cumulative%");
    for r in reports {
        writeln!(
            s,
            "{:<10}{:>10}{:>10}{:>10}{:>9}{:>13}",
            r.stage,
            r.input,
            r.kept,
            r.rejected,
            percent_1dp(r.stage_retention()),
            percent_1dp(r.cumulative_retention())
        )
        .unwrap();
    }
    for r in reports.iter().filter(|r| !r.reasons.is_empty()) {
        let reasons: Vec<String> = r.reasons.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(s, "{}: {}", r.stage, reasons.join(" ")).unwrap();
    }
    s
}

/// The same table as JSON, percentages as strings and exact fractions.
pub fn retention_report_json(reports: &[StageReport]) -> serde_json::Value {
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow {
            stage: &r.stage,
            input: r.input,
            kept: r.kept,
            rejected: r.rejected,
            stage_retention: percent_1dp(r.stage_retention()),
            cumulative_retention: percent_1dp(r.cumulative_retention()),
            stage_retention_exact: r.stage_retention().to_string(),
            cumulative_retention_exact: r.cumulative_retention().to_string(),
            reasons: &r.reasons,
        })
        .collect();
    serde_json::json!({ "stages": rows })
}

/// Builds a chain of reports from the kept count after each stage.
pub fn chain_reports(original: u64, stages: &[(&str, u64)]) -> Vec<StageReport> {
    let mut input = original;
    stages
        .iter()
        .map(|&(name, kept)| {
            let r = StageReport::new(name, input, kept, original);
            input = kept;
            r
        })
        .collect()
}
