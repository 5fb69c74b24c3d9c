//! Machine-readable report emission: JSON with stable field order and floats
//! at 17 significant digits, and a tidy CSV with one row per
//! (n, test, metric).

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::SimReport;

struct SigDigitFormatter;

impl serde_json::ser::Formatter for SigDigitFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{}", fmt_f64(value))
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{}", fmt_f64(value as f64))
    }
}

/// 17 significant digits, scientific notation (valid JSON number syntax).
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

/// Serialize any report value to JSON with 17-significant-digit floats.
/// Field order follows declaration order, so output is byte-stable.
pub fn emit_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigitFormatter);
    value.serialize(&mut ser)?;
    String::from_utf8(buf).map_err(|e| Error::Config(format!("non-utf8 json: {e}")))
}

/// CSV header shared by all simulation reports.
pub const CSV_HEADER: &str = "n,test,metric,value";

/// Tidy CSV: one row per (n, test, metric). Metrics are
/// `rate`, `se`, `mean_stat`, `failures`, `replications` for test rows,
/// `gap`, `paired_se`, `pairs` for paired rows (test column `a-vs-b`), and
/// `median_abs_err`, `q90_abs_err` for expansion rows (test column
/// `expansion-order-K`).
pub fn emit_csv(report: &SimReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let mut push = |n: usize, test: &str, metric: &str, value: String| {
        out.push_str(&format!("{n},{test},{metric},{value}\n"));
    };
    for row in &report.rows {
        push(row.n, &row.test, "rate", fmt_f64(row.rate));
        push(row.n, &row.test, "se", fmt_f64(row.se));
        push(row.n, &row.test, "mean_stat", fmt_f64(row.mean_stat));
        push(row.n, &row.test, "failures", row.failures.to_string());
        push(row.n, &row.test, "replications", row.replications.to_string());
    }
    for gap in &report.gaps {
        let test = format!("{}-vs-{}", gap.test_a, gap.test_b);
        push(gap.n, &test, "gap", fmt_f64(gap.gap));
        push(gap.n, &test, "paired_se", fmt_f64(gap.paired_se));
        push(gap.n, &test, "pairs", gap.pairs.to_string());
    }
    for row in &report.expansion {
        let test = format!("expansion-order-{}", row.order);
        push(row.n, &test, "median_abs_err", fmt_f64(row.median_abs_err));
        push(row.n, &test, "q90_abs_err", fmt_f64(row.q90_abs_err));
        push(row.n, &test, "failures", row.failures.to_string());
    }
    out
}

/// Write bytes to a path, mapping failures to io-errors.
pub fn write_output(path: &std::path::Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}
