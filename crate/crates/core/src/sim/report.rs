//! Reporting arithmetic and table output.
//!
//! Readings are per-second message counts. Five of them are averaged, the
//! average is scaled to a 5 second total, and two totals are compared as a
//! percentage decrease truncated (not rounded) to two decimals.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("no readings to average")]
    EmptyReadings,
    #[error("baseline must be positive")]
    NonPositiveBaseline,
}

pub fn average_per_second(readings: &[u64]) -> Result<f64, ReportError> {
    if readings.is_empty() {
        return Err(ReportError::EmptyReadings);
    }
    let sum: u64 = readings.iter().sum();
    Ok(sum as f64 / readings.len() as f64)
}

pub fn extrapolate(mean: f64, seconds: u32) -> f64 {
    mean * f64::from(seconds)
}

/// `(before - after) / before * 100`, truncated toward zero at two decimals.
pub fn percentage_decrease(before: f64, after: f64) -> Result<f64, ReportError> {
    if before <= 0.0 {
        return Err(ReportError::NonPositiveBaseline);
    }
    let pct = (before - after) / before * 100.0;
    // nudge past representation error so 97.5 doesn't truncate to 97.49
    let hundredths = (pct * 100.0 + pct.signum() * 1e-6).trunc();
    Ok(hundredths / 100.0)
}

/// Result of one measured scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub readings: Vec<u64>,
    pub average: f64,
    pub extrapolated_5s: f64,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub connections: u64,
}

impl ScenarioResult {
    pub fn from_readings(readings: Vec<u64>) -> Result<Self, ReportError> {
        let average = average_per_second(&readings)?;
        Ok(Self {
            extrapolated_5s: extrapolate(average, 5),
            readings,
            average,
            frames_sent: 0,
            frames_received: 0,
            connections: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub non_optimized: ScenarioResult,
    pub optimized: ScenarioResult,
    pub percentage_decrease: f64,
}

impl ComparisonRow {
    pub fn new(
        label: impl Into<String>,
        non_optimized: ScenarioResult,
        optimized: ScenarioResult,
    ) -> Result<Self, ReportError> {
        let percentage_decrease = percentage_decrease(non_optimized.extrapolated_5s, optimized.extrapolated_5s)?;
        Ok(Self {
            label: label.into(),
            non_optimized,
            optimized,
            percentage_decrease,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

pub const COLUMNS: [&str; 3] = ["Per Second Measurement", "Non-Optimized Editor", "Optimized Editor"];
pub const CSV_HEADER: [&str; 4] = ["scenario", "measurement", "non_optimized", "optimized"];

/// Formats with at most two decimals and no trailing zeros.
pub fn fmt_num(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// The eight body rows of one table: readings, average, 5 s total, decrease.
fn body(row: &ComparisonRow) -> Vec<[String; 3]> {
    let mut lines = Vec::with_capacity(8);
    let n = row.non_optimized.readings.len().max(row.optimized.readings.len());
    for i in 0..n {
        let cell = |r: &ScenarioResult| r.readings.get(i).map(|v| v.to_string()).unwrap_or_default();
        lines.push([
            format!("Reading #{}", i + 1),
            cell(&row.non_optimized),
            cell(&row.optimized),
        ]);
    }
    lines.push([
        "Average Per Second Measurement".into(),
        fmt_num(row.non_optimized.average),
        fmt_num(row.optimized.average),
    ]);
    lines.push([
        "Extrapolated to 5 seconds".into(),
        fmt_num(row.non_optimized.extrapolated_5s),
        fmt_num(row.optimized.extrapolated_5s),
    ]);
    lines.push([
        format!(
            "Percentage Decrease ({} -> {}):",
            fmt_num(row.non_optimized.extrapolated_5s),
            fmt_num(row.optimized.extrapolated_5s)
        ),
        format!("{:.2}%", row.percentage_decrease),
        String::new(),
    ]);
    lines
}

pub fn emit_tables(rows: &[ComparisonRow], format: Format) -> String {
    match format {
        Format::Markdown => {
            let header = format!("| {} | {} | {} |\n|---|---|---|\n", COLUMNS[0], COLUMNS[1], COLUMNS[2]);
            if rows.is_empty() {
                return header;
            }
            let mut out = String::new();
            for (i, row) in rows.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                let _ = writeln!(out, "### {}\n", row.label);
                out.push_str(&header);
                for [a, b, c] in body(row) {
                    let _ = writeln!(out, "| {a} | {b} | {c} |");
                }
            }
            out
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).expect("in-memory write");
            for row in rows {
                for [a, b, c] in body(row) {
                    w.write_record([row.label.as_str(), &a, &b, &c])
                        .expect("in-memory write");
                }
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
        }
    }
}

/// Connections opened by one client for a given doclet count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionRow {
    pub editors: usize,
    pub naive: u64,
    pub per_socket: u64,
    pub mux: u64,
}

pub fn emit_connection_report(rows: &[ConnectionRow], format: Format) -> String {
    match format {
        Format::Markdown => {
            let mut out = String::from(
                "| Editors | Non-Optimized (single socket) | One socket per editor | Optimized (tagged single socket) |\n|---|---|---|---|\n",
            );
            for r in rows {
                let _ = writeln!(out, "| {} | {} | {} | {} |", r.editors, r.naive, r.per_socket, r.mux);
            }
            out
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["editors", "naive", "per_socket", "mux"])
                .expect("in-memory write");
            for r in rows {
                w.write_record([
                    r.editors.to_string(),
                    r.naive.to_string(),
                    r.per_socket.to_string(),
                    r.mux.to_string(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
        }
    }
}
