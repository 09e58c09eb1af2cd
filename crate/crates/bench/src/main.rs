use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use docmux::session::Strategy;
use docmux::sim::{self, emit_connection_report, emit_tables, fmt_num, Format, Phase, ScenarioConfig, ScenarioResult};

#[derive(Parser, Debug)]
#[command(version, about = "Count frames per strategy on a simulated page of doclets")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    #[arg(long, default_value = "mux", value_parser = parse_strategy)]
    mode: Strategy,

    #[arg(long, default_value_t = 1)]
    editors: usize,

    #[arg(long, default_value = "idle")]
    phase: Phase,

    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Naive vs mux for every (phase, editors) pair, plus connection counts.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        editors: Vec<usize>,

        #[arg(long, value_delimiter = ',', default_value = "idle,typing")]
        phases: Vec<Phase>,

        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, default_value_t = 2)]
    users: usize,

    /// Keystrokes per second per typist.
    #[arg(long, default_value_t = 6.0)]
    typing_rate: f64,

    #[arg(long, default_value_t = 1)]
    typists: usize,

    #[arg(long, default_value_t = 25)]
    tick_ms: u64,

    #[arg(long, default_value_t = 1000)]
    keepalive_ms: u64,

    #[arg(long, default_value_t = 8)]
    naive_resend_cap: u32,

    #[arg(long, default_value_t = 5)]
    duration_s: u32,

    #[arg(long, default_value_t = 0)]
    latency_ms: u64,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    #[arg(long, default_value = "markdown")]
    format: Format,

    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

impl Common {
    fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            users: self.users,
            typing_chars_per_sec: self.typing_rate,
            typists: self.typists,
            tick_ms: self.tick_ms,
            keepalive_ms: self.keepalive_ms,
            naive_resend_cap: self.naive_resend_cap,
            duration_s: self.duration_s,
            readings: 5.min(self.duration_s),
            latency_ms: self.latency_ms,
            seed: self.seed,
            ..ScenarioConfig::default()
        }
    }
}

fn single_report(label: &str, result: &ScenarioResult, format: Format) -> Result<String> {
    let mut rows: Vec<[String; 2]> = result
        .readings
        .iter()
        .enumerate()
        .map(|(i, r)| [format!("Reading #{}", i + 1), r.to_string()])
        .collect();
    rows.push(["Average Per Second Measurement".into(), fmt_num(result.average)]);
    rows.push(["Extrapolated to 5 seconds".into(), fmt_num(result.extrapolated_5s)]);
    rows.push(["Connections".into(), result.connections.to_string()]);
    Ok(match format {
        Format::Markdown => {
            let mut out = format!("### {label}\n\n| Per Second Measurement | Frames |\n|---|---|\n");
            for [a, b] in rows {
                out.push_str(&format!("| {a} | {b} |\n"));
            }
            out
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["scenario", "measurement", "value"])?;
            for [a, b] in rows {
                w.write_record([label, &a, &b])?;
            }
            String::from_utf8(w.into_inner()?)?
        }
    })
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `report.csv` -> `report.connections.csv`
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Some(Command::Compare {
            editors,
            phases,
            common,
        }) => {
            let cmp = sim::compare(&common.scenario(), &editors, &phases)?;
            let tables = emit_tables(&cmp.rows, common.format);
            let conns = emit_connection_report(&cmp.connections, common.format);
            match (common.format, common.out.as_deref()) {
                (Format::Csv, Some(path)) => {
                    write_out(Some(path), &tables)?;
                    write_out(Some(&sibling(path, "connections")), &conns)?;
                }
                (_, out) => write_out(out, &format!("{tables}\n### connections per client\n\n{conns}"))?,
            }
        }
        None => {
            let cfg = ScenarioConfig {
                strategy: cli.mode,
                editors: cli.editors,
                phase: cli.phase,
                ..cli.common.scenario()
            };
            let result = sim::run_scenario(&cfg)?;
            let label = format!("{}, {}", cli.mode, sim::scenario_label(cli.phase, cli.editors));
            write_out(
                cli.common.out.as_deref(),
                &single_report(&label, &result, cli.common.format)?,
            )?;
        }
    }
    Ok(())
}
