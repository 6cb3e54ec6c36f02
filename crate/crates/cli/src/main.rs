//! Experiment runner: seeded sweeps, paired base/closure runs, property
//! checking, report and DOT emission.
//!
//! Exit codes: 0 on success, 1 when a property check finds a violation,
//! 2 on configuration or IO errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use babsim_core::adversary::strip_to_equivalent;
use babsim_core::dot::export_dot;
use babsim_core::engine::run_seed;
use babsim_core::fixture::double_fork_fixture;
use babsim_core::metrics::{compare_paired, seed_row, summarize, PairedComparison, SeedRow};
use babsim_core::properties::check_properties;
use babsim_core::{ClosureMode, ExecutionTrace, ExperimentConfig, ProcessId};

#[derive(Parser)]
#[command(
    name = "babsim",
    about = "Simulate chain-based atomic broadcast protocols and their throughput closure",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded sweep from a config file and write traces plus reports.
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Seed override: a range `a..b` (inclusive) or a comma list.
        #[arg(long)]
        seeds: Option<String>,
        /// Closure mode override: off | closure | greedy.
        #[arg(long)]
        closure: Option<String>,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the atomic-broadcast properties of trace files.
    Check {
        /// Trace files (line-delimited JSON).
        traces: Vec<PathBuf>,
    },
    /// Export one observer's view at a round as Graphviz DOT.
    ExportDot {
        trace: PathBuf,
        #[arg(long)]
        round: u64,
        #[arg(long)]
        observer: u32,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the scripted golden traces (double-fork schedule).
    Fixtures {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            seeds,
            closure,
            out,
        } => cmd_run(&config, seeds.as_deref(), closure.as_deref(), out),
        Command::Check { traces } => cmd_check(&traces),
        Command::ExportDot {
            trace,
            round,
            observer,
            out,
        } => cmd_export_dot(&trace, round, observer, out),
        Command::Fixtures { out } => cmd_fixtures(&out),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = spec.split_once("..") {
        let start: u64 = a.trim().parse().context("seed range start")?;
        let end: u64 = b.trim().parse().context("seed range end")?;
        if end < start {
            bail!("empty seed range {spec}");
        }
        return Ok((start..=end).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().context("seed list entry"))
        .collect()
}

fn parse_closure_mode(name: &str) -> Result<ClosureMode> {
    match name {
        "off" => Ok(ClosureMode::Off),
        "closure" => Ok(ClosureMode::Closure),
        "greedy" => Ok(ClosureMode::Greedy),
        other => bail!("unknown closure mode {other}; expected off|closure|greedy"),
    }
}

fn write_trace(dir: &Path, trace: &ExecutionTrace) -> Result<PathBuf> {
    let name = format!(
        "trace_{}_{}_{}.jsonl",
        trace.meta.adversary.label(),
        match trace.meta.closure_mode {
            ClosureMode::Off => "base",
            ClosureMode::Closure => "closure",
            ClosureMode::Greedy => "greedy",
        },
        trace.meta.seed
    );
    let path = dir.join(name);
    fs::write(&path, trace.to_ldjson()).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

struct SeedOutcome {
    rows: Vec<SeedRow>,
    paired: Option<PairedComparison>,
}

fn cmd_run(
    config_path: &Path,
    seeds: Option<&str>,
    closure: Option<&str>,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(spec) = seeds {
        config.seeds = babsim_core::config::SeedSpec::List(parse_seeds(spec)?);
    }
    if let Some(mode) = closure {
        config.closure_mode = parse_closure_mode(mode)?;
    }
    let out_dir = out
        .or_else(|| config.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let seeds = config.seeds.seeds();
    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| -> Result<SeedOutcome> {
            let trace = run_seed(&config, seed)?;
            write_trace(&out_dir, &trace)?;
            let mut rows = vec![seed_row(&trace)?];
            let paired = if config.closure_mode != ClosureMode::Off {
                let base = strip_to_equivalent(&trace)?;
                write_trace(&out_dir, &base)?;
                rows.push(seed_row(&base)?);
                Some(compare_paired(&base, &trace)?)
            } else {
                None
            };
            Ok(SeedOutcome { rows, paired })
        })
        .collect::<Result<_>>()?;

    let rows: Vec<SeedRow> = outcomes.iter().flat_map(|o| o.rows.clone()).collect();
    let csv_path = out_dir.join("report.csv");
    let mut writer = csv::Writer::from_path(&csv_path)
        .with_context(|| format!("creating {}", csv_path.display()))?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;

    let summaries = summarize(&rows);
    let paired: Vec<&PairedComparison> =
        outcomes.iter().filter_map(|o| o.paired.as_ref()).collect();
    let latency_violations: usize = paired.iter().map(|p| p.latency_violations.len()).sum();
    let strict_gains = paired.iter().filter(|p| p.delivered_delta > 0).count();
    let regressions = paired.iter().filter(|p| p.delivered_delta < 0).count();
    let summary = serde_json::json!({
        "config": config,
        "seeds": seeds,
        "groups": summaries,
        "paired": {
            "executions": paired.len(),
            "latency_violations": latency_violations,
            "strict_throughput_gains": strict_gains,
            "throughput_regressions": regressions,
        },
    });
    let summary_path = out_dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;

    println!(
        "ran {} seeds ({} rows) -> {}",
        seeds.len(),
        rows.len(),
        out_dir.display()
    );
    for group in &summaries {
        println!(
            "  {:18} {:8} throughput {:.4} ± {:.4}  latency {}",
            group.adversary,
            group.protocol,
            group.throughput.mean,
            group.throughput.ci95,
            group
                .latency
                .map(|l| format!("{:.2} ± {:.2}", l.mean, l.ci95))
                .unwrap_or_else(|| "n/a".into()),
        );
    }
    if !paired.is_empty() {
        println!(
            "  paired: {} executions, {} latency violations, {} strict gains, {} regressions",
            paired.len(),
            latency_violations,
            strict_gains,
            regressions
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(paths: &[PathBuf]) -> Result<ExitCode> {
    if paths.is_empty() {
        bail!("no trace files given");
    }
    let mut any_violation = false;
    for path in paths {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let trace = ExecutionTrace::from_ldjson(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        let report = check_properties(&trace)?;
        println!("== {}", path.display());
        for line in report.lines() {
            println!("  {line}");
        }
        if !report.passed() {
            any_violation = true;
            for v in report.violations.iter().take(5) {
                println!("  detail: {}", v.detail);
            }
        }
    }
    Ok(if any_violation {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_export_dot(
    path: &Path,
    round: u64,
    observer: u32,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trace = ExecutionTrace::from_ldjson(&text)?;
    let dot = export_dot(&trace, round, ProcessId(observer))?;
    match out {
        Some(target) => {
            fs::write(&target, dot).with_context(|| format!("writing {}", target.display()))?
        }
        None => print!("{dot}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_fixtures(out: &Path) -> Result<ExitCode> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let fx = double_fork_fixture();
    let closure_path = out.join("fixture_closure.jsonl");
    let base_path = out.join("fixture_base.jsonl");
    fs::write(&closure_path, fx.closure_trace.to_ldjson())?;
    fs::write(&base_path, fx.base_trace.to_ldjson())?;
    let labels: BTreeMap<String, String> = fx
        .labels
        .iter()
        .map(|(l, id)| (l.clone(), id.to_string()))
        .collect();
    fs::write(
        out.join("fixture_labels.json"),
        serde_json::to_string_pretty(&labels)?,
    )?;
    println!(
        "wrote {} and {}",
        closure_path.display(),
        base_path.display()
    );
    Ok(ExitCode::SUCCESS)
}
