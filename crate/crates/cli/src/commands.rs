//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use fcs_core::checker::{compare_state_counts, format_csv, format_text, minimize_counterexample};
use fcs_core::selector::{parse_selection, write_selection, SelectionMap};
use fcs_core::simnet::{
    emit_metrics, format_msg_log, normalized_table, parse_metrics_csv, run_simulation, selection_for, Metrics, MetricsFormat,
    NamedConfig,
};
use fcs_core::trace::{generate, read_trace, validate_trace, write_trace, AccessTrace, Benchmark};
use rayon::prelude::*;

use crate::cli::{Cmd, Common, TraceArgs};
use crate::settings::Settings;

/// Exit status when the checker finds a problem.
const CHECK_FAILED: u8 = 3;

pub fn run(cmd: Cmd) -> Result<ExitCode> {
    configure_threads()?;
    match cmd {
        Cmd::Generate(c) => with_settings(&c, None, generate_cmd),
        Cmd::Select(a) => with_settings(&a.common, None, |s| select_cmd(s, &a)),
        Cmd::Simulate(a) => with_settings(&a.common, None, |s| simulate_cmd(s, &a)),
        Cmd::Check { common, check } => with_settings(&common, Some(&check), check_cmd),
        Cmd::Report { common, metrics } => with_settings(&common, None, |s| report_cmd(s, &metrics)),
        Cmd::Pipeline(c) => with_settings(&c, None, pipeline_cmd),
    }
}

fn with_settings(
    common: &Common,
    check: Option<&crate::cli::CheckArgs>,
    f: impl FnOnce(&Settings) -> Result<ExitCode>,
) -> Result<ExitCode> {
    let s = Settings::resolve(common, check)?;
    if common.print_config {
        print!("{}", s.render()?);
        return Ok(ExitCode::SUCCESS);
    }
    f(&s)
}

/// Caps the worker pool at FCSSIM_THREADS when set.
fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FCSSIM_THREADS") {
        let n: usize = v.parse().with_context(|| format!("FCSSIM_THREADS=`{v}` is not a number"))?;
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

fn create_out(s: &Settings) -> Result<&Path> {
    fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;
    Ok(&s.out)
}

fn write_file(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// File-name form of a configuration name.
fn file_token(c: NamedConfig) -> String {
    c.token().replace('+', "-")
}

fn build_trace(s: &Settings, b: Benchmark) -> Result<AccessTrace> {
    generate(b, &s.params()).with_context(|| format!("generating {b}"))
}

/// The traces a command works on: one from --trace, or one per benchmark.
fn traces(s: &Settings, file: Option<&Path>) -> Result<Vec<(String, AccessTrace)>> {
    match file {
        Some(p) => {
            let t = read_trace(p).with_context(|| format!("reading {}", p.display()))?;
            let report = validate_trace(&t);
            if !report.is_pass() {
                bail!("{} is not a valid trace: {:?}", p.display(), report.violations.first());
            }
            let name = p.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(vec![(name, t)])
        }
        None => s.benchmarks()?.into_iter().map(|b| Ok((b.token().to_string(), build_trace(s, b)?))).collect(),
    }
}

fn generate_cmd(s: &Settings) -> Result<ExitCode> {
    let out = create_out(s)?;
    for b in s.benchmarks()? {
        let t = build_trace(s, b)?;
        let path = out.join(format!("{b}.trace"));
        write_file(path.clone(), &write_trace(&t))?;
        println!("{} accesses -> {}", t.len(), path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn select_cmd(s: &Settings, a: &TraceArgs) -> Result<ExitCode> {
    let out = create_out(s)?;
    for (name, t) in traces(s, a.trace.as_deref())? {
        for c in s.named_configs()? {
            let sel = selection_for(c, &t).map_err(|e| anyhow!("selecting for {c}: {e}"))?;
            let path = out.join(format!("{name}.{}.sel", file_token(c)));
            write_file(path.clone(), &write_selection(&sel))?;
            println!("{c}: {} entries -> {}", sel.len(), path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

struct Run {
    metrics: Metrics,
    selection: String,
    msglog: String,
}

fn simulate_one(s: &Settings, name: &str, t: &AccessTrace, c: NamedConfig, given: Option<&SelectionMap>) -> Result<Run> {
    let sel = match given {
        Some(sel) => sel.clone(),
        None => selection_for(c, t).map_err(|e| anyhow!("{name}/{c}: selection failed: {e}"))?,
    };
    let mut cfg = c.sim_config(t);
    cfg.record_messages = s.dump_msglog;
    let r = run_simulation(t, &sel, &cfg).map_err(|e| anyhow!("{name}/{c}: {e}"))?;
    if let Some(v) = r.violations.first() {
        bail!("{name}/{c}: protocol violation: {v}");
    }
    let mut metrics = r.metrics;
    metrics.benchmark = name.to_string();
    Ok(Run {
        metrics,
        selection: if s.dump_selection { write_selection(&sel) } else { String::new() },
        msglog: if s.dump_msglog { format_msg_log(&r.msg_log) } else { String::new() },
    })
}

/// Runs every (trace, configuration) pair in parallel, writes artifacts and
/// prints the metrics.
fn simulate_all(s: &Settings, traces: &[(String, AccessTrace)], given: Option<&SelectionMap>) -> Result<Vec<Metrics>> {
    let configs = s.named_configs()?;
    let jobs: Vec<(&str, &AccessTrace, NamedConfig)> =
        traces.iter().flat_map(|(n, t)| configs.iter().map(move |&c| (n.as_str(), t, c))).collect();
    let runs: Vec<Result<Run>> = jobs.par_iter().map(|&(n, t, c)| simulate_one(s, n, t, c, given)).collect();
    let out = create_out(s)?;
    let mut metrics = Vec::new();
    for ((name, _, c), run) in jobs.iter().zip(runs) {
        let run = run?;
        if s.dump_selection {
            write_file(out.join(format!("{name}.{}.sel", file_token(*c))), &run.selection)?;
        }
        if s.dump_msglog {
            write_file(out.join(format!("{name}.{}.msglog", file_token(*c))), &run.msglog)?;
        }
        metrics.push(run.metrics);
    }
    write_file(out.join("metrics.csv"), &emit_metrics(&metrics, MetricsFormat::Csv))?;
    print!("{}", emit_metrics(&metrics, s.metrics_format()?));
    Ok(metrics)
}

/// Writes and prints the normalized table when it has something to compare.
fn normalize(s: &Settings, metrics: &[Metrics]) -> Result<()> {
    let distinct: std::collections::BTreeSet<&str> = metrics.iter().map(|m| m.config.as_str()).collect();
    if distinct.len() < 2 && s.baseline.is_none() {
        return Ok(());
    }
    let baseline = match &s.baseline {
        Some(b) => b.parse::<NamedConfig>().map_err(anyhow::Error::msg)?.token().to_string(),
        None => metrics[0].config.clone(),
    };
    let table = normalized_table(metrics, &baseline).map_err(anyhow::Error::msg)?;
    write_file(create_out(s)?.join("normalized.csv"), &table)?;
    println!("\nrelative to {baseline}:\n{table}");
    Ok(())
}

fn simulate_cmd(s: &Settings, a: &TraceArgs) -> Result<ExitCode> {
    let traces = traces(s, a.trace.as_deref())?;
    let given = match &a.selection {
        None => None,
        Some(p) => {
            if s.named_configs()?.len() != 1 || traces.len() != 1 {
                bail!("--selection needs exactly one trace and one configuration");
            }
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(parse_selection(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
    };
    let metrics = simulate_all(s, &traces, given.as_ref())?;
    normalize(s, &metrics)?;
    Ok(ExitCode::SUCCESS)
}

fn pipeline_cmd(s: &Settings) -> Result<ExitCode> {
    let out = create_out(s)?;
    let mut traces = Vec::new();
    for b in s.benchmarks()? {
        let t = build_trace(s, b)?;
        write_file(out.join(format!("{b}.trace")), &write_trace(&t))?;
        traces.push((b.token().to_string(), t));
    }
    let metrics = simulate_all(s, &traces, None)?;
    normalize(s, &metrics)?;
    Ok(ExitCode::SUCCESS)
}

fn check_cmd(s: &Settings) -> Result<ExitCode> {
    let features = s.check.features()?;
    let base = s.check.base_config()?;
    let mut rows = compare_state_counts(&base, &features[1..]).map_err(anyhow::Error::msg)?;
    for row in &mut rows {
        let cfg = fcs_core::checker::CheckConfig { features: row.features, ..base.clone() };
        for v in &mut row.result.violations {
            *v = minimize_counterexample(&cfg, v);
        }
    }
    let text = match s.metrics_format()? {
        MetricsFormat::Csv => format_csv(&rows),
        MetricsFormat::Text => format_text(&rows),
    };
    print!("{text}");
    write_file(create_out(s)?.join("check.csv"), &format_csv(&rows))?;
    if rows.iter().all(|r| r.result.is_clean()) {
        Ok(ExitCode::SUCCESS)
    } else {
        if s.metrics_format()? == MetricsFormat::Csv {
            eprint!("{}", format_text(&rows));
        }
        Ok(ExitCode::from(CHECK_FAILED))
    }
}

fn report_cmd(s: &Settings, files: &[PathBuf]) -> Result<ExitCode> {
    let mut metrics = Vec::new();
    for f in files {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        metrics.extend(parse_metrics_csv(&text).map_err(|e| anyhow!("{}: {e}", f.display()))?);
    }
    if metrics.is_empty() {
        bail!("no metrics rows in the given files");
    }
    print!("{}", emit_metrics(&metrics, s.metrics_format()?));
    normalize(s, &metrics)?;
    Ok(ExitCode::SUCCESS)
}
