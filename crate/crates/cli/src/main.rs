use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kernelsim_cli::service::{cmd_serve, DEFAULT_CAPACITY};
use kernelsim_cli::*;
use kernelsim_core::breakdown::BreakdownReport;
use kernelsim_core::graph::BuildOptions;
use kernelsim_core::time::Nanos;
use serde_json::Value;

/// What-if analysis of DNN training traces at kernel granularity.
#[derive(Parser, Debug)]
#[command(name = "kernelsim", version)]
struct Cli {
    /// Reject kernels whose launching call is missing.
    #[arg(long, global = true)]
    strict: bool,
    /// Emit JSON documents instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Write the output here instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Seed for `gen`.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario spec or pipeline JSON file, or a registered scenario name.
    #[arg(long, value_name = "FILE|NAME")]
    scenario: Option<String>,
    /// Scenario parameter, `key=value`; the value is JSON when it parses.
    #[arg(long = "param", value_name = "K=V")]
    params: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the dependency graph and report its size.
    Build { trace: PathBuf },
    /// Simulate the trace as recorded.
    Simulate { trace: PathBuf },
    /// Predict the effect of a scenario or pipeline.
    Whatif {
        trace: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Evaluate a scenario over several values of one parameter.
    Sweep {
        trace: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Parameter to vary.
        #[arg(long, value_name = "NAME")]
        over: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Generate a synthetic trace with a known makespan.
    Gen {
        /// Synthetic spec JSON.
        #[arg(conflicts_with_all = ["fixture", "random"])]
        spec: Option<PathBuf>,
        /// One of the built-in fixtures.
        #[arg(long, conflicts_with = "random")]
        fixture: Option<String>,
        /// A random mixed-lane trace of about N tasks.
        #[arg(long, value_name = "N")]
        random: Option<usize>,
    },
    /// Write a Chrome-trace timeline of the (transformed) schedule.
    Export {
        trace: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Serve the HTTP API on localhost.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory of traces to preload, one session per file.
        #[arg(long, value_name = "DIR")]
        traces: Option<PathBuf>,
        /// Sessions kept before the least recently used is dropped.
        #[arg(long, default_value_t = DEFAULT_CAPACITY)]
        capacity: usize,
    },
}

fn us(ns: Nanos) -> String {
    format!("{}.{:03}", ns / 1000, ns % 1000)
}

fn signed_us(ns: i64) -> String {
    let sign = if ns < 0 { "-" } else { "+" };
    format!("{sign}{}", us(ns.unsigned_abs()))
}

fn pct(part: Nanos, total: Nanos) -> String {
    if total == 0 {
        "-".into()
    } else {
        format!("{:.1}%", 100.0 * part as f64 / total as f64)
    }
}

fn breakdown_rows(b: &BreakdownReport) -> [(&'static str, Nanos); 4] {
    [
        ("cpu_only", b.cpu_only),
        ("gpu_only", b.gpu_only),
        ("parallel", b.parallel),
        ("idle", b.idle),
    ]
}

fn table_build(o: &BuildOutput) -> String {
    let s = &o.stats;
    let mut t = format!("tasks   {}\nlanes   {}\nlayers  {}\nedges   {}\n", s.tasks, s.lanes, s.layers, s.edges);
    for (kind, n) in &s.edges_by_kind {
        t += &format!("  {kind:<18} {n}\n");
    }
    for w in &s.warnings {
        t += &format!("warning: {w}\n");
    }
    t
}

fn table_simulate(o: &SimulateOutput) -> String {
    let mut t = format!("makespan  {} us\n\n", us(o.makespan));
    for (name, v) in breakdown_rows(&o.breakdown) {
        t += &format!("{name:<10} {:>14} us  {:>6}\n", us(v), pct(v, o.makespan));
    }
    t += "\nlane busy\n";
    for (lane, v) in &o.lane_busy {
        t += &format!("  {:<28} {:>14} us  {:>6}\n", lane.to_string(), us(*v), pct(*v, o.makespan));
    }
    t
}

fn table_whatif(o: &WhatIfOutput) -> String {
    let r = &o.report;
    let mut t = format!(
        "baseline   {} us\npredicted  {} us\nspeedup    {:.2}%\n\n{:<10} {:>14} {:>14} {:>15}\n",
        us(r.baseline_makespan),
        us(r.predicted_makespan),
        100.0 * r.speedup,
        "",
        "baseline us",
        "predicted us",
        "delta us"
    );
    let d = &o.breakdown_delta;
    let deltas = [d.cpu_only, d.gpu_only, d.parallel, d.idle];
    for (((name, a), (_, b)), delta) in breakdown_rows(&r.baseline_breakdown)
        .into_iter()
        .zip(breakdown_rows(&r.breakdown))
        .zip(deltas)
    {
        t += &format!("{name:<10} {:>14} {:>14} {:>15}\n", us(a), us(b), signed_us(delta));
    }
    t
}

fn table_sweep(o: &SweepOutput) -> String {
    let mut t = format!(
        "{} over {}, baseline {} us\n\n{:>12} {:>16} {:>9}\n",
        o.scenario,
        o.param,
        us(o.baseline_makespan),
        o.param,
        "makespan us",
        "speedup"
    );
    for p in &o.points {
        let v = match &p.value {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        t += &format!("{v:>12} {:>16} {:>8.2}%\n", us(p.makespan), 100.0 * p.speedup);
    }
    t
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write(path, text),
        None => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn request_of(args: &ScenarioArgs) -> Result<Option<Request>, CliError> {
    load_request(args.scenario.as_deref(), &args.params)
}

fn required(args: &ScenarioArgs) -> Result<Request, CliError> {
    request_of(args)?.ok_or_else(|| CliError::BadParam("--scenario is required".into()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.out.as_deref();
    let render = |json: String, table: String| if cli.json { json } else { table };
    match &cli.command {
        Command::Build { trace } => {
            let o = cmd_build(trace, cli.strict)?;
            emit(out, &render(to_json(&o), table_build(&o)))
        }
        Command::Simulate { trace } => {
            let o = cmd_simulate(trace, cli.strict)?;
            emit(out, &render(to_json(&o), table_simulate(&o)))
        }
        Command::Whatif { trace, scenario } => {
            let o = cmd_whatif(trace, &required(scenario)?, cli.strict)?;
            emit(out, &render(to_json(&o), table_whatif(&o)))
        }
        Command::Sweep {
            trace,
            scenario,
            over,
            values,
        } => {
            let Request::Scenario(spec) = required(scenario)? else {
                return Err(CliError::BadParam("sweep needs a scenario, not a pipeline".into()));
            };
            let values: Vec<Value> = values
                .iter()
                .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.clone())))
                .collect();
            let o = cmd_sweep(trace, &spec, over, &values, cli.strict)?;
            emit(out, &render(to_json(&o), table_sweep(&o)))
        }
        Command::Gen { spec, fixture, random } => {
            let source = match (spec, fixture, random) {
                (Some(p), _, _) => GenSource::Spec(p.clone()),
                (_, Some(f), _) => GenSource::Fixture(f.clone()),
                (_, _, Some(n)) => GenSource::Random(*n),
                _ => return Err(CliError::BadParam("gen needs a spec, --fixture or --random".into())),
            };
            let o = cmd_gen(&source, cli.seed)?;
            let trace = o.trace.to_json() + "\n";
            match out {
                None => emit(None, &trace),
                Some(path) => {
                    write(path, &trace)?;
                    let summary = serde_json::json!({
                        "trace": path,
                        "events": o.trace.events.len(),
                        "expected_makespan": o.expected_makespan,
                    });
                    let table = format!(
                        "wrote {} events to {}\nexpected makespan {} us\n",
                        o.trace.events.len(),
                        path.display(),
                        us(o.expected_makespan)
                    );
                    emit(None, &render(to_json(&summary), table))
                }
            }
        }
        Command::Export { trace, scenario } => {
            let doc = cmd_export(trace, request_of(scenario)?.as_ref(), cli.strict)?;
            emit(out, &to_json(&doc))
        }
        Command::Serve { port, traces, capacity } => {
            cmd_serve(*port, traces.as_deref(), *capacity, BuildOptions { strict: cli.strict })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("error[UsageError]: {}", e.to_string().trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                eprintln!("{}", serde_json::json!({"error": e.name(), "message": e.to_string()}));
            } else {
                eprintln!("error[{}]: {e}", e.name());
            }
            ExitCode::FAILURE
        }
    }
}
