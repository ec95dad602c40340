//! `tsc`: command-line client of the tsc service. Without `--server` it
//! starts an embedded service on a loopback port.

mod args;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;
use tsc_client::{Client, ClientError};
use tsc_core::controllers::ControllerSpec;
use tsc_core::curation::{export_dataset, PriorityConfig};
use tsc_core::deliberation::DeliberationConfig;
use tsc_core::experiment::{
    format_compare_table, write_compare_csv, write_metrics_csv, write_trace_csv, BenchRequest, CompareRequest,
    CurateRequest, MetricsRow, RunRequest,
};
use tsc_core::scenario::{GridParams, ScenarioFile};

use args::{Cli, Command, Global};

const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> ExitCode {
        match self {
            Failure::Validation(_) => ExitCode::from(2),
            Failure::Runtime(_) => ExitCode::from(3),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn read_scenario(path: &Path) -> Result<ScenarioFile, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Validation(format!("{}: malformed scenario: {e}", path.display())))
}

fn scenario_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
}

fn out_dir(g: &Global) -> Result<&Path, Failure> {
    fs::create_dir_all(&g.out).map_err(|e| io_failure(&g.out, e))?;
    Ok(&g.out)
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_failure(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut fs::File) -> Result<(), String>) -> Outcome {
    let mut file = fs::File::create(path).map_err(|e| io_failure(path, e))?;
    f(&mut file).map_err(|e| io_failure(path, e))?;
    file.flush().map_err(|e| io_failure(path, e))
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

fn run_request(g: &Global, path: &Path, controller: Option<ControllerSpec>, default_seeds: &[u64]) -> Result<RunRequest, Failure> {
    Ok(RunRequest {
        name: scenario_name(path),
        scenario: read_scenario(path)?,
        controller,
        seeds: g.seeds.clone().unwrap_or_else(|| default_seeds.to_vec()),
        horizon: g.horizon,
        jobs: g.jobs,
        trace: false,
    })
}

fn summary_line(r: &MetricsRow) -> String {
    format!(
        "{} {}: ATT {} s, AQL {:.2} m, AWT {} s, completed {}/{}",
        r.scenario,
        r.controller,
        fmt_metric(r.att),
        r.aql,
        fmt_metric(r.awt),
        r.completed,
        r.spawned
    )
}

async fn cmd_run(client: &Client, g: &Global, a: args::RunArgs) -> Outcome {
    let mut req = run_request(g, &a.scenario.scenario, a.controller, &DEFAULT_SEEDS)?;
    req.trace = a.trace;
    let report = client.run(&req).await?;
    let dir = out_dir(g)?;
    let mut rows = report.rows.clone();
    rows.push(report.median.clone());
    let csv_path = dir.join("metrics.csv");
    write_with(&csv_path, |f| write_metrics_csv(&rows, f).map_err(|e| e.to_string()))?;
    write_json(&dir.join("metrics.json"), &report)?;
    if let Some(trace) = &report.trace {
        write_with(&dir.join("trace.csv"), |f| write_trace_csv(trace, f).map_err(|e| e.to_string()))?;
    }
    for r in &report.rows {
        println!("seed {:>6}  {}", r.seed.unwrap_or_default(), summary_line(r));
    }
    println!("median       {}", summary_line(&report.median));
    println!("wrote {}", csv_path.display());
    Ok(())
}

async fn cmd_compare(client: &Client, g: &Global, a: args::CompareArgs) -> Outcome {
    if a.controllers.len() < 2 {
        return Err(Failure::Validation("compare needs at least two controllers".into()));
    }
    let base = run_request(g, &a.scenario.scenario, None, &DEFAULT_SEEDS)?;
    let runs = a
        .controllers
        .into_iter()
        .map(|c| RunRequest {
            controller: Some(c),
            ..base.clone()
        })
        .collect();
    let report = client.compare(&CompareRequest { runs }).await?;
    let dir = out_dir(g)?;
    let table = format_compare_table(&report.entries);
    write_with(&dir.join("compare.csv"), |f| write_compare_csv(&report.entries, f).map_err(|e| e.to_string()))?;
    fs::write(dir.join("compare.txt"), &table).map_err(|e| io_failure(&dir.join("compare.txt"), e))?;
    write_json(&dir.join("compare.json"), &report)?;
    print!("{table}");
    Ok(())
}

fn load_deliberation(spec: &str) -> Result<DeliberationConfig, Failure> {
    if spec == "mock" {
        return Ok(DeliberationConfig::mock());
    }
    let path = PathBuf::from(spec);
    let bytes = fs::read(&path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Validation(format!("{}: malformed deliberation config: {e}", path.display())))
}

async fn cmd_curate(client: &Client, g: &Global, a: args::CurateArgs) -> Outcome {
    let controller = a.controller.unwrap_or_else(|| ControllerSpec::RlAssistant(Default::default()));
    if !matches!(controller, ControllerSpec::RlAssistant(_)) {
        return Err(Failure::Validation("curation runs the rl_assistant controller".into()));
    }
    let req = CurateRequest {
        run: run_request(g, &a.scenario.scenario, Some(controller), &[1])?,
        priority: PriorityConfig {
            alpha: a.alpha,
            kappa: a.kappa,
            lambda_neg: a.lambda_neg,
            tau: a.tau,
            f: a.normalizer,
            g: a.normalizer,
        },
        deliberation: load_deliberation(&a.deliberation)?,
        explore: a.explore,
    };
    let out = client.curate(&req).await?;
    let dir = out_dir(g)?;
    let dataset = dir.join("dataset.jsonl");
    export_dataset(&out.rows, &dataset).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_json(&dir.join("curation_report.json"), &out.report)?;
    let r = &out.report;
    println!(
        "{} records: {} in D+ ({} at or above kappa), {} in D-",
        r.total, r.plus, r.high_priority, r.minus
    );
    println!(
        "provenance: {} deliberated, {} rl_only, {} non_deliberated",
        r.deliberated, r.rl_only, r.non_deliberated
    );
    if r.consensus_failures > 0 {
        println!("consensus unavailable at {} decisions", r.consensus_failures);
    }
    println!("wrote {}", dataset.display());
    Ok(())
}

async fn cmd_bench(client: &Client, g: &Global, a: args::BenchArgs) -> Outcome {
    let req = BenchRequest {
        rows: a.rows,
        cols: a.cols,
        horizon: g.horizon.unwrap_or(3600),
        seed: g.seeds.as_ref().and_then(|s| s.first().copied()).unwrap_or(1),
        demand_vph: a.demand,
    };
    let report = client.bench(&req).await?;
    let dir = out_dir(g)?;
    write_json(&dir.join("bench.json"), &report)?;
    println!(
        "{} intersections, {} lanes, {} ticks in {:.3} s ({:.0} ticks/s); ATT {} s",
        report.intersections,
        report.lanes,
        report.ticks,
        report.wall_seconds,
        report.ticks_per_second,
        fmt_metric(report.metrics.att)
    );
    Ok(())
}

async fn cmd_validate(client: &Client, a: args::ScenarioArg) -> Outcome {
    let scenario = read_scenario(&a.scenario)?;
    let report = client.validate(&scenario).await?;
    println!(
        "{}: valid, {} intersections, {} lanes, {} flows",
        a.scenario.display(),
        report.intersections.len(),
        report.lanes,
        report.flows
    );
    for i in &report.intersections {
        println!(
            "  intersection {}: {} movements, {} phases, green {}..{} s",
            i.id, i.movements, i.phases, i.d_min, i.d_max
        );
    }
    Ok(())
}

async fn cmd_generate(client: &Client, g: &Global, a: args::GenerateArgs) -> Outcome {
    let params = GridParams {
        rows: a.rows,
        cols: a.cols,
        demand_vph: a.demand,
        seed: g.seeds.as_ref().and_then(|s| s.first().copied()).unwrap_or(1),
        horizon: g.horizon.unwrap_or(3600),
        ..GridParams::default()
    };
    let scenario = client.generate(&params).await?;
    let path = match a.file {
        Some(p) => p,
        None => out_dir(g)?.join(format!("grid_{}x{}.json", a.rows, a.cols)),
    };
    let mut text = scenario.to_json();
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

async fn dispatch(cli: Cli) -> Outcome {
    if let Command::Serve(a) = &cli.command {
        let listener = tokio::net::TcpListener::bind(a.addr).await.map_err(|e| Failure::Runtime(format!("{}: {e}", a.addr)))?;
        println!("listening on http://{}", listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?);
        return tsc_server::serve(listener).await.map_err(|e| Failure::Runtime(e.to_string()));
    }
    let client = match &cli.global.server {
        Some(url) => Client::new(url),
        None => {
            let addr = tsc_server::spawn(([127, 0, 0, 1], 0).into())
                .await
                .map_err(|e| Failure::Runtime(format!("cannot start embedded service: {e}")))?;
            Client::new(&format!("http://{addr}"))
        }
    };
    let g = &cli.global;
    match cli.command {
        Command::Run(a) => cmd_run(&client, g, a).await,
        Command::Compare(a) => cmd_compare(&client, g, a).await,
        Command::Curate(a) => cmd_curate(&client, g, a).await,
        Command::Bench(a) => cmd_bench(&client, g, a).await,
        Command::Validate(a) => cmd_validate(&client, a).await,
        Command::Generate(a) => cmd_generate(&client, g, a).await,
        Command::Serve(_) => unreachable!(),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            match f {
                Failure::Validation(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            code
        }
    }
}
