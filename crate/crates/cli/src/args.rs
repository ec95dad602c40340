use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tsc_core::controllers::ControllerSpec;
use tsc_core::curation::Normalizer;

#[derive(Debug, Parser)]
#[command(name = "tsc", version, about = "Traffic signal control experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Use a running service instead of an embedded one.
    #[arg(long, global = true, value_name = "URL")]
    pub server: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, alias = "seed", global = true, value_delimiter = ',', value_name = "SEEDS")]
    pub seeds: Option<Vec<u64>>,
    /// Episode length in ticks; defaults to the scenario's.
    #[arg(long, global = true, value_name = "TICKS")]
    pub horizon: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    pub out: PathBuf,
    /// Seeds simulated in parallel.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one controller over every seed.
    Run(RunArgs),
    /// Run several controllers on one scenario and rank them.
    Compare(CompareArgs),
    /// Collect a priority-scored dataset with deliberation.
    Curate(CurateArgs),
    /// Time MaxPressure on a large generated grid.
    Bench(BenchArgs),
    /// Check a scenario file.
    Validate(ScenarioArg),
    /// Write a generated grid scenario.
    Generate(GenerateArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArg {
    #[arg(long, value_name = "PATH")]
    pub scenario: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    /// `random`, `fixed_time[:GREEN]`, `max_pressure[:GREEN]`,
    /// `rl_assistant`, or a JSON object. Defaults to the scenario's.
    #[arg(long, value_parser = parse_controller, value_name = "SPEC")]
    pub controller: Option<ControllerSpec>,
    /// Also write per-tick lane queues of the first seed.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    /// Controllers to compare, comma-separated.
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_controller,
        default_value = "random,fixed_time,max_pressure",
        value_name = "SPECS"
    )]
    pub controllers: Vec<ControllerSpec>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    /// `mock` or a JSON file with defenders, consensus and params.
    #[arg(long, default_value = "mock", value_name = "mock|PATH")]
    pub deliberation: String,
    /// RL assistant settings; `rl_assistant` or a JSON object.
    #[arg(long, value_parser = parse_controller, value_name = "SPEC")]
    pub controller: Option<ControllerSpec>,
    /// Weight of the critic term in the fused priority.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// High-priority threshold.
    #[arg(long, default_value_t = 0.5)]
    pub kappa: f64,
    /// Unlikelihood strength.
    #[arg(long = "lambda-neg", default_value_t = 0.3)]
    pub lambda_neg: f64,
    /// Sampling temperature.
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    /// Probability of executing a random candidate.
    #[arg(long, default_value_t = 0.2)]
    pub explore: f64,
    #[arg(long, value_parser = parse_normalizer, default_value = "min_max")]
    pub normalizer: Normalizer,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 13)]
    pub rows: usize,
    #[arg(long, default_value_t = 14)]
    pub cols: usize,
    /// Vehicles per hour per entry lane.
    #[arg(long, default_value_t = 200.0)]
    pub demand: f64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 3)]
    pub rows: usize,
    #[arg(long, default_value_t = 3)]
    pub cols: usize,
    #[arg(long, default_value_t = 200.0)]
    pub demand: f64,
    /// Output file; defaults to `<out>/grid_<rows>x<cols>.json`.
    #[arg(long, value_name = "PATH")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
}

pub fn parse_controller(s: &str) -> Result<ControllerSpec, String> {
    let s = s.trim();
    if s.starts_with('{') {
        return serde_json::from_str(s).map_err(|e| format!("bad controller JSON: {e}"));
    }
    let (name, green) = match s.split_once(':') {
        Some((n, g)) => {
            let g: f64 = g.parse().map_err(|_| format!("bad green duration `{g}`"))?;
            (n, Some(g))
        }
        None => (s, None),
    };
    let spec = match name {
        "random" => ControllerSpec::Random,
        "fixed_time" => ControllerSpec::FixedTime {
            duration: green.unwrap_or(tsc_core::controllers::DEFAULT_FIXED_TIME_DURATION),
            order: None,
        },
        "max_pressure" => ControllerSpec::MaxPressure {
            duration: green.unwrap_or(tsc_core::controllers::DEFAULT_MAX_PRESSURE_DURATION),
        },
        "rl_assistant" => ControllerSpec::RlAssistant(Default::default()),
        other => return Err(format!("unknown controller `{other}`")),
    };
    if green.is_some() && matches!(spec, ControllerSpec::Random | ControllerSpec::RlAssistant(_)) {
        return Err(format!("`{name}` takes no green duration"));
    }
    Ok(spec)
}

fn parse_normalizer(s: &str) -> Result<Normalizer, String> {
    match s {
        "min_max" | "minmax" => Ok(Normalizer::MinMax),
        "z_sigmoid" | "zsigmoid" => Ok(Normalizer::ZSigmoid),
        other => Err(format!("unknown normalizer `{other}` (min_max or z_sigmoid)")),
    }
}
