use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use decentrality::config::{ConfigError, Overrides, RunConfig};
use decentrality::fixture::{self, FixtureError, FixtureKind, FixtureSpec};
use decentrality::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(
    name = "decentrality",
    version,
    about = "Decentralization metrics for crypto-ecosystem subsystems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate input files and print per-file row accounting
    IngestCheck(RunArgs),
    /// Compute metric panels and write CSVs plus report.json
    Compute(RunArgs),
    /// Run the Nakamoto-set knockout simulation per window
    Knockout(RunArgs),
    /// Correlate entropy with node count, or two exported series
    Correlate(CorrelateArgs),
    /// Generate a seeded synthetic consensus fixture
    Fixture(FixtureArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Flat TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// `<subsystem>:<path>`, path may be a directory; repeatable
    #[arg(long = "input")]
    inputs: Vec<String>,
    #[arg(long)]
    ecosystem: Option<String>,
    /// Comma-separated: shannon,renyi,gini,nakamoto,hhi,node_count
    #[arg(long)]
    metrics: Vec<String>,
    /// Rényi orders, comma-separated or repeated
    #[arg(long = "alpha", value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Builder labels file, one address per line
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Widen daily subsystems to `monthly`
    #[arg(long)]
    granularity: Option<String>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig, ConfigError> {
        RunConfig::resolve(
            self.config.as_deref(),
            Overrides {
                inputs: self.inputs,
                ecosystem: self.ecosystem,
                metrics: self.metrics,
                alphas: self.alphas,
                threshold: self.threshold,
                output_dir: self.output_dir,
                labels: self.labels,
                granularity: self.granularity,
            },
        )
    }
}

#[derive(Args)]
struct CorrelateArgs {
    /// Exported `window_start,value` series; use with --series-b
    #[arg(long, requires = "series_b")]
    series_a: Option<PathBuf>,
    #[arg(long, requires = "series_a")]
    series_b: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Uniform,
    Zipf,
    Duopoly,
    Stepwise,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    days: u32,
    #[arg(long, default_value = "2023-01-01")]
    start: NaiveDate,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    per_entity: u32,
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    #[arg(long, default_value_t = 100)]
    blocks_per_day: u32,
    #[arg(long, value_delimiter = ',', default_value = "0.65,0.35")]
    shares: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    start_n: usize,
    #[arg(long, default_value_t = 1)]
    step: usize,
    #[arg(long, default_value_t = 1)]
    days_per_step: u32,
}

enum Failure {
    Config(String),
    Input(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e.exit_code() {
            2 => Failure::Config(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::IngestCheck(args) => {
            let cfg = args.resolve()?;
            let data = pipeline::load(&cfg)?;
            let windows: usize = data.distributions.values().map(Vec::len).sum();
            print_json(&serde_json::json!({
                "files": data.files,
                "records_aggregated": data.records,
                "zero_weight_records": data.zero_weight_records,
                "panels": data.distributions.len(),
                "windows": windows,
            }));
        }
        Command::Compute(args) => {
            let cfg = args.resolve()?;
            let report = pipeline::run_pipeline(&cfg)?;
            eprintln!(
                "wrote {} series to {} ({} rows in, {} skipped)",
                report.series.len(),
                cfg.output_dir()?.display(),
                report.totals.rows_in,
                report.totals.rows_skipped
            );
        }
        Command::Knockout(args) => {
            let cfg = args.resolve()?;
            print_json(&pipeline::run_knockout(&cfg)?);
        }
        Command::Correlate(args) => match (args.series_a, args.series_b) {
            (Some(a), Some(b)) => print_json(&pipeline::correlate_series_files(&a, &b)?),
            _ => {
                let cfg = args.run.resolve()?;
                print_json(&pipeline::run_correlation(&cfg)?);
            }
        },
        Command::Fixture(args) => {
            let kind = match args.kind {
                KindArg::Uniform => FixtureKind::Uniform {
                    n: args.n,
                    per_entity: args.per_entity,
                },
                KindArg::Zipf => FixtureKind::Zipf {
                    s: args.s,
                    n: args.n,
                    blocks_per_day: args.blocks_per_day,
                },
                KindArg::Duopoly => FixtureKind::Duopoly {
                    shares: args.shares,
                    blocks_per_day: args.blocks_per_day,
                },
                KindArg::Stepwise => FixtureKind::Stepwise {
                    start_n: args.start_n,
                    step: args.step,
                    days_per_step: args.days_per_step,
                    per_entity: args.per_entity,
                },
            };
            let spec = FixtureSpec {
                kind,
                days: args.days,
                start: args.start,
                seed: args.seed,
            };
            let files = fixture::write_fixture(&spec, &args.output_dir).map_err(|e| match e {
                FixtureError::InvalidParams(_) => Failure::Config(e.to_string()),
                FixtureError::Io { .. } => Failure::Input(e.to_string()),
            })?;
            eprintln!(
                "wrote {} ({} rows) and {}",
                files.csv.display(),
                files.ground_truth.rows,
                files.truth.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
