use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use robstop_core::experiment::{
    cmd_oracle, cmd_price, cmd_price_with_policy, cmd_table, render_rows, OutputFormat, RunConfig,
};
use robstop_core::market::{simulate_paths_tagged, stream};
use robstop_core::oracle::OracleConfig;
use robstop_core::{DivergenceSpec, Error, ErrorClass, RegressionPolicy};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_ORACLE: u8 = 3;

#[derive(Parser)]
#[command(name = "robstop", version, about = "Bounds for robust optimal stopping under divergence risk measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lower and upper bound for one risk level.
    Price(PriceArgs),
    /// One row per risk level in the config (or given with --risk).
    Table(RunArgs),
    /// Exact lattice checks on built-in or user fixtures.
    Oracle(OracleArgs),
    /// Simulate benchmark paths and write them to a file.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Risk level, e.g. avar:0.5, entropic:0.01, power:2, neutral. Repeatable.
    #[arg(long = "risk", value_parser = parse_spec)]
    risks: Vec<DivergenceSpec>,
    /// Training and testing path count.
    #[arg(long)]
    paths: Option<usize>,
    /// Inner paths per date of the nested simulation.
    #[arg(long)]
    inner: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML (or JSON) run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Reduced path counts for quick runs.
    #[arg(long)]
    fast: bool,
    /// Skip the nested-simulation upper bound.
    #[arg(long)]
    lower_only: bool,
    /// Report zero seconds so that reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct PriceArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Save the fitted exercise policy as JSON.
    #[arg(long)]
    policy_out: Option<PathBuf>,
    /// Evaluate a saved policy instead of fitting one.
    #[arg(long, conflicts_with = "policy_out")]
    policy_in: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// "builtin", a fixture name or a JSON lattice file.
    #[arg(default_value = "builtin")]
    source: String,
    /// Risk levels to check; defaults to one per family.
    #[arg(long = "risk", value_parser = parse_spec)]
    risks: Vec<DivergenceSpec>,
    #[arg(long, value_enum, default_value = "text")]
    format: OracleFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "testing")]
    stream: StreamArg,
    #[arg(long, value_enum, default_value = "csv")]
    format: PathFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathFormat {
    Csv,
    Bin,
}

#[derive(Clone, Copy, ValueEnum)]
enum StreamArg {
    Training,
    Search,
    Testing,
}

fn parse_spec(s: &str) -> Result<DivergenceSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Core(Error),
    Oracle(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if args.fast {
        cfg = cfg.into_fast();
    }
    if !args.risks.is_empty() {
        cfg.risks = args.risks.clone();
    }
    if let Some(n) = args.paths {
        cfg.n_training = n;
        cfg.n_testing = n;
    }
    if let Some(m) = args.inner {
        cfg.n_inner = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(f) = args.format {
        cfg.format = match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        };
    }
    cfg.lower_only |= args.lower_only;
    if args.no_timing {
        cfg.record_timing = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Price(args) => {
            let cfg = load_config(&args.run)?;
            let spec = match cfg.risks.as_slice() {
                [spec] => *spec,
                [] => return Err(Error::InvalidInput("price needs a risk level (--risk)".into()).into()),
                _ => {
                    return Err(Error::InvalidInput(
                        "price takes a single risk level; use table for several".into(),
                    )
                    .into())
                }
            };
            let row = match &args.policy_in {
                Some(path) => {
                    let policy = RegressionPolicy::from_json(&fs::read_to_string(path)?)?;
                    cmd_price_with_policy(&cfg, spec, &policy)?
                }
                None => {
                    let (row, policy) = cmd_price(&cfg, spec)?;
                    if let Some(path) = &args.policy_out {
                        fs::write(path, policy.to_json()?)?;
                    }
                    row
                }
            };
            emit(args.run.out.as_deref(), &render_rows(&[row], cfg.format)?)?;
        }
        Command::Table(args) => {
            let cfg = load_config(&args)?;
            let rows = cmd_table(&cfg)?;
            emit(args.out.as_deref(), &render_rows(&rows, cfg.format)?)?;
        }
        Command::Oracle(args) => {
            let mut cfg = OracleConfig::default();
            if !args.risks.is_empty() {
                cfg.specs = args.risks.clone();
            }
            let report = cmd_oracle(&args.source, &cfg)?;
            let text = match args.format {
                OracleFormat::Text => report.render_text(),
                OracleFormat::Json => serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
            };
            emit(args.out.as_deref(), &text)?;
            if !report.passed() {
                return Err(Failure::Oracle(report.failures()));
            }
        }
        Command::Simulate(args) => {
            let mut cfg = match &args.config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            let tag = match args.stream {
                StreamArg::Training => stream::TRAINING,
                StreamArg::Search => stream::SEARCH,
                StreamArg::Testing => stream::TESTING,
            };
            let paths = simulate_paths_tagged(cfg.market.params(), &cfg.market.grid()?, args.paths, cfg.seed, tag)?;
            let file = std::io::BufWriter::new(fs::File::create(&args.out)?);
            match args.format {
                PathFormat::Csv => paths.write_csv(file)?,
                PathFormat::Bin => paths.write_binary(file)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Validation => EXIT_VALIDATION,
                ErrorClass::Numeric => EXIT_NUMERIC,
            })
        }
        Err(Failure::Oracle(n)) => {
            eprintln!("error: {n} oracle check(s) failed");
            ExitCode::from(EXIT_ORACLE)
        }
    }
}
