use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use berry_core::field::{LambdaLaw, Link};
use berry_core::geometry::EpcMethod;
use berry_core::harness::{parse_levels, NormalityKind};
use berry_core::validation::Suite;

mod run;

use run::CliError;

/// Planar Berry random waves: simulation, excursion-set Euler characteristic,
/// limit theory and Monte Carlo checks.
#[derive(Debug, Parser)]
#[command(name = "berry", version)]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "BERRY_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample one field on a pixel grid and write it as BRW1.
    Simulate(SimulateArgs),
    /// Euler characteristic of the excursion sets of one field.
    Epc(EpcArgs),
    /// Closed-form mean and variance curves.
    Theory(TheoryArgs),
    /// Monte Carlo experiment over many independent fields.
    Mc(McArgs),
    /// Numerical self-checks; exit status 3 if any fails.
    Validate(ValidateArgs),
}

/// A parsed level specification.
#[derive(Debug, Clone)]
struct Levels(Vec<f64>);

fn levels_arg(s: &str) -> Result<Levels, String> {
    parse_levels(s).map(Levels).map_err(|e| e.to_string())
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn parsed<T: std::str::FromStr<Err = berry_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: berry_core::Error| e.to_string())
}

/// Field generation flags shared by `simulate` and `epc`.
#[derive(Debug, Args)]
struct FieldArgs {
    /// Window half-width N; the window is [-N, N]².
    #[arg(long = "n", value_parser = positive)]
    half_width: Option<f64>,
    /// Pixels per unit length.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    ppu: u32,
    /// Number of plane waves.
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    waves: u64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replicate index within the master seed's streams.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    field: FieldArgs,
    /// Also store the five derivative planes.
    #[arg(long)]
    derivs: bool,
    /// Output BRW1 file; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EpcArgs {
    /// Read the field from a BRW1 file instead of generating it.
    #[arg(long = "in", conflicts_with = "half_width")]
    input: Option<PathBuf>,
    #[command(flatten)]
    field: FieldArgs,
    /// `lo:hi:step`, a comma list, or one value.
    #[arg(long, value_parser = levels_arg, default_value = "-3:3:0.1", allow_hyphen_values = true)]
    levels: Levels,
    /// pixel, pixel-full or critical.
    #[arg(long, value_parser = parsed::<EpcMethod>, default_value = "pixel")]
    method: EpcMethod,
    /// Scan cells per unit for the critical method.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    scan_resolution: u32,
    /// Output CSV; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    #[arg(long, value_parser = levels_arg, default_value = "-4:4:0.1", allow_hyphen_values = true)]
    levels: Levels,
    /// Window half-width N.
    #[arg(long = "n", value_parser = positive)]
    half_width: f64,
    /// gaussian, pareto:α, exp:θ or constant:λ.
    #[arg(long, value_parser = parsed::<LambdaLaw>, default_value = "gaussian")]
    model: LambdaLaw,
    /// scale or location.
    #[arg(long, value_parser = parsed::<Link>, default_value = "scale")]
    link: Link,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct McArgs {
    /// TOML file with the experiment; excludes the experiment flags.
    #[arg(long, conflicts_with_all = ["replicates", "half_width", "ppu", "waves", "levels", "method", "model", "link", "seed", "normality", "scan_resolution"])]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    replicates: Option<u64>,
    #[arg(long = "n", value_parser = positive)]
    half_width: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    ppu: Option<u32>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    waves: Option<u64>,
    #[arg(long, value_parser = levels_arg, allow_hyphen_values = true)]
    levels: Option<Levels>,
    #[arg(long, value_parser = parsed::<EpcMethod>)]
    method: Option<EpcMethod>,
    #[arg(long, value_parser = parsed::<LambdaLaw>)]
    model: Option<LambdaLaw>,
    #[arg(long, value_parser = parsed::<Link>)]
    link: Option<Link>,
    #[arg(long)]
    seed: Option<u64>,
    /// ad or ks.
    #[arg(long, value_parser = parsed::<NormalityKind>)]
    normality: Option<NormalityKind>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    scan_resolution: Option<u32>,
    /// Directory for results.csv, summary.csv and report.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Override the results CSV path.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Override the summary CSV path.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Override the report JSON path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// specfun, covariance, chaos or all.
    #[arg(long, value_parser = parsed::<Suite>, default_value = "all")]
    suite: Suite,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let threads = cli.threads.map(usize::from);
    let result = berry_core::par::with_threads(threads, || match cli.command {
        Command::Simulate(a) => run::simulate(a),
        Command::Epc(a) => run::epc(a),
        Command::Theory(a) => run::theory(a),
        Command::Mc(a) => run::mc(a),
        Command::Validate(a) => run::validate(a),
    })
    .map_err(CliError::from)
    .and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("berry: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
