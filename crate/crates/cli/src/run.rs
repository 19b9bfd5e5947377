//! Command implementations and their error-to-exit-code mapping.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use berry_core::field::{
    read_brw1, replicate_rng, sample_ensemble, sample_grid, write_brw1, GridSpec, LambdaLaw, Link, MixtureSpec,
    SeedProvenance, DEFAULT_WAVES,
};
use berry_core::geometry::{epc_curve, write_epc_csv, EpcMethod, EpcSource};
use berry_core::harness::{
    parse_levels, run_mc, write_report_json, write_results_csv, write_summary_csv, MCConfig, NormalityKind,
};
use berry_core::theory::{theory_curve, write_theory_csv};
use berry_core::validation::{run_suite, Suite, ValidationReport};
use berry_core::Error;

use crate::{EpcArgs, FieldArgs, McArgs, SimulateArgs, TheoryArgs, ValidateArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Core(#[from] Error),
    #[error("run stopped early, partial results written: {0}")]
    Partial(String),
    #[error("failing checks: {0}")]
    Validation(String),
}

impl CliError {
    /// 0 success, 1 runtime or I/O, 2 usage, 3 validation failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Domain(_) | Error::Precondition(_)) => 2,
            CliError::Io { .. } | CliError::Core(_) | CliError::Partial(_) => 1,
            CliError::Validation(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

/// File at `path`, or standard output.
fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Writes with `f`, attributing I/O failures to `path`.
fn write_to(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> berry_core::Result<()>) -> Result<()> {
    let shown = path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut w = open_out(path)?;
    f(&mut w).map_err(|e| match e {
        Error::Io(source) => CliError::Io { path: shown.display().to_string(), source },
        other => other.into(),
    })?;
    w.flush().map_err(io_err(&shown))
}

#[derive(Serialize)]
struct Metadata<'a, C: Serialize> {
    version: &'a str,
    command: &'a str,
    config: &'a C,
}

fn metadata<C: Serialize>(command: &str, config: &C) -> Result<String> {
    let json = serde_json::to_string(&Metadata { version: env!("CARGO_PKG_VERSION"), command, config })
        .map_err(Error::from)?;
    Ok(json)
}

/// `# berry <version> command=<cmd> config=<json>`, the first line of CSV outputs.
fn metadata_line<C: Serialize>(command: &str, config: &C) -> Result<String> {
    let json = serde_json::to_string(config).map_err(Error::from)?;
    Ok(format!("# berry {} command={command} config={json}", env!("CARGO_PKG_VERSION")))
}

#[derive(Debug, Serialize)]
struct FieldConfig {
    half_width: f64,
    pixels_per_unit: u32,
    waves: usize,
    master_seed: u64,
    replicate: u64,
}

impl FieldArgs {
    fn resolve(&self, command: &str) -> Result<FieldConfig> {
        let half_width = self
            .half_width
            .ok_or_else(|| CliError::Usage(format!("{command} needs --n (or --in for epc)")))?;
        Ok(FieldConfig {
            half_width,
            pixels_per_unit: self.ppu,
            waves: usize::try_from(self.waves).map_err(|_| CliError::Usage("too many waves".into()))?,
            master_seed: self.seed,
            replicate: self.replicate,
        })
    }
}

impl FieldConfig {
    fn provenance(&self) -> SeedProvenance {
        SeedProvenance { master_seed: self.master_seed, replicate: self.replicate }
    }

    fn ensemble(&self) -> Result<berry_core::field::WaveEnsemble> {
        Ok(sample_ensemble(self.waves, &mut replicate_rng(self.master_seed, self.replicate))?)
    }
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Config<'a> {
        #[serde(flatten)]
        field: &'a FieldConfig,
        derivs: bool,
        side: usize,
    }
    let field = a.field.resolve("simulate")?;
    let spec = GridSpec::new(field.half_width, field.pixels_per_unit)?;
    let mut sample = sample_grid(&field.ensemble()?, spec, a.derivs)?;
    sample.seed = Some(field.provenance());
    write_to(Some(&a.out), |w| write_brw1(&sample, w))?;

    let config = Config { field: &field, derivs: a.derivs, side: spec.side() };
    let meta_path = sidecar_path(&a.out);
    let json = metadata("simulate", &config)?;
    std::fs::write(&meta_path, format!("{json}\n")).map_err(io_err(&meta_path))
}

fn sidecar_path(grid: &Path) -> PathBuf {
    let mut p = grid.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

/// Seed of a grid written by `simulate`, read from its sidecar when present.
fn sidecar_provenance(grid: &Path) -> Option<SeedProvenance> {
    let text = std::fs::read_to_string(sidecar_path(grid)).ok()?;
    let meta: serde_json::Value = serde_json::from_str(&text).ok()?;
    let config = meta.get("config")?;
    Some(SeedProvenance {
        master_seed: config.get("master_seed")?.as_u64()?,
        replicate: config.get("replicate")?.as_u64()?,
    })
}

pub fn epc(a: EpcArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Config<'a> {
        input: Option<String>,
        field: Option<&'a FieldConfig>,
        levels: &'a [f64],
        method: EpcMethod,
        scan_resolution: Option<u32>,
    }
    let field = match a.input {
        Some(_) => None,
        None => Some(a.field.resolve("epc")?),
    };
    let reports = match (&a.input, &field) {
        (Some(_), _) if a.method == EpcMethod::Critical => {
            return Err(CliError::Usage(
                "the critical method needs the wave ensemble: pass --n/--ppu/--waves/--seed instead of --in".into(),
            ))
        }
        (Some(path), _) => {
            let file = File::open(path).map_err(io_err(path))?;
            let mut sample = read_brw1(io::BufReader::new(file))?;
            sample.seed = sidecar_provenance(path);
            epc_curve(EpcSource::Sample(&sample), &a.levels.0, a.method)?
        }
        (None, Some(f)) if a.method == EpcMethod::Critical => {
            let e = f.ensemble()?;
            let source = EpcSource::Ensemble {
                ensemble: &e,
                half_width: f.half_width,
                scan_resolution: a.scan_resolution,
                seed: Some(f.provenance()),
            };
            epc_curve(source, &a.levels.0, a.method)?
        }
        (None, Some(f)) => {
            let spec = GridSpec::new(f.half_width, f.pixels_per_unit)?;
            let mut sample = sample_grid(&f.ensemble()?, spec, false)?;
            sample.seed = Some(f.provenance());
            epc_curve(EpcSource::Sample(&sample), &a.levels.0, a.method)?
        }
        (None, None) => unreachable!("resolved above"),
    };
    let config = Config {
        input: a.input.as_ref().map(|p| p.display().to_string()),
        field: field.as_ref(),
        levels: &a.levels.0,
        method: a.method,
        scan_resolution: (a.method == EpcMethod::Critical).then_some(a.scan_resolution),
    };
    let line = metadata_line("epc", &config)?;
    write_to(a.out.as_deref(), |w| {
        writeln!(w, "{line}")?;
        write_epc_csv(w, &reports, true)
    })
}

pub fn theory(a: TheoryArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Config<'a> {
        levels: &'a [f64],
        half_width: f64,
        model: MixtureSpec,
    }
    let model = MixtureSpec::new(a.link, a.model)?;
    let curve = theory_curve(&a.levels.0, a.half_width, &model)?;
    let line = metadata_line("theory", &Config { levels: &a.levels.0, half_width: a.half_width, model })?;
    write_to(a.out.as_deref(), |w| {
        writeln!(w, "{line}")?;
        write_theory_csv(w, &curve)
    })
}

fn mc_config(a: &McArgs) -> Result<MCConfig> {
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        // a malformed or inconsistent config is a usage error
        return MCConfig::from_toml_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())));
    }
    let half_width = a.half_width.ok_or_else(|| CliError::Usage("mc needs --config or --n".into()))?;
    let lambda = a.model.unwrap_or(LambdaLaw::Constant(1.0));
    let mixture = MixtureSpec::new(a.link.unwrap_or(Link::Scale), lambda)?;
    let cfg = MCConfig {
        replicates: a.replicates.unwrap_or(100),
        half_width,
        pixels_per_unit: a.ppu.unwrap_or(2),
        waves: a.waves.map(|w| w as usize).unwrap_or(DEFAULT_WAVES),
        levels: match &a.levels {
            Some(l) => l.0.clone(),
            None => parse_levels("-4:4:0.1")?,
        },
        method: a.method.unwrap_or(EpcMethod::Pixel),
        mixture: (!mixture.is_gaussian()).then_some(mixture),
        master_seed: a.seed.unwrap_or(0),
        normality_test: a.normality.unwrap_or(NormalityKind::AndersonDarling),
        scan_resolution: a.scan_resolution.unwrap_or(4),
        memory_budget_bytes: None,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn mc(a: McArgs) -> Result<()> {
    let cfg = mc_config(&a)?;
    let start = Instant::now();
    let report = run_mc(&cfg)?;
    for w in &report.warnings {
        eprintln!("berry: warning: {w}");
    }
    std::fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    let path = |over: &Option<PathBuf>, name: &str| over.clone().unwrap_or_else(|| a.out_dir.join(name));
    let results = path(&a.results, "results.csv");
    let summary = path(&a.summary, "summary.csv");
    let json = path(&a.report, "report.json");
    write_to(Some(&results), |w| write_results_csv(w, &report))?;
    write_to(Some(&summary), |w| write_summary_csv(w, &report))?;
    write_to(Some(&json), |w| write_report_json(w, &report))?;
    // timing stays out of the files so reruns are byte-identical
    eprintln!(
        "berry: {} of {} replicates in {:.2} s",
        report.completed_replicates,
        cfg.replicates,
        start.elapsed().as_secs_f64()
    );
    match report.failure {
        Some(f) => Err(CliError::Partial(f)),
        None => Ok(()),
    }
}

pub fn validate(a: ValidateArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Output<'a> {
        version: &'a str,
        command: &'a str,
        config: Config,
        report: &'a ValidationReport,
    }
    #[derive(Serialize)]
    struct Config {
        suite: Suite,
    }
    let report = run_suite(a.suite)?;
    let out = Output { version: env!("CARGO_PKG_VERSION"), command: "validate", config: Config { suite: a.suite }, report: &report };
    write_to(a.out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &out)?;
        writeln!(w)?;
        Ok(())
    })?;
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Validation(report.failing().join(", ")))
    }
}
