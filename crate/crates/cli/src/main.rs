use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geosr_core::backend::BackendError;
use geosr_core::config::{BackendMode, ConfigError};
use geosr_core::covariates::{save_covariates, CovariateRegistry};
use geosr_core::dataset::{Dataset, DatasetError};
use geosr_core::evaluation::{
    ablation_config, audit_run, evaluate_run, export_rank_map, reports_table, reports_to_csv, EvalError, MapFormat,
};
use geosr_core::field::FieldSpec;
use geosr_core::orchestrator::{self, last_complete_round, load_snapshot, RunError, RunStatus, Runner};
use geosr_core::synth::{synth_data, SynthError};
use geosr_core::{RunConfig, Variant};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Fingerprint(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Fingerprint(_) => 5,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        let msg = e.to_string();
        match e {
            RunError::Config(_) | RunError::Template(_) => CliError::Config(msg),
            RunError::Backend(b) => b.into(),
            RunError::Context(_) => CliError::Backend(msg),
            RunError::Index(_) => CliError::Data(msg),
            RunError::FingerprintMismatch { .. } => CliError::Fingerprint(msg),
            _ => CliError::Other(msg),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Run(r) => r.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "geosr", version, about = "Iterative multi-agent refinement of LLM geospatial predictions")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and covariate file.
    SynthData(SynthArgs),
    /// Start a new run.
    Run(RunArgs),
    /// Continue an interrupted run from its last complete round.
    Resume(ResumeArgs),
    /// Score every round of a run against the dataset.
    Evaluate(EvaluateArgs),
    /// Run the full pipeline and one or all ablation variants side by side.
    Ablate(AblateArgs),
    /// Write one round of a run as a rank map.
    ExportMap(ExportArgs),
    /// Print the covariate registry.
    DumpRegistry(RegistryArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// constant:<v>, lat-linear, equator, wave or density.
    #[arg(long, default_value = "wave")]
    field: FieldSpec,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    covariates_out: Option<PathBuf>,
}

/// Dataset location; falls back to the paths recorded in the config.
#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    covariates: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_near: Option<usize>,
    #[arg(long)]
    p_far: Option<usize>,
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    backend: Option<BackendMode>,
    #[arg(long)]
    topic: Option<String>,
    #[arg(long)]
    early_stop: bool,
    #[arg(long)]
    cache_selections: bool,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    context_cache: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    variant: Option<Variant>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ResumeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Parent directory; each variant runs in its own subdirectory.
    #[arg(long)]
    out_dir: PathBuf,
    /// no_near10, no_ptsel, no_extvars or all.
    #[arg(long, default_value = "all")]
    variant: String,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    run_dir: PathBuf,
    /// Defaults to the last complete round.
    #[arg(long)]
    round: Option<usize>,
    #[arg(long, default_value = "csv")]
    format: MapFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegistryFormat {
    Csv,
    Markdown,
}

#[derive(Args)]
struct RegistryArgs {
    #[arg(long, value_enum, default_value_t = RegistryFormat::Csv)]
    format: RegistryFormat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::SynthData(a) => cmd_synth_data(a),
        Command::Run(a) => cmd_run(a),
        Command::Resume(a) => cmd_resume(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::ExportMap(a) => cmd_export_map(a),
        Command::DumpRegistry(a) => cmd_dump_registry(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Other(format!("creating {}: {e}", path.display())))
}

fn cmd_synth_data(a: SynthArgs) -> Result<(), CliError> {
    let d = synth_data(a.n, a.seed, &a.field)?;
    let mut out = create(&a.out)?;
    d.write_csv(&mut out)?;
    out.flush()?;
    let cov_path = a.covariates_out.unwrap_or_else(|| a.out.with_extension("covariates.csv"));
    let mut cov = create(&cov_path)?;
    save_covariates(&mut cov, &d.covariate_rows()).map_err(|e| CliError::Data(e.to_string()))?;
    cov.flush()?;
    println!("wrote {} points to {} and covariates to {}", d.len(), a.out.display(), cov_path.display());
    Ok(())
}

/// Defaults, then the config file, then flags, then environment overrides.
fn resolve_config(o: &Overrides, data: &DataArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = o.$field.clone() { cfg.$field = v; })* };
    }
    set!(rounds, seed, k_near, p_far, d_max, concurrency);
    if let Some(b) = o.backend {
        cfg.backend.mode = b;
    }
    if let Some(t) = &o.topic {
        cfg.task.topic = t.clone();
    }
    cfg.early_stop |= o.early_stop;
    cfg.cache_selections |= o.cache_selections;
    if let Some(t) = &o.templates {
        cfg.templates_dir = Some(absolute(t));
    }
    if let Some(c) = &o.context_cache {
        cfg.context.cache_dir = Some(absolute(c));
    }
    if let Some(d) = &data.data {
        cfg.data.dataset = Some(absolute(d));
    }
    if let Some(c) = &data.covariates {
        cfg.data.covariates = Some(absolute(c));
    }
    cfg.context = cfg.context.with_env_overrides();
    cfg.validate()?;
    Ok(cfg)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Flags win; otherwise the paths recorded in `cfg`.
fn load_dataset(data: &DataArgs, cfg: Option<&RunConfig>) -> Result<Dataset, CliError> {
    let path = data
        .data
        .clone()
        .or_else(|| cfg.and_then(|c| c.data.dataset.clone()))
        .ok_or_else(|| CliError::Config("no dataset given (--data) and none recorded in the config".into()))?;
    let covariates = data.covariates.clone().or_else(|| cfg.and_then(|c| c.data.covariates.clone()));
    Dataset::load(&path, covariates.as_deref()).map_err(|e| CliError::Data(format!("loading {}: {e}", path.display())))
}

fn report_outcome(run_dir: &Path, status: RunStatus, rounds: &[usize]) {
    match status {
        RunStatus::Completed => println!("run in {} complete; computed rounds {rounds:?}", run_dir.display()),
        RunStatus::Halted { after } => println!("run in {} halted after round {after}", run_dir.display()),
    }
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&a.overrides, &a.data)?;
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    let d = load_dataset(&a.data, Some(&cfg))?;
    let out = Runner::new(&d, cfg).run(&a.run_dir)?;
    report_outcome(&a.run_dir, out.status, &out.rounds_computed);
    Ok(())
}

fn cmd_resume(a: ResumeArgs) -> Result<(), CliError> {
    let cfg = load_snapshot(&a.run_dir)?;
    let d = load_dataset(&a.data, Some(&cfg))?;
    let out = orchestrator::resume(&a.run_dir, &d)?;
    report_outcome(&a.run_dir, out.status, &out.rounds_computed);
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let cfg = load_snapshot(&a.run_dir)?;
    let d = load_dataset(&a.data, Some(&cfg))?;
    let reports = evaluate_run(&a.run_dir, &d)?;
    let text = match a.format {
        ReportFormat::Table => reports_table(&reports),
        ReportFormat::Csv => reports_to_csv(&reports),
    };
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), CliError> {
    let variants: Vec<Variant> = if a.variant.eq_ignore_ascii_case("all") {
        Variant::ABLATIONS.to_vec()
    } else {
        let v: Variant = a.variant.parse().map_err(CliError::Config)?;
        if v == Variant::Full {
            return Err(CliError::Config("full is the baseline, not an ablation".into()));
        }
        vec![v]
    };
    let base = resolve_config(&a.overrides, &a.data)?;
    let d = load_dataset(&a.data, Some(&base))?;
    let mut summary = String::from("variant,spearman,bias,mad,answer_rate\n");
    for v in std::iter::once(Variant::Full).chain(variants) {
        let dir = a.out_dir.join(v.as_str());
        Runner::new(&d, ablation_config(&base, v)).run(&dir)?;
        let audit = audit_run(&dir)?;
        audit.check(v).map_err(|e| CliError::Other(format!("{v}: channel audit failed: {e}")))?;
        let last = evaluate_run(&dir, &d)?.pop().expect("at least round 0");
        summary.push_str(&format!("{v},{},{},{},{}\n", last.spearman, last.bias, last.mad, last.answer_rate));
        log::info!("{v}: {audit:?}");
    }
    fs::write(a.out_dir.join("ablation.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_export_map(a: ExportArgs) -> Result<(), CliError> {
    let cfg = load_snapshot(&a.run_dir)?;
    let d = load_dataset(&a.data, Some(&cfg))?;
    orchestrator::check_fingerprint(&a.run_dir, &d)?;
    let round = match a.round {
        Some(r) => r,
        None => last_complete_round(&a.run_dir)
            .ok_or_else(|| CliError::Other(format!("no complete round in {}", a.run_dir.display())))?,
    };
    let mut w = create(&a.out)?;
    export_rank_map(&a.run_dir, round, &d, a.format, &mut w)?;
    w.flush()?;
    println!("wrote round {round} rank map to {}", a.out.display());
    Ok(())
}

fn cmd_dump_registry(a: RegistryArgs) -> Result<(), CliError> {
    let text = match a.format {
        RegistryFormat::Csv => CovariateRegistry.to_csv(),
        RegistryFormat::Markdown => CovariateRegistry.to_markdown(),
    };
    print!("{text}");
    Ok(())
}
