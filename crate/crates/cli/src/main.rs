use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use xva_core::funding_ledger::{ftp_accounting, ftp_management, FtpForm};
use xva_core::termstructures::{curve_combine, CombineOp, CurveDocument, CurveKind};
use xva_core::verification::{check_invariance, verification_suite, SuiteSettings};
use xva_core::xva::{run_engine, transition_report, PerspectiveConfig, RunSettings, TransitionReport, XvaReport};
use xva_core::TermCurve;

mod inputs;

use inputs::{load_inputs, load_ledger, read_json, require, InputPaths};

const DEFAULT_PATHS: usize = 10_000;
const DEFAULT_SEED: u64 = 42;
const DEFAULT_GRID_STEP: f64 = 1.0 / 52.0;

#[derive(Parser)]
#[command(name = "xva", version, about = "ColVA / FVA / CVA / DVA engine with accounting and management perspectives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value a portfolio and write an adjustment report.
    Run(RunArgs),
    /// Run the residual checks; exits nonzero if any fails.
    Verify(VerifyArgs),
    /// Compare an accounting and a management report.
    Transition(TransitionArgs),
    /// Estimate an FTP curve from an issuance ledger.
    Ftp(FtpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Perspective {
    Accounting,
    Management,
    /// The `custom` object of the config file.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Default)]
struct SpecArgs {
    #[arg(long)]
    portfolio: Option<PathBuf>,
    /// Curve file or directory of curve files.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    ledger: Option<PathBuf>,
    #[arg(long)]
    hierarchy: Option<PathBuf>,
    #[arg(long, value_enum)]
    perspective: Option<Perspective>,
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Time step in years.
    #[arg(long)]
    grid_step: Option<f64>,
    /// Worker cap; results do not depend on it.
    #[arg(long, env = "XVA_THREADS")]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Optional user inputs: adds a marking-curve invariance check on them.
    #[command(flatten)]
    spec: SpecArgs,
    /// Shift of the alternative marking curve for the user-input check.
    #[arg(long, default_value_t = 0.02)]
    shift: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TransitionArgs {
    /// Report produced under the accounting perspective.
    accounting: PathBuf,
    /// Report produced under the management perspective.
    management: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FtpMode {
    Accounting,
    AccountingExact,
    Management,
}

#[derive(Args, Debug)]
struct FtpArgs {
    #[arg(long)]
    ledger: PathBuf,
    #[arg(long, value_enum, default_value = "accounting")]
    mode: FtpMode,
    /// Valuation time in years.
    #[arg(long, default_value_t = 0.0)]
    time: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// On-disk run configuration. Relative paths resolve against its directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    portfolio: Option<PathBuf>,
    curves: Option<PathBuf>,
    ledger: Option<PathBuf>,
    hierarchy: Option<PathBuf>,
    perspective: Option<Perspective>,
    custom: Option<PerspectiveConfig>,
    paths: Option<usize>,
    seed: Option<u64>,
    grid_step: Option<f64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    format: Option<Format>,
}

impl ConfigFile {
    fn load(path: &Path) -> Result<Self> {
        let mut cfg: ConfigFile = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.portfolio, &mut cfg.curves, &mut cfg.ledger, &mut cfg.hierarchy, &mut cfg.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// A fully resolved run: flags over config file over defaults.
struct RunSpec {
    paths: InputPaths,
    perspective: PerspectiveConfig,
    settings: RunSettings,
    out: Option<PathBuf>,
    format: Format,
}

fn resolve(spec: &SpecArgs, out: Option<PathBuf>, format: Option<Format>) -> Result<RunSpec> {
    let cfg = match &spec.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let pick = |flag: &Option<PathBuf>, file: &Option<PathBuf>| flag.clone().or_else(|| file.clone());
    let paths = InputPaths {
        portfolio: require(&pick(&spec.portfolio, &cfg.portfolio), "--portfolio")?.clone(),
        curves: require(&pick(&spec.curves, &cfg.curves), "--curves")?.clone(),
        ledger: pick(&spec.ledger, &cfg.ledger),
        hierarchy: require(&pick(&spec.hierarchy, &cfg.hierarchy), "--hierarchy")?.clone(),
    };
    for p in [Some(&paths.portfolio), Some(&paths.curves), paths.ledger.as_ref(), Some(&paths.hierarchy)]
        .into_iter()
        .flatten()
    {
        if !p.exists() {
            bail!("input file {} does not exist", p.display());
        }
    }
    let perspective = match spec.perspective.or(cfg.perspective).unwrap_or(Perspective::Accounting) {
        Perspective::Accounting => PerspectiveConfig::accounting(),
        Perspective::Management => PerspectiveConfig::management(),
        Perspective::Custom => cfg
            .custom
            .clone()
            .context("--perspective custom needs a `custom` object in the --config file")?,
    };
    perspective.validate().context("invalid perspective configuration")?;
    let n_paths = spec.paths.or(cfg.paths).unwrap_or(DEFAULT_PATHS);
    let grid_step = spec.grid_step.or(cfg.grid_step).unwrap_or(DEFAULT_GRID_STEP);
    if n_paths == 0 {
        bail!("--paths must be at least 1");
    }
    if grid_step.is_nan() || grid_step <= 0.0 {
        bail!("--grid-step must be positive");
    }
    let mut settings = RunSettings::new(n_paths, spec.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED), grid_step);
    settings.threads = spec.threads.or(cfg.threads);
    Ok(RunSpec {
        paths,
        perspective,
        settings,
        out: out.or(cfg.out),
        format: format.or(cfg.format).unwrap_or(Format::Json),
    })
}

/// Writes `text` to `out`, or to stdout when absent.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Summary goes to stdout unless stdout carries the report itself.
fn summary_sink(out: Option<&Path>) -> Box<dyn Write> {
    if out.is_some() {
        Box::new(std::io::stdout())
    } else {
        Box::new(std::io::stderr())
    }
}

fn print_summary(report: &XvaReport, sink: &mut dyn Write) -> Result<()> {
    writeln!(
        sink,
        "{:<20} {:>14} {:>12} {:>12} {:>12} {:>12} {:>14}",
        "level", "v0", "colva", "fva", "cva", "dva", "v_hat"
    )?;
    let rows = report
        .netting_sets
        .iter()
        .map(|n| (n.id.as_str(), &n.metrics))
        .chain(std::iter::once(("legal_entity", &report.legal_entity.metrics)));
    for (id, m) in rows {
        writeln!(
            sink,
            "{:<20} {:>14.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>14.4}",
            id, m.v0, m.colva, m.fva, m.cva, m.dva, m.v_hat
        )?;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let spec = resolve(&args.spec, args.out, args.format)?;
    let (inputs, digest) = load_inputs(&spec.paths)?;
    let mut report = run_engine(&inputs, &spec.perspective, &spec.settings).context("valuation failed")?;
    report.metadata.portfolio_digest = Some(digest);
    let text = match spec.format {
        Format::Json => report.to_json()?,
        Format::Csv => report.to_csv(),
    };
    emit(spec.out.as_deref(), &text)?;
    print_summary(&report, &mut *summary_sink(spec.out.as_deref()))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let s = &args.spec;
    let mut suite = SuiteSettings {
        threads: s.threads,
        ..SuiteSettings::default()
    };
    if let Some(n) = s.paths {
        suite.n_paths = n;
    }
    if let Some(seed) = s.seed {
        suite.seed = seed;
    }
    let mut reports = verification_suite(&suite)?;
    if s.portfolio.is_some() || s.config.is_some() {
        let spec = resolve(s, None, None)?;
        let (inputs, _) = load_inputs(&spec.paths)?;
        let plan = xva_core::xva::resolve_curves(&inputs, &spec.perspective)?;
        let shift = TermCurve::flat("shift", args.shift)?;
        let shifted = curve_combine(&plan.marking, &shift, CombineOp::Add).with_id(format!("{}_shifted", plan.marking.id()));
        reports.push(check_invariance(
            "invariance_user_inputs",
            &inputs,
            &plan.marking,
            &shifted,
            &spec.perspective,
            &spec.settings,
        )?);
    }
    let mut text = serde_json::to_string_pretty(&reports)?;
    text.push('\n');
    emit(args.out.as_deref(), &text)?;
    let mut sink = summary_sink(args.out.as_deref());
    let mut failed = 0;
    for r in &reports {
        writeln!(
            sink,
            "{} {:<45} residual {:>12.3e}  tolerance {:>10.3e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.id,
            r.residual,
            r.tolerance
        )?;
        failed += usize::from(!r.pass);
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_transition(args: TransitionArgs) -> Result<ExitCode> {
    let read = |p: &Path| -> Result<XvaReport> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        XvaReport::from_json(&text).with_context(|| format!("parsing report {}", p.display()))
    };
    let (acc, mgmt) = (read(&args.accounting)?, read(&args.management)?);
    let t: TransitionReport = transition_report(&acc, &mgmt)?;
    let mut text = serde_json::to_string_pretty(&t)?;
    text.push('\n');
    emit(args.out.as_deref(), &text)?;
    writeln!(
        summary_sink(args.out.as_deref()),
        "delta_v_hat {:.6} = dva_removal {:.6} + funding_delta {:.6} + credit_delta {:.6}",
        t.delta_v_hat,
        t.dva_removal,
        t.funding_delta,
        t.credit_delta
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_ftp(args: FtpArgs) -> Result<ExitCode> {
    let ledger = load_ledger(&args.ledger)?;
    let curve = match args.mode {
        FtpMode::Accounting => ftp_accounting(&ledger, args.time, FtpForm::Approximate)?,
        FtpMode::AccountingExact => ftp_accounting(&ledger, args.time, FtpForm::Exact)?,
        FtpMode::Management => ftp_management(&ledger, args.time)?,
    };
    let doc = CurveDocument::from_curve(&curve, CurveKind::Funding);
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    emit(args.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Transition(a) => cmd_transition(a),
        Command::Ftp(a) => cmd_ftp(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
