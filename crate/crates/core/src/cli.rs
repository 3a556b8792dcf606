//! Command-line interface.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cutoff::{self, CutoffChoice, CutoffScan, ScanConfig};
use crate::em::{self, EmConfig, NullFit};
use crate::error::{Error, Result};
use crate::histogram::CountHistogram;
use crate::lfdr::{DecisionReport, Procedure};
use crate::null_models::Family;
use crate::screening::{self, ScreeningThreshold};
use crate::sim::{self, SimDesign, DEFAULT_SEED};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "DISCRETE_LFDR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "discrete-lfdr", version, about = "Empirical-null local FDR for count data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the null, choose the cut-off and report the screening threshold.
    Fit(FitArgs),
    /// Fit and apply the decision procedures.
    Test(TestArgs),
    /// Run a Monte-Carlo design.
    Simulate(SimulateArgs),
    /// Print the cut-off scan table.
    Scan(FitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Zigp,
    Zip,
    Gp,
    Poisson,
    All,
}

impl FamilyArg {
    fn families(self) -> Vec<Family> {
        match self {
            FamilyArg::Zigp => vec![Family::Zigp],
            FamilyArg::Zip => vec![Family::Zip],
            FamilyArg::Gp => vec![Family::Gp],
            FamilyArg::Poisson => vec![Family::Poisson],
            FamilyArg::All => Family::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProcedureArg {
    OneStage,
    TwoStage,
    Storey,
    Bh,
    All,
}

impl ProcedureArg {
    fn procedures(self) -> Vec<Procedure> {
        match self {
            ProcedureArg::OneStage => vec![Procedure::OneStage],
            ProcedureArg::TwoStage => vec![Procedure::TwoStage],
            ProcedureArg::Storey => vec![Procedure::Storey],
            ProcedureArg::Bh => vec![Procedure::Bh],
            ProcedureArg::All => Procedure::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Tsv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct EmArgs {
    /// EM stopping tolerance on the log-likelihood.
    #[arg(long, default_value_t = 1e-8)]
    pub em_tol: f64,
    #[arg(long, default_value_t = 500)]
    pub em_max_iter: usize,
    /// Maximise the C2 criterion's log-likelihood by argmin, as printed.
    #[arg(long)]
    pub c2_literal_argmin: bool,
}

impl EmArgs {
    fn scan_config(&self) -> Result<ScanConfig> {
        if !(self.em_tol > 0.0) {
            return Err(Error::InvalidParams(format!("--em-tol must be > 0, got {}", self.em_tol)));
        }
        Ok(ScanConfig {
            em: EmConfig {
                tol: self.em_tol,
                max_iter: self.em_max_iter,
                ..EmConfig::default()
            },
            c2_literal_argmin: self.c2_literal_argmin,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Histogram (`count, n_positions`) or per-position (`position, count`) TSV.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = FamilyArg::Zigp)]
    pub family: FamilyArg,
    /// `c1`, `c2` or `fixed:<int>`.
    #[arg(long, default_value = "c1")]
    pub cutoff: String,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
    #[command(flatten)]
    pub em: EmArgs,
    /// Write output here instead of stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also write the cut-off scan table (TSV) to this path.
    #[arg(long)]
    pub scan_out: Option<PathBuf>,
    /// Accepted for uniformity; fitting is deterministic.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = ProcedureArg::All)]
    pub procedure: ProcedureArg,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Design file in `key = value` format.
    pub design: PathBuf,
    /// Override the design's replication count.
    #[arg(long)]
    pub reps: Option<u64>,
    /// Override the design's seed (default 42 when the design has none).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Override the design's fitted families.
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[arg(long)]
    pub cutoff: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
    #[command(flatten)]
    pub em: EmArgs,
    /// Score against count-threshold truth instead of generator labels.
    #[arg(long)]
    pub truth_by_cutoff: bool,
    /// Write each replication's histogram as `rep_<i>.tsv` into this directory.
    #[arg(long)]
    pub emit_histogram: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Configure the thread pool from `DISCRETE_LFDR_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| {
        Error::InvalidParams(format!("{THREADS_ENV} must be a positive integer, got {value:?}"))
    })?;
    if n == 0 {
        return Err(Error::InvalidParams(format!("{THREADS_ENV} must be >= 1")));
    }
    // A pool that was already built keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Test(args) => cmd_test(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Scan(args) => cmd_scan(&args),
    }
}

fn read_histogram(path: &Path) -> Result<CountHistogram> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    CountHistogram::read_tsv(BufReader::new(file))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writeln!(w)?;
    Ok(())
}

/// One family's fit as reported by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FitSummary {
    pub family: Family,
    pub eta: f64,
    pub lambda: f64,
    pub theta: f64,
    pub pi0: f64,
    #[serde(rename = "C")]
    pub c: u64,
    /// Absent when `C = K`.
    #[serde(rename = "D")]
    pub d: Option<u64>,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
    pub screening: Option<ScreeningThreshold>,
    pub scan: Option<CutoffScan>,
}

/// Fit `family` with the requested cut-off rule.
pub fn fit_family(
    family: Family,
    h: &CountHistogram,
    choice: CutoffChoice,
    cfg: &ScanConfig,
) -> Result<(NullFit, Option<CutoffScan>)> {
    match choice {
        CutoffChoice::Scan(method) => {
            let scan = cutoff::select(method, family, h, cfg)?;
            Ok((scan.chosen_fit().clone(), Some(scan)))
        }
        CutoffChoice::Fixed(c) => {
            if c > h.max_count() {
                return Err(Error::CutoffBeyondSupport {
                    cutoff: c,
                    max_count: h.max_count(),
                });
            }
            Ok((em::fit_null(family, h, c, &cfg.em)?, None))
        }
    }
}

pub fn summarise_fit(
    family: Family,
    h: &CountHistogram,
    fit: &NullFit,
    scan: Option<CutoffScan>,
) -> Result<FitSummary> {
    let screening = if fit.cutoff < h.max_count() {
        Some(screening::d_n(fit, h.total(), fit.cutoff, h.max_count())?)
    } else {
        None
    };
    Ok(FitSummary {
        family,
        eta: fit.params.eta,
        lambda: fit.params.lambda,
        theta: fit.params.theta,
        pi0: fit.pi0,
        c: fit.cutoff,
        d: screening.map(|s| s.d_n),
        converged: fit.converged,
        iterations: fit.iterations,
        loglik: fit.loglik(),
        screening,
        scan,
    })
}

fn fit_all(args: &FitArgs) -> Result<(CountHistogram, Vec<(NullFit, FitSummary)>)> {
    let h = read_histogram(&args.input)?;
    let choice: CutoffChoice = args.cutoff.parse()?;
    let cfg = args.em.scan_config()?;
    let mut out = Vec::new();
    for family in args.family.families() {
        let (fit, scan) = fit_family(family, &h, choice, &cfg)?;
        let summary = summarise_fit(family, &h, &fit, scan)?;
        out.push((fit, summary));
    }
    Ok((h, out))
}

fn write_scans(path: &Path, fits: &[(NullFit, FitSummary)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (_, s) in fits {
        if let Some(scan) = &s.scan {
            writeln!(w, "# family={}", s.family)?;
            scan.write_tsv(&mut w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn na(x: Option<u64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let (_, fits) = fit_all(args)?;
    if let Some(path) = &args.scan_out {
        write_scans(path, &fits)?;
    }
    let mut w = open_output(args.output.as_deref())?;
    match args.format {
        Format::Json => {
            let summaries: Vec<&FitSummary> = fits.iter().map(|(_, s)| s).collect();
            if summaries.len() == 1 {
                write_json(&mut *w, summaries[0])?;
            } else {
                write_json(&mut *w, &summaries)?;
            }
        }
        Format::Tsv => {
            writeln!(w, "family\teta\tlambda\ttheta\tpi\tC\tD\tconverged\tloglik")?;
            for (_, s) in &fits {
                writeln!(
                    w,
                    "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}",
                    s.family,
                    s.eta,
                    s.lambda,
                    s.theta,
                    s.pi0,
                    s.c,
                    na(s.d),
                    s.converged,
                    s.loglik
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_scan(args: &FitArgs) -> Result<()> {
    let (_, fits) = fit_all(args)?;
    let mut w = open_output(args.output.as_deref())?;
    match args.format {
        Format::Json => {
            let scans: Vec<&CutoffScan> = fits.iter().filter_map(|(_, s)| s.scan.as_ref()).collect();
            write_json(&mut *w, &scans)?;
        }
        Format::Tsv => {
            for (_, s) in &fits {
                if let Some(scan) = &s.scan {
                    writeln!(w, "# family={} chosen={}", s.family, scan.chosen)?;
                    scan.write_tsv(&mut w)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FamilyReport {
    pub fit: FitSummary,
    pub report: DecisionReport,
}

pub fn cmd_test(args: &TestArgs) -> Result<()> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::InvalidParams(format!("--alpha must lie in (0,1), got {}", args.alpha)));
    }
    let (h, fits) = fit_all(&args.fit)?;
    let procedures = args.procedure.procedures();
    let mut reports = Vec::new();
    for (fit, summary) in fits {
        let report = DecisionReport::build(&fit, &h, args.alpha, &procedures)?;
        reports.push(FamilyReport {
            fit: summary,
            report,
        });
    }
    let mut w = open_output(args.fit.output.as_deref())?;
    match args.fit.format {
        Format::Json => {
            if reports.len() == 1 {
                write_json(&mut *w, &reports[0])?;
            } else {
                write_json(&mut *w, &reports)?;
            }
        }
        Format::Tsv => {
            for r in &reports {
                writeln!(
                    w,
                    "# family={} C={} D={} pi0={:.4}",
                    r.fit.family,
                    r.fit.c,
                    na(r.fit.d),
                    r.fit.pi0
                )?;
                r.report.write_tsv(&mut w)?;
            }
            writeln!(w, "# positions rejected")?;
            write!(w, "family")?;
            for p in &procedures {
                write!(w, "\t{p}")?;
            }
            writeln!(w)?;
            for r in &reports {
                write!(w, "{}", r.fit.family)?;
                for res in &r.report.results {
                    write!(w, "\t{}", res.positions_rejected)?;
                }
                writeln!(w)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let file = File::open(&args.design).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", args.design.display())))
    })?;
    let mut design = SimDesign::parse(BufReader::new(file))?;
    if let Some(r) = args.reps {
        design.reps = r;
    }
    if let Some(s) = args.seed {
        design.seed = s;
    }
    if let Some(a) = args.alpha {
        design.alpha = a;
    }
    if let Some(f) = args.family {
        design.fit_families = f.families();
    }
    if let Some(c) = &args.cutoff {
        design.cutoff = c.parse()?;
    }
    let scan = args.em.scan_config()?;
    design.scan.em.tol = scan.em.tol;
    design.scan.em.max_iter = scan.em.max_iter;
    design.scan.c2_literal_argmin |= scan.c2_literal_argmin;
    design.truth_by_cutoff |= args.truth_by_cutoff;
    design.validate()?;

    if let Some(dir) = &args.emit_histogram {
        std::fs::create_dir_all(dir)?;
        for rep in 0..design.reps {
            let data = sim::generate(&design, rep)?;
            let mut w = BufWriter::new(File::create(dir.join(format!("rep_{rep}.tsv")))?);
            data.histogram.write_tsv(&mut w)?;
            w.flush()?;
        }
    }

    let result = sim::run(&design)?;
    let mut w = open_output(args.output.as_deref())?;
    match args.format {
        Format::Json => write_json(&mut *w, &result)?,
        Format::Tsv => result.write_tsv(&mut w)?,
    }
    w.flush()?;
    Ok(())
}
