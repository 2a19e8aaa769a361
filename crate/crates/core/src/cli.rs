//! The `evstop` command line.
//!
//! Exit codes: 0 success, 2 data error, 3 configuration error, 4 internal
//! invariant violation.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::diagnostics::integrated_autocorrelation_time;
use crate::ensemble::{compression_report, ChainDecision, EnsembleReport};
use crate::error::{Error, Result};
use crate::ingest::{
    build_tables, parse_records, write_records_jsonl, LogLikTable, ParseOptions, ReferenceMode,
    DEFAULT_CLAMP_FLOOR,
};
use crate::pipeline::{decide_all, RunSettings, Thinning, PILOT_LEN};
use crate::simlab::{
    certify_validity, gaussian_model_run, simulate_stopping, stream_tables, ChainInit,
    GaussianModelOptions, ScenarioKind, ScenarioSpec,
};

pub const OUTPUT_DIR_ENV: &str = "EVSTOP_OUTPUT_DIR";
pub const DECISIONS_FILE: &str = "decisions.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_RECORDS_FILE: &str = "report.jsonl";

const IN_SAMPLE_NOTE: &str =
    "LPPD evaluated on the test validation records (in-sample for the test); pass --report-records for hold-out values";
const THINNING_OFF_NOTE: &str =
    "thinning disabled: autocorrelated samples can inflate the Type-I error, so decisions are approximate";

#[derive(Debug, Parser)]
#[command(name = "evstop", version, about = "E-value based stopping for sampled model ensembles")]
pub struct Cli {
    /// Worker threads for per-chain work (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the stopping rule on record files and write decisions, trajectories and a report.
    Run(RunArgs),
    /// Re-evaluate a report from existing decisions.
    Report(ReportArgs),
    /// Monte Carlo certification and synthetic record generation.
    Simulate(SimulateArgs),
    /// Autocorrelation time and thinning recommendation per chain.
    Thin(ThinArgs),
}

#[derive(Debug, Args)]
pub struct ClampArgs {
    /// Replace -inf log-likelihoods by a floor instead of failing.
    #[arg(long)]
    pub clamp: bool,

    /// Floor used with --clamp (implies --clamp).
    #[arg(long, allow_negative_numbers = true)]
    pub clamp_floor: Option<f64>,
}

impl ClampArgs {
    fn options(&self) -> ParseOptions {
        match (self.clamp, self.clamp_floor) {
            (_, Some(floor)) => ParseOptions::clamping(floor),
            (true, None) => ParseOptions::clamping(DEFAULT_CLAMP_FLOOR),
            (false, None) => ParseOptions::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Record files (JSON lines or CSV), or a directory holding records.jsonl.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,

    /// Hold-out records used for the LPPD columns.
    #[arg(long)]
    pub report_records: Option<PathBuf>,

    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,

    /// Reference baseline: first-sample or de-warmstart.
    #[arg(long, default_value = "first-sample")]
    pub mode: ReferenceMode,

    /// Maximum posterior samples per chain (default: longest chain).
    #[arg(long)]
    pub budget: Option<usize>,

    /// auto, off, or a fixed interval.
    #[arg(long, default_value = "auto")]
    pub thinning: Thinning,

    #[arg(long, env = OUTPUT_DIR_ENV, default_value = "evstop-out")]
    pub output_dir: PathBuf,

    #[command(flatten)]
    pub clamp: ClampArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// decisions.json written by `run`.
    #[arg(long)]
    pub decisions: PathBuf,

    /// The test records the decisions were made on.
    #[arg(long)]
    pub records: PathBuf,

    /// Hold-out records used for the LPPD columns.
    #[arg(long)]
    pub report_records: Option<PathBuf>,

    /// Print the report as JSON instead of the text table.
    #[arg(long)]
    pub json: bool,

    #[command(flatten)]
    pub clamp: ClampArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "exact-null")]
    pub kind: ScenarioKind,

    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu: f64,

    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    /// Validation points per record.
    #[arg(long, default_value_t = 1)]
    pub m: usize,

    /// Chains written by --dump.
    #[arg(long, default_value_t = 16)]
    pub chains: usize,

    #[arg(long, default_value_t = 200)]
    pub budget: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,

    #[arg(long, default_value_t = 2000)]
    pub reps: usize,

    /// Write the scenario as ingest records into this directory.
    #[arg(long)]
    pub dump: Option<PathBuf>,

    /// Also write the result document to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,

    /// Gaussian model: start chains this far from the posterior mode.
    #[arg(long, allow_negative_numbers = true)]
    pub init_offset: Option<f64>,

    /// Gaussian model: Metropolis steps dropped before recording.
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,

    /// Gaussian model: Metropolis steps between recorded samples.
    #[arg(long, default_value_t = 1)]
    pub steps_per_sample: usize,

    /// Gaussian model: random-walk proposal standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub proposal_sd: f64,
}

#[derive(Debug, Args)]
pub struct ThinArgs {
    pub records: PathBuf,

    /// Samples per chain used for the estimate (default: all).
    #[arg(long)]
    pub pilot: Option<usize>,

    #[arg(long)]
    pub json: bool,

    #[command(flatten)]
    pub clamp: ClampArgs,
}

/// Everything `report` needs to rebuild the ensemble report of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionsDocument {
    pub alpha: f64,
    pub log_threshold: f64,
    pub mode: ReferenceMode,
    pub budget: usize,
    pub thinning: Thinning,
    pub chains: Vec<ChainDecision>,
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    // buffered so artifacts are written even if stdout is closed early
    let mut buffer = Vec::new();
    let result = execute(&cli, &mut buffer);
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(&buffer).and_then(|()| stdout.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: {e}");
            return Error::Io(e).class().exit_code();
        }
    }
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.class().exit_code()
        }
    }
}

pub fn execute<W: std::io::Write>(cli: &Cli, out: &mut W) -> Result<()> {
    match &cli.command {
        Command::Run(args) => cmd_run(args, cli.jobs, out),
        Command::Report(args) => cmd_report(args, out),
        Command::Simulate(args) => cmd_simulate(args, out),
        Command::Thin(args) => cmd_thin(args, out),
    }
}

fn read_tables(path: &Path, options: &ParseOptions) -> Result<Vec<LogLikTable>> {
    let file = fs::File::open(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let records = parse_records(std::io::BufReader::new(file), options)?;
    build_tables(&records)
}

fn resolve_input(path: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
    if !path.is_dir() {
        return Ok((path.to_path_buf(), None));
    }
    let records = path.join(RECORDS_FILE);
    if !records.is_file() {
        return Err(Error::Config(format!(
            "directory {} has no {RECORDS_FILE}",
            path.display()
        )));
    }
    let report = path.join(REPORT_RECORDS_FILE);
    Ok((records, report.is_file().then_some(report)))
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(dir.join(name)).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Config(format!("cannot create output directory {}: {e}", dir.display()))
    })
}

fn check_same_chains(decisions: &[ChainDecision], tables: &[LogLikTable], what: &str) -> Result<()> {
    let mut a: Vec<&str> = decisions.iter().map(|d| d.chain_id.as_str()).collect();
    let mut b: Vec<&str> = tables.iter().map(|t| t.chain_id.as_str()).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(Error::ChainMismatch(format!(
            "decisions cover chains {a:?} but {what} cover {b:?}"
        )));
    }
    Ok(())
}

fn build_report(
    doc: &DecisionsDocument,
    test_tables: &[LogLikTable],
    report_tables: Option<&[LogLikTable]>,
) -> Result<EnsembleReport> {
    check_same_chains(&doc.chains, test_tables, "the test records")?;
    let eval_tables = match report_tables {
        Some(t) => {
            check_same_chains(&doc.chains, t, "the report records")?;
            t
        }
        None => test_tables,
    };
    let mut report = compression_report(&doc.chains, eval_tables, doc.alpha, doc.budget, doc.mode)?;
    if report_tables.is_none() {
        report.notes.push(IN_SAMPLE_NOTE.into());
    }
    if doc.thinning == Thinning::Off {
        report.notes.push(THINNING_OFF_NOTE.into());
    }
    Ok(report)
}

pub fn trajectories_csv(doc: &DecisionsDocument) -> String {
    let mut out = String::from("chain_id,tested_index,log_e,threshold_log\n");
    for d in &doc.chains {
        for &(index, log_e) in &d.trajectory {
            let _ = writeln!(out, "{},{},{:?},{:?}", d.chain_id, index, log_e, doc.log_threshold);
        }
    }
    out
}

fn cmd_run<W: std::io::Write>(args: &RunArgs, jobs: usize, out: &mut W) -> Result<()> {
    let options = args.clamp.options();
    let mut tables = Vec::new();
    let mut implied_report = None;
    for input in &args.inputs {
        let (records, report) = resolve_input(input)?;
        tables.extend(read_tables(&records, &options)?);
        if implied_report.is_none() {
            implied_report = report;
        }
    }
    if tables.is_empty() {
        return Err(Error::Degenerate("no records in the input".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = tables.iter().find(|t| !seen.insert(t.chain_id.as_str())) {
        return Err(Error::ChainMismatch(format!(
            "chain {:?} appears in more than one input",
            dup.chain_id
        )));
    }
    let report_tables = match args.report_records.as_deref().or(implied_report.as_deref()) {
        Some(path) => Some(read_tables(path, &options)?),
        None => None,
    };

    let budget = match args.budget {
        Some(b) => b,
        None => tables.iter().map(LogLikTable::num_samples).max().unwrap_or(0).max(1),
    };
    let settings = RunSettings {
        alpha: args.alpha,
        mode: args.mode,
        budget,
        thinning: args.thinning,
    };
    let config = crate::eprocess::StoppingConfig::new(args.alpha, budget, 1)?;
    writeln!(
        out,
        "alpha = {}  threshold: log_e >= {:.5}  reference: {}  budget: {}",
        args.alpha,
        config.log_threshold(),
        args.mode,
        budget
    )?;
    if args.thinning == Thinning::Off {
        writeln!(out, "warning: {THINNING_OFF_NOTE}")?;
    }

    let decisions = decide_all(&tables, &settings, jobs)?;
    let doc = DecisionsDocument {
        alpha: args.alpha,
        log_threshold: config.log_threshold(),
        mode: args.mode,
        budget,
        thinning: args.thinning,
        chains: decisions,
    };
    let report = build_report(&doc, &tables, report_tables.as_deref())?;

    ensure_dir(&args.output_dir)?;
    write_atomic(&args.output_dir, DECISIONS_FILE, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    write_atomic(&args.output_dir, TRAJECTORIES_FILE, trajectories_csv(&doc).as_bytes())?;
    write_atomic(&args.output_dir, REPORT_JSON_FILE, serde_json::to_string_pretty(&report)?.as_bytes())?;
    let text = report.render_text();
    write_atomic(&args.output_dir, REPORT_TEXT_FILE, text.as_bytes())?;
    out.write_all(text.as_bytes())?;
    writeln!(out, "outputs written to {}", args.output_dir.display())?;
    Ok(())
}

fn cmd_report<W: std::io::Write>(args: &ReportArgs, out: &mut W) -> Result<()> {
    let raw = fs::read_to_string(&args.decisions).map_err(|source| Error::Read {
        path: args.decisions.clone(),
        source,
    })?;
    let doc: DecisionsDocument = serde_json::from_str(&raw)?;
    let options = args.clamp.options();
    let tables = read_tables(&args.records, &options)?;
    let report_tables = match &args.report_records {
        Some(p) => Some(read_tables(p, &options)?),
        None => None,
    };
    let report = build_report(&doc, &tables, report_tables.as_deref())?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        out.write_all(report.render_text().as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GaussianSummary {
    kind: ScenarioKind,
    seed: u64,
    chains: usize,
    budget: usize,
    m: usize,
    posterior_mean: f64,
    posterior_sd: f64,
    acceptance_rates: Vec<f64>,
}

fn cmd_simulate<W: std::io::Write>(args: &SimulateArgs, out: &mut W) -> Result<()> {
    let spec = ScenarioSpec::new(
        args.kind, args.mu, args.sigma, args.m, args.chains, args.budget, args.seed,
    )?;
    let document = match spec.kind {
        ScenarioKind::GaussianModel => {
            let options = GaussianModelOptions {
                proposal_sd: args.proposal_sd,
                init: match args.init_offset {
                    Some(d) => ChainInit::Offset(d),
                    None => ChainInit::AtMap,
                },
                burn_in: args.burn_in,
                steps_per_sample: args.steps_per_sample,
                ..GaussianModelOptions::default()
            };
            let run = gaussian_model_run(&spec, &options)?;
            if let Some(dir) = &args.dump {
                ensure_dir(dir)?;
                let mut records = Vec::new();
                write_records_jsonl(&run.tables, &mut records)?;
                write_atomic(dir, RECORDS_FILE, &records)?;
                let mut report = Vec::new();
                write_records_jsonl(&run.report_tables, &mut report)?;
                write_atomic(dir, REPORT_RECORDS_FILE, &report)?;
            }
            serde_json::to_string_pretty(&GaussianSummary {
                kind: spec.kind,
                seed: spec.seed,
                chains: spec.chains,
                budget: spec.budget,
                m: spec.m,
                posterior_mean: run.posterior.mean,
                posterior_sd: run.posterior.sd,
                acceptance_rates: run.acceptance_rates,
            })?
        }
        kind => {
            if let Some(dir) = &args.dump {
                ensure_dir(dir)?;
                let mut records = Vec::new();
                write_records_jsonl(&stream_tables(&spec)?, &mut records)?;
                write_atomic(dir, RECORDS_FILE, &records)?;
            }
            let result = if kind == ScenarioKind::ExactNull {
                certify_validity(&spec, args.alpha, args.reps)?
            } else {
                simulate_stopping(&spec, args.alpha, args.reps)?
            };
            result.to_json()?
        }
    };
    if let Some(path) = &args.output {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("invalid output path {}", path.display())))?;
        ensure_dir(dir)?;
        write_atomic(dir, name, format!("{document}\n").as_bytes())?;
    }
    writeln!(out, "{document}")?;
    Ok(())
}

#[derive(Serialize)]
struct ThinRow<'a> {
    chain: &'a str,
    iac_time: f64,
    recommended_interval: usize,
    window_used: usize,
}

fn cmd_thin<W: std::io::Write>(args: &ThinArgs, out: &mut W) -> Result<()> {
    let tables = read_tables(&args.records, &args.clamp.options())?;
    let pilot = args.pilot.unwrap_or(usize::MAX);
    let mut rows = Vec::with_capacity(tables.len());
    for t in &tables {
        let sums = t.sample_row_sums();
        let series = &sums[..sums.len().min(pilot)];
        let d = integrated_autocorrelation_time(series).map_err(|e| match e {
            Error::Degenerate(msg) => Error::Degenerate(format!("chain {:?}: {msg}", t.chain_id)),
            other => other,
        })?;
        rows.push(ThinRow {
            chain: &t.chain_id,
            iac_time: d.iac_time,
            recommended_interval: d.recommended_interval,
            window_used: d.window_used,
        });
    }
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?;
    } else {
        writeln!(out, "{:<16} {:>10} {:>9} {:>7}", "chain", "iac_time", "interval", "window")?;
        for r in &rows {
            writeln!(
                out,
                "{:<16} {:>10.3} {:>9} {:>7}",
                r.chain, r.iac_time, r.recommended_interval, r.window_used
            )?;
        }
        if args.pilot.is_none() {
            writeln!(out, "(estimated on full chains; `run --thinning auto` uses the first {PILOT_LEN} samples)")?;
        }
    }
    Ok(())
}
