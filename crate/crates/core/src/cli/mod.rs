//! Command-line front end: `run`, `analyze`, `repl`, `gen-trace`.
//!
//! Exit codes: 0 ok, 1 internal error, 2 usage or I/O, 3 memory budget
//! violation, 4 result mismatch between modes.

mod repl;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::behavior::ThinkTimeModel;
use crate::cache::CacheError;
use crate::dsl::OpKind;
use crate::sched::SessionError;
use crate::sim::{
    analyze, compare_modes, generate_random_trace, run_trace, GenOptions, Mode, Report, SimConfig, SimError, Trace,
};
use crate::time::VDuration;

pub use repl::{run_repl, Clock};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "opportune",
    version,
    about = "Opportunistic evaluation of dataframe sessions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay a trace and write a report.
    Run(RunArgs),
    /// Lower a trace without executing it and print the DAG.
    Analyze(AnalyzeArgs),
    /// Interactive session reading cells from stdin.
    Repl(ReplArgs),
    /// Write a random session trace.
    GenTrace(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Opportunistic,
    Eager,
}

/// Settings shared by `run` and `repl`; flags override the config file.
#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data source (CSV path or synthetic URI); repeatable.
    #[arg(long = "data")]
    pub data: Vec<String>,
    /// Memory budget in bytes.
    #[arg(long)]
    pub mem_budget: Option<u64>,
    /// Usage fraction above which GC runs.
    #[arg(long)]
    pub gc_threshold: Option<f64>,
    /// Rows in the top and bottom partition ranges.
    #[arg(long)]
    pub partition_k: Option<usize>,
    /// Evict the highest score first.
    #[arg(long)]
    pub evict_highest: bool,
    /// Think-time prior, one sample in seconds per line.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_fast_path: bool,
    #[arg(long)]
    pub no_speculate: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, value_enum, default_value = "opportunistic")]
    pub mode: ModeArg,
    /// Run both modes, check results agree and report both.
    #[arg(long)]
    pub compare: bool,
    /// Directory for report.json and report.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Also write Graphviz output here (`-` for stdout).
    #[arg(long)]
    pub dot: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplArgs {
    #[arg(long, value_enum, default_value = "virtual")]
    pub clock: Clock,
    /// Virtual think time granted between inputs, in seconds.
    #[arg(long)]
    pub think: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub cells: usize,
    #[arg(long, default_value_t = 20_000)]
    pub rows: usize,
    /// Multiplier on sampled think times.
    #[arg(long, default_value_t = 1.0)]
    pub think_scale: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Cost overrides in a config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostOverrides {
    pub per_row_us: BTreeMap<OpKind, f64>,
    pub overhead_us: BTreeMap<OpKind, u64>,
}

/// TOML configuration file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: Vec<String>,
    pub mem_budget: Option<u64>,
    pub gc_threshold: Option<f64>,
    pub partition_k: Option<usize>,
    pub evict_highest: Option<bool>,
    pub seed: Option<u64>,
    pub clock: Option<Clock>,
    pub prior: Option<PathBuf>,
    pub fast_path: Option<bool>,
    pub speculate: Option<bool>,
    pub cost: CostOverrides,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub sim: SimConfig,
    pub data: Vec<String>,
    pub seed: Option<u64>,
    pub clock: Option<Clock>,
    pub think: ThinkTimeModel,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::Trace { .. } | SimError::Data(_) | SimError::Io(_) => EXIT_USAGE,
            SimError::Session(SessionError::Cache(
                CacheError::BudgetExhausted { .. } | CacheError::UncacheableResult { .. },
            )) => EXIT_BUDGET,
            SimError::ResultMismatch { .. } => EXIT_MISMATCH,
            SimError::Session(_) => EXIT_INTERNAL,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::usage(e.to_string())
    }
}

impl CommonArgs {
    pub fn settings(&self) -> Result<Settings, CliError> {
        let file = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let mut sim = SimConfig::default();
        if let Some(b) = self.mem_budget.or(file.mem_budget) {
            sim.budget_bytes = b;
        }
        if let Some(t) = self.gc_threshold.or(file.gc_threshold) {
            sim.gc_threshold = t;
        }
        if let Some(k) = self.partition_k.or(file.partition_k) {
            sim.scheduler.partition_k = k;
        }
        sim.evict_highest = self.evict_highest || file.evict_highest.unwrap_or(false);
        sim.scheduler.fast_path = !self.no_fast_path && file.fast_path.unwrap_or(true);
        sim.scheduler.speculate = !self.no_speculate && file.speculate.unwrap_or(true);
        for (k, c) in &file.cost.per_row_us {
            sim.cost.per_row_us.insert(*k, *c);
        }
        for (k, us) in &file.cost.overhead_us {
            sim.cost.overhead.insert(*k, VDuration::from_micros(*us));
        }
        if sim.budget_bytes == 0 {
            return Err(CliError::usage("memory budget must be positive"));
        }
        if !(sim.gc_threshold > 0.0 && sim.gc_threshold <= 1.0) {
            return Err(CliError::usage("gc threshold must be in (0, 1]"));
        }
        if sim.scheduler.partition_k == 0 {
            return Err(CliError::usage("partition K must be at least 1"));
        }
        if sim.cost.per_row_us.values().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(CliError::usage("cost coefficients must be finite and >= 0"));
        }
        let think = match self.prior.as_ref().or(file.prior.as_ref()) {
            Some(p) => ThinkTimeModel::from_prior_file(p).map_err(|e| CliError::usage(e.to_string()))?,
            None => ThinkTimeModel::with_default_prior(),
        };
        let data = if self.data.is_empty() {
            file.data
        } else {
            self.data.clone()
        };
        Ok(Settings {
            sim,
            data,
            seed: self.seed.or(file.seed),
            clock: file.clock,
            think,
        })
    }
}

fn load_trace(path: &Path) -> Result<Trace, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let mut trace = Trace::parse(&text)?;
    trace.resolve_data_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(trace)
}

fn write_report_files(out: &Path, reports: &[&Report], json: String) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("report.json"), json + "\n")?;
    let mut csv = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let mut part = Vec::new();
        r.write_events_csv(&mut part)?;
        let text = String::from_utf8(part).expect("csv is utf-8");
        for (j, line) in text.lines().enumerate() {
            if j == 0 {
                if i == 0 {
                    writeln!(csv, "mode,{line}")?;
                }
                continue;
            }
            writeln!(csv, "{},{line}", r.mode)?;
        }
    }
    fs::write(out.join("report.csv"), csv)?;
    Ok(())
}

fn ms(d: VDuration) -> String {
    format!("{:.1}", d.as_millis_f64())
}

fn print_summary(out: &mut dyn Write, reports: &[&Report]) -> std::io::Result<()> {
    write!(out, "{:<5} {:<44}", "#", "interaction")?;
    for r in reports {
        write!(out, " {:>16}", format!("{} ms", r.mode))?;
    }
    writeln!(out)?;
    for (i, rec) in reports[0].interactions.iter().enumerate() {
        let mut code = rec.code.clone();
        if code.len() > 44 {
            code.truncate(41);
            code.push_str("...");
        }
        write!(out, "{:<5} {:<44}", i, code)?;
        for r in reports {
            let v = r.interactions.get(i).map(|x| ms(x.latency_us)).unwrap_or_default();
            write!(out, " {v:>16}")?;
        }
        writeln!(out)?;
    }
    for r in reports {
        let t = &r.totals;
        writeln!(
            out,
            "{}: sync wait {} ms, background {} ms, wasted {} ms, preemptions {}, evictions {}",
            r.mode,
            ms(t.sync_wait_us),
            ms(t.background_work_us),
            ms(t.wasted_work_us),
            t.preemptions,
            t.evictions
        )?;
    }
    Ok(())
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let settings = args.common.settings()?;
    let mut trace = load_trace(&args.trace)?;
    if !settings.data.is_empty() {
        trace.header.data = settings.data.clone();
        trace.resolve_data_paths(args.trace.parent().unwrap_or(Path::new(".")));
    }
    if let Some(s) = settings.seed {
        trace.header.seed = s;
    }
    if args.compare {
        let c = compare_modes(&trace, &settings.sim, &settings.think)?;
        let json = serde_json::to_string_pretty(&serde_json::json!({
            "opportunistic": c.opportunistic,
            "eager": c.eager,
            "sync_wait_reduction": c.sync_wait_reduction(),
        }))
        .expect("report serializes");
        write_report_files(&args.out, &[&c.opportunistic, &c.eager], json)?;
        print_summary(out, &[&c.opportunistic, &c.eager])?;
        writeln!(out, "sync wait reduction: {:.1}%", 100.0 * c.sync_wait_reduction())?;
    } else {
        let mode = match args.mode {
            ModeArg::Opportunistic => Mode::Opportunistic,
            ModeArg::Eager => Mode::Eager,
        };
        let r = run_trace(&trace, mode, &settings.sim, &settings.think)?;
        write_report_files(&args.out, &[&r], r.to_json())?;
        print_summary(out, &[&r])?;
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let trace = load_trace(&args.trace)?;
    let a = analyze(&trace)?;
    write!(out, "{a}")?;
    match args.dot.as_deref() {
        None => {}
        Some("-") => write!(out, "{}", crate::dag::to_dot(&a.dag))?,
        Some(p) => fs::write(p, crate::dag::to_dot(&a.dag))?,
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let opts = GenOptions {
        cells: args.cells,
        rows: args.rows,
        think_scale: args.think_scale,
        ..GenOptions::default()
    };
    let trace = generate_random_trace(args.seed, &opts, &ThinkTimeModel::with_default_prior());
    match &args.out {
        Some(p) => fs::write(p, trace.to_jsonl())?,
        None => write!(out, "{}", trace.to_jsonl())?,
    }
    Ok(())
}

/// Runs a parsed command line. `input` feeds the REPL.
pub fn execute(cli: Cli, input: Box<dyn BufRead + Send>, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::GenTrace(a) => cmd_gen(&a, out),
        Command::Repl(a) => {
            let settings = a.common.settings()?;
            let clock = if a.clock == Clock::Virtual {
                settings.clock.unwrap_or(a.clock)
            } else {
                a.clock
            };
            run_repl(settings, clock, a.think, input, out)
        }
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter("OPPORTUNE_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdin = Box::new(std::io::BufReader::new(std::io::stdin()));
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli, stdin, &mut out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
