//! `crsqn` command-line front end: schedule validation, single runs and
//! multi-seed comparisons.
//!
//! Exit codes: 0 success, 1 solver anomaly or failed validation, 2 config
//! error, 3 I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crsqn_core::datastore::{write_comparison_csv, write_trace, DataError};
use crsqn_core::schedules::{validate_as, validate_mean};
use crsqn_core::{compare, run, ComparisonEntry, ComparisonTable, RunStatus, RunTrace, SolverConfig, SolverError};

pub mod config;

use config::{base_dir, parse, read_document, CompareDoc, RunDoc, ScheduleDoc};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("solver error: {0}")]
    Solver(SolverError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Solver(_) => EXIT_FAILURE,
        }
    }

    pub(crate) fn data(e: DataError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::ConfigInvalid(m) => CliError::Config(m),
            other => CliError::Solver(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "crsqn",
    version,
    about = "Cyclic regularized stochastic quasi-Newton toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a power-law schedule against the convergence conditions.
    ValidateSchedule(ValidateArgs),
    /// Run one solver configuration and write its trace.
    Run(RunArgs),
    /// Run several configurations over seeds and write a CSV table.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Mode {
    /// Almost-sure convergence conditions.
    #[default]
    As,
    /// Convergence-in-mean conditions.
    Mean,
}

/// Per-parameter overrides, named after the config keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub gamma0: Option<f64>,
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long = "eval_every")]
    pub eval_every: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ValidateArgs {
    /// Document whose `[schedule]` section supplies defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::As)]
    pub mode: Mode,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl RunArgs {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            seed: None,
            out: None,
            overrides: Overrides::default(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replace the seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long = "eval_every")]
    pub eval_every: Option<u64>,
}

impl CompareArgs {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            seed: None,
            out: None,
            iterations: None,
            eval_every: None,
        }
    }
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> u8 {
    let result = match &cli.command {
        Command::ValidateSchedule(a) => cmd_validate_schedule(a, out),
        Command::Run(a) => cmd_run(a, out).map(|o| o.exit_code),
        Command::Compare(a) => cmd_compare(a, out).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn set(table: &mut toml::Table, section: Option<&str>, key: &str, value: toml::Value) {
    let target = match section {
        None => table,
        Some(s) => table
            .entry(s)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("section is a table"),
    };
    target.insert(key.to_owned(), value);
}

fn apply_overrides(table: &mut toml::Table, o: &Overrides) -> Result<(), CliError> {
    for section in ["schedule", "constants"] {
        if table.get(section).is_some_and(|v| !v.is_table()) {
            return Err(CliError::Config(format!("`{section}` must be a table")));
        }
    }
    let f = toml::Value::Float;
    if let Some(v) = o.gamma0 {
        let section = if table.contains_key("schedule") || !table.contains_key("constants") && o.mu.is_none() {
            "schedule"
        } else {
            "constants"
        };
        set(table, Some(section), "gamma0", f(v));
    }
    for (key, v) in [("delta0", o.delta0), ("mu0", o.mu0), ("a", o.a), ("b", o.b), ("c", o.c)] {
        if let Some(v) = v {
            set(table, Some("schedule"), key, f(v));
        }
    }
    for (key, v) in [("mu", o.mu), ("delta", o.delta)] {
        if let Some(v) = v {
            set(table, Some("constants"), key, f(v));
        }
    }
    if let Some(v) = o.rho {
        set(table, None, "rho", f(v));
    }
    for (key, v) in [("iterations", o.iterations), ("eval_every", o.eval_every)] {
        if let Some(v) = v {
            let v = i64::try_from(v).map_err(|_| CliError::Config(format!("{key} out of range")))?;
            set(table, None, key, toml::Value::Integer(v));
        }
    }
    Ok(())
}

fn seed_value(seed: u64) -> Result<i64, CliError> {
    i64::try_from(seed).map_err(|_| CliError::Config(format!("seed {seed} exceeds the TOML integer range")))
}

fn load_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = read_document(path)?;
    parse(&text, path)
}

/// Prints both validator tables; the exit code reflects the requested mode.
pub fn cmd_validate_schedule(args: &ValidateArgs, out: &mut dyn Write) -> Result<u8, CliError> {
    let mut table = toml::Table::new();
    if let Some(path) = &args.config {
        let doc = load_table(path)?;
        if let Some(s) = doc.get("schedule") {
            table.insert("schedule".into(), s.clone());
        }
    }
    apply_overrides(&mut table, &args.overrides)?;
    let schedule_table = table
        .remove("schedule")
        .ok_or_else(|| CliError::Config("no schedule parameters given".into()))?;
    let doc: ScheduleDoc = schedule_table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("schedule: {e}")))?;
    let schedule = doc.build()?;
    let as_report = validate_as(&schedule);
    let mean_report = validate_mean(&schedule);
    writeln!(out, "almost-sure conditions:\n{as_report}").map_err(io_err)?;
    writeln!(out, "in-mean conditions:\n{mean_report}").map_err(io_err)?;
    let requested = match args.mode {
        Mode::As => &as_report,
        Mode::Mean => &mean_report,
    };
    let mode = match args.mode {
        Mode::As => "as",
        Mode::Mean => "mean",
    };
    if requested.is_valid() {
        writeln!(out, "mode {mode}: valid").map_err(io_err)?;
        Ok(EXIT_OK)
    } else {
        let names: Vec<&str> = requested.violations.iter().map(|v| v.condition).collect();
        writeln!(out, "mode {mode}: invalid ({})", names.join(", ")).map_err(io_err)?;
        Ok(EXIT_FAILURE)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trace: RunTrace,
    pub output: PathBuf,
    pub exit_code: u8,
}

/// Resolves a `run` document with its overrides into a solver config and
/// output path without touching the file system beyond reading it.
pub fn prepare_run(args: &RunArgs) -> Result<(RunDoc, SolverConfig, PathBuf), CliError> {
    let mut table = load_table(&args.config)?;
    apply_overrides(&mut table, &args.overrides)?;
    if let Some(seed) = args.seed {
        set(&mut table, None, "seed", toml::Value::Integer(seed_value(seed)?));
    }
    let doc: RunDoc = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", args.config.display())))?;
    doc.problem().check()?;
    let config = doc.solver_config()?;
    let output = match (&args.out, &doc.output) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => base_dir(&args.config).join(p),
        (None, None) => return Err(CliError::Config("no output path; set `output` or pass --out".into())),
    };
    Ok((doc, config, output))
}

/// Runs one configuration, writes its trace and prints a one-line summary.
pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<RunOutcome, CliError> {
    let (doc, config, output) = prepare_run(args)?;
    let oracle = doc.problem().load(&base_dir(&args.config))?;
    if let Some(x0) = &config.x0 {
        if x0.dim() != oracle.dim() {
            return Err(CliError::Config(format!(
                "x0 has dimension {}, problem has {}",
                x0.dim(),
                oracle.dim()
            )));
        }
    }
    let trace = run(oracle.as_ref(), &config)?;
    write_trace(&trace, &output).map_err(CliError::data)?;
    let status = trace.status();
    let last = trace.records.last().expect("trace has the initial record");
    writeln!(
        out,
        "algorithm={} status={} k={} final_loss={} trace={}",
        config.method.algorithm(),
        match status {
            RunStatus::Finished => "finished",
            RunStatus::Stationary => "stationary",
            RunStatus::Running => "running",
        },
        last.k,
        last.loss,
        output.display()
    )
    .map_err(io_err)?;
    let exit_code = if status == RunStatus::Finished {
        EXIT_OK
    } else {
        EXIT_FAILURE
    };
    Ok(RunOutcome {
        trace,
        output,
        exit_code,
    })
}

/// Expands a `compare` document into solver entries and the output path.
pub fn prepare_compare(args: &CompareArgs) -> Result<(CompareDoc, Vec<ComparisonEntry>, PathBuf), CliError> {
    let mut table = load_table(&args.config)?;
    if let Some(seed) = args.seed {
        set(
            &mut table,
            None,
            "seeds",
            toml::Value::Array(vec![toml::Value::Integer(seed_value(seed)?)]),
        );
    }
    let overrides = Overrides {
        iterations: args.iterations,
        eval_every: args.eval_every,
        ..Overrides::default()
    };
    apply_overrides(&mut table, &overrides)?;
    let doc: CompareDoc = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", args.config.display())))?;
    doc.problem().check()?;
    if doc.seeds.is_empty() {
        return Err(CliError::Config("seeds must not be empty".into()));
    }
    if doc.runs.is_empty() {
        return Err(CliError::Config("no [[runs]] blocks".into()));
    }
    let mut entries = Vec::new();
    for block in &doc.runs {
        for (parameter, value, method, rho) in block.expand()? {
            let config = SolverConfig {
                rho,
                eval_every: doc.eval_every.unwrap_or(doc.iterations.max(1)),
                safeguard_retries: doc
                    .safeguard_retries
                    .unwrap_or(crsqn_core::solvers::DEFAULT_SAFEGUARD_RETRIES),
                ..SolverConfig::new(method, doc.iterations, doc.seeds[0])
            };
            config.validate()?;
            entries.push(ComparisonEntry {
                config,
                seeds: doc.seeds.clone(),
                parameter,
                value,
            });
        }
    }
    let output = match (&args.out, &doc.output) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => base_dir(&args.config).join(p),
        (None, None) => return Err(CliError::Config("no output path; set `output` or pass --out".into())),
    };
    Ok((doc, entries, output))
}

/// Runs every block over the seed list and writes the comparison CSV.
pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<ComparisonTable, CliError> {
    let (doc, entries, output) = prepare_compare(args)?;
    let oracle = doc.problem().load(&base_dir(&args.config))?;
    let table = compare(oracle.as_ref(), &entries)?;
    write_comparison_csv(&table, &output).map_err(CliError::data)?;
    for row in &table.rows {
        writeln!(
            out,
            "{:<7} {}={:<8} mean_loss={:.6} std={:.6}",
            row.algorithm, row.parameter, row.value, row.mean_loss, row.std
        )
        .map_err(io_err)?;
    }
    writeln!(out, "table={}", output.display()).map_err(io_err)?;
    Ok(table)
}
