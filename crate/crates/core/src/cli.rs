//! Command-line front end: `run`, `party`, `predict`.
//!
//! Exit codes: 0 session completed, or aborted for QBER / sync failure /
//! empty key (the abort is recorded in the report); 3 aborted for a
//! parameter mismatch or protocol violation; 1 infrastructure failure
//! (I/O, transport, bad scenario); 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{compare, predict, AnalysisError, Tolerances};
use crate::dump;
use crate::protocol::session::{run_in_process, run_session, QuantumInput, SessionError, SessionResult};
use crate::protocol::transport::{tcp_connect, tcp_listen, TransportError};
use crate::protocol::wire::{AbortReason, Role};
use crate::report::{to_csv, to_json, ReportError, SessionReport};
use crate::scenario::{Scenario, ScenarioError};
use crate::source::build_pulse_train;
use crate::sync::fold_residuals;

pub const OUT_DIR_ENV: &str = "FSQKD_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "fsqkd", version, about = "Free-space daylight BB84 link simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run both parties in-process and write reports.
    Run(RunArgs),
    /// Run one party of a networked session over TCP.
    Party(PartyArgs),
    /// Print the analytic prediction for a scenario.
    Predict(PredictArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    pub scenario: String,
    /// Derive all component seeds from this value.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the scenario's simulated duration.
    #[arg(long)]
    pub duration_s: Option<f64>,
}

impl ScenarioArgs {
    pub fn load(&self) -> Result<Scenario, CliError> {
        let mut s = Scenario::load(&self.scenario)?;
        if let Some(seed) = self.seed {
            s = s.with_seed(seed);
        }
        if let Some(d) = self.duration_s {
            s = s.with_duration(d);
            s.validate()?;
        }
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write Bob's tag stream to tags.bin.
    #[arg(long)]
    pub dump_tags: bool,
    /// Write the first N pulses of Alice's train to pulses.bin.
    #[arg(long, value_name = "N")]
    pub dump_pulses: Option<u64>,
    /// Write the folded arrival histogram to histogram.csv.
    #[arg(long)]
    pub histogram: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Alice,
    Bob,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("endpoint").required(true).args(["listen", "connect"])))]
pub struct PartyArgs {
    #[arg(long, value_enum)]
    pub role: RoleArg,
    #[arg(long, value_name = "HOST:PORT")]
    pub listen: Option<String>,
    #[arg(long, value_name = "HOST:PORT")]
    pub connect: Option<String>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Bob only: replay a tag dump instead of co-simulating the physics.
    #[arg(long, value_name = "TAGS_BIN")]
    pub replay: Option<PathBuf>,
    /// Seconds to wait for the peer to connect.
    #[arg(long, default_value_t = 30.0)]
    pub wait_s: f64,
    /// Seconds to wait for any single message once connected.
    #[arg(long, default_value_t = 900.0)]
    pub read_timeout_s: f64,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write to a file instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn exit_code_for(report: &SessionReport) -> i32 {
    match report.outcome.abort_reason() {
        Some(AbortReason::ParameterMismatch | AbortReason::ProtocolViolation) => 3,
        _ => 0,
    }
}

fn write_doc<T: Serialize>(dir: &Path, stem: &str, format: Format, value: &T) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{stem}.{}", format.ext()));
    let text = match format {
        Format::Json => to_json(value),
        Format::Csv => to_csv(value)?,
    };
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn run_scenario(args: &RunArgs) -> Result<i32, CliError> {
    let scenario = args.scenario.load()?;
    prepare_dir(&args.out)?;
    let predicted = predict(&scenario)?;
    let (alice, bob) = run_in_process(&scenario, &scenario, QuantumInput::CoSimulate);
    let (alice, bob) = (alice?, bob?);
    write_outputs(args, &scenario, &alice, &bob)?;
    write_doc(&args.out, "predicted", args.format, &predicted)?;
    if bob.report.qber.is_some() {
        let deviation = compare(&predicted, &bob.report, &Tolerances::default())?;
        write_doc(&args.out, "deviation", args.format, &deviation)?;
    }
    summarize(&bob.report);
    Ok(exit_code_for(&bob.report))
}

fn write_outputs(args: &RunArgs, scenario: &Scenario, alice: &SessionResult, bob: &SessionResult) -> Result<(), CliError> {
    write_doc(&args.out, "session_report", args.format, &bob.report)?;
    write_doc(&args.out, "alice_report", args.format, &alice.report)?;
    if args.dump_tags {
        let path = args.out.join("tags.bin");
        dump::write_tags_file(&path, &bob.tags).map_err(io_err(&path))?;
    }
    if args.histogram {
        if let Some(clock) = &bob.clock {
            let path = args.out.join("histogram.csv");
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            fold_residuals(&bob.tags, clock, 100)
                .write_csv(file)
                .map_err(|e| CliError::Report(ReportError::Csv(e)))?;
        }
    }
    if let Some(n) = args.dump_pulses {
        let n = n.min(scenario.n_pulses());
        let path = args.out.join("pulses.bin");
        // A prefix train draws the same photon numbers as the full one.
        let records = build_pulse_train(&scenario.source, n.max(1)).map_err(|e| CliError::Usage(e.to_string()))?;
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        dump::write_pulses(std::io::BufWriter::new(file), records).map_err(io_err(&path))?;
    }
    Ok(())
}

fn summarize(report: &SessionReport) {
    let qber = report.qber.map(|q| format!("{:.3}%", q.qber * 100.0)).unwrap_or_else(|| "n/a".into());
    eprintln!(
        "{}: {} | sifted {} bits ({:.1} bit/s) | qber {qber}",
        report.scenario,
        report.outcome.label(),
        report.sifted_bits,
        report.sifted_key_rate_bps
    );
}

pub fn run_party(args: &PartyArgs) -> Result<i32, CliError> {
    let scenario = args.scenario.load()?;
    let role = match args.role {
        RoleArg::Alice => Role::Alice,
        RoleArg::Bob => Role::Bob,
    };
    let input = match (&args.replay, role) {
        (Some(_), Role::Alice) => return Err(CliError::Usage("--replay is only meaningful for --role bob".into())),
        (Some(p), Role::Bob) => QuantumInput::Replay(dump::read_tags_file(p).map_err(io_err(p))?),
        (None, _) => QuantumInput::CoSimulate,
    };
    prepare_dir(&args.out)?;
    let wait = Duration::from_secs_f64(args.wait_s);
    let read_timeout = Some(Duration::from_secs_f64(args.read_timeout_s));
    let mut transport = match (&args.listen, &args.connect) {
        (Some(addr), None) => tcp_listen(addr, wait, read_timeout)?,
        (None, Some(addr)) => tcp_connect(addr, wait, read_timeout)?,
        _ => return Err(CliError::Usage("exactly one of --listen / --connect is required".into())),
    };
    let result = run_session(role, &mut transport, &scenario, input)?;
    let stem = match role {
        Role::Alice => "alice_report",
        Role::Bob => "session_report",
    };
    write_doc(&args.out, stem, args.format, &result.report)?;
    summarize(&result.report);
    Ok(exit_code_for(&result.report))
}

pub fn predict_cmd(args: &PredictArgs) -> Result<i32, CliError> {
    let scenario = args.scenario.load()?;
    let p = predict(&scenario)?;
    let text = match args.format {
        Format::Json => to_json(&p),
        Format::Csv => to_csv(&p)?,
    };
    match &args.output {
        Some(path) => fs::write(path, text).map_err(io_err(path))?,
        None => print!("{text}"),
    }
    Ok(0)
}

pub fn dispatch(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Run(a) => run_scenario(a),
        Command::Party(a) => run_party(a),
        Command::Predict(a) => predict_cmd(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    })
}
