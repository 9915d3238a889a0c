//! Command-line interface.

use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use wfdes_core::protocol::{serve, SessionOutcome, StreamTransport};
use wfdes_core::runner::RunError;
use wfdes_core::trajectory::{replay, ReplayError, ReplayOutcome, Trajectory, TrajectoryError};
use wfdes_core::{ConfigError, ScenarioConfig, ValidationMode};

use crate::batch::{render_table, run_batch, write_outputs, BatchSummary};
use crate::bench::{ablate, trends, GRID_SIDES, HEADCOUNTS};

#[derive(Debug, Parser)]
#[command(name = "wfdes", version, about = "Workforce discrete-event simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a seeded batch of episodes and print the KPI summary.
    Run(ScenarioArgs),
    /// Grid-size x headcount sweep of episode welfare.
    Trends(ScenarioArgs),
    /// Policy ablation over the built-in rows.
    Ablate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated row numbers (1-4).
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<usize>>,
    },
    /// Re-simulate a trajectory log and compare it record by record.
    Replay {
        log: PathBuf,
    },
    /// Serve episodes to an external agent.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "stdio")]
        transport: Transport,
        /// Stop after this many TCP sessions.
        #[arg(long)]
        sessions: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// TOML scenario file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub horizon: Option<u64>,
    /// e.g. `dispatch=greedy,mgmt=threshold,pos=spatial-average`
    #[arg(long)]
    pub policy: Option<String>,
    /// Dotted override such as `engine.travel_speed=2`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Reject invalid actions instead of dropping them.
    #[arg(long)]
    pub strict: bool,
    /// Worker threads for episode batches (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub parallel: usize,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ScenarioArgs {
    /// Defaults, then the config file, then `--set`, then the shorthand flags.
    pub fn scenario(&self) -> Result<ScenarioConfig, ConfigError> {
        let mut s = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        for o in &self.overrides {
            s.apply_override(o)?;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.episodes {
            s.episodes = v;
        }
        if let Some(v) = self.horizon {
            s.horizon = v;
        }
        if let Some(p) = &self.policy {
            s.policy.apply_cli(p)?;
        }
        if self.strict {
            s.engine.action_validation = ValidationMode::Strict;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Stdio,
    Tcp(u16),
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "stdio" => Ok(Transport::Stdio),
            Some(("tcp", port)) => port
                .parse()
                .map(Transport::Tcp)
                .map_err(|_| format!("bad port `{port}`")),
            _ => Err(format!("expected `stdio` or `tcp:PORT`, got `{s}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Mismatch(_) => 4,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => CliError::Config(c),
            RunError::MissingAgent => CliError::Config(ConfigError::new(
                "policy",
                "external aspects need an attached agent; use `wfdes serve`",
            )),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Trends(args) => run_trends(&args),
        Command::Ablate { scenario, rows } => run_ablate(&scenario, rows.as_deref()),
        Command::Replay { log } => run_replay(&log),
        Command::Serve {
            scenario,
            transport,
            sessions,
        } => run_serve(&scenario, transport, sessions),
    }
}

fn progress(line: &str) {
    eprintln!("{line}");
}

fn run(args: &ScenarioArgs) -> Result<(), CliError> {
    let s = args.scenario()?;
    let outputs = run_batch(&s, true, args.parallel)?;
    let summary = BatchSummary::of_outputs(&outputs);
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("wfdes-out"));
    write_outputs(&out, &outputs, &summary)?;
    let headers: Vec<String> = ["Policy".to_string()]
        .into_iter()
        .chain(BatchSummary::HEADERS.iter().map(|h| h.to_string()))
        .collect();
    let mut row = vec![s.policy.to_string()];
    row.extend(summary.cells());
    print!("{}", render_table(&headers, &[row]));
    println!("{} episodes, seeds {}..{}; outputs in {}", outputs.len(), s.seed, s.seed + s.episodes as u64, out.display());
    Ok(())
}

fn run_trends(args: &ScenarioArgs) -> Result<(), CliError> {
    let s = args.scenario()?;
    let table = trends(&s, &GRID_SIDES, &HEADCOUNTS, args.parallel, progress)?;
    print!("{}", table.render());
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("trends.csv"), table.to_csv())?;
    }
    Ok(())
}

fn run_ablate(args: &ScenarioArgs, rows: Option<&[usize]>) -> Result<(), CliError> {
    let s = args.scenario()?;
    let table = ablate(&s, rows, args.parallel, progress)?;
    print!("{}", table.render());
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("ablation.csv"), table.to_csv())?;
    }
    Ok(())
}

fn run_replay(path: &Path) -> Result<(), CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let log = Trajectory::read(BufReader::new(file)).map_err(|e| match e {
        TrajectoryError::Io(e) => CliError::Runtime(e.to_string()),
        other => CliError::Runtime(format!("{}: {other}", path.display())),
    })?;
    let outcome = replay(&log).map_err(|e| match e {
        ReplayError::Config(c) => CliError::Config(c),
        ReplayError::Engine(e) => CliError::Runtime(e.to_string()),
    })?;
    match outcome {
        ReplayOutcome::Identical { steps } => {
            println!("identical ({steps} steps)");
            Ok(())
        }
        ReplayOutcome::Mismatch { step, expected, actual } => {
            println!("mismatch at step {step}");
            println!("logged:    {expected}");
            println!("simulated: {actual}");
            Err(CliError::Mismatch(format!("replay diverged at step {step}")))
        }
    }
}

fn report_session(outcome: &SessionOutcome) {
    eprintln!(
        "session `{}`: {} episodes{}",
        outcome.session_id,
        outcome.episodes.len(),
        outcome
            .aborted
            .as_ref()
            .map_or(String::new(), |e| format!(", aborted: {e}"))
    );
}

fn run_serve(args: &ScenarioArgs, transport: Transport, sessions: Option<usize>) -> Result<(), CliError> {
    let s = args.scenario()?;
    match transport {
        Transport::Stdio => {
            let stdin = BufReader::new(io::stdin());
            let outcome = serve(StreamTransport::new(stdin, io::stdout()), &s);
            report_session(&outcome);
            match outcome.aborted {
                None => Ok(()),
                Some(e) => Err(CliError::Runtime(e.to_string())),
            }
        }
        Transport::Tcp(port) => {
            let listener = TcpListener::bind(("127.0.0.1", port))?;
            eprintln!("listening on {}", listener.local_addr()?);
            let mut handles = Vec::new();
            for stream in listener.incoming().take(sessions.unwrap_or(usize::MAX)) {
                let transport = StreamTransport::tcp(stream?)?;
                let s = s.clone();
                handles.push(thread::spawn(move || report_session(&serve(transport, &s))));
            }
            for h in handles {
                let _ = h.join();
            }
            Ok(())
        }
    }
}
