//! Trajectory logs: JSON lines, a header followed by one record per step.
//! Replaying a log re-simulates from the header's seed and scenario while
//! feeding the logged actions, and compares the regenerated records.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionSet;
use crate::engine::{Engine, Event};
use crate::error::{ConfigError, EngineError};
use crate::metrics::MetricsReport;
use crate::scenario::ScenarioConfig;

pub const FORMAT_VERSION: &str = "wfdes/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub version: String,
    pub seed: u64,
    pub scenario: ScenarioConfig,
}

impl TrajectoryHeader {
    pub fn new(scenario: &ScenarioConfig, seed: u64) -> Self {
        Self {
            version: FORMAT_VERSION.to_string(),
            seed,
            scenario: scenario.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: u64,
    pub events: Vec<Event>,
    pub wc: f64,
    pub wc_cumulative: f64,
    pub pur_mean: f64,
    pub afd_mean: f64,
    pub nsw: f64,
    pub n_personnel: usize,
    pub n_facilities: usize,
    /// The joint action the engine received.
    pub actions: ActionSet,
    /// Short hash of the post-step world.
    pub digest: String,
}

impl StepRecord {
    /// Record of the step that produced `events` and `metrics`; `engine`
    /// is the post-step engine.
    pub fn new(engine: &Engine, actions: &ActionSet, events: &[Event], metrics: &MetricsReport) -> Self {
        let w = engine.world();
        Self {
            t: metrics.t,
            events: events.to_vec(),
            wc: metrics.wc_step,
            wc_cumulative: metrics.wc_cumulative,
            pur_mean: metrics.pur_mean,
            afd_mean: metrics.afd_mean,
            nsw: metrics.nsw,
            n_personnel: w.personnel.len(),
            n_facilities: w.facilities.len(),
            actions: actions.clone(),
            digest: w.digest(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported log version `{0}` (expected {FORMAT_VERSION})")]
    Version(String),
    #[error("empty log")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Streams a trajectory as JSON lines.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W, header: &TrajectoryHeader) -> std::io::Result<Self> {
        writeln!(out, "{}", serde_json::to_string(header).expect("header serializes"))?;
        Ok(Self { out })
    }

    pub fn record(&mut self, record: &StepRecord) -> std::io::Result<()> {
        writeln!(self.out, "{}", record.to_line())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn read<R: BufRead>(input: R) -> Result<Self, TrajectoryError> {
        let mut lines = input.lines().enumerate();
        let (_, first) = lines.next().ok_or(TrajectoryError::Empty)?;
        let header: TrajectoryHeader = serde_json::from_str(&first?).map_err(|e| TrajectoryError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.version != FORMAT_VERSION {
            return Err(TrajectoryError::Version(header.version));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| TrajectoryError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Ok(Self { header, records })
    }

    pub fn parse(text: &str) -> Result<Self, TrajectoryError> {
        Self::read(text.as_bytes())
    }

    pub fn to_text(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayOutcome {
    Identical { steps: usize },
    Mismatch {
        /// Index of the first divergent record.
        step: usize,
        expected: String,
        actual: String,
    },
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Re-simulates `log` and compares each regenerated record line with the
/// logged one.
pub fn replay(log: &Trajectory) -> Result<ReplayOutcome, ReplayError> {
    let mut engine = Engine::init(&log.header.scenario, log.header.seed)?;
    for (i, logged) in log.records.iter().enumerate() {
        let expected = logged.to_line();
        if engine.is_done() {
            return Ok(ReplayOutcome::Mismatch {
                step: i,
                expected,
                actual: String::from("<episode already ended>"),
            });
        }
        let actual = match engine.step(&logged.actions) {
            Ok(r) => StepRecord::new(&engine, &logged.actions, &r.events, &r.metrics).to_line(),
            Err(e) => format!("<step failed: {e}>"),
        };
        if actual != expected {
            return Ok(ReplayOutcome::Mismatch {
                step: i,
                expected,
                actual,
            });
        }
    }
    Ok(ReplayOutcome::Identical {
        steps: log.records.len(),
    })
}
