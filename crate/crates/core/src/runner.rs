//! Episode driver: built-in policies for every aspect not marked external,
//! an [`Agent`] for the rest.

use thiserror::Error;

use crate::env::{EncodedAction, Environment, Observation, Transition};
use crate::error::{ConfigError, EngineError};
use crate::metrics::{EpisodeSummary, MetricsReport};
use crate::policies::{decide, ExternalAction};
use crate::scenario::ScenarioConfig;
use crate::trajectory::{StepRecord, Trajectory, TrajectoryHeader};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("policy has external aspects but no agent is attached")]
    MissingAgent,
    #[error("agent: {0}")]
    Agent(String),
}

/// Supplies the external aspects of each step's action.
pub trait Agent {
    fn act(&mut self, observation: &Observation) -> Result<EncodedAction, RunError>;

    fn after_step(&mut self, _transition: &Transition) -> Result<(), RunError> {
        Ok(())
    }
}

/// Any `FnMut(&Observation) -> EncodedAction` is an agent.
impl<F: FnMut(&Observation) -> EncodedAction> Agent for F {
    fn act(&mut self, observation: &Observation) -> Result<EncodedAction, RunError> {
        Ok(self(observation))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutput {
    pub seed: u64,
    pub summary: EpisodeSummary,
    /// Per-step rows followed by the mean/p25/p75 summary rows.
    pub metrics_csv: String,
    pub trajectory: Option<Trajectory>,
}

pub fn run_episode(
    scenario: &ScenarioConfig,
    seed: u64,
    mut agent: Option<&mut dyn Agent>,
    record: bool,
) -> Result<EpisodeOutput, RunError> {
    let spec = &scenario.policy;
    let aspects = spec.external_aspects();
    if !aspects.is_empty() && agent.is_none() {
        return Err(RunError::MissingAgent);
    }
    let mut env = Environment::new(scenario.clone(), seed)?;
    let mut csv = String::from(MetricsReport::CSV_HEADER);
    csv.push('\n');
    let mut records = Vec::new();

    while !env.is_done() {
        let external = match agent.as_deref_mut() {
            Some(a) if !aspects.is_empty() => {
                let encoded = a.act(&env.observe())?;
                env.decode(&encoded).restricted_to(&aspects)
            }
            _ => ExternalAction::default(),
        };
        let engine = env.engine_mut();
        let turn = engine.management_turn();
        let (view, rng) = engine.policy_context();
        let actions = decide(spec, &view, rng, turn, external);
        let transition = env.step(&actions)?;
        csv.push_str(&transition.metrics.csv_row());
        csv.push('\n');
        if record {
            records.push(StepRecord::new(env.engine(), &actions, &transition.events, &transition.metrics));
        }
        if let Some(a) = agent.as_deref_mut() {
            a.after_step(&transition)?;
        }
    }

    let engine = env.engine();
    for row in engine.accumulator().csv_summary_rows() {
        csv.push_str(&row);
        csv.push('\n');
    }
    Ok(EpisodeOutput {
        seed,
        summary: engine.accumulator().summary(engine.metrics_config()),
        metrics_csv: csv,
        trajectory: record.then(|| Trajectory {
            header: TrajectoryHeader::new(scenario, seed),
            records,
        }),
    })
}
