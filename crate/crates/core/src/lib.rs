//! Discrete-event simulator for integrated workforce optimization:
//! dispatch, workforce sizing and spatial positioning of field personnel
//! over a grid of facilities that request service.

pub mod action;
pub mod engine;
pub mod env;
pub mod error;
pub mod metrics;
pub mod model;
pub mod policies;
pub mod protocol;
pub mod runner;
pub mod scenario;
pub mod trajectory;
pub mod window;
pub mod world;

pub use action::{ActionSet, Assignment, FacilityWeight, ManagementAction, Positioning};
pub use engine::{Engine, EngineConfig, Event, Layout, StepResult, ValidationMode, Violation, ViolationReason};
pub use env::{EncodedAction, Environment, Observation, Transition};
pub use error::{ConfigError, EngineError};
pub use metrics::{EpisodeSummary, MetricsConfig, MetricsReport};
pub use model::{Expertise, FacilityId, GridConfig, Location, PersonnelId};
pub use policies::PolicySpec;
pub use scenario::ScenarioConfig;
pub use world::{WorldState, WorldView};
