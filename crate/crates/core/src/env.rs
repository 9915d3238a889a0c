//! Episode interface for learning agents: padded observation matrices,
//! the three-headed encoded action, reward and management cadence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::{ActionSet, Assignment, FacilityWeight, ManagementAction, Positioning};
use crate::engine::{Engine, Event, Violation, ViolationReason};
use crate::error::{ConfigError, EngineError};
use crate::metrics::{self, MetricsReport};
use crate::model::{Activity, Expertise, StaffChangeKind, StaffTarget};
use crate::policies::{position_gaussian, DemandMap, ExternalAction};
use crate::scenario::ScenarioConfig;
use crate::world::{WorldState, WorldView};

pub const FACILITY_FEATURES: usize = 7;
pub const PERSONNEL_FEATURES: usize = 9;

/// True on clocks where management actions are accepted.
pub fn management_turn(clock: u64, cadence: u64) -> bool {
    cadence > 0 && clock % cadence == 0
}

/// Facility rows: x, y, operational, requests_service, has_assignment,
/// assigned personnel row (-1 if none), windowed downtime.
///
/// Personnel rows: home x/y, position x/y, expertise (0/1/2), busy,
/// assigned facility row (-1 if none), heading (1 toward facility, 0
/// toward home), windowed utilization.
///
/// Rows are entity slots; unused rows are zero and masked out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub clock: u64,
    pub management_turn: bool,
    pub facility_matrix: Vec<[f64; FACILITY_FEATURES]>,
    pub personnel_matrix: Vec<[f64; PERSONNEL_FEATURES]>,
    pub facility_mask: Vec<bool>,
    pub personnel_mask: Vec<bool>,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Observation {
    pub fn encode(world: &WorldState, max_facilities: usize, max_personnel: usize, cadence: u64) -> Self {
        let mut facility_matrix = vec![[0.0; FACILITY_FEATURES]; max_facilities];
        let mut personnel_matrix = vec![[0.0; PERSONNEL_FEATURES]; max_personnel];
        let mut facility_mask = vec![false; max_facilities];
        let mut personnel_mask = vec![false; max_personnel];

        let personnel_row = |id| world.personnel_by_id(id).map_or(-1.0, |p| p.slot as f64);
        let facility_row = |id| world.facility(id).map_or(-1.0, |f| f.slot as f64);

        for f in &world.facilities {
            facility_mask[f.slot] = true;
            facility_matrix[f.slot] = [
                f.location.x,
                f.location.y,
                flag(f.operational),
                flag(f.request.is_some()),
                flag(f.assigned_personnel.is_some()),
                f.assigned_personnel.map_or(-1.0, personnel_row),
                metrics::facility_downtime(&f.downtime),
            ];
        }
        for p in &world.personnel {
            personnel_mask[p.slot] = true;
            let heading = matches!(p.activity, Activity::TravelingToFacility | Activity::Servicing);
            personnel_matrix[p.slot] = [
                p.home.x,
                p.home.y,
                p.position.x,
                p.position.y,
                p.expertise.index() as f64,
                flag(p.activity != Activity::Idle),
                p.assigned_facility.map_or(-1.0, facility_row),
                flag(heading),
                metrics::personnel_utilization(&p.utilization),
            ];
        }
        Self {
            clock: world.clock,
            management_turn: management_turn(world.clock, cadence),
            facility_matrix,
            personnel_matrix,
            facility_mask,
            personnel_mask,
        }
    }
}

/// Action in row-index form, as emitted by a learned model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EncodedAction {
    /// Indexed by facility row: personnel row to send, or `None`.
    #[serde(default)]
    pub dispatch: Vec<Option<usize>>,
    /// 0 no-op, 1..=3 hire novice/mid/expert, 4..=6 fire novice/mid/expert.
    #[serde(default)]
    pub management: u8,
    /// Indexed by facility row, each in `[0, 1]`.
    #[serde(default)]
    pub positioning_weights: Vec<f64>,
}

impl EncodedAction {
    /// Maps rows to entity ids. Rows that name no live entity are recorded
    /// in `rejected`; the engine reports or refuses them according to its
    /// validation mode.
    pub fn decode(&self, view: &WorldView<'_>) -> ExternalAction {
        let facility_at = |row: usize| view.facilities.iter().find(|f| f.slot == row);
        let personnel_at = |row: usize| view.personnel.iter().find(|p| p.slot == row);
        let mut rejected = Vec::new();

        let mut dispatch = Vec::new();
        for (frow, choice) in self.dispatch.iter().enumerate() {
            let Some(prow) = choice else { continue };
            let Some(f) = facility_at(frow) else {
                rejected.push(Violation::new(ViolationReason::UnknownFacility));
                continue;
            };
            let Some(p) = personnel_at(*prow) else {
                rejected.push(Violation::new(ViolationReason::UnknownPersonnel).with_facility(f.id));
                continue;
            };
            dispatch.push(Assignment {
                personnel: p.id,
                facility: f.id,
            });
        }

        let management = ManagementAction::decode(self.management).unwrap_or_else(|| {
            rejected.push(Violation::new(ViolationReason::InvalidManagementCode));
            ManagementAction::NoOp
        });

        let mut weights = Vec::new();
        for (row, &weight) in self.positioning_weights.iter().enumerate() {
            match facility_at(row) {
                Some(f) => weights.push(FacilityWeight {
                    facility: f.id,
                    weight,
                }),
                None if weight != 0.0 => rejected.push(Violation::new(ViolationReason::UnknownWeightFacility)),
                None => {}
            }
        }
        let positioning = (!management.is_noop()).then_some(Positioning::Weights(weights));

        ExternalAction {
            dispatch: Some(dispatch),
            management: Some(management),
            positioning,
            rejected,
        }
    }
}

/// Row-level baseline agent: each unassigned open request, in row order,
/// gets the nearest idle personnel (Manhattan, lowest row on ties). No
/// management.
pub fn nearest_idle_action(obs: &Observation) -> EncodedAction {
    let mut dispatch = vec![None; obs.facility_matrix.len()];
    let mut idle: Vec<usize> = (0..obs.personnel_matrix.len())
        .filter(|&r| obs.personnel_mask[r] && obs.personnel_matrix[r][5] == 0.0)
        .collect();
    for (frow, f) in obs.facility_matrix.iter().enumerate() {
        if !obs.facility_mask[frow] || f[2] == 0.0 || f[3] == 0.0 || f[4] != 0.0 {
            continue;
        }
        let best = idle.iter().enumerate().min_by(|(_, &a), (_, &b)| {
            let d = |r: usize| {
                let p = &obs.personnel_matrix[r];
                (p[2] - f[0]).abs() + (p[3] - f[1]).abs()
            };
            d(a).total_cmp(&d(b)).then(a.cmp(&b))
        });
        if let Some((i, &prow)) = best {
            dispatch[frow] = Some(prow);
            idle.remove(i);
        }
    }
    EncodedAction {
        dispatch,
        ..EncodedAction::default()
    }
}

impl From<ExternalAction> for ActionSet {
    fn from(e: ExternalAction) -> Self {
        ActionSet {
            dispatch: e.dispatch.unwrap_or_default(),
            management: e.management.unwrap_or_default(),
            positioning: e.positioning,
            rejected: e.rejected,
        }
    }
}

/// Turns agent heat-map weights into a hire location or fire target using
/// the Gaussian positioning rule. Operational facilities without a weight
/// count as 0; all-zero weights become uniform.
pub fn resolve_positioning<R: Rng + ?Sized>(
    weights: &[FacilityWeight],
    kind: StaffChangeKind,
    level: Expertise,
    view: &WorldView<'_>,
    rng: &mut R,
    sigma: f64,
) -> Option<StaffTarget> {
    let raw = view
        .facilities
        .iter()
        .filter(|f| f.operational)
        .map(|f| FacilityWeight {
            facility: f.id,
            weight: weights
                .iter()
                .find(|w| w.facility == f.id)
                .map_or(0.0, |w| w.weight.clamp(0.0, 1.0)),
        })
        .collect();
    position_gaussian(&DemandMap::from_raw(raw), kind, level, view, rng, sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Observation,
    /// Negative Nash social welfare: lower welfare cost is better.
    pub reward: f64,
    pub done: bool,
    pub events: Vec<Event>,
    pub metrics: MetricsReport,
}

/// One episode at a time over a fixed scenario.
#[derive(Debug, Clone)]
pub struct Environment {
    scenario: ScenarioConfig,
    engine: Engine,
}

impl Environment {
    pub fn new(scenario: ScenarioConfig, seed: u64) -> Result<Self, ConfigError> {
        let engine = Engine::init(&scenario, seed)?;
        Ok(Self { scenario, engine })
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation, ConfigError> {
        self.engine = Engine::init(&self.scenario, seed)?;
        Ok(self.observe())
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut Engine {
        &mut self.engine
    }

    pub fn is_done(&self) -> bool {
        self.engine.is_done()
    }

    pub fn observe(&self) -> Observation {
        let c = self.engine.config();
        Observation::encode(self.engine.world(), c.max_facilities, c.max_personnel, c.management_cadence)
    }

    pub fn decode(&self, action: &EncodedAction) -> ExternalAction {
        action.decode(&self.engine.view())
    }

    pub fn step(&mut self, actions: &ActionSet) -> Result<Transition, EngineError> {
        let result = self.engine.step(actions)?;
        Ok(Transition {
            observation: self.observe(),
            reward: -result.metrics.nsw,
            done: result.done,
            events: result.events,
            metrics: result.metrics,
        })
    }

    pub fn step_encoded(&mut self, action: &EncodedAction) -> Result<Transition, EngineError> {
        let actions = ActionSet::from(self.decode(action));
        self.step(&actions)
    }
}
