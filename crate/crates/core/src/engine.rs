//! Time-stepped discrete-event engine.
//!
//! Each call to [`Engine::step`] runs the fixed phase order:
//!
//! 1. facility flux (enter / exit) due this step
//! 2. service-request arrivals
//! 3. dispatch assignments
//! 4. staffing change + positioning resolution, queued with its delay
//! 5. pending staffing changes due this step
//! 6. travel
//! 7. service completions
//! 8. rolling windows, demand scores and metrics
//! 9. clock advance
//!
//! Actions are validated against the state the agent observed, before any
//! mutation, so a Strict rejection leaves the world untouched.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::{ActionSet, Assignment, FacilityWeight, Positioning};
use crate::env::resolve_positioning;
use crate::error::{ConfigError, EngineError};
use crate::metrics::{
    self, nash_social_welfare, workforce_cost, EpisodeAccumulator, MetricsConfig, MetricsReport,
};
use crate::model::{
    sample_poisson_interarrival, Activity, DistanceMetric, Expertise, Facility, FacilityId, Location,
    PendingStaffChange, Personnel, PersonnelId, ServiceRequest, StaffChangeKind,
    StaffTarget,
};
use crate::policies::{demand_score, DEFAULT_DEMAND_ALPHA};
use crate::scenario::ScenarioConfig;
use crate::world::{WorldState, WorldView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    /// Any invalid part aborts the step.
    Strict,
    /// Invalid parts are dropped and recorded as violation events.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalMode {
    /// One Poisson clock; each arrival picks a uniformly random
    /// request-free facility.
    Global,
    /// One Poisson clock per facility; an arrival at a facility that
    /// already has an open request is dropped.
    #[default]
    PerFacility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub service_interarrival_mean: f64,
    pub facility_flux_interarrival_mean: f64,
    pub base_repair_rate: f64,
    pub service_duration: u64,
    pub travel_speed: f64,
    pub onboarding_delay: u64,
    pub offboarding_delay: u64,
    pub max_facilities: usize,
    pub max_personnel: usize,
    /// Management actions are accepted only when `clock % cadence == 0`.
    pub management_cadence: u64,
    pub action_validation: ValidationMode,
    pub arrival_mode: ArrivalMode,
    pub distance_metric: DistanceMetric,
    /// Gaussian spread used when resolving heat-map positioning weights.
    pub positioning_sigma: f64,
    pub service_arrivals: bool,
    pub facility_flux: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            service_interarrival_mean: 40.0,
            facility_flux_interarrival_mean: 100.0,
            base_repair_rate: 0.7,
            service_duration: 5,
            travel_speed: 5.0,
            onboarding_delay: 20,
            offboarding_delay: 10,
            max_facilities: 50,
            max_personnel: 50,
            management_cadence: 25,
            action_validation: ValidationMode::Lenient,
            arrival_mode: ArrivalMode::PerFacility,
            distance_metric: DistanceMetric::Euclidean,
            positioning_sigma: 3.0,
            service_arrivals: true,
            facility_flux: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(format!("engine.{key}"), format!("must be positive, got {v}")))
            }
        };
        positive("service_interarrival_mean", self.service_interarrival_mean)?;
        positive("facility_flux_interarrival_mean", self.facility_flux_interarrival_mean)?;
        positive("travel_speed", self.travel_speed)?;
        if !(self.base_repair_rate > 0.0 && self.base_repair_rate <= 1.0) {
            return Err(ConfigError::new("engine.base_repair_rate", "must lie in (0, 1]"));
        }
        if self.service_duration == 0 {
            return Err(ConfigError::new("engine.service_duration", "must be at least 1"));
        }
        if self.max_facilities == 0 {
            return Err(ConfigError::new("engine.max_facilities", "must be at least 1"));
        }
        if self.max_personnel == 0 {
            return Err(ConfigError::new("engine.max_personnel", "must be at least 1"));
        }
        if self.management_cadence == 0 {
            return Err(ConfigError::new("engine.management_cadence", "must be at least 1"));
        }
        if !(self.positioning_sigma >= 0.0 && self.positioning_sigma.is_finite()) {
            return Err(ConfigError::new("engine.positioning_sigma", "must be non-negative"));
        }
        Ok(())
    }

    pub fn staffing_delay(&self, kind: StaffChangeKind) -> u64 {
        match kind {
            StaffChangeKind::Hire => self.onboarding_delay,
            StaffChangeKind::Fire => self.offboarding_delay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationReason {
    UnknownFacility,
    NoOpenRequest,
    FacilityAlreadyAssigned,
    UnknownPersonnel,
    PersonnelUnavailable,
    DoubleDispatch,
    DuplicateFacility,
    InvalidManagementCode,
    OffTurnManagement,
    FireBelowFloor,
    PositioningMismatch,
    InvalidFireTarget,
    TargetOutOfGrid,
    UnknownWeightFacility,
    WeightOutOfRange,
}

/// One rejected part of an action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub reason: ViolationReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personnel: Option<PersonnelId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facility: Option<FacilityId>,
}

impl Violation {
    pub fn new(reason: ViolationReason) -> Self {
        Self {
            reason,
            personnel: None,
            facility: None,
        }
    }

    pub fn assignment(reason: ViolationReason, a: Assignment) -> Self {
        Self {
            reason,
            personnel: Some(a.personnel),
            facility: Some(a.facility),
        }
    }

    pub fn with_personnel(mut self, id: PersonnelId) -> Self {
        self.personnel = Some(id);
        self
    }

    pub fn with_facility(mut self, id: FacilityId) -> Self {
        self.facility = Some(id);
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.reason)?;
        match (self.personnel, self.facility) {
            (Some(p), Some(fac)) => write!(f, " (assignment {p} -> {fac})"),
            (Some(p), None) => write!(f, " ({p})"),
            (None, Some(fac)) => write!(f, " ({fac})"),
            (None, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    FacilityEntered { facility: FacilityId },
    FacilityEntryDropped,
    FacilityExited { facility: FacilityId },
    FacilityExitDropped,
    RequestCancelled { facility: FacilityId },
    AssignmentAborted { personnel: PersonnelId, facility: FacilityId },
    RequestOpened { facility: FacilityId },
    ArrivalDropped {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        facility: Option<FacilityId>,
    },
    Dispatched { personnel: PersonnelId, facility: FacilityId },
    DispatchCancelled { personnel: PersonnelId, facility: FacilityId },
    StaffChangeQueued {
        change: StaffChangeKind,
        expertise: Expertise,
        target: StaffTarget,
        execute_at: u64,
    },
    StaffChangeDropped { change: StaffChangeKind, expertise: Expertise },
    HireExecuted { personnel: PersonnelId, expertise: Expertise },
    HireDropped { expertise: Expertise },
    FireExecuted { personnel: PersonnelId, deferred: bool },
    FireDropped {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        personnel: Option<PersonnelId>,
    },
    ArrivedAtFacility { personnel: PersonnelId, facility: FacilityId },
    RepairFailed { facility: FacilityId, personnel: PersonnelId },
    RequestClosed { facility: FacilityId, personnel: PersonnelId },
    ArrivedHome { personnel: PersonnelId },
    PersonnelRemoved { personnel: PersonnelId },
    Violation(Violation),
    EmptyWorkforce,
}

impl Event {
    /// Canonical ordering key: event kind, then primary entity id.
    pub fn sort_key(&self) -> (u8, u32) {
        use Event::*;
        match self {
            FacilityEntered { facility } => (0, facility.0),
            FacilityEntryDropped => (1, 0),
            FacilityExited { facility } => (2, facility.0),
            FacilityExitDropped => (3, 0),
            RequestCancelled { facility } => (4, facility.0),
            AssignmentAborted { personnel, .. } => (5, personnel.0),
            RequestOpened { facility } => (6, facility.0),
            ArrivalDropped { facility } => (7, facility.map_or(0, |f| f.0)),
            Dispatched { personnel, .. } => (8, personnel.0),
            DispatchCancelled { personnel, .. } => (9, personnel.0),
            StaffChangeQueued { .. } => (10, 0),
            StaffChangeDropped { .. } => (11, 0),
            HireExecuted { personnel, .. } => (12, personnel.0),
            HireDropped { .. } => (13, 0),
            FireExecuted { personnel, .. } => (14, personnel.0),
            FireDropped { personnel } => (15, personnel.map_or(0, |p| p.0)),
            ArrivedAtFacility { personnel, .. } => (16, personnel.0),
            RepairFailed { facility, .. } => (17, facility.0),
            RequestClosed { facility, .. } => (18, facility.0),
            ArrivedHome { personnel } => (19, personnel.0),
            PersonnelRemoved { personnel } => (20, personnel.0),
            Violation(v) => (
                21,
                v.personnel.map(|p| p.0).or(v.facility.map(|f| f.0)).unwrap_or(0),
            ),
            EmptyWorkforce => (22, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceOutcome {
    RepairedAndDeparting,
    FailedAndDeparting,
}

/// Explicit initial facility locations and personnel homes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Layout {
    pub facilities: Vec<Location>,
    pub personnel: Vec<(Location, Expertise)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Clock value the step ran at.
    pub t: u64,
    pub events: Vec<Event>,
    pub metrics: MetricsReport,
    pub done: bool,
}

struct ValidatedManagement {
    kind: StaffChangeKind,
    expertise: Expertise,
    positioning: Positioning,
}

struct Plan {
    dispatch: Vec<Assignment>,
    management: Option<ValidatedManagement>,
    violations: Vec<Violation>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    metrics_config: MetricsConfig,
    horizon: u64,
    world: WorldState,
    accumulator: EpisodeAccumulator,
    last_report: MetricsReport,
    injected: Vec<FacilityId>,
}

impl Engine {
    /// Builds the clock-0 world for `scenario` with master seed `seed`.
    pub fn init(scenario: &ScenarioConfig, seed: u64) -> Result<Self, ConfigError> {
        Self::build(scenario, seed, None)
    }

    /// Like [`Engine::init`] but with a fixed initial layout; the initial
    /// counts of `scenario` are ignored and no layout draws are made.
    pub fn with_layout(scenario: &ScenarioConfig, seed: u64, layout: &Layout) -> Result<Self, ConfigError> {
        Self::build(scenario, seed, Some(layout))
    }

    fn build(scenario: &ScenarioConfig, seed: u64, layout: Option<&Layout>) -> Result<Self, ConfigError> {
        match layout {
            Some(l) => ScenarioConfig {
                initial_facilities: l.facilities.len(),
                initial_personnel: l.personnel.len(),
                ..scenario.clone()
            }
            .validate()?,
            None => scenario.validate()?,
        }
        let config = scenario.engine.clone();
        let metrics_config = scenario.metrics;
        let grid = scenario.grid;
        let mut world = WorldState::new(grid, seed);

        let layout = match layout {
            Some(l) => {
                if l.facilities.iter().chain(l.personnel.iter().map(|(h, _)| h)).any(|&loc| !grid.contains(loc)) {
                    return Err(ConfigError::new("layout", "location outside the grid"));
                }
                l.clone()
            }
            None => {
                let mut l = Layout::default();
                for _ in 0..scenario.initial_facilities {
                    l.facilities.push(grid.sample_uniform(&mut world.rng.arrivals));
                }
                for _ in 0..scenario.initial_personnel {
                    let home = grid.sample_uniform(&mut world.rng.arrivals);
                    l.personnel.push((home, Expertise::sample(&mut world.rng.arrivals)));
                }
                l
            }
        };
        for (slot, &loc) in layout.facilities.iter().enumerate() {
            let id = world.alloc_facility_id();
            world
                .facilities
                .push(Facility::new(id, slot, loc, metrics_config.window_afd, 0));
        }
        for (slot, &(home, expertise)) in layout.personnel.iter().enumerate() {
            let id = world.alloc_personnel_id();
            world.personnel.push(Personnel::new(
                id,
                slot,
                home,
                expertise,
                metrics_config.window_pur,
                0,
            ));
        }

        world.next_service_arrival = u64::MAX;
        if config.service_arrivals {
            match config.arrival_mode {
                ArrivalMode::Global => {
                    world.next_service_arrival = sample_poisson_interarrival(
                        &mut world.rng.arrivals,
                        config.service_interarrival_mean,
                    )?;
                }
                ArrivalMode::PerFacility => {
                    for f in &mut world.facilities {
                        f.next_arrival_at = Some(sample_poisson_interarrival(
                            &mut world.rng.arrivals,
                            config.service_interarrival_mean,
                        )?);
                    }
                }
            }
        }
        world.next_flux = if config.facility_flux {
            sample_poisson_interarrival(&mut world.rng.arrivals, config.facility_flux_interarrival_mean)?
        } else {
            u64::MAX
        };

        let mut engine = Self {
            config,
            metrics_config,
            horizon: scenario.horizon,
            world,
            accumulator: EpisodeAccumulator::default(),
            injected: Vec::new(),
            last_report: MetricsReport {
                t: 0,
                wc_step: 0.0,
                wc_cumulative: 0.0,
                pur_per_personnel: Vec::new(),
                pur_mean: 0.0,
                afd_per_facility: Vec::new(),
                afd_mean: 0.0,
                nsw: 0.0,
            },
        };
        engine.last_report = engine.snapshot(0, 0.0);
        Ok(engine)
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn metrics_config(&self) -> &MetricsConfig {
        &self.metrics_config
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.world.clock >= self.horizon
    }

    pub fn last_report(&self) -> &MetricsReport {
        &self.last_report
    }

    pub fn accumulator(&self) -> &EpisodeAccumulator {
        &self.accumulator
    }

    pub fn view(&self) -> WorldView<'_> {
        self.world.view(self.config.distance_metric)
    }

    /// Read-only view plus the built-in policy stream.
    pub fn policy_context(&mut self) -> (WorldView<'_>, &mut rand_chacha::ChaCha8Rng) {
        let w = &mut self.world;
        let view = WorldView {
            clock: w.clock,
            grid: w.grid,
            metric: self.config.distance_metric,
            facilities: &w.facilities,
            personnel: &w.personnel,
            pending: &w.pending,
        };
        (view, &mut w.rng.policy)
    }

    pub fn management_turn(&self) -> bool {
        crate::env::management_turn(self.world.clock, self.config.management_cadence)
    }

    pub fn step(&mut self, actions: &ActionSet) -> Result<StepResult, EngineError> {
        if self.is_done() {
            return Err(EngineError::EpisodeDone(self.world.clock));
        }
        let plan = self.validate(actions)?;
        let clock = self.world.clock;
        let mut events: Vec<Event> = plan.violations.into_iter().map(Event::Violation).collect();
        let mut opened = std::mem::take(&mut self.injected);
        let mut closed = Vec::new();

        // 1. facility flux
        if self.config.facility_flux && clock == self.world.next_flux {
            events.extend(self.apply_facility_flux());
            let gap = sample_poisson_interarrival(
                &mut self.world.rng.arrivals,
                self.config.facility_flux_interarrival_mean,
            )
            .map_err(|e| EngineError::Invariant(e.to_string()))?;
            self.world.next_flux = clock + gap;
        }

        // 2. service arrivals
        if self.config.service_arrivals {
            self.service_arrivals(&mut events, &mut opened)?;
        }

        // 3. dispatch
        for a in plan.dispatch {
            let Some(fi) = self.world.facility_index(a.facility) else {
                events.push(Event::DispatchCancelled {
                    personnel: a.personnel,
                    facility: a.facility,
                });
                continue;
            };
            let pi = self
                .world
                .personnel_index(a.personnel)
                .ok_or_else(|| EngineError::Invariant(format!("{} vanished", a.personnel)))?;
            self.world.facilities[fi].assigned_personnel = Some(a.personnel);
            let p = &mut self.world.personnel[pi];
            p.activity = Activity::TravelingToFacility;
            p.assigned_facility = Some(a.facility);
            events.push(Event::Dispatched {
                personnel: a.personnel,
                facility: a.facility,
            });
        }

        // 4. staffing change with positioning
        if let Some(m) = plan.management {
            events.push(self.enqueue_staffing(m));
        }

        // 5. due staffing changes
        let (due, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.world.pending)
            .into_iter()
            .partition(|c| c.execute_at == clock);
        self.world.pending = rest;
        for change in due {
            events.extend(self.execute_staffing(change));
        }

        // 6. travel
        let workers = self.advance_travel(&mut events)?;

        // 7. service completions
        let finishing: Vec<PersonnelId> = self
            .world
            .personnel
            .iter()
            .filter(|p| p.activity == Activity::Servicing && p.service_ends_at == Some(clock))
            .map(|p| p.id)
            .collect();
        for pid in finishing {
            let facility = self.world.personnel_by_id(pid).and_then(|p| p.assigned_facility);
            let outcome = self.resolve_service(pid)?;
            let facility = facility.ok_or_else(|| EngineError::Invariant(format!("{pid} lost facility")))?;
            events.push(match outcome {
                ServiceOutcome::RepairedAndDeparting => {
                    closed.push(facility);
                    Event::RequestClosed { facility, personnel: pid }
                }
                ServiceOutcome::FailedAndDeparting => Event::RepairFailed { facility, personnel: pid },
            });
        }

        // 8. windows and metrics
        for p in &mut self.world.personnel {
            p.utilization.push(workers.binary_search(&p.id).is_ok());
        }
        for f in &mut self.world.facilities {
            f.downtime.push(f.request.is_some() || closed.contains(&f.id));
            f.request_history.push(opened.contains(&f.id));
            f.demand_stat = demand_score(f, DEFAULT_DEMAND_ALPHA);
        }
        if self.world.personnel.is_empty() {
            events.push(Event::EmptyWorkforce);
        }
        let wc_cumulative = self.accumulator.wc_cumulative + workforce_cost(self.world.personnel.len());
        let report = self.snapshot(clock, wc_cumulative);
        self.accumulator.record(&report);
        self.last_report = report.clone();

        // 9. clock
        self.world.clock += 1;

        events.sort_by_key(Event::sort_key);
        Ok(StepResult {
            t: clock,
            events,
            metrics: report,
            done: self.is_done(),
        })
    }

    fn snapshot(&self, t: u64, wc_cumulative: f64) -> MetricsReport {
        let pur_per_personnel: Vec<f64> = self
            .world
            .personnel
            .iter()
            .map(|p| metrics::personnel_utilization(&p.utilization))
            .collect();
        let afd_per_facility: Vec<f64> = self
            .world
            .facilities
            .iter()
            .filter(|f| f.operational)
            .map(|f| metrics::facility_downtime(&f.downtime))
            .collect();
        let wc_step = workforce_cost(self.world.personnel.len());
        let pur_mean = metrics::mean(&pur_per_personnel);
        let afd_mean = metrics::mean(&afd_per_facility);
        MetricsReport {
            t,
            wc_step,
            wc_cumulative,
            nsw: nash_social_welfare(wc_step, self.metrics_config.pur_factor(pur_mean), afd_mean),
            pur_per_personnel,
            pur_mean,
            afd_per_facility,
            afd_mean,
        }
    }

    fn reject(&self, v: Violation, out: &mut Vec<Violation>) -> Result<(), EngineError> {
        match self.config.action_validation {
            ValidationMode::Strict => Err(EngineError::Validation(v)),
            ValidationMode::Lenient => {
                out.push(v);
                Ok(())
            }
        }
    }

    fn validate(&self, actions: &ActionSet) -> Result<Plan, EngineError> {
        let mut violations = Vec::new();
        for v in &actions.rejected {
            self.reject(v.clone(), &mut violations)?;
        }

        let view = self.view();
        let mut requested = actions.dispatch.clone();
        requested.sort_by_key(|a| (a.facility, a.personnel));
        let mut used_personnel = BTreeSet::new();
        let mut used_facilities = BTreeSet::new();
        let mut dispatch = Vec::new();
        for a in requested {
            let reason = match (view.facility(a.facility), view.personnel_by_id(a.personnel)) {
                (None, _) => Some(ViolationReason::UnknownFacility),
                (Some(f), _) if f.request.is_none() || !f.operational => {
                    Some(ViolationReason::NoOpenRequest)
                }
                (Some(f), _) if f.assigned_personnel.is_some() => {
                    Some(ViolationReason::FacilityAlreadyAssigned)
                }
                (_, None) => Some(ViolationReason::UnknownPersonnel),
                (_, Some(p)) if !p.is_available() => Some(ViolationReason::PersonnelUnavailable),
                _ if used_personnel.contains(&a.personnel) => Some(ViolationReason::DoubleDispatch),
                _ if used_facilities.contains(&a.facility) => Some(ViolationReason::DuplicateFacility),
                _ => None,
            };
            match reason {
                Some(r) => self.reject(Violation::assignment(r, a), &mut violations)?,
                None => {
                    used_personnel.insert(a.personnel);
                    used_facilities.insert(a.facility);
                    dispatch.push(a);
                }
            }
        }

        let management = match actions.management.kind() {
            None => None,
            Some((kind, expertise)) => {
                self.validate_management(kind, expertise, actions.positioning.as_ref(), &view, &mut violations)?
            }
        };

        Ok(Plan {
            dispatch,
            management,
            violations,
        })
    }

    fn validate_management(
        &self,
        kind: StaffChangeKind,
        expertise: Expertise,
        positioning: Option<&Positioning>,
        view: &WorldView<'_>,
        violations: &mut Vec<Violation>,
    ) -> Result<Option<ValidatedManagement>, EngineError> {
        if !self.management_turn() {
            self.reject(Violation::new(ViolationReason::OffTurnManagement), violations)?;
            return Ok(None);
        }
        if kind == StaffChangeKind::Fire && view.retained_headcount() <= 1 {
            self.reject(Violation::new(ViolationReason::FireBelowFloor), violations)?;
            return Ok(None);
        }
        let positioning = match positioning {
            None => Positioning::Weights(Vec::new()),
            Some(Positioning::Weights(ws)) => {
                let mut kept = Vec::with_capacity(ws.len());
                for w in ws {
                    if view.facility(w.facility).is_none() {
                        self.reject(
                            Violation::new(ViolationReason::UnknownWeightFacility).with_facility(w.facility),
                            violations,
                        )?;
                        continue;
                    }
                    let mut weight = w.weight;
                    if !(0.0..=1.0).contains(&weight) {
                        self.reject(
                            Violation::new(ViolationReason::WeightOutOfRange).with_facility(w.facility),
                            violations,
                        )?;
                        weight = if weight.is_nan() { 0.0 } else { weight.clamp(0.0, 1.0) };
                    }
                    kept.push(FacilityWeight {
                        facility: w.facility,
                        weight,
                    });
                }
                Positioning::Weights(kept)
            }
            Some(Positioning::Target(StaffTarget::Location(loc))) => {
                if kind != StaffChangeKind::Hire {
                    self.reject(Violation::new(ViolationReason::PositioningMismatch), violations)?;
                    return Ok(None);
                }
                let mut loc = *loc;
                if !view.grid.contains(loc) {
                    self.reject(Violation::new(ViolationReason::TargetOutOfGrid), violations)?;
                    loc = view.grid.clamp(loc);
                }
                Positioning::Target(StaffTarget::Location(loc))
            }
            Some(Positioning::Target(StaffTarget::Personnel(id))) => {
                if kind != StaffChangeKind::Fire {
                    self.reject(
                        Violation::new(ViolationReason::PositioningMismatch).with_personnel(*id),
                        violations,
                    )?;
                    return Ok(None);
                }
                if !view.fire_candidates().any(|p| p.id == *id) {
                    self.reject(
                        Violation::new(ViolationReason::InvalidFireTarget).with_personnel(*id),
                        violations,
                    )?;
                    return Ok(None);
                }
                Positioning::Target(StaffTarget::Personnel(*id))
            }
        };
        Ok(Some(ValidatedManagement {
            kind,
            expertise,
            positioning,
        }))
    }

    fn service_arrivals(&mut self, events: &mut Vec<Event>, opened: &mut Vec<FacilityId>) -> Result<(), EngineError> {
        let clock = self.world.clock;
        let mean = self.config.service_interarrival_mean;
        let to_engine = |e: ConfigError| EngineError::Invariant(e.to_string());
        match self.config.arrival_mode {
            ArrivalMode::Global => {
                if clock != self.world.next_service_arrival {
                    return Ok(());
                }
                let pick: f64 = self.world.rng.arrivals.random();
                let candidates: Vec<usize> = (0..self.world.facilities.len())
                    .filter(|&i| {
                        let f = &self.world.facilities[i];
                        f.operational && f.request.is_none()
                    })
                    .collect();
                if candidates.is_empty() {
                    events.push(Event::ArrivalDropped { facility: None });
                } else {
                    let i = candidates[((pick * candidates.len() as f64) as usize).min(candidates.len() - 1)];
                    events.push(self.open_request(i));
                    opened.push(self.world.facilities[i].id);
                }
                let gap = sample_poisson_interarrival(&mut self.world.rng.arrivals, mean).map_err(to_engine)?;
                self.world.next_service_arrival = clock + gap;
            }
            ArrivalMode::PerFacility => {
                for i in 0..self.world.facilities.len() {
                    if self.world.facilities[i].next_arrival_at != Some(clock) {
                        continue;
                    }
                    let f = &self.world.facilities[i];
                    if f.operational && f.request.is_none() {
                        events.push(self.open_request(i));
                        opened.push(self.world.facilities[i].id);
                    } else {
                        events.push(Event::ArrivalDropped { facility: Some(f.id) });
                    }
                    let gap = sample_poisson_interarrival(&mut self.world.rng.arrivals, mean).map_err(to_engine)?;
                    self.world.facilities[i].next_arrival_at = Some(clock + gap);
                }
            }
        }
        Ok(())
    }

    fn open_request(&mut self, index: usize) -> Event {
        let clock = self.world.clock;
        let f = &mut self.world.facilities[index];
        f.request = Some(ServiceRequest {
            facility_id: f.id,
            opened_at: clock,
            visits: 0,
        });
        Event::RequestOpened { facility: f.id }
    }

    /// One facility enters or exits with equal probability.
    ///
    /// Always consumes the same number of draws from the arrivals stream.
    pub fn apply_facility_flux(&mut self) -> Vec<Event> {
        let clock = self.world.clock;
        let rng = &mut self.world.rng.arrivals;
        let coin: f64 = rng.random();
        let location = self.world.grid.sample_uniform(rng);
        let pick: f64 = rng.random();
        let mut events = Vec::new();

        if coin < 0.5 {
            if self.world.facilities.len() >= self.config.max_facilities {
                events.push(Event::FacilityEntryDropped);
                return events;
            }
            let id = self.world.alloc_facility_id();
            let slot = self.world.free_facility_slot();
            let mut facility = Facility::new(id, slot, location, self.metrics_config.window_afd, clock);
            if self.config.service_arrivals && self.config.arrival_mode == ArrivalMode::PerFacility {
                // mean already validated
                let gap = sample_poisson_interarrival(
                    &mut self.world.rng.arrivals,
                    self.config.service_interarrival_mean,
                )
                .unwrap_or(1);
                facility.next_arrival_at = Some(clock + gap);
            }
            self.world.facilities.push(facility);
            events.push(Event::FacilityEntered { facility: id });
        } else {
            let n = self.world.facilities.len();
            if n == 0 {
                events.push(Event::FacilityExitDropped);
                return events;
            }
            let index = ((pick * n as f64) as usize).min(n - 1);
            let facility = self.world.facilities.remove(index);
            if facility.request.is_some() {
                events.push(Event::RequestCancelled { facility: facility.id });
            }
            if let Some(pid) = facility.assigned_personnel {
                if let Some(p) = self.world.personnel_mut(pid) {
                    p.activity = Activity::TravelingHome;
                    p.assigned_facility = None;
                    p.service_ends_at = None;
                }
                events.push(Event::AssignmentAborted {
                    personnel: pid,
                    facility: facility.id,
                });
            }
            events.push(Event::FacilityExited { facility: facility.id });
        }
        events
    }

    fn enqueue_staffing(&mut self, m: ValidatedManagement) -> Event {
        let sigma = self.config.positioning_sigma;
        let target = match m.positioning {
            Positioning::Target(t) => Some(t),
            Positioning::Weights(ws) => {
                let w = &mut self.world;
                let view = WorldView {
                    clock: w.clock,
                    grid: w.grid,
                    metric: self.config.distance_metric,
                    facilities: &w.facilities,
                    personnel: &w.personnel,
                    pending: &w.pending,
                };
                resolve_positioning(&ws, m.kind, m.expertise, &view, &mut w.rng.positioning, sigma)
            }
        };
        let Some(target) = target else {
            return Event::StaffChangeDropped {
                change: m.kind,
                expertise: m.expertise,
            };
        };
        let execute_at = self.world.clock + self.config.staffing_delay(m.kind);
        self.world.pending.push(PendingStaffChange {
            kind: m.kind,
            expertise: m.expertise,
            target,
            issued_at: self.world.clock,
            execute_at,
        });
        Event::StaffChangeQueued {
            change: m.kind,
            expertise: m.expertise,
            target,
            execute_at,
        }
    }

    /// Applies a due hire or fire.
    pub fn execute_staffing(&mut self, change: PendingStaffChange) -> Vec<Event> {
        let clock = self.world.clock;
        match (change.kind, change.target) {
            (StaffChangeKind::Hire, StaffTarget::Location(loc)) => {
                if self.world.personnel.len() >= self.config.max_personnel {
                    return vec![Event::HireDropped {
                        expertise: change.expertise,
                    }];
                }
                let id = self.world.alloc_personnel_id();
                let slot = self.world.free_personnel_slot();
                let home = self.world.grid.clamp(loc);
                self.world.personnel.push(Personnel::new(
                    id,
                    slot,
                    home,
                    change.expertise,
                    self.metrics_config.window_pur,
                    clock,
                ));
                vec![Event::HireExecuted {
                    personnel: id,
                    expertise: change.expertise,
                }]
            }
            (StaffChangeKind::Fire, StaffTarget::Personnel(pid)) => {
                let Some(i) = self.world.personnel_index(pid) else {
                    return vec![Event::FireDropped { personnel: Some(pid) }];
                };
                let p = &mut self.world.personnel[i];
                if p.offboarding {
                    return vec![Event::FireDropped { personnel: Some(pid) }];
                }
                if p.is_idle() {
                    self.world.personnel.remove(i);
                    vec![
                        Event::FireExecuted {
                            personnel: pid,
                            deferred: false,
                        },
                        Event::PersonnelRemoved { personnel: pid },
                    ]
                } else {
                    p.offboarding = true;
                    vec![Event::FireExecuted {
                        personnel: pid,
                        deferred: true,
                    }]
                }
            }
            (StaffChangeKind::Hire, _) => vec![Event::HireDropped {
                expertise: change.expertise,
            }],
            (StaffChangeKind::Fire, _) => vec![Event::FireDropped { personnel: None }],
        }
    }

    /// Moves every non-idle personnel; returns the sorted ids that worked
    /// this step.
    fn advance_travel(&mut self, events: &mut Vec<Event>) -> Result<Vec<PersonnelId>, EngineError> {
        let clock = self.world.clock;
        let speed = self.config.travel_speed;
        let metric = self.config.distance_metric;
        let duration = self.config.service_duration;
        let mut workers = Vec::new();
        let mut leaving = Vec::new();
        let facilities = &self.world.facilities;
        for p in &mut self.world.personnel {
            if p.activity != Activity::Idle {
                workers.push(p.id);
            }
            match p.activity {
                Activity::TravelingToFacility => {
                    let fid = p
                        .assigned_facility
                        .ok_or_else(|| EngineError::Invariant(format!("{} en route nowhere", p.id)))?;
                    let target = facilities
                        .binary_search_by_key(&fid, |f| f.id)
                        .map(|i| facilities[i].location)
                        .map_err(|_| EngineError::Invariant(format!("{} en route to missing {fid}", p.id)))?;
                    let (next, arrived) = metric.advance(p.position, target, speed);
                    p.position = next;
                    if arrived {
                        p.activity = Activity::Servicing;
                        p.service_ends_at = Some(clock + duration);
                        events.push(Event::ArrivedAtFacility {
                            personnel: p.id,
                            facility: fid,
                        });
                    }
                }
                Activity::TravelingHome => {
                    let (next, arrived) = metric.advance(p.position, p.home, speed);
                    p.position = next;
                    if arrived {
                        p.activity = Activity::Idle;
                        events.push(Event::ArrivedHome { personnel: p.id });
                        if p.offboarding {
                            leaving.push(p.id);
                        }
                    }
                }
                Activity::Idle | Activity::Servicing => {}
            }
        }
        if !leaving.is_empty() {
            self.world.personnel.retain(|p| !leaving.contains(&p.id));
            events.extend(leaving.into_iter().map(|personnel| Event::PersonnelRemoved { personnel }));
        }
        Ok(workers)
    }

    /// Ends the visit of a servicing personnel: draws success from the
    /// repairs stream and sends the personnel home either way.
    pub fn resolve_service(&mut self, personnel_id: PersonnelId) -> Result<ServiceOutcome, EngineError> {
        let pi = self
            .world
            .personnel_index(personnel_id)
            .ok_or_else(|| EngineError::Invariant(format!("{personnel_id} does not exist")))?;
        let p = &self.world.personnel[pi];
        if p.activity != Activity::Servicing {
            return Err(EngineError::Invariant(format!("{personnel_id} is not servicing")));
        }
        let fid = p
            .assigned_facility
            .ok_or_else(|| EngineError::Invariant(format!("{personnel_id} services nothing")))?;
        let fi = self
            .world
            .facility_index(fid)
            .ok_or_else(|| EngineError::Invariant(format!("{fid} does not exist")))?;
        let probability = p.expertise.repair_probability(self.config.base_repair_rate);
        let draw: f64 = self.world.rng.repairs.random();
        let repaired = draw < probability;

        let f = &mut self.world.facilities[fi];
        f.assigned_personnel = None;
        if repaired {
            f.request = None;
        } else if let Some(r) = f.request.as_mut() {
            r.visits += 1;
        }
        let p = &mut self.world.personnel[pi];
        p.activity = Activity::TravelingHome;
        p.assigned_facility = None;
        p.service_ends_at = None;
        Ok(if repaired {
            ServiceOutcome::RepairedAndDeparting
        } else {
            ServiceOutcome::FailedAndDeparting
        })
    }

    /// Opens a request at an operational, request-free facility outside the
    /// arrival process. Draws nothing; counts as opened during the next step.
    pub fn inject_request(&mut self, facility: FacilityId) -> Option<Event> {
        let i = self.world.facility_index(facility)?;
        let f = &self.world.facilities[i];
        if !f.operational || f.request.is_some() {
            return None;
        }
        self.injected.push(facility);
        Some(self.open_request(i))
    }
}
