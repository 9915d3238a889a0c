#![allow(dead_code)]

use wfdes_core::engine::{Engine, Layout, StepResult, ValidationMode};
use wfdes_core::model::{Expertise, Location};
use wfdes_core::policies::{decide, ExternalAction, PolicySpec};
use wfdes_core::ScenarioConfig;

/// No arrivals, no flux, unit speed: only scripted actions change the world.
pub fn quiet(mode: ValidationMode) -> ScenarioConfig {
    let mut s = ScenarioConfig::default();
    s.engine.service_arrivals = false;
    s.engine.facility_flux = false;
    s.engine.action_validation = mode;
    s.engine.travel_speed = 1.0;
    s
}

pub fn loc(x: f64, y: f64) -> Location {
    Location::new(x, y)
}

pub fn layout(facilities: &[(f64, f64)], personnel: &[(f64, f64)]) -> Layout {
    Layout {
        facilities: facilities.iter().map(|&(x, y)| loc(x, y)).collect(),
        personnel: personnel.iter().map(|&(x, y)| (loc(x, y), Expertise::Mid)).collect(),
    }
}

pub fn scripted(scenario: &ScenarioConfig, l: &Layout) -> Engine {
    Engine::with_layout(scenario, 0, l).unwrap()
}

/// One step driven entirely by built-in policies.
pub fn policy_step(engine: &mut Engine, spec: &PolicySpec) -> StepResult {
    let turn = engine.management_turn();
    let (view, rng) = engine.policy_context();
    let actions = decide(spec, &view, rng, turn, ExternalAction::default());
    engine.step(&actions).unwrap()
}

pub fn scenario_with(f: impl FnOnce(&mut ScenarioConfig)) -> ScenarioConfig {
    let mut s = ScenarioConfig::default();
    f(&mut s);
    s
}
