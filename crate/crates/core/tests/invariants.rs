mod common;

use std::collections::{BTreeMap, VecDeque};

use common::*;
use proptest::prelude::*;
use wfdes_core::action::{ActionSet, Assignment};
use wfdes_core::engine::{Engine, Event, ValidationMode, ViolationReason};
use wfdes_core::model::{Activity, FacilityId, PersonnelId};
use wfdes_core::{EngineError, PolicySpec, ScenarioConfig};

struct Window {
    cap: usize,
    bits: VecDeque<bool>,
}

impl Window {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            bits: VecDeque::new(),
        }
    }
    fn push(&mut self, b: bool) {
        if self.bits.len() == self.cap {
            self.bits.pop_front();
        }
        self.bits.push_back(b);
    }
    fn ratio(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.bits.iter().filter(|b| **b).count() as f64 / self.bits.len() as f64
        }
    }
}

/// Recomputes every personnel/facility window from pre-step state and the
/// event log alone, and checks it against the engine's report.
struct Oracle {
    pur: BTreeMap<PersonnelId, Window>,
    afd: BTreeMap<FacilityId, Window>,
    open: BTreeMap<FacilityId, bool>,
    window_pur: usize,
    window_afd: usize,
}

impl Oracle {
    fn new(engine: &Engine) -> Self {
        let w = engine.world();
        let mc = engine.metrics_config();
        Self {
            pur: w.personnel.iter().map(|p| (p.id, Window::new(mc.window_pur))).collect(),
            afd: w.facilities.iter().map(|f| (f.id, Window::new(mc.window_afd))).collect(),
            open: w.facilities.iter().map(|f| (f.id, f.request.is_some())).collect(),
            window_pur: mc.window_pur,
            window_afd: mc.window_afd,
        }
    }

    fn step(&mut self, busy_before: &BTreeMap<PersonnelId, bool>, events: &[Event]) {
        let mut dispatched = Vec::new();
        let mut opened = Vec::new();
        let mut closed = Vec::new();
        for ev in events {
            match ev {
                Event::HireExecuted { personnel, .. } => {
                    self.pur.insert(*personnel, Window::new(self.window_pur));
                }
                Event::PersonnelRemoved { personnel } => {
                    self.pur.remove(personnel);
                }
                Event::FacilityEntered { facility } => {
                    self.afd.insert(*facility, Window::new(self.window_afd));
                    self.open.insert(*facility, false);
                }
                Event::FacilityExited { facility } => {
                    self.afd.remove(facility);
                    self.open.remove(facility);
                }
                Event::Dispatched { personnel, .. } => dispatched.push(*personnel),
                Event::RequestOpened { facility } => opened.push(*facility),
                Event::RequestClosed { facility, .. } => closed.push(*facility),
                _ => {}
            }
        }
        for (id, w) in &mut self.pur {
            w.push(busy_before.get(id).copied().unwrap_or(false) || dispatched.contains(id));
        }
        for (id, w) in &mut self.afd {
            let was_open = self.open[id] || opened.contains(id);
            w.push(was_open);
            self.open.insert(*id, was_open && !closed.contains(id));
        }
    }
}

fn busy_map(engine: &Engine) -> BTreeMap<PersonnelId, bool> {
    engine
        .world()
        .personnel
        .iter()
        .map(|p| (p.id, p.activity != Activity::Idle))
        .collect()
}

fn check_episode(scenario: &ScenarioConfig, spec: &PolicySpec, seed: u64) -> usize {
    let mut e = Engine::init(scenario, seed).unwrap();
    let mut oracle = Oracle::new(&e);
    let speed = scenario.engine.travel_speed;
    let (max_f, max_p) = (scenario.engine.max_facilities, scenario.engine.max_personnel);
    let mut steps = 0;
    while !e.is_done() {
        let before = e.world().clone();
        let busy = busy_map(&e);
        let r = policy_step(&mut e, spec);
        steps += 1;
        let w = e.world();
        w.check_integrity(max_f, max_p).unwrap_or_else(|m| panic!("seed {seed} t {}: {m}", r.t));

        for p in &w.personnel {
            if let Some(old) = before.personnel_by_id(p.id) {
                let moved = scenario.engine.distance_metric.distance(old.position, p.position);
                assert!(moved <= speed + 1e-9, "teleport {} by {moved}", p.id);
            }
        }

        let count = |f: fn(&Event) -> bool| r.events.iter().filter(|e| f(e)).count() as i64;
        let hires = count(|e| matches!(e, Event::HireExecuted { .. }));
        let removals = count(|e| matches!(e, Event::PersonnelRemoved { .. }));
        let entries = count(|e| matches!(e, Event::FacilityEntered { .. }));
        let exits = count(|e| matches!(e, Event::FacilityExited { .. }));
        assert_eq!(w.personnel.len() as i64, before.personnel.len() as i64 + hires - removals);
        assert_eq!(w.facilities.len() as i64, before.facilities.len() as i64 + entries - exits);

        oracle.step(&busy, &r.events);
        let pur: Vec<f64> = oracle.pur.values().map(Window::ratio).collect();
        let afd: Vec<f64> = oracle.afd.values().map(Window::ratio).collect();
        assert_eq!(pur.len(), r.metrics.pur_per_personnel.len());
        assert_eq!(afd.len(), r.metrics.afd_per_facility.len());
        for (a, b) in pur.iter().zip(&r.metrics.pur_per_personnel) {
            assert!((a - b).abs() < 1e-12, "seed {seed} t {} pur {a} vs {b}", r.t);
        }
        for (a, b) in afd.iter().zip(&r.metrics.afd_per_facility) {
            assert!((a - b).abs() < 1e-12, "seed {seed} t {} afd {a} vs {b}", r.t);
        }
        for f in &w.facilities {
            assert_eq!(oracle.open[&f.id], f.request.is_some());
        }
    }
    steps
}

#[test]
fn structural_invariants_under_random_policies() {
    let mut total = 0;
    for seed in 0..8 {
        total += check_episode(&ScenarioConfig::default(), &PolicySpec::random(), seed);
    }
    let busy = scenario_with(|s| {
        s.grid = wfdes_core::GridConfig::square(16);
        s.engine.service_interarrival_mean = 3.0;
        s.engine.facility_flux_interarrival_mean = 8.0;
        s.engine.management_cadence = 5;
        s.engine.onboarding_delay = 3;
        s.engine.offboarding_delay = 2;
        s.engine.max_facilities = 12;
        s.engine.max_personnel = 10;
        s.initial_facilities = 10;
        s.initial_personnel = 6;
        s.metrics.window_pur = 7;
        s.metrics.window_afd = 9;
    });
    for seed in 0..8 {
        total += check_episode(&busy, &PolicySpec::random(), seed);
    }
    assert!(total >= 10_000, "{total}");
}

#[test]
fn structural_invariants_under_heuristics() {
    for spec in ["", "dispatch=stochastic,mgmt=epsilon,pos=gaussian"] {
        let mut p = PolicySpec::heuristic();
        if !spec.is_empty() {
            p.apply_cli(spec).unwrap();
        }
        for seed in 0..3 {
            check_episode(&ScenarioConfig::default(), &p, seed);
        }
    }
}

fn exogenous(events: &[Event], t: u64) -> Vec<(u64, Event)> {
    events
        .iter()
        .filter(|e| {
            matches!(
                e,
                Event::FacilityEntered { .. }
                    | Event::FacilityExited { .. }
                    | Event::FacilityEntryDropped
                    | Event::FacilityExitDropped
            )
        })
        .map(|e| (t, e.clone()))
        .collect()
}

#[test]
fn exogenous_stream_is_policy_independent() {
    let s = ScenarioConfig::default();
    let mut logs = Vec::new();
    let mut arrivals = Vec::new();
    for spec in [PolicySpec::random(), PolicySpec::heuristic()] {
        let mut e = Engine::init(&s, 42).unwrap();
        let mut log = Vec::new();
        let mut times = Vec::new();
        while !e.is_done() {
            let r = policy_step(&mut e, &spec);
            log.extend(exogenous(&r.events, r.t));
            if r
                .events
                .iter()
                .any(|e| matches!(e, Event::RequestOpened { .. } | Event::ArrivalDropped { .. }))
            {
                times.push(r.t);
            }
        }
        logs.push(log);
        arrivals.push(times);
    }
    assert!(!logs[0].is_empty());
    assert_eq!(logs[0], logs[1]);
    assert_eq!(arrivals[0], arrivals[1]);
}

#[test]
fn run_is_deterministic() {
    let s = ScenarioConfig::default();
    let spec = PolicySpec::random();
    let run = || {
        let mut e = Engine::init(&s, 5).unwrap();
        let mut out = Vec::new();
        while !e.is_done() {
            let r = policy_step(&mut e, &spec);
            out.push((r.events, r.metrics));
        }
        (out, e.world().digest())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strict_mode_rejects_any_double_dispatch(seed in 0u64..10_000, warmup in 0usize..200) {
        let s = scenario_with(|s| {
            s.engine.action_validation = ValidationMode::Strict;
            s.engine.service_interarrival_mean = 4.0;
        });
        let mut e = Engine::init(&s, seed).unwrap();
        let spec = PolicySpec::new(
            wfdes_core::policies::DispatchPolicy::Random,
            wfdes_core::policies::ManagementPolicy::None,
            wfdes_core::policies::PositioningPolicy::Random,
        );
        for _ in 0..warmup {
            policy_step(&mut e, &spec);
        }
        let view = e.view();
        let open: Vec<FacilityId> = view.open_requests().iter().map(|f| f.id).collect();
        let idle: Vec<PersonnelId> = view.available_personnel().iter().map(|p| p.id).collect();
        prop_assume!(open.len() >= 2 && !idle.is_empty());
        let p = idle[seed as usize % idle.len()];
        let actions = ActionSet::dispatch_only(vec![
            Assignment { personnel: p, facility: open[1] },
            Assignment { personnel: p, facility: open[0] },
        ]);
        let before = e.world().clone();
        match e.step(&actions) {
            Err(EngineError::Validation(v)) => {
                prop_assert_eq!(v.reason, ViolationReason::DoubleDispatch);
                prop_assert_eq!(v.facility, Some(open[0].max(open[1])));
            }
            other => prop_assert!(false, "{:?}", other),
        }
        prop_assert_eq!(e.world(), &before);
    }
}
