mod common;

use common::*;
use wfdes_core::action::{ActionSet, Assignment, ManagementAction, Positioning};
use wfdes_core::engine::{Engine, Event, ValidationMode, ViolationReason};
use wfdes_core::model::{Activity, Expertise, FacilityId, PersonnelId, StaffTarget};
use wfdes_core::{EngineError, ScenarioConfig};

fn assign(p: u32, f: u32) -> Assignment {
    Assignment {
        personnel: PersonnelId(p),
        facility: FacilityId(f),
    }
}

fn run_noop(engine: &mut Engine, steps: usize) -> Vec<Event> {
    let mut events = Vec::new();
    for _ in 0..steps {
        events.extend(engine.step(&ActionSet::noop()).unwrap().events);
    }
    events
}

#[test]
fn init_is_reproducible_and_idle() {
    let s = ScenarioConfig::default();
    let a = Engine::init(&s, 7).unwrap();
    let b = Engine::init(&s, 7).unwrap();
    assert_eq!(a.world(), b.world());
    assert_eq!(a.world().personnel.len(), 25);
    assert_eq!(a.world().facilities.len(), 25);
    for p in &a.world().personnel {
        assert_eq!(p.activity, Activity::Idle);
        assert_eq!(p.position, p.home);
    }
    for f in &a.world().facilities {
        assert!(f.operational);
        assert!(f.request.is_none());
    }
    assert!(a.world().next_service_arrival >= 1);
    assert!(a.world().next_flux >= 1);
}

#[test]
fn init_rejects_oversized_counts() {
    let mut s = ScenarioConfig::default();
    s.initial_facilities = 51;
    assert_eq!(Engine::init(&s, 0).unwrap_err().key, "initial_facilities");
}

#[test]
fn init_expertise_prior() {
    let s = ScenarioConfig::default();
    let mut counts = [0usize; 3];
    for seed in 0..10_000 {
        for p in &Engine::init(&s, seed).unwrap().world().personnel {
            counts[p.expertise.index()] += 1;
        }
    }
    let total = counts.iter().sum::<usize>() as f64;
    for (c, want) in counts.iter().zip([0.25, 0.5, 0.25]) {
        assert!((*c as f64 / total - want).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn travel_kinematics() {
    let s = quiet(ValidationMode::Strict);
    let mut e = scripted(&s, &layout(&[(10.0, 0.0)], &[(0.0, 0.0)]));
    e.inject_request(FacilityId(0)).unwrap();
    let r = e.step(&ActionSet::dispatch_only(vec![assign(0, 0)])).unwrap();
    assert!(r.events.contains(&Event::Dispatched {
        personnel: PersonnelId(0),
        facility: FacilityId(0)
    }));
    let p = &e.world().personnel[0];
    assert_eq!((p.position.x, p.position.y), (1.0, 0.0));
    run_noop(&mut e, 8);
    assert_eq!(e.world().personnel[0].activity, Activity::TravelingToFacility);
    let r = e.step(&ActionSet::noop()).unwrap();
    assert_eq!(r.t, 9);
    assert_eq!(e.world().clock, 10);
    assert_eq!(e.world().personnel[0].activity, Activity::Servicing);
    assert!(r.events.contains(&Event::ArrivedAtFacility {
        personnel: PersonnelId(0),
        facility: FacilityId(0)
    }));
}

#[test]
fn service_completes_after_duration_then_returns_home() {
    let mut s = quiet(ValidationMode::Strict);
    s.engine.base_repair_rate = 1.0;
    let mut e = scripted(&s, &layout(&[(10.0, 0.0)], &[(0.0, 0.0)]));
    e.inject_request(FacilityId(0)).unwrap();
    e.step(&ActionSet::dispatch_only(vec![assign(0, 0)])).unwrap();
    let mut closed_at = None;
    let mut home_at = None;
    for _ in 0..40 {
        let r = e.step(&ActionSet::noop()).unwrap();
        for ev in &r.events {
            match ev {
                Event::RequestClosed { .. } => closed_at = Some(r.t),
                Event::ArrivedHome { .. } => home_at = Some(r.t),
                _ => {}
            }
        }
    }
    assert_eq!(closed_at, Some(14));
    assert_eq!(home_at, Some(24));
    assert!(e.world().facilities[0].request.is_none());
    assert_eq!(e.world().personnel[0].activity, Activity::Idle);
}

#[test]
fn double_dispatch_strict_rejects_whole_step() {
    let s = quiet(ValidationMode::Strict);
    let mut e = scripted(&s, &layout(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)], &[(0.0, 0.0); 4]));
    e.inject_request(FacilityId(1)).unwrap();
    e.inject_request(FacilityId(2)).unwrap();
    let before = e.world().clone();
    let err = e
        .step(&ActionSet::dispatch_only(vec![assign(3, 2), assign(3, 1)]))
        .unwrap_err();
    match err {
        EngineError::Validation(v) => {
            assert_eq!(v.reason, ViolationReason::DoubleDispatch);
            assert_eq!(v.personnel, Some(PersonnelId(3)));
            assert_eq!(v.facility, Some(FacilityId(2)));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(e.world(), &before);
}

#[test]
fn double_dispatch_lenient_keeps_lowest_facility() {
    let s = quiet(ValidationMode::Lenient);
    let mut e = scripted(&s, &layout(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)], &[(0.0, 0.0); 4]));
    e.inject_request(FacilityId(1)).unwrap();
    e.inject_request(FacilityId(2)).unwrap();
    let r = e
        .step(&ActionSet::dispatch_only(vec![assign(3, 2), assign(3, 1)]))
        .unwrap();
    assert!(r.events.contains(&Event::Dispatched {
        personnel: PersonnelId(3),
        facility: FacilityId(1)
    }));
    assert!(r
        .events
        .iter()
        .any(|ev| matches!(ev, Event::Violation(v) if v.reason == ViolationReason::DoubleDispatch)));
    assert_eq!(e.world().facilities[2].assigned_personnel, None);
}

#[test]
fn noop_step_only_advances_windows_and_clock() {
    let s = quiet(ValidationMode::Strict);
    let mut e = scripted(&s, &layout(&[(1.0, 1.0)], &[(0.0, 0.0)]));
    let r = e.step(&ActionSet::noop()).unwrap();
    assert!(r.events.is_empty());
    assert_eq!(e.world().clock, 1);
    assert_eq!(e.world().personnel[0].utilization.len(), 1);
    assert_eq!(e.world().facilities[0].downtime.len(), 1);
    assert_eq!(r.metrics.afd_mean, 0.0);
}

#[test]
fn dispatch_violations() {
    let s = quiet(ValidationMode::Lenient);
    let mut e = scripted(&s, &layout(&[(1.0, 1.0), (2.0, 2.0)], &[(0.0, 0.0); 2]));
    e.inject_request(FacilityId(0)).unwrap();
    let r = e
        .step(&ActionSet::dispatch_only(vec![
            assign(0, 1),
            assign(0, 9),
            assign(7, 0),
        ]))
        .unwrap();
    let reasons: Vec<_> = r
        .events
        .iter()
        .filter_map(|ev| match ev {
            Event::Violation(v) => Some(v.reason),
            _ => None,
        })
        .collect();
    assert_eq!(reasons.len(), 3);
    assert!(reasons.contains(&ViolationReason::NoOpenRequest));
    assert!(reasons.contains(&ViolationReason::UnknownFacility));
    assert!(reasons.contains(&ViolationReason::UnknownPersonnel));

    let r = e.step(&ActionSet::dispatch_only(vec![assign(0, 0)])).unwrap();
    assert!(matches!(r.events[0], Event::Dispatched { .. }));
    let r = e.step(&ActionSet::dispatch_only(vec![assign(1, 0)])).unwrap();
    assert!(r.events.iter().any(
        |ev| matches!(ev, Event::Violation(v) if v.reason == ViolationReason::FacilityAlreadyAssigned)
    ));
}

fn flux_seed(want_exit: bool, s: &ScenarioConfig, l: &wfdes_core::Layout) -> Engine {
    for seed in 0..1000 {
        let mut probe = Engine::with_layout(s, seed, l).unwrap();
        let exits = probe
            .apply_facility_flux()
            .iter()
            .any(|e| matches!(e, Event::FacilityExited { .. }));
        if exits == want_exit {
            return Engine::with_layout(s, seed, l).unwrap();
        }
    }
    unreachable!()
}

#[test]
fn facility_exit_redirects_en_route_personnel() {
    let mut s = quiet(ValidationMode::Strict);
    s.engine.max_facilities = 1;
    let l = layout(&[(10.0, 0.0)], &[(0.0, 0.0)]);
    let mut e = flux_seed(true, &s, &l);
    e.inject_request(FacilityId(0)).unwrap();
    e.step(&ActionSet::dispatch_only(vec![assign(0, 0)])).unwrap();
    let events = e.apply_facility_flux();
    assert_eq!(
        events,
        vec![
            Event::RequestCancelled { facility: FacilityId(0) },
            Event::AssignmentAborted {
                personnel: PersonnelId(0),
                facility: FacilityId(0)
            },
            Event::FacilityExited { facility: FacilityId(0) },
        ]
    );
    let p = &e.world().personnel[0];
    assert_eq!(p.activity, Activity::TravelingHome);
    assert_eq!(p.assigned_facility, None);
    assert!(e.world().facilities.is_empty());
    e.world().check_integrity(1, 50).unwrap();
    let events = run_noop(&mut e, 5);
    assert!(events.contains(&Event::ArrivedHome {
        personnel: PersonnelId(0)
    }));
}

#[test]
fn entry_at_cap_is_dropped() {
    let mut s = quiet(ValidationMode::Strict);
    s.engine.max_facilities = 1;
    let l = layout(&[(10.0, 0.0)], &[(0.0, 0.0)]);
    let mut e = flux_seed(false, &s, &l);
    assert_eq!(e.apply_facility_flux(), vec![Event::FacilityEntryDropped]);
    assert_eq!(e.world().facilities.len(), 1);
}

fn manage(action: ManagementAction, target: StaffTarget) -> ActionSet {
    ActionSet {
        management: action,
        positioning: Some(Positioning::Target(target)),
        ..ActionSet::default()
    }
}

#[test]
fn hire_lands_after_onboarding_delay() {
    let s = quiet(ValidationMode::Strict);
    let mut e = scripted(&s, &layout(&[(1.0, 1.0)], &[(0.0, 0.0)]));
    let r = e
        .step(&manage(
            ManagementAction::Hire(Expertise::Expert),
            StaffTarget::Location(loc(5.0, 5.0)),
        ))
        .unwrap();
    assert!(matches!(r.events[0], Event::StaffChangeQueued { execute_at: 20, .. }));
    run_noop(&mut e, 19);
    assert_eq!(e.world().clock, 20);
    assert_eq!(e.world().personnel.len(), 1);
    let r = e.step(&ActionSet::noop()).unwrap();
    assert_eq!(
        r.events,
        vec![Event::HireExecuted {
            personnel: PersonnelId(1),
            expertise: Expertise::Expert
        }]
    );
    let hired = &e.world().personnel[1];
    assert_eq!((hired.home.x, hired.home.y), (5.0, 5.0));
    assert_eq!(hired.activity, Activity::Idle);
}

#[test]
fn fire_idle_is_immediate_at_execute_time() {
    let s = quiet(ValidationMode::Strict);
    let mut e = scripted(&s, &layout(&[(1.0, 1.0)], &[(0.0, 0.0), (3.0, 3.0)]));
    e.step(&manage(
        ManagementAction::Fire(Expertise::Mid),
        StaffTarget::Personnel(PersonnelId(0)),
    ))
    .unwrap();
    run_noop(&mut e, 9);
    assert_eq!(e.world().personnel.len(), 2);
    let r = e.step(&ActionSet::noop()).unwrap();
    assert_eq!(r.t, 10);
    assert_eq!(
        r.events,
        vec![
            Event::FireExecuted {
                personnel: PersonnelId(0),
                deferred: false
            },
            Event::PersonnelRemoved {
                personnel: PersonnelId(0)
            },
        ]
    );
    assert_eq!(e.world().personnel.len(), 1);
    assert_eq!(r.metrics.wc_step, 0.0);
}

#[test]
fn fire_working_is_deferred_until_home() {
    let s = quiet(ValidationMode::Strict);
    let mut e = scripted(&s, &layout(&[(10.0, 0.0)], &[(0.0, 0.0), (3.0, 3.0)]));
    e.inject_request(FacilityId(0)).unwrap();
    let mut first = manage(
        ManagementAction::Fire(Expertise::Mid),
        StaffTarget::Personnel(PersonnelId(0)),
    );
    first.dispatch = vec![assign(0, 0)];
    e.step(&first).unwrap();
    let mut removed_at = None;
    for _ in 1..40 {
        let r = e.step(&ActionSet::noop()).unwrap();
        if r.t == 10 {
            assert!(r.events.contains(&Event::FireExecuted {
                personnel: PersonnelId(0),
                deferred: true
            }));
        }
        if r.events.contains(&Event::PersonnelRemoved {
            personnel: PersonnelId(0),
        }) {
            removed_at = Some(r.t);
            assert_eq!(r.metrics.wc_step, 0.0);
        } else if removed_at.is_none() {
            assert_eq!(r.metrics.wc_step, 2f64.ln(), "t={}", r.t);
        }
    }
    assert_eq!(removed_at, Some(24));
}

#[test]
fn management_rules() {
    let s = quiet(ValidationMode::Lenient);
    let mut e = scripted(&s, &layout(&[(1.0, 1.0)], &[(0.0, 0.0)]));
    let r = e
        .step(&manage(
            ManagementAction::Fire(Expertise::Mid),
            StaffTarget::Personnel(PersonnelId(0)),
        ))
        .unwrap();
    assert!(r.events.iter().any(|ev| matches!(ev, Event::Violation(v) if v.reason == ViolationReason::FireBelowFloor)));
    let r = e
        .step(&manage(
            ManagementAction::Hire(Expertise::Mid),
            StaffTarget::Location(loc(1.0, 1.0)),
        ))
        .unwrap();
    assert_eq!(r.t, 1);
    assert!(r.events.iter().any(|ev| matches!(ev, Event::Violation(v) if v.reason == ViolationReason::OffTurnManagement)));
    assert!(e.world().pending.is_empty());
}

#[test]
fn out_of_grid_target_is_clamped_in_lenient_mode() {
    let s = quiet(ValidationMode::Lenient);
    let mut e = scripted(&s, &layout(&[(1.0, 1.0)], &[(0.0, 0.0)]));
    let r = e
        .step(&manage(
            ManagementAction::Hire(Expertise::Mid),
            StaffTarget::Location(loc(-4.0, 99.0)),
        ))
        .unwrap();
    assert!(r.events.iter().any(|ev| matches!(ev, Event::Violation(v) if v.reason == ViolationReason::TargetOutOfGrid)));
    let StaffTarget::Location(l) = e.world().pending[0].target else {
        panic!()
    };
    assert!(s.grid.contains(l));
}

#[test]
fn resolve_service_requires_servicing() {
    let s = quiet(ValidationMode::Strict);
    let mut e = scripted(&s, &layout(&[(1.0, 1.0)], &[(0.0, 0.0)]));
    assert!(matches!(
        e.resolve_service(PersonnelId(0)),
        Err(EngineError::Invariant(_))
    ));
}

#[test]
fn horizon_ends_episode() {
    let mut s = ScenarioConfig::default();
    s.horizon = 800;
    let mut e = Engine::init(&s, 1).unwrap();
    let mut last = None;
    for _ in 0..800 {
        last = Some(e.step(&ActionSet::noop()).unwrap());
    }
    let last = last.unwrap();
    assert!(last.done);
    assert_eq!(last.t, 799);
    assert!(matches!(
        e.step(&ActionSet::noop()),
        Err(EngineError::EpisodeDone(800))
    ));
}

#[test]
fn events_are_canonically_ordered() {
    let s = ScenarioConfig::default();
    let spec = wfdes_core::PolicySpec::random();
    let mut e = Engine::init(&s, 3).unwrap();
    for _ in 0..800 {
        let r = policy_step(&mut e, &spec);
        let keys: Vec<_> = r.events.iter().map(Event::sort_key).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
