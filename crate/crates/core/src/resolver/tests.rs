use super::*;
use crate::conflict::{LateralClass, SeparationMinima, SpeedClass, VerticalClass};
use crate::geometry::{ExitCondition, LaneDesignation, LaneNetwork, Route};
use crate::plans::{build_nominal_plan, Action, AxisDirection, EntryState, Origin, PerformanceParams};
use crate::state::Snapshot;
use crate::twin::RunConfig;
use crate::units::FlightLevel;

struct Fixture {
    lanes: LaneNetwork,
    minima: SeparationMinima,
    perf: PerformanceParams,
    library: StrategyLibrary,
    params: StrategyParams,
    ensemble: EnsembleConfig,
    thresholds: ClassThresholds,
}

impl Fixture {
    fn new(routes: &[Route]) -> Self {
        Fixture {
            lanes: LaneNetwork::build(routes, 3.5).unwrap(),
            minima: SeparationMinima::default(),
            perf: PerformanceParams::default(),
            library: StrategyLibrary::default(),
            params: StrategyParams::default(),
            ensemble: EnsembleConfig {
                rollouts: 4,
                seed: 7,
                run: RunConfig { horizon_s: 1800.0, ..RunConfig::default() },
                ..EnsembleConfig::default()
            },
            thresholds: ClassThresholds::default(),
        }
    }

    fn resolver(&self, search: SearchParams) -> Resolver<'_> {
        Resolver {
            world: World { lanes: &self.lanes, minima: &self.minima, perf: &self.perf },
            library: &self.library,
            params: &self.params,
            search,
            ensemble: &self.ensemble,
            thresholds: &self.thresholds,
        }
    }

    fn add(&self, plan: &mut AirspacePlan, snap: &mut Snapshot, cs: &str, route: &str, fl: u32, exit_fix: &str) {
        let e = EntryState {
            callsign: cs.into(),
            route: route.into(),
            entry_level: FlightLevel(fl),
            ground_speed_kt: 450.0,
            along_nm: 0.0,
        };
        let exit = ExitCondition { fix: exit_fix.into(), flight_level: FlightLevel(fl) };
        let fp = build_nominal_plan(&e, &self.lanes, FlightLevel(fl), &exit, &self.perf, plan).unwrap();
        plan.plans.insert(e.callsign.clone(), fp);
        snap.aircraft.insert(e.callsign.clone(), AircraftState::at_entry(&self.lanes, &e).unwrap());
    }
}

/// Two aircraft nose to nose on reciprocal tracks at FL340.
fn head_on() -> (Fixture, AirspacePlan, SimState) {
    let fx = Fixture::new(&[
        Route::from_points("E", &[(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)]).unwrap(),
        Route::from_points("W", &[(200.0, 0.0), (100.0, 0.0), (0.0, 0.0)]).unwrap(),
    ]);
    let mut plan = AirspacePlan::default();
    let mut snap = Snapshot::default();
    fx.add(&mut plan, &mut snap, "AAA1", "E", 340, "E-2");
    fx.add(&mut plan, &mut snap, "BBB2", "W", 340, "W-2");
    (fx, plan, SimState::new(snap, vec![]))
}

/// Perpendicular crossing at the midpoint of both routes, same level.
fn crossing() -> (Fixture, AirspacePlan, SimState) {
    let fx = Fixture::new(&[
        Route::from_points("E", &[(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)]).unwrap(),
        Route::from_points("N", &[(100.0, -100.0), (100.0, 0.0), (100.0, 100.0)]).unwrap(),
    ]);
    let mut plan = AirspacePlan::default();
    let mut snap = Snapshot::default();
    fx.add(&mut plan, &mut snap, "AAA1", "E", 340, "E-2");
    fx.add(&mut plan, &mut snap, "BBB2", "N", 340, "N-2");
    (fx, plan, SimState::new(snap, vec![]))
}

#[test]
fn bundled_library_covers_every_class() {
    use crate::conflict::ConflictClass;
    let lib = StrategyLibrary::default();
    for class in ConflictClass::all() {
        assert!(!lib.get(&class).is_empty(), "{class}");
    }
    let ho = ConflictClass::new(VerticalClass::LL, LateralClass::HO, SpeedClass::Similar);
    assert_eq!(lib.get(&ho)[0], StrategyKind::LateralSameSide);
    let cr = ConflictClass::new(VerticalClass::LL, LateralClass::CR, SpeedClass::Similar);
    assert_eq!(lib.get(&cr)[0], StrategyKind::LevelDescent);
    let overtake = lib.get(&ConflictClass::new(VerticalClass::LL, LateralClass::P, SpeedClass::AC1Faster));
    let rank = |k| overtake.iter().position(|x| *x == k).unwrap();
    assert!(rank(StrategyKind::MatchSpeedTrail) < rank(StrategyKind::LevelDescent));
    assert!(rank(StrategyKind::LateralOpposite) < rank(StrategyKind::LevelDescent));
}

#[test]
fn library_rejects_incomplete_tables() {
    let err = StrategyLibrary::from_json(r#"{"schema_version": 1, "classes": []}"#).unwrap_err();
    assert!(matches!(err, ResolveError::Library(m) if m.contains("no row")));
    let err = StrategyLibrary::from_json(r#"{"schema_version": 2, "classes": []}"#).unwrap_err();
    assert!(matches!(err, ResolveError::Library(m) if m.contains("schema")));
    assert!(StrategyLibrary::from_json("not json").is_err());
}

#[test]
fn head_on_is_solved_by_same_side_offsets() {
    let (fx, plan, start) = head_on();
    let res = resolve_airspace(&fx.resolver(SearchParams::default()), &plan, &start).unwrap();
    assert!(res.is_solved());
    assert!(!res.root_tsr.is_empty());
    assert!(res.final_tsr.is_empty());
    let root = &res.trace.nodes[0];
    let c = root.conflict.as_ref().unwrap();
    assert_eq!(c.class.lateral, LateralClass::HO);
    assert_eq!(res.applied.len(), 1);
    assert_eq!(res.applied[0].candidate.kind, StrategyKind::LateralSameSide);
    for fp in res.plan.plans.values() {
        assert!(fp.lateral.iter().any(|pa| matches!(pa.action, Action::FlyLane { lane: LaneDesignation::Left, .. })));
        assert_eq!(fp.manoeuvres.len(), 1);
    }
    assert_eq!(res.plan.constraints.len(), 2);
    assert!(res.plan.revision > plan.revision);
}

#[test]
fn crossing_is_solved_by_a_level_change() {
    let (fx, plan, start) = crossing();
    let res = resolve_airspace(&fx.resolver(SearchParams::default()), &plan, &start).unwrap();
    assert!(res.is_solved());
    assert_eq!(res.applied[0].conflict.class.lateral, LateralClass::CR);
    assert_eq!(res.applied[0].candidate.kind, StrategyKind::LevelDescent);
    let moved: Vec<_> = res.plan.plans.values().filter(|fp| !fp.manoeuvres.is_empty()).collect();
    assert_eq!(moved.len(), 1);
    assert!(moved[0].vertical.iter().any(|pa| pa.action == Action::DescendTo { level: FlightLevel(330) }));
}

#[test]
fn depth_zero_forces_a_fallback_on_distinct_free_levels() {
    let (fx, plan, start) = head_on();
    let search = SearchParams { d_max: 0, ..SearchParams::default() };
    let res = resolve_airspace(&fx.resolver(search), &plan, &start).unwrap();
    let ResolutionOutcome::Fallback { alert } = &res.outcome else { panic!("expected fallback") };
    assert!(!alert.escalated);
    assert_eq!(alert.assignments.len(), 2);
    let to: Vec<_> = alert.assignments.iter().map(|a| a.to).collect();
    assert_eq!(to, vec![FlightLevel(350), FlightLevel(330)]);
    assert_eq!(res.trace.nodes[0].outcome, NodeOutcome::DepthLimit);
    for a in &alert.assignments {
        let fp = &res.plan.plans[&a.callsign];
        assert!(fp.exit_abandoned);
        assert!(fp.vertical.iter().all(|pa| pa.origin == Origin::Fallback));
    }
    assert!(res.final_tsr.is_empty());
}

#[test]
fn fallback_escalates_without_two_free_levels() {
    let (mut fx, plan, start) = head_on();
    fx.params.level_floor = FlightLevel(340);
    fx.params.level_ceiling = FlightLevel(340);
    let search = SearchParams { d_max: 0, ..SearchParams::default() };
    let res = resolve_airspace(&fx.resolver(search), &plan, &start).unwrap();
    let ResolutionOutcome::Fallback { alert } = &res.outcome else { panic!("expected fallback") };
    assert!(alert.escalated);
    assert_eq!(res.plan.plans, plan.plans);
}

#[test]
fn node_budget_stops_the_search() {
    let (fx, plan, start) = head_on();
    let search = SearchParams { node_budget: 1, ..SearchParams::default() };
    let res = resolve_airspace(&fx.resolver(search), &plan, &start).unwrap();
    assert!(!res.is_solved());
    assert_eq!(res.trace.nodes[0].outcome, NodeOutcome::Budget);
}

#[test]
fn constraints_filter_reversing_candidates() {
    let (fx, mut plan, start) = head_on();
    plan.register_constraint(AxisConstraint {
        callsign: "AAA1".into(),
        axis: Axis::Lateral,
        direction: AxisDirection::Right,
        release: crate::plans::Condition::AircraftPassedLaterally { other: "BBB2".into() },
        source: None,
    });
    let res = resolve_airspace(&fx.resolver(SearchParams::default()), &plan, &start).unwrap();
    let root = &res.trace.nodes[0];
    assert!(root.filtered_out.iter().any(|c| c.label.contains("AAA1 Left")));
    assert!(root.candidates.iter().all(|c| !c.label.contains("AAA1 Left")));
    assert!(res.is_solved());
}

#[test]
fn attribution_requires_the_source_rollout() {
    let (fx, plan, start) = head_on();
    let r = fx.resolver(SearchParams::default());
    let rollouts = simulate_ensemble(&r.world, &plan, &start, r.ensemble).unwrap();
    let tsr = detect(&rollouts, r.world.minima, r.thresholds);
    let c = earliest_conflict(&tsr).unwrap();
    let causal = attribute_cause(c, &rollouts).unwrap();
    for cs in [&c.pair.0, &c.pair.1] {
        let by_axis = &causal[cs];
        let fp = &plan.plans[cs];
        assert_eq!(fp.find(by_axis[&Axis::Lateral]).unwrap().0, Axis::Lateral);
        assert_eq!(fp.find(by_axis[&Axis::Vertical]).unwrap().0, Axis::Vertical);
    }
    let mut orphan = c.clone();
    orphan.pair.0 = "ZZZ9".into();
    assert!(matches!(attribute_cause(&orphan, &rollouts), Err(ResolveError::Attribution { .. })));
}

#[test]
fn applied_strategy_keeps_chains_linked() {
    let (fx, plan, start) = head_on();
    let res = resolve_airspace(&fx.resolver(SearchParams::default()), &plan, &start).unwrap();
    for fp in res.plan.plans.values() {
        for axis in Axis::ALL {
            let chain = fp.chain(axis);
            for w in chain.windows(2) {
                if matches!(w[0].origin, Origin::Manoeuvre { .. }) {
                    assert_eq!(w[1].trigger, w[0].completion);
                }
            }
        }
    }
    let ids: Vec<_> = res.plan.plans.values().flat_map(|fp| fp.actions().map(|pa| pa.id)).collect();
    let unique: std::collections::BTreeSet<_> = ids.iter().collect();
    assert_eq!(ids.len(), unique.len());
    assert!(ids.iter().all(|id| id.0 < res.plan.next_id));
}
