use super::*;
use crate::geometry::{ExitCondition, Route};
use crate::plans::{build_nominal_plan, ActionId, Condition, Origin};
use crate::units::FlightLevel;

struct Fixture {
    lanes: LaneNetwork,
    minima: SeparationMinima,
    perf: PerformanceParams,
}

impl Fixture {
    fn new(routes: &[Route]) -> Self {
        Fixture {
            lanes: LaneNetwork::build(routes, 3.5).unwrap(),
            minima: SeparationMinima::default(),
            perf: PerformanceParams::default(),
        }
    }

    fn world(&self) -> World<'_> {
        World { lanes: &self.lanes, minima: &self.minima, perf: &self.perf }
    }

    fn entry(&self, cs: &str, route: &str, fl: u32, gs: f64) -> EntryState {
        EntryState { callsign: cs.into(), route: route.into(), entry_level: FlightLevel(fl), ground_speed_kt: gs, along_nm: 0.0 }
    }

    fn add(&self, plan: &mut AirspacePlan, e: &EntryState, exit_fix: &str) -> AircraftState {
        let exit = ExitCondition { fix: exit_fix.into(), flight_level: e.entry_level };
        let fp = build_nominal_plan(e, &self.lanes, e.entry_level, &exit, &self.perf, plan).unwrap();
        plan.plans.insert(e.callsign.clone(), fp);
        AircraftState::at_entry(&self.lanes, e).unwrap()
    }
}

fn east(len: f64) -> Route {
    Route::from_points("R", &[(0.0, 0.0), (len / 2.0, 0.0), (len, 0.0)]).unwrap()
}

fn start(states: Vec<AircraftState>) -> SimState {
    let mut snap = Snapshot::default();
    for s in states {
        snap.aircraft.insert(s.callsign.clone(), s);
    }
    SimState::new(snap, vec![])
}

fn vertical_only(plan: &mut AirspacePlan, cs: &str, action: Action, completion: Condition) {
    let id = ActionId(plan.fresh_id());
    let fp = plan.plans.get_mut(&Callsign::from(cs)).unwrap();
    fp.vertical = vec![PlannedAction { id, trigger: Condition::Immediate, action, completion, origin: Origin::Operator }];
}

#[test]
fn level_flight_advances_eight_nm_per_minute_at_480_kt() {
    let fx = Fixture::new(&[east(160.0)]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    let mut st = start(vec![a]);
    st.step(&fx.world(), &plan, 60.0, &Perturbation::nominal(), &StepOptions::default()).unwrap();
    let s = &st.snapshot.aircraft[&Callsign::from("A")];
    assert!((s.s_nm - 8.0).abs() < 1e-9);
    assert_eq!(st.time(), 60.0);
}

#[test]
fn climb_captures_after_ninety_seconds() {
    let fx = Fixture::new(&[east(160.0)]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    vertical_only(&mut plan, "A", Action::ClimbTo { level: FlightLevel(330) }, Condition::ReachedLevel { level: FlightLevel(330) });
    let cfg = RunConfig { horizon_s: 300.0, ..RunConfig::default() };
    let out = simulate(&fx.world(), &plan, &start(vec![a]), &cfg, &Perturbation::nominal(), &StepOptions::default(), RolloutSource::Nominal, &[]).unwrap();
    let tr = &out.rollout.trajectories[0];
    let id = plan.plans[&Callsign::from("A")].vertical[0].id;
    assert_eq!(tr.event_time(id, EventKind::Completed), Some(90.0));
    assert_eq!(tr.at(90.0, 5.0).unwrap().altitude_ft, 33000.0);
    assert!(tr.at(85.0, 5.0).unwrap().altitude_ft < 33000.0);
}

#[test]
fn pilot_delay_shifts_effect_not_firing() {
    let fx = Fixture::new(&[east(160.0)]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    vertical_only(&mut plan, "A", Action::ClimbTo { level: FlightLevel(330) }, Condition::ReachedLevel { level: FlightLevel(330) });
    let pert = Perturbation::fixed(
        [(Callsign::from("A"), 1.0)].into_iter().collect(),
        [(Callsign::from("A"), 30.0)].into_iter().collect(),
    );
    let cfg = RunConfig { horizon_s: 300.0, ..RunConfig::default() };
    let out = simulate(&fx.world(), &plan, &start(vec![a]), &cfg, &pert, &StepOptions::default(), RolloutSource::Nominal, &[]).unwrap();
    let tr = &out.rollout.trajectories[0];
    let id = plan.plans[&Callsign::from("A")].vertical[0].id;
    let fired = tr.event_time(id, EventKind::Fired).unwrap();
    let applied = tr.event_time(id, EventKind::Applied).unwrap();
    assert_eq!(fired, 0.0);
    assert_eq!(applied - fired, 30.0);
    // the state starts changing in the first step after the effect
    let first_change = tr.samples.iter().find(|s| s.altitude_ft > 30000.0).unwrap().t;
    assert_eq!(first_change, applied + 5.0);
    assert_eq!(tr.event_time(id, EventKind::Completed), Some(120.0));
}

#[test]
fn empty_sector_gives_empty_rollout() {
    let fx = Fixture::new(&[east(160.0)]);
    let plan = AirspacePlan::default();
    let out = simulate(&fx.world(), &plan, &SimState::default(), &RunConfig::default(), &Perturbation::nominal(), &StepOptions::default(), RolloutSource::Nominal, &[]).unwrap();
    assert!(out.rollout.trajectories.is_empty());
}

#[test]
fn transit_exits_at_1200_s() {
    let fx = Fixture::new(&[east(160.0)]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    let out = simulate(&fx.world(), &plan, &start(vec![a]), &RunConfig::default(), &Perturbation::nominal(), &StepOptions::default(), RolloutSource::Nominal, &[]).unwrap();
    let tr = &out.rollout.trajectories[0];
    assert_eq!(tr.exited_at, Some(1200.0));
    assert_eq!(tr.last_time(), Some(1195.0));
    assert!(out.final_state.snapshot.aircraft.is_empty());
}

#[test]
fn scheduled_entrant_appears_at_entry_time() {
    let fx = Fixture::new(&[east(160.0)]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    let b = fx.add(&mut plan, &fx.entry("B", "R", 320, 480.0), "R-2");
    let late = fx.add(&mut plan, &fx.entry("C", "R", 340, 480.0), "R-2");
    let mut st = start(vec![a]);
    st.scheduled = vec![
        ScheduledEntry { entry_time_s: 300.0, state: b },
        ScheduledEntry { entry_time_s: 1000.0, state: late },
    ];
    let out = simulate(&fx.world(), &plan, &st, &RunConfig::default(), &Perturbation::nominal(), &StepOptions::default(), RolloutSource::Nominal, &[]).unwrap();
    let b = out.rollout.trajectory(&"B".into()).unwrap();
    assert_eq!(b.first_time(), Some(300.0));
    assert_eq!(b.samples[0].s_nm, 0.0);
    // beyond the 900 s lookahead
    assert!(out.rollout.trajectory(&"C".into()).is_none());
}

#[test]
fn counterfactual_keeps_lane_and_level() {
    let fx = Fixture::new(&[east(400.0)]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    let fp = plan.plans.get_mut(&Callsign::from("A")).unwrap();
    // offset left, then (pending) back to the centreline at the midpoint fix
    fp.lateral[0].action = Action::FlyLane { route: "R".into(), lane: LaneDesignation::Left };
    fp.lateral[1].trigger = Condition::AtFix { fix: "R-1".into(), tolerance_nm: 1.0 };
    let mut st = start(vec![a]);
    st.settle(&fx.world(), &plan, &Perturbation::nominal(), &StepOptions::default()).unwrap();
    let cf = rollout_counterfactual(&fx.world(), &plan, &st, 900.0, 5.0).unwrap();
    let tr = &cf.trajectories[0];
    assert_eq!(tr.samples.last().unwrap().t, 900.0);
    assert!(tr.samples.iter().all(|s| s.lane == LaneDesignation::Left));
    let left = fx.lanes.lane("R", LaneDesignation::Left).unwrap();
    assert!(tr.samples.iter().all(|s| left.distance_to(s.position) < 1e-9));
    assert!(tr.samples.iter().all(|s| s.altitude_ft == 30000.0));
}

#[test]
fn counterfactual_lane_persists_through_next_fix() {
    let fx = Fixture::new(&[Route::from_points("R", &[(0.0, 0.0), (60.0, 0.0), (60.0, 200.0)]).unwrap()]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    let fp = plan.plans.get_mut(&Callsign::from("A")).unwrap();
    fp.lateral[0].action = Action::FlyLane { route: "R".into(), lane: LaneDesignation::Left };
    fp.lateral[1].trigger = Condition::AtFix { fix: "R-1".into(), tolerance_nm: 1.0 };
    let mut st = start(vec![a]);
    st.settle(&fx.world(), &plan, &Perturbation::nominal(), &StepOptions::default()).unwrap();
    let cf = rollout_counterfactual(&fx.world(), &plan, &st, 900.0, 5.0).unwrap();
    let tr = &cf.trajectories[0];
    let left = fx.lanes.lane("R", LaneDesignation::Left).unwrap();
    // beyond the turn fix, still on the left offset
    assert!(tr.samples.last().unwrap().position.x < 60.0);
    assert!(tr.samples.iter().all(|s| left.distance_to(s.position) < 1e-9));
}

#[test]
fn counterfactual_finishes_climb_then_holds() {
    let fx = Fixture::new(&[east(400.0)]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    vertical_only(&mut plan, "A", Action::ClimbTo { level: FlightLevel(340) }, Condition::ReachedLevel { level: FlightLevel(340) });
    let id = ActionId(plan.fresh_id());
    let fp = plan.plans.get_mut(&Callsign::from("A")).unwrap();
    // a further climb that would fire after capture, were comms up
    fp.vertical.push(PlannedAction {
        id,
        trigger: Condition::ReachedLevel { level: FlightLevel(340) },
        action: Action::ClimbTo { level: FlightLevel(380) },
        completion: Condition::ReachedLevel { level: FlightLevel(380) },
        origin: Origin::Operator,
    });
    let mut st = start(vec![a]);
    let w = fx.world();
    st.settle(&w, &plan, &Perturbation::nominal(), &StepOptions::default()).unwrap();
    for _ in 0..12 {
        st.step(&w, &plan, 5.0, &Perturbation::nominal(), &StepOptions::default()).unwrap();
    }
    let mid = st.snapshot.aircraft[&Callsign::from("A")].altitude_ft;
    assert!(mid > 30000.0 && mid < 34000.0);
    let cf = rollout_counterfactual(&w, &plan, &st, 900.0, 5.0).unwrap();
    let alts: Vec<f64> = cf.trajectories[0].samples.iter().map(|s| s.altitude_ft).collect();
    assert_eq!(*alts.last().unwrap(), 34000.0);
    assert!(alts.windows(2).all(|w| w[1] >= w[0]));
    assert!(alts.iter().all(|a| *a <= 34000.0));
}

#[test]
fn counterfactual_of_zero_duration_is_the_cut() {
    let fx = Fixture::new(&[east(160.0)]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    let st = start(vec![a.clone()]);
    let cf = rollout_counterfactual(&fx.world(), &plan, &st, 0.0, 5.0).unwrap();
    assert_eq!(cf.trajectories.len(), 1);
    assert_eq!(cf.trajectories[0].samples, vec![Sample::of(0.0, &a)]);
}

fn two_aircraft() -> (Fixture, AirspacePlan, SimState) {
    let fx = Fixture::new(&[east(400.0)]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    let mut eb = fx.entry("B", "R", 320, 450.0);
    eb.along_nm = 20.0;
    let b = fx.add(&mut plan, &eb, "R-2");
    (fx, plan, start(vec![a, b]))
}

#[test]
fn degenerate_ensemble_matches_nominal() {
    let (fx, plan, st) = two_aircraft();
    let cfg = EnsembleConfig { rollouts: 1, ranges: PerturbationRanges::ZERO, ..EnsembleConfig::default() };
    let set = simulate_ensemble(&fx.world(), &plan, &st, &cfg).unwrap();
    assert_eq!(set.perturbed[0].trajectories, set.nominal.trajectories);
}

#[test]
fn ensemble_is_deterministic() {
    let (fx, plan, st) = two_aircraft();
    let cfg = EnsembleConfig { seed: 42, ..EnsembleConfig::default() };
    let a = simulate_ensemble(&fx.world(), &plan, &st, &cfg).unwrap();
    let b = simulate_ensemble(&fx.world(), &plan, &st, &cfg).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    let c = simulate_ensemble(&fx.world(), &plan, &st, &EnsembleConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
    assert_eq!(a.perturbed.len(), 20);
    // a cut every 300 s while aircraft remain (B leaves at 3040 s)
    assert_eq!(a.counterfactuals.len(), 11);
}

#[test]
fn speed_spread_bounds_along_track_dispersion() {
    let (fx, plan, st) = two_aircraft();
    let cfg = EnsembleConfig { seed: 7, ..EnsembleConfig::default() };
    let set = simulate_ensemble(&fx.world(), &plan, &st, &cfg).unwrap();
    let cs = Callsign::from("A");
    let nominal = set.nominal.trajectory(&cs).unwrap().at(600.0, 5.0).unwrap().s_nm;
    assert!((nominal - 80.0).abs() < 1e-6);
    let devs: Vec<f64> =
        set.perturbed.iter().map(|r| r.trajectory(&cs).unwrap().at(600.0, 5.0).unwrap().s_nm - nominal).collect();
    // analytic bound: 0.05 * 80 NM
    assert!(devs.iter().all(|d| d.abs() <= 4.0 + 1e-9));
    assert!(devs.iter().any(|d| d.abs() > 1.0));
}

#[test]
fn perturbation_changes_timing_not_geometry() {
    let (fx, plan, st) = two_aircraft();
    let set = simulate_ensemble(&fx.world(), &plan, &st, &EnsembleConfig::default()).unwrap();
    let centre = fx.lanes.lane("R", LaneDesignation::Centre).unwrap();
    for r in set.all() {
        for tr in &r.trajectories {
            assert!(tr.samples.iter().all(|s| centre.distance_to(s.position) < 1e-9));
        }
    }
}

#[test]
fn export_lines_are_json_records() {
    let (fx, plan, st) = two_aircraft();
    let cfg = RunConfig { horizon_s: 10.0, ..RunConfig::default() };
    let out = simulate(&fx.world(), &plan, &st, &cfg, &Perturbation::nominal(), &StepOptions::default(), RolloutSource::Nominal, &[]).unwrap();
    let lines = out.rollout.export_lines();
    assert_eq!(lines.len(), 6);
    let v: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(v["callsign"], "A");
    assert_eq!(v["altitude_ft"], 30000.0);
}

#[test]
fn gate_holds_triggered_actions() {
    let fx = Fixture::new(&[east(160.0)]);
    let mut plan = AirspacePlan::default();
    let a = fx.add(&mut plan, &fx.entry("A", "R", 300, 480.0), "R-2");
    vertical_only(&mut plan, "A", Action::ClimbTo { level: FlightLevel(330) }, Condition::ReachedLevel { level: FlightLevel(330) });
    let mut st = start(vec![a]);
    let deny = |_: &Callsign, pa: &PlannedAction| pa.action.axis() != Axis::Vertical;
    let opts = StepOptions { comms_frozen: false, gate: Some(&deny) };
    let r = st.settle(&fx.world(), &plan, &Perturbation::nominal(), &opts).unwrap();
    assert!(r.issued().all(|(_, id)| plan.plans[&Callsign::from("A")].find(id).unwrap().0 == Axis::Lateral));
    assert_eq!(st.snapshot.aircraft[&Callsign::from("A")].cleared_altitude_ft, 30000.0);
}

#[test]
fn bad_inputs_are_rejected() {
    let (fx, plan, st) = two_aircraft();
    let cfg = RunConfig { horizon_s: 4000.0, ..RunConfig::default() };
    assert!(matches!(
        simulate(&fx.world(), &plan, &st, &cfg, &Perturbation::nominal(), &StepOptions::default(), RolloutSource::Nominal, &[]),
        Err(SimError::Horizon(_))
    ));
    let mut s2 = st.clone();
    assert!(matches!(s2.step(&fx.world(), &plan, 0.0, &Perturbation::nominal(), &StepOptions::default()), Err(SimError::Step(_))));
    let cfg = EnsembleConfig { rollouts: 0, ..EnsembleConfig::default() };
    assert_eq!(simulate_ensemble(&fx.world(), &plan, &st, &cfg), Err(SimError::EmptyEnsemble));
}
