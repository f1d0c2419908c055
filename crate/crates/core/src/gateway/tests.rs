use super::*;
use crate::geometry::LaneDesignation;
use crate::runner::{ClearanceStatus, EpisodeOptions, Scenario};

const HEAD_ON: &str = include_str!("../../scenarios/head_on.json");

fn scenario() -> Scenario {
    let mut s = Scenario::from_json(HEAD_ON).unwrap();
    s.verification.rollouts = 4;
    s
}

fn live(auto_approve: bool) -> Gateway {
    Gateway::live(Episode::new(scenario(), EpisodeOptions { auto_approve, ..Default::default() }).unwrap())
}

fn ticks(g: &Gateway, n: usize) {
    for _ in 0..n {
        g.tick().unwrap();
    }
}

fn proposed_lane_change(g: &Gateway) -> Clearance {
    for _ in 0..200 {
        if let Some(c) = g
            .clearances()
            .into_iter()
            .find(|c| c.status == ClearanceStatus::Proposed && matches!(c.action, Action::FlyLane { .. }))
        {
            return c;
        }
        g.tick().unwrap();
    }
    panic!("no lane change was ever proposed");
}

#[test]
fn snapshot_lists_aircraft_and_revision() {
    let g = live(true);
    g.tick().unwrap();
    let s = g.snapshot();
    assert_eq!(s.mode, Mode::Live);
    assert_eq!(s.aircraft.len(), 2);
    assert!(s.revision > 0);
    assert_eq!(s.cycle, 1);
    let p = g.plan(&"AAA1".into()).unwrap();
    assert_eq!(p.plan.callsign.as_str(), "AAA1");
    assert!(matches!(g.plan(&"ZZZ9".into()), Err(GatewayError::NotFound(_))));
}

#[test]
fn timeline_beyond_horizon_is_a_range_error() {
    let g = live(true);
    g.tick().unwrap();
    let f = g.timeline(300.0).unwrap();
    assert_eq!(f.aircraft.len(), 2);
    assert!(f.aircraft.iter().all(|a| a.envelope.is_some()));
    let err = g.timeline(1.0e6).unwrap_err();
    assert!(matches!(err, GatewayError::Range { .. }));
    assert!(matches!(g.timeline(-5.0), Err(GatewayError::Range { .. })));
}

#[test]
fn stream_times_are_monotone() {
    let g = live(true);
    let mut rx = g.subscribe();
    ticks(&g, 6);
    let mut last = f64::NEG_INFINITY;
    let mut n = 0;
    while let Ok(ev) = rx.try_recv() {
        assert!(ev.t > last);
        last = ev.t;
        n += 1;
    }
    assert_eq!(n, 6);
}

#[test]
fn approved_clearance_is_issued_next_cycle() {
    let g = live(false);
    let c = proposed_lane_change(&g);
    g.approve(c.id).unwrap();
    g.tick().unwrap();
    let now = g.clearances().into_iter().find(|x| x.id == c.id).unwrap();
    assert_eq!(now.status, ClearanceStatus::Issued);
    // approving twice is refused
    assert!(matches!(g.approve(c.id), Err(GatewayError::Rejected(_))));
}

#[test]
fn rejected_clearance_triggers_replan() {
    let g = live(false);
    let c = proposed_lane_change(&g);
    g.reject(c.id).unwrap();
    let log = g.log();
    assert!(log
        .entries()
        .iter()
        .any(|e| matches!(&e.record, Record::Replan { callsign, .. } if *callsign == c.callsign)));
    assert_eq!(g.clearances()[c.id.0 as usize].status, ClearanceStatus::Rejected);
}

#[test]
fn modify_against_axis_constraint_is_refused_with_reason() {
    let g = live(false);
    let c = proposed_lane_change(&g);
    let Action::FlyLane { route, lane } = c.action.clone() else { unreachable!() };
    let opposite = match lane {
        LaneDesignation::Left => LaneDesignation::Right,
        _ => LaneDesignation::Left,
    };
    let err = g.modify(c.id, Action::FlyLane { route: route.clone(), lane: opposite }).unwrap_err();
    let GatewayError::Rejected(msg) = err else { panic!("{err}") };
    assert!(msg.contains("constraint"), "{msg}");
    // same direction is fine
    g.modify(c.id, Action::FlyLane { route, lane }).unwrap();
}

#[test]
fn paused_session_does_not_move() {
    let g = live(true);
    ticks(&g, 2);
    g.command(Command::Pause).unwrap();
    let a = g.snapshot();
    assert!(!g.tick().unwrap());
    let b = g.snapshot();
    assert_eq!(a, b);
}

#[test]
fn step_advances_exactly_one_cadence() {
    let g = live(true);
    ticks(&g, 2);
    g.command(Command::Pause).unwrap();
    let t0 = g.snapshot().t;
    g.command(Command::Step { n: 1 }).unwrap();
    assert!(g.tick().unwrap());
    assert!(!g.tick().unwrap());
    let t1 = g.snapshot().t;
    assert!((t1 - t0 - scenario().episode.cadence_s).abs() < 1e-9);
    g.command(Command::Resume).unwrap();
    assert!(g.tick().unwrap());
}

#[test]
fn injected_conflicting_entrant_shows_in_next_tsr() {
    let mut s = scenario();
    let entrant = s.aircraft.pop().unwrap();
    let g = Gateway::live(Episode::new(s, EpisodeOptions { auto_approve: true, ..Default::default() }).unwrap());
    g.tick().unwrap();
    assert!(g.tsr().is_empty());
    g.inject(entrant.clone()).unwrap();
    assert!(g.inject(entrant).is_err(), "duplicate callsign");
    g.tick().unwrap();
    assert!(!g.tsr().is_empty());
    assert_eq!(g.snapshot().aircraft.len(), 2);
}

#[test]
fn seek_only_in_replay() {
    let g = live(true);
    ticks(&g, 5);
    assert!(matches!(g.command(Command::Seek { t: 10.0 }), Err(GatewayError::Rejected(_))));

    let r = Gateway::replay(g.log());
    assert_eq!(r.mode(), Mode::Replay);
    r.command(Command::Seek { t: 30.0 }).unwrap();
    let s = r.snapshot();
    assert!(s.t <= 30.0 && s.t > 10.0, "{}", s.t);
    assert_eq!(s.aircraft.len(), 2);
    assert!(matches!(r.approve(ClearanceId(0)), Err(GatewayError::ReadOnly)));
    assert!(r.plan(&"BBB2".into()).is_ok());
    assert!(!r.traces().is_empty());
    r.command(Command::Seek { t: 0.0 }).unwrap();
    assert!(r.tick().unwrap());
}

#[test]
fn snapshot_carries_plan_status_and_approval_queue() {
    let g = live(false);
    let c = proposed_lane_change(&g);
    let s = g.snapshot();
    assert!(s.proposed.iter().any(|p| p.id == c.id));
    let actions = &s.plans[&c.callsign];
    let v = actions.iter().find(|a| a.id == c.action_id).unwrap();
    assert_eq!(v.status, ActionStatus::Pending);
    assert!(actions.iter().any(|a| a.status != ActionStatus::Pending), "some nominal action is under way");
    assert_eq!(s.schema_version, GATEWAY_SCHEMA_VERSION);
}

#[test]
fn scrubbing_to_a_resolved_conflict_shows_its_strategy() {
    let g = live(true);
    g.tick().unwrap();
    let traces = g.traces();
    assert_eq!(traces.len(), 1);
    let path = traces[0].trace.accepted_path();
    let accepted = path.last().unwrap();
    let conflict = g.log().entries().iter().find_map(|e| match &e.record {
        Record::Resolution { applied, .. } => Some(applied[0].clone()),
        _ => None,
    });
    let step = conflict.unwrap();
    let frame = g.timeline(step.conflict.t_first).unwrap();
    let marker = frame.conflicts.iter().find(|m| m.pair == step.conflict.pair).unwrap();
    assert_eq!(marker.strategy.as_deref(), Some(step.candidate.label.as_str()));
    assert_eq!(marker.trace, Some(0));
    assert!(marker.position.is_some());
    assert_eq!(accepted.label, step.candidate.label);
}

#[test]
fn replay_seek_out_of_range_is_refused() {
    let g = live(true);
    ticks(&g, 3);
    let r = Gateway::replay(g.log());
    assert!(matches!(r.command(Command::Seek { t: 1.0e6 }), Err(GatewayError::Range { .. })));
    assert!(matches!(r.command(Command::Seek { t: -1.0 }), Err(GatewayError::Range { .. })));
}

#[test]
fn unanswered_clearances_are_approved_after_timeout() {
    let opts = EpisodeOptions { auto_approve: false, approve_after_s: Some(20.0) };
    let g = Gateway::live(Episode::new(scenario(), opts).unwrap());
    let c = proposed_lane_change(&g);
    let t0 = c.proposed_at.unwrap();
    while g.snapshot().t < t0 + 40.0 {
        g.tick().unwrap();
    }
    let now = &g.clearances()[c.id.0 as usize];
    assert!(matches!(now.status, ClearanceStatus::Issued | ClearanceStatus::Completed), "{:?}", now.status);
}

mod http {
    use super::*;
    use axum::body::Body;
    use axum::http::{Request, StatusCode};
    use tower::ServiceExt;

    async fn call(g: &Gateway, req: Request<Body>) -> (StatusCode, serde_json::Value) {
        let resp = super::super::http::router(g.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), 1 << 24).await.unwrap();
        (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
    }

    #[tokio::test]
    async fn routes_map_onto_the_gateway() {
        let g = live(true);
        g.tick().unwrap();
        let resp = super::super::http::router(g.clone())
            .oneshot(Request::get("/snapshot").body(Body::empty()).unwrap())
            .await
            .unwrap();
        assert_eq!(resp.headers()["x-skylane-schema"], "1");
        let (st, body) = call(&g, Request::get("/snapshot").body(Body::empty()).unwrap()).await;
        assert_eq!(st, StatusCode::OK);
        assert_eq!(body["aircraft"].as_array().unwrap().len(), 2);

        let (st, body) = call(&g, Request::get("/timeline?t=99999").body(Body::empty()).unwrap()).await;
        assert_eq!(st, StatusCode::RANGE_NOT_SATISFIABLE);
        assert_eq!(body["error"], "range");

        let (st, _) = call(&g, Request::get("/aircraft/AAA1/plan").body(Body::empty()).unwrap()).await;
        assert_eq!(st, StatusCode::OK);

        let pause = Request::post("/control")
            .header("content-type", "application/json")
            .body(Body::from(r#"{"command": "pause"}"#))
            .unwrap();
        let (st, body) = call(&g, pause).await;
        assert_eq!(st, StatusCode::OK, "{body}");
        assert!(g.snapshot().paused);

        let seek = Request::post("/control")
            .header("content-type", "application/json")
            .body(Body::from(r#"{"command": "seek", "t": 5}"#))
            .unwrap();
        let (st, body) = call(&g, seek).await;
        assert_eq!(st, StatusCode::CONFLICT);
        assert_eq!(body["error"], "rejected");
    }
}
