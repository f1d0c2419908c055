use super::*;

const HEAD_ON: &str = include_str!("../../scenarios/head_on.json");
const EMPTY: &str = include_str!("../../scenarios/empty.json");

fn auto() -> EpisodeOptions {
    EpisodeOptions { auto_approve: true, ..Default::default() }
}

fn quick(text: &str) -> Scenario {
    let mut s = Scenario::from_json(text).unwrap();
    s.verification.rollouts = 6;
    s
}

#[test]
fn empty_scenario_has_zero_metrics() {
    let res = run_episode(quick(EMPTY), auto()).unwrap();
    let m = &res.metrics;
    assert_eq!((m.violations, m.interventions, m.fallbacks, m.resolutions, m.node_expansions), (0, 0, 0, 0, 0));
    assert_eq!(res.exit_code, 0);
    assert_eq!(m.cycles, 1);
}

#[test]
fn head_on_episode_is_resolved_without_violations() {
    let res = run_episode(quick(HEAD_ON), auto()).unwrap();
    let m = &res.metrics;
    assert_eq!(m.violations, 0, "{}", res.report);
    assert_eq!(m.interventions, 2, "{}", res.report);
    assert_eq!(m.fallbacks, 0);
    assert_eq!(res.exit_code, 0);
    assert!(m.node_expansions >= 1);
    assert_eq!(m.strategy_histogram.get("lateral-same-side"), Some(&1));
    assert_eq!(m.exit_deviation.len(), 2);
    for d in m.exit_deviation.values() {
        assert_eq!(d.level_ft, 0.0);
    }
}

#[test]
fn same_seed_gives_identical_log_hash() {
    let a = run_episode(quick(HEAD_ON), auto()).unwrap();
    let b = run_episode(quick(HEAD_ON), auto()).unwrap();
    assert_eq!(a.hash, b.hash);
    let mut other = quick(HEAD_ON);
    other.seed += 1;
    assert_ne!(run_episode(other, auto()).unwrap().hash, a.hash);
}

#[test]
fn log_round_trips_and_replays() {
    let res = run_episode(quick(HEAD_ON), auto()).unwrap();
    let text = res.log.to_jsonl();
    let back = EventLog::from_reader(text.as_bytes()).unwrap();
    assert_eq!(back.hash(), res.hash);
    let rep = replay(&back).unwrap();
    assert!(rep.matches());
}

#[test]
fn metrics_of_empty_log_are_zero() {
    let (m, report) = emit_metrics(&EventLog::default());
    assert_eq!(m, EpisodeMetrics::default());
    assert!(!report.contains("FAILED"));
}

#[test]
fn fallback_alert_sets_failure_flag() {
    let mut log = EventLog::default();
    log.push(0.0, Record::Alert { escalated: false, message: "fallback".into(), fallback: None });
    let (m, report) = emit_metrics(&log);
    assert!(m.failed);
    assert_eq!(m.fallbacks, 1);
    assert!(report.contains("FAILED"));
}

#[test]
fn scenario_reference_errors_name_the_field() {
    let mut v: serde_json::Value = serde_json::from_str(HEAD_ON).unwrap();
    v["aircraft"][1]["route"] = "NOPE".into();
    let err = Scenario::from_json(&v.to_string()).unwrap_err();
    assert!(matches!(&err, ScenarioError::Reference { location, kind: "route", name } if location == "aircraft[1].route" && name == "NOPE"), "{err}");

    let mut v: serde_json::Value = serde_json::from_str(HEAD_ON).unwrap();
    v["aircraft"][0]["exit"]["fix"] = "W-2".into();
    let err = Scenario::from_json(&v.to_string()).unwrap_err();
    assert!(matches!(err, ScenarioError::Reference { kind: "fix", .. }), "{err}");

    let mut v: serde_json::Value = serde_json::from_str(HEAD_ON).unwrap();
    v["schema_version"] = 9.into();
    assert!(matches!(Scenario::from_json(&v.to_string()), Err(ScenarioError::Schema(9))));

    let err = Scenario::from_json("{\n  \"name\": ").unwrap_err();
    assert!(matches!(err, ScenarioError::Parse { line: 2, .. }), "{err}");
}

#[test]
fn unapproved_clearances_stay_proposed() {
    let mut ep = Episode::new(quick(HEAD_ON), EpisodeOptions::default()).unwrap();
    for _ in 0..3 {
        ep.cycle().unwrap();
    }
    let proposed: Vec<_> = ep.clearances().iter().filter(|c| c.status == ClearanceStatus::Proposed).collect();
    assert!(!proposed.is_empty());
    assert!(proposed.iter().all(|c| matches!(c.origin, crate::plans::Origin::Manoeuvre { .. })));
    let manoeuvre = |c: &&Clearance| matches!(c.origin, crate::plans::Origin::Manoeuvre { .. });
    assert!(ep.clearances().iter().filter(manoeuvre).all(|c| c.status != ClearanceStatus::Issued));
    let id = proposed[0].id;
    ep.apply(Command::Approve { id }).unwrap();
    ep.cycle().unwrap();
    assert_eq!(ep.clearance(id).unwrap().status, ClearanceStatus::Issued);
}

#[test]
fn seek_is_refused_in_live_mode() {
    let mut ep = Episode::new(quick(EMPTY), auto()).unwrap();
    assert!(ep.apply(Command::Seek { t: 10.0 }).is_err());
    assert!(ep.apply(Command::Step { n: 1 }).is_err());
    let last = ep.log().entries().last().unwrap();
    assert!(matches!(last.record, Record::Command { accepted: false, .. }));
}
