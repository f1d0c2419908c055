use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::conflict::SeparationMinima;
use crate::geometry::LaneNetwork;
use crate::state::{relative_along_track, AircraftState, PairHistory, Snapshot};
use crate::units::{Callsign, FlightLevel};

use super::PlanError;

/// Level-capture tolerance for [`Condition::ReachedLevel`].
pub const LEVEL_CAPTURE_TOLERANCE_FT: f64 = 100.0;

/// Boolean predicate over the airspace state, evaluated on behalf of one aircraft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Condition {
    Immediate,
    TimeReached { t: f64 },
    /// Within `tolerance_nm` of the fix along the own lane, or past it.
    AtFix { fix: String, tolerance_nm: f64 },
    /// Remaining along-track distance to the fix is at most `distance_nm`.
    WithinDistanceToFix { fix: String, distance_nm: f64 },
    LateralSeparationExceeds { other: Callsign, threshold_nm: f64 },
    VerticalSeparationExceeds { other: Callsign, threshold_ft: f64 },
    AircraftPassedLaterally { other: Callsign },
    ReachedLevel { level: FlightLevel },
    Not { of: Box<Condition> },
    And { all: Vec<Condition> },
    Or { any: Vec<Condition> },
}

impl Condition {
    pub fn not(c: Condition) -> Self {
        Condition::Not { of: Box::new(c) }
    }

    /// Callsigns of other aircraft this condition refers to.
    pub fn referenced(&self, out: &mut BTreeSet<Callsign>) {
        match self {
            Condition::LateralSeparationExceeds { other, .. }
            | Condition::VerticalSeparationExceeds { other, .. }
            | Condition::AircraftPassedLaterally { other } => {
                out.insert(other.clone());
            }
            Condition::Not { of } => of.referenced(out),
            Condition::And { all: cs } | Condition::Or { any: cs } => cs.iter().for_each(|c| c.referenced(out)),
            _ => {}
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |what: &str| Err(PlanError::InvalidCondition(what.to_string()));
        match self {
            Condition::AtFix { tolerance_nm, .. } if !(*tolerance_nm >= 0.0) => bad("AtFix tolerance"),
            Condition::WithinDistanceToFix { distance_nm, .. } if !(*distance_nm >= 0.0) => bad("fix distance"),
            Condition::LateralSeparationExceeds { threshold_nm, .. } if !(*threshold_nm > 0.0) => {
                bad("lateral threshold")
            }
            Condition::VerticalSeparationExceeds { threshold_ft, .. } if !(*threshold_ft > 0.0) => {
                bad("vertical threshold")
            }
            Condition::Not { of } => of.validate(),
            Condition::And { all: cs } | Condition::Or { any: cs } => cs.iter().try_for_each(Condition::validate),
            _ => Ok(()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Condition::Immediate => "immediately".into(),
            Condition::TimeReached { t } => format!("at t={t:.0}s"),
            Condition::AtFix { fix, .. } => format!("at {fix}"),
            Condition::WithinDistanceToFix { fix, distance_nm } => format!("{distance_nm:.1} NM before {fix}"),
            Condition::LateralSeparationExceeds { other, threshold_nm } => {
                format!("lateral separation from {other} > {threshold_nm} NM")
            }
            Condition::VerticalSeparationExceeds { other, threshold_ft } => {
                format!("vertical separation from {other} > {threshold_ft} ft")
            }
            Condition::AircraftPassedLaterally { other } => format!("passed {other}"),
            Condition::ReachedLevel { level } => format!("reaching {level}"),
            Condition::Not { of } => format!("not ({})", of.describe()),
            Condition::And { all } => all.iter().map(Condition::describe).collect::<Vec<_>>().join(" and "),
            Condition::Or { any } => any.iter().map(Condition::describe).collect::<Vec<_>>().join(" or "),
        }
    }
}

/// Everything a condition may consult besides the snapshot and history.
#[derive(Debug, Clone, Copy)]
pub struct EvalEnv<'a> {
    pub lanes: &'a LaneNetwork,
    pub minima: &'a SeparationMinima,
    /// Callsigns known to the plan, including aircraft not yet in the sector.
    pub roster: &'a BTreeSet<Callsign>,
}

fn other_state<'s>(
    snapshot: &'s Snapshot,
    env: &EvalEnv<'_>,
    other: &Callsign,
) -> Result<Option<&'s AircraftState>, PlanError> {
    match snapshot.get(other) {
        Some(s) => Ok(Some(s)),
        None if env.roster.contains(other) => Ok(None),
        None => Err(PlanError::UnknownCallsign(other.clone())),
    }
}

/// Remaining along-track distance from the aircraft to `fix` on its current lane.
pub fn remaining_to_fix(lanes: &LaneNetwork, me: &AircraftState, fix: &str) -> Result<f64, PlanError> {
    let route = lanes.route(&me.route).ok_or_else(|| PlanError::UnknownRoute(me.route.clone()))?;
    let idx = route.fix_index(fix).ok_or_else(|| PlanError::UnknownFix(fix.to_string()))?;
    let lane = lanes.lane(&me.route, me.lane).ok_or_else(|| PlanError::UnknownRoute(me.route.clone()))?;
    Ok(lane.vertex_s(idx) - me.s_nm)
}

/// Evaluates `c` on behalf of `owner`. Pure in (snapshot, history).
pub fn evaluate_condition(
    c: &Condition,
    owner: &Callsign,
    snapshot: &Snapshot,
    history: &PairHistory,
    env: &EvalEnv<'_>,
) -> Result<bool, PlanError> {
    let me = snapshot.get(owner).ok_or_else(|| PlanError::UnknownCallsign(owner.clone()))?;
    evaluate_for(c, me, snapshot, history, env)
}

/// Like [`evaluate_condition`], with the owner's state given explicitly
/// (it may be newer than the copy held in `snapshot`).
pub fn evaluate_for(
    c: &Condition,
    me: &AircraftState,
    snapshot: &Snapshot,
    history: &PairHistory,
    env: &EvalEnv<'_>,
) -> Result<bool, PlanError> {
    let owner = &me.callsign;
    let me = || -> Result<&AircraftState, PlanError> { Ok(me) };
    Ok(match c {
        Condition::Immediate => true,
        Condition::TimeReached { t } => snapshot.time_s >= *t,
        Condition::AtFix { fix, tolerance_nm } => remaining_to_fix(env.lanes, me()?, fix)? <= *tolerance_nm,
        Condition::WithinDistanceToFix { fix, distance_nm } => {
            remaining_to_fix(env.lanes, me()?, fix)? <= *distance_nm + 1e-9
        }
        Condition::LateralSeparationExceeds { other, threshold_nm } => {
            let me = me()?;
            match other_state(snapshot, env, other)? {
                Some(o) => me.position.distance(o.position) > *threshold_nm,
                None => true,
            }
        }
        Condition::VerticalSeparationExceeds { other, threshold_ft } => {
            let me = me()?;
            match other_state(snapshot, env, other)? {
                Some(o) => (me.altitude_ft - o.altitude_ft).abs() >= *threshold_ft,
                None => true,
            }
        }
        Condition::AircraftPassedLaterally { other } => {
            let me = me()?;
            let rec = history.get(owner, other);
            match other_state(snapshot, env, other)? {
                Some(o) => {
                    let passed = rec.is_some_and(|r| r.passed);
                    let rel = relative_along_track(env.lanes, me, o)
                        .ok_or_else(|| PlanError::UnknownRoute(me.route.clone()))?;
                    passed && rel.abs() >= env.minima.lateral_nm
                }
                // gone from the sector after being seen: no longer a factor
                None => rec.is_some_and(|r| r.departed),
            }
        }
        Condition::ReachedLevel { level } => (me()?.altitude_ft - level.feet()).abs() <= LEVEL_CAPTURE_TOLERANCE_FT,
        Condition::Not { of } => !evaluate_for(of, me()?, snapshot, history, env)?,
        Condition::And { all } => {
            for x in all {
                if !evaluate_for(x, me()?, snapshot, history, env)? {
                    return Ok(false);
                }
            }
            true
        }
        Condition::Or { any } => {
            for x in any {
                if evaluate_for(x, me()?, snapshot, history, env)? {
                    return Ok(true);
                }
            }
            false
        }
    })
}
