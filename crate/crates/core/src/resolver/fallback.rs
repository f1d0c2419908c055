use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::conflict::{ConflictClass, ConflictRecord};
use crate::plans::{Action, ActionId, AirspacePlan, Condition, Origin, PlannedAction, AT_FIX_TOLERANCE_NM};
use crate::state::AircraftState;
use crate::twin::{Rollout, SimState};
use crate::units::{Callsign, FlightLevel};

use super::{ResolveError, Resolver};

const LEVEL_RATE_FPM: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackAssignment {
    pub callsign: Callsign,
    pub from: FlightLevel,
    pub to: FlightLevel,
}

/// Raised whenever the search could not find a verified plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackAlert {
    pub pair: (Callsign, Callsign),
    pub class: ConflictClass,
    pub t_first: f64,
    pub assignments: Vec<FallbackAssignment>,
    /// No two free levels were available; the plan was left unchanged.
    pub escalated: bool,
    pub message: String,
}

fn current_state<'s>(start: &'s SimState, cs: &Callsign) -> Option<&'s AircraftState> {
    start
        .snapshot
        .get(cs)
        .or_else(|| start.scheduled.iter().find(|e| &e.state.callsign == cs).map(|e| &e.state))
}

/// Levels held (in the nominal rollout) or commanded (in the plan) by any aircraft.
fn occupied_levels(plan: &AirspacePlan, nominal: &Rollout) -> BTreeSet<FlightLevel> {
    let mut out = BTreeSet::new();
    for tr in &nominal.trajectories {
        for s in tr.samples.iter().filter(|s| s.vertical_rate_fpm.abs() <= LEVEL_RATE_FPM) {
            out.insert(FlightLevel::nearest(s.altitude_ft));
        }
    }
    for fp in plan.plans.values() {
        out.extend(fp.vertical.iter().filter_map(|pa| pa.action.level()));
    }
    out
}

/// Nearest free level on the 10-FL grid of the band; ties go upward.
fn nearest_free(from: FlightLevel, grid: &[FlightLevel], taken: &BTreeSet<FlightLevel>) -> Option<FlightLevel> {
    grid.iter()
        .filter(|fl| !taken.contains(fl))
        .min_by_key(|fl| (fl.0.abs_diff(from.0), std::cmp::Reverse(fl.0)))
        .copied()
}

/// Moves both aircraft of `conflict` to distinct free levels held until
/// their exit fixes, abandoning the coordinated exit level.
pub fn fallback_plan(
    plan: &AirspacePlan,
    conflict: &ConflictRecord,
    start: &SimState,
    nominal: &Rollout,
    r: &Resolver<'_>,
    revision: u64,
) -> Result<(AirspacePlan, FallbackAlert), ResolveError> {
    let (floor, ceiling) = (r.params.level_floor.0, r.params.level_ceiling.0);
    let grid: Vec<FlightLevel> = (floor..=ceiling).step_by(10).map(FlightLevel).collect();
    let mut taken = occupied_levels(plan, nominal);
    let mut picks = Vec::new();
    for cs in [&conflict.pair.0, &conflict.pair.1] {
        let st = current_state(start, cs);
        let from = st.map_or(FlightLevel(floor), |s| FlightLevel::nearest(s.altitude_ft));
        match nearest_free(from, &grid, &taken) {
            Some(to) => {
                taken.insert(to);
                picks.push(FallbackAssignment { callsign: cs.clone(), from, to });
            }
            None => break,
        }
    }
    let mut alert = FallbackAlert {
        pair: conflict.pair.clone(),
        class: conflict.class,
        t_first: conflict.t_first,
        assignments: Vec::new(),
        escalated: false,
        message: String::new(),
    };
    if picks.len() < 2 {
        alert.escalated = true;
        alert.message = format!(
            "no verified plan for {} / {} and fewer than two free levels: operator action required",
            conflict.pair.0, conflict.pair.1
        );
        return Ok((plan.clone(), alert));
    }

    let mut out = plan.clone();
    for pick in &picks {
        let cursor = current_state(start, &pick.callsign).map_or(0, |s| s.progress.vertical.index);
        let alt = current_state(start, &pick.callsign).map_or(pick.from.feet(), |s| s.altitude_ft);
        let mut ids = [ActionId(out.fresh_id()), ActionId(out.fresh_id())].into_iter();
        let fp = out.plans.get_mut(&pick.callsign).ok_or_else(|| crate::plans::PlanError::UnknownCallsign(pick.callsign.clone()))?;
        let reached = Condition::ReachedLevel { level: pick.to };
        let at_exit = Condition::AtFix { fix: fp.exit.fix.clone(), tolerance_nm: AT_FIX_TOLERANCE_NM };
        fp.vertical.truncate(cursor.min(fp.vertical.len()));
        fp.vertical.push(PlannedAction {
            id: ids.next().expect("two ids"),
            trigger: Condition::Immediate,
            action: Action::change_level(alt, pick.to),
            completion: reached.clone(),
            origin: Origin::Fallback,
        });
        fp.vertical.push(PlannedAction {
            id: ids.next().expect("two ids"),
            trigger: reached,
            action: Action::MaintainLevel { level: pick.to },
            completion: at_exit,
            origin: Origin::Fallback,
        });
        fp.exit_abandoned = true;
    }
    out.revision = revision;
    alert.message = picks.iter().map(|p| format!("{} {} -> {}", p.callsign, p.from, p.to)).collect::<Vec<_>>().join(", ");
    alert.message = format!("fallback vertical separation, exit levels abandoned: {}", alert.message);
    alert.assignments = picks;
    Ok((out, alert))
}
