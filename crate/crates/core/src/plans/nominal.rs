use serde::{Deserialize, Serialize};

use crate::geometry::{ExitCondition, LaneDesignation, LaneNetwork};
use crate::units::{Callsign, FlightLevel};

use super::{Action, ActionId, AirspacePlan, Condition, FlightPlan, Origin, PlanError, PlannedAction};

/// Tolerance used for the "at exit fix" completion of the final actions.
pub const AT_FIX_TOLERANCE_NM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerformanceParams {
    pub climb_rate_fpm: f64,
    pub descent_rate_fpm: f64,
    pub min_speed_kt: f64,
    pub max_speed_kt: f64,
}

impl Default for PerformanceParams {
    fn default() -> Self {
        PerformanceParams { climb_rate_fpm: 2000.0, descent_rate_fpm: 2000.0, min_speed_kt: 250.0, max_speed_kt: 600.0 }
    }
}

/// How an aircraft enters the sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryState {
    pub callsign: Callsign,
    pub route: String,
    pub entry_level: FlightLevel,
    pub ground_speed_kt: f64,
    /// Starting arc length along the route centreline.
    #[serde(default)]
    pub along_nm: f64,
}

/// Along-track distance needed to descend from `from` to `to` at the nominal rate.
pub fn top_of_descent_nm(from: FlightLevel, to: FlightLevel, ground_speed_kt: f64, perf: &PerformanceParams) -> f64 {
    let drop_ft = (from.feet() - to.feet()).max(0.0);
    drop_ft / perf.descent_rate_fpm * ground_speed_kt / 60.0
}

fn pa(plan: &mut AirspacePlan, trigger: Condition, action: Action, completion: Condition) -> PlannedAction {
    PlannedAction { id: ActionId(plan.fresh_id()), trigger, action, completion, origin: Origin::Nominal }
}

/// Builds the efficient baseline plan: join the centreline, climb to (or
/// hold) the preferred level, and descend as late as possible to make the
/// coordinated exit level at the exit fix. Ids come from `ids`.
pub fn build_nominal_plan(
    entry: &EntryState,
    lanes: &LaneNetwork,
    pfl: FlightLevel,
    exit: &ExitCondition,
    perf: &PerformanceParams,
    ids: &mut AirspacePlan,
) -> Result<FlightPlan, PlanError> {
    let cs = &entry.callsign;
    let infeasible = |reason: String| PlanError::Infeasible { callsign: cs.clone(), reason };
    let route = lanes.route(&entry.route).ok_or_else(|| PlanError::UnknownRoute(entry.route.clone()))?;
    let exit_idx = route.fix_index(&exit.fix).ok_or_else(|| PlanError::UnknownFix(exit.fix.clone()))?;
    if pfl < exit.flight_level {
        return Err(infeasible(format!("preferred level {pfl} below exit level {}", exit.flight_level)));
    }
    let centre = lanes.lane(&entry.route, LaneDesignation::Centre).expect("route has lanes");
    let remaining = centre.vertex_s(exit_idx) - entry.along_nm;
    if remaining <= 0.0 {
        return Err(infeasible(format!("entry point is beyond exit fix {}", exit.fix)));
    }

    let gs = entry.ground_speed_kt;
    let transition_ft = (pfl.feet() - entry.entry_level.feet()).abs();
    let transition_rate =
        if pfl >= entry.entry_level { perf.climb_rate_fpm } else { perf.descent_rate_fpm };
    let transition_nm = transition_ft / transition_rate * gs / 60.0;
    let tod_nm = top_of_descent_nm(pfl, exit.flight_level, gs, perf);
    if transition_nm + tod_nm > remaining + 1e-9 {
        return Err(infeasible(format!(
            "needs {:.1} NM to reach {pfl} and descend to {}, only {remaining:.1} NM to {}",
            transition_nm + tod_nm,
            exit.flight_level,
            exit.fix
        )));
    }

    let at_exit = Condition::AtFix { fix: exit.fix.clone(), tolerance_nm: AT_FIX_TOLERANCE_NM };

    let join = pa(
        ids,
        Condition::Immediate,
        Action::FlyLane { route: entry.route.clone(), lane: LaneDesignation::Centre },
        Condition::Immediate,
    );
    let nav = pa(ids, Condition::Immediate, Action::ResumeNav { fix: exit.fix.clone() }, at_exit.clone());
    let lateral = vec![join, nav];

    let mut vertical = Vec::new();
    let mut trigger = Condition::Immediate;
    if pfl != entry.entry_level {
        let reached = Condition::ReachedLevel { level: pfl };
        let action = if pfl > entry.entry_level { Action::ClimbTo { level: pfl } } else { Action::DescendTo { level: pfl } };
        vertical.push(pa(ids, trigger, action, reached.clone()));
        trigger = reached;
    }
    if pfl > exit.flight_level {
        let tod = Condition::WithinDistanceToFix { fix: exit.fix.clone(), distance_nm: tod_nm };
        let at_exit_level = Condition::ReachedLevel { level: exit.flight_level };
        vertical.push(pa(ids, trigger, Action::MaintainLevel { level: pfl }, tod.clone()));
        vertical.push(pa(ids, tod, Action::DescendTo { level: exit.flight_level }, at_exit_level.clone()));
        vertical.push(pa(ids, at_exit_level, Action::MaintainLevel { level: exit.flight_level }, at_exit));
    } else {
        vertical.push(pa(ids, trigger, Action::MaintainLevel { level: pfl }, at_exit));
    }

    Ok(FlightPlan {
        callsign: cs.clone(),
        route: entry.route.clone(),
        exit: exit.clone(),
        lateral,
        vertical,
        speed: Vec::new(),
        manoeuvres: Vec::new(),
        exit_abandoned: false,
    })
}
