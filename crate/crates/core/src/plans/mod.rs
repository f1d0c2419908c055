//! The control hierarchy: conditions and actions, planned actions,
//! manoeuvres, flight plans and the sector-wide airspace plan.
//!
//! Plans are immutable values. Splicing a manoeuvre into a flight plan
//! returns a new plan and leaves the original untouched, so undoing a
//! strategy during search is just a matter of keeping the parent value.
//! Execution status (which action is pending, active or complete) lives in
//! [`PlanProgress`], carried by each aircraft's simulated state.

mod condition;
mod constraints;
mod nominal;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{ExitCondition, LaneDesignation};
use crate::units::{Callsign, FlightLevel};

pub use condition::{evaluate_condition, evaluate_for, remaining_to_fix, Condition, EvalEnv, LEVEL_CAPTURE_TOLERANCE_FT};
pub use constraints::{filter_by_axis_constraints, release_constraints, AxisConstraint, AxisDirection, StrategyFootprint, violated_constraint};
pub use nominal::{build_nominal_plan, top_of_descent_nm, EntryState, PerformanceParams, AT_FIX_TOLERANCE_NM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("unknown callsign {0}")]
    UnknownCallsign(Callsign),
    #[error("unknown route {0}")]
    UnknownRoute(String),
    #[error("fix {0} is not on the aircraft's route")]
    UnknownFix(String),
    #[error("invalid condition: {0}")]
    InvalidCondition(String),
    #[error("planned action {0} not found in flight plan")]
    ActionNotFound(ActionId),
    #[error("manoeuvre axes {manoeuvre:?} do not cover causal axes {causal:?}")]
    AxisMismatch { manoeuvre: Vec<Axis>, causal: Vec<Axis> },
    #[error("manoeuvre has no phases")]
    EmptyManoeuvre,
    #[error("manoeuvre phase chain broken on {0:?} axis")]
    BrokenChain(Axis),
    #[error("infeasible plan for {callsign}: {reason}")]
    Infeasible { callsign: Callsign, reason: String },
    #[error("plan integrity violated for {callsign}: {reason}")]
    Integrity { callsign: Callsign, reason: String },
}

/// Independent control axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    Lateral,
    Vertical,
    Speed,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Lateral, Axis::Vertical, Axis::Speed];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u64);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ManoeuvreId(pub u64);

/// A discrete ATC instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Action {
    ClimbTo { level: FlightLevel },
    DescendTo { level: FlightLevel },
    /// Hold (or return to) a level.
    MaintainLevel { level: FlightLevel },
    SetSpeed { speed_kt: f64 },
    FlyLane { route: String, lane: LaneDesignation },
    /// Resume own navigation on the route centreline towards `fix`.
    ResumeNav { fix: String },
}

impl Action {
    pub fn axis(&self) -> Axis {
        match self {
            Action::ClimbTo { .. } | Action::DescendTo { .. } | Action::MaintainLevel { .. } => Axis::Vertical,
            Action::SetSpeed { .. } => Axis::Speed,
            Action::FlyLane { .. } | Action::ResumeNav { .. } => Axis::Lateral,
        }
    }

    /// Target level of a vertical action.
    pub fn level(&self) -> Option<FlightLevel> {
        match self {
            Action::ClimbTo { level } | Action::DescendTo { level } | Action::MaintainLevel { level } => Some(*level),
            _ => None,
        }
    }

    /// Climb or descend instruction towards `level` from `altitude_ft`.
    pub fn change_level(altitude_ft: f64, level: FlightLevel) -> Action {
        if level.feet() > altitude_ft + LEVEL_CAPTURE_TOLERANCE_FT {
            Action::ClimbTo { level }
        } else if level.feet() < altitude_ft - LEVEL_CAPTURE_TOLERANCE_FT {
            Action::DescendTo { level }
        } else {
            Action::MaintainLevel { level }
        }
    }

    pub fn phraseology(&self) -> String {
        match self {
            Action::ClimbTo { level } => format!("climb {level}"),
            Action::DescendTo { level } => format!("descend {level}"),
            Action::MaintainLevel { level } => format!("maintain {level}"),
            Action::SetSpeed { speed_kt } => format!("speed {speed_kt:.0} knots"),
            Action::FlyLane { lane, .. } => format!("fly {lane} lane"),
            Action::ResumeNav { fix } => format!("resume own navigation {fix}"),
        }
    }
}

/// Where a planned action came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Origin {
    Nominal,
    Manoeuvre { id: ManoeuvreId },
    Fallback,
    Operator,
}

/// ⟨trigger, action, completion⟩
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub id: ActionId,
    pub trigger: Condition,
    pub action: Action,
    pub completion: Condition,
    pub origin: Origin,
}

impl PlannedAction {
    pub fn axis(&self) -> Axis {
        self.action.axis()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionStatus {
    Pending,
    Active,
    Complete,
}

/// A multi-phase deconfliction manoeuvre for one aircraft of a conflict pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manoeuvre {
    pub id: ManoeuvreId,
    pub strategy: String,
    pub callsign: Callsign,
    pub counterpart: Callsign,
    pub label: String,
    /// Direction of the intervention on each axis it touches.
    pub directions: BTreeMap<Axis, AxisDirection>,
    /// Marks the point at which the axis constraints may be lifted.
    pub release: Condition,
    pub phases: Vec<PlannedAction>,
}

impl Manoeuvre {
    pub fn axes(&self) -> BTreeSet<Axis> {
        self.phases.iter().map(PlannedAction::axis).collect()
    }

    pub fn phases_on(&self, axis: Axis) -> impl Iterator<Item = &PlannedAction> {
        self.phases.iter().filter(move |p| p.axis() == axis)
    }

    /// Per axis, each phase's trigger must equal the previous phase's completion.
    pub fn check_chain(&self) -> Result<(), PlanError> {
        for axis in Axis::ALL {
            let phases: Vec<_> = self.phases_on(axis).collect();
            for w in phases.windows(2) {
                if w[1].trigger != w[0].completion {
                    return Err(PlanError::BrokenChain(axis));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManoeuvreSummary {
    pub id: ManoeuvreId,
    pub strategy: String,
    pub label: String,
    pub counterpart: Callsign,
    pub directions: BTreeMap<Axis, AxisDirection>,
}

/// Per-aircraft end-to-end plan: one ordered chain of planned actions per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightPlan {
    pub callsign: Callsign,
    pub route: String,
    pub exit: ExitCondition,
    pub lateral: Vec<PlannedAction>,
    pub vertical: Vec<PlannedAction>,
    pub speed: Vec<PlannedAction>,
    #[serde(default)]
    pub manoeuvres: Vec<ManoeuvreSummary>,
    /// Set once the coordinated exit has been abandoned by a fallback.
    #[serde(default)]
    pub exit_abandoned: bool,
}

impl FlightPlan {
    pub fn chain(&self, axis: Axis) -> &[PlannedAction] {
        match axis {
            Axis::Lateral => &self.lateral,
            Axis::Vertical => &self.vertical,
            Axis::Speed => &self.speed,
        }
    }

    pub fn chain_mut(&mut self, axis: Axis) -> &mut Vec<PlannedAction> {
        match axis {
            Axis::Lateral => &mut self.lateral,
            Axis::Vertical => &mut self.vertical,
            Axis::Speed => &mut self.speed,
        }
    }

    pub fn actions(&self) -> impl Iterator<Item = &PlannedAction> {
        self.lateral.iter().chain(self.vertical.iter()).chain(self.speed.iter())
    }

    pub fn find(&self, id: ActionId) -> Option<(Axis, usize, &PlannedAction)> {
        Axis::ALL.into_iter().find_map(|axis| {
            self.chain(axis).iter().enumerate().find(|(_, p)| p.id == id).map(|(i, p)| (axis, i, p))
        })
    }

    pub fn manoeuvre(&self, id: ManoeuvreId) -> Option<&ManoeuvreSummary> {
        self.manoeuvres.iter().find(|m| m.id == id)
    }
}

/// Replaces the causal segments of `fp` with the phases of `m`.
///
/// Each causal id is replaced in place by the manoeuvre's phases on that
/// id's axis; the action following it is re-triggered on the manoeuvre's
/// final completion. An axis the manoeuvre touches but for which no causal
/// id is given (an exhausted or empty chain, typically speed) receives the
/// phases appended at the end of its chain. Every other action is kept
/// as-is.
pub fn splice(fp: &FlightPlan, causal_ids: &[ActionId], m: &Manoeuvre) -> Result<FlightPlan, PlanError> {
    if m.phases.is_empty() {
        return Err(PlanError::EmptyManoeuvre);
    }
    m.check_chain()?;
    let m_axes = m.axes();
    let mut causal: BTreeMap<Axis, usize> = BTreeMap::new();
    for id in causal_ids {
        let (axis, idx, _) = fp.find(*id).ok_or(PlanError::ActionNotFound(*id))?;
        if causal.insert(axis, idx).is_some() || !m_axes.contains(&axis) {
            return Err(PlanError::AxisMismatch {
                manoeuvre: m_axes.iter().copied().collect(),
                causal: causal_ids.iter().filter_map(|i| fp.find(*i).map(|f| f.0)).collect(),
            });
        }
    }
    let mut out = fp.clone();
    for axis in m_axes {
        let phases: Vec<PlannedAction> = m.phases_on(axis).cloned().collect();
        let last_completion = phases.last().expect("axis has phases").completion.clone();
        let chain = out.chain_mut(axis);
        let after = match causal.get(&axis) {
            Some(&idx) => {
                let n = phases.len();
                chain.splice(idx..=idx, phases);
                idx + n
            }
            None => {
                chain.extend(phases);
                chain.len()
            }
        };
        if let Some(next) = chain.get_mut(after) {
            next.trigger = last_completion;
        }
    }
    out.manoeuvres.push(ManoeuvreSummary {
        id: m.id,
        strategy: m.strategy.clone(),
        label: m.label.clone(),
        counterpart: m.counterpart.clone(),
        directions: m.directions.clone(),
    });
    Ok(out)
}

/// Execution phase of the action under an axis cursor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "phase")]
pub enum Phase {
    #[default]
    Pending,
    /// Trigger fired at `at`; the pilot's response takes effect at `effect_at`.
    Fired { at: f64, effect_at: f64 },
    Applied { at: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisCursor {
    pub index: usize,
    pub phase: Phase,
}

/// Execution progress through each axis chain of a flight plan.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanProgress {
    pub lateral: AxisCursor,
    pub vertical: AxisCursor,
    pub speed: AxisCursor,
}

impl PlanProgress {
    pub fn get(&self, axis: Axis) -> &AxisCursor {
        match axis {
            Axis::Lateral => &self.lateral,
            Axis::Vertical => &self.vertical,
            Axis::Speed => &self.speed,
        }
    }

    pub fn get_mut(&mut self, axis: Axis) -> &mut AxisCursor {
        match axis {
            Axis::Lateral => &mut self.lateral,
            Axis::Vertical => &mut self.vertical,
            Axis::Speed => &mut self.speed,
        }
    }

    /// Maps cursors from `old` onto a revised plan `new`. A cursor whose
    /// action survived keeps its phase; one whose action was spliced out
    /// restarts, pending, at the first replacement phase.
    pub fn rebase(&self, old: &FlightPlan, new: &FlightPlan) -> PlanProgress {
        let mut out = *self;
        for axis in Axis::ALL {
            let cur = self.get(axis);
            let old_chain = old.chain(axis);
            let new_chain = new.chain(axis);
            let target = out.get_mut(axis);
            match old_chain.get(cur.index) {
                Some(pa) => match new_chain.iter().position(|p| p.id == pa.id) {
                    Some(j) => target.index = j,
                    None => *target = AxisCursor { index: cur.index, phase: Phase::Pending },
                },
                None => *target = AxisCursor { index: cur.index, phase: Phase::Pending },
            }
        }
        out
    }

    pub fn status(&self, fp: &FlightPlan, id: ActionId) -> Option<ActionStatus> {
        let (axis, idx, _) = fp.find(id)?;
        let cur = self.get(axis);
        Some(if idx < cur.index {
            ActionStatus::Complete
        } else if idx == cur.index && cur.phase != Phase::Pending {
            ActionStatus::Active
        } else {
            ActionStatus::Pending
        })
    }
}

/// The unique Active action on each axis, if any.
pub fn active_actions<'a>(
    fp: &'a FlightPlan,
    progress: &PlanProgress,
) -> Result<BTreeMap<Axis, &'a PlannedAction>, PlanError> {
    let mut out = BTreeMap::new();
    for axis in Axis::ALL {
        let cur = progress.get(axis);
        let chain = fp.chain(axis);
        if cur.index > chain.len() || (cur.index == chain.len() && cur.phase != Phase::Pending) {
            return Err(PlanError::Integrity {
                callsign: fp.callsign.clone(),
                reason: format!("{axis:?} cursor {} beyond chain of {}", cur.index, chain.len()),
            });
        }
        if cur.phase != Phase::Pending {
            out.insert(axis, &chain[cur.index]);
        }
    }
    Ok(out)
}

/// The coordinated set of flight plans for the sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AirspacePlan {
    pub revision: u64,
    pub plans: BTreeMap<Callsign, FlightPlan>,
    pub constraints: Vec<AxisConstraint>,
    /// Next free id for planned actions and manoeuvres.
    pub next_id: u64,
}

impl AirspacePlan {
    pub fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn roster(&self) -> BTreeSet<Callsign> {
        self.plans.keys().cloned().collect()
    }

    pub fn get(&self, cs: &Callsign) -> Option<&FlightPlan> {
        self.plans.get(cs)
    }

    pub fn constraint(&self, cs: &Callsign, axis: Axis) -> Option<&AxisConstraint> {
        self.constraints.iter().find(|c| &c.callsign == cs && c.axis == axis)
    }

    /// Content hash of the plan, independent of the revision number.
    pub fn fingerprint(&self) -> String {
        let body = serde_json::to_vec(&(&self.plans, &self.constraints)).expect("plan serialises");
        hex::encode(Sha256::digest(&body))
    }

    /// Adds or replaces a constraint, keeping one per (callsign, axis).
    pub fn register_constraint(&mut self, c: AxisConstraint) {
        self.constraints.retain(|x| !(x.callsign == c.callsign && x.axis == c.axis));
        self.constraints.push(c);
    }
}
