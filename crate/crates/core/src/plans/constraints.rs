use serde::{Deserialize, Serialize};

use crate::state::{PairHistory, Snapshot};
use crate::units::Callsign;

use super::{evaluate_condition, Axis, Condition, EvalEnv, ManoeuvreId};

/// Direction of an intervention on one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AxisDirection {
    Left,
    Right,
    ClimbOnly,
    DescendOnly,
    SlowOnly,
    FastOnly,
}

impl AxisDirection {
    pub fn axis(self) -> Axis {
        match self {
            AxisDirection::Left | AxisDirection::Right => Axis::Lateral,
            AxisDirection::ClimbOnly | AxisDirection::DescendOnly => Axis::Vertical,
            AxisDirection::SlowOnly | AxisDirection::FastOnly => Axis::Speed,
        }
    }

    pub fn opposes(self, other: AxisDirection) -> bool {
        self.axis() == other.axis() && self != other
    }
}

/// Once an axis has been moved one way, later interventions on it may only
/// push further the same way until `release` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisConstraint {
    pub callsign: Callsign,
    pub axis: Axis,
    pub direction: AxisDirection,
    pub release: Condition,
    pub source: Option<ManoeuvreId>,
}

/// The (aircraft, direction) pairs a candidate would impose.
pub type StrategyFootprint = Vec<(Callsign, AxisDirection)>;

/// First constraint the footprint would reverse, if any.
pub fn violated_constraint<'a>(
    footprint: &StrategyFootprint,
    constraints: &'a [AxisConstraint],
) -> Option<&'a AxisConstraint> {
    footprint.iter().find_map(|(cs, dir)| {
        constraints
            .iter()
            .find(|c| &c.callsign == cs && c.axis == dir.axis() && c.direction.opposes(*dir))
    })
}

/// Drops candidates that would reverse a constrained axis of either aircraft
/// in `pair`. Candidates that reinforce a constraint are kept.
pub fn filter_by_axis_constraints<T>(
    candidates: Vec<T>,
    constraints: &[AxisConstraint],
    pair: (&Callsign, &Callsign),
    footprint: impl Fn(&T) -> StrategyFootprint,
) -> Vec<T> {
    let relevant: Vec<AxisConstraint> = constraints
        .iter()
        .filter(|c| &c.callsign == pair.0 || &c.callsign == pair.1)
        .cloned()
        .collect();
    if relevant.is_empty() {
        return candidates;
    }
    candidates
        .into_iter()
        .filter(|c| violated_constraint(&footprint(c), &relevant).is_none())
        .collect()
}

/// Removes every constraint whose release condition now holds. Constraints
/// on aircraft that have left the roster are released too; those on
/// aircraft not yet in the sector are kept.
pub fn release_constraints(
    constraints: &[AxisConstraint],
    snapshot: &Snapshot,
    history: &PairHistory,
    env: &EvalEnv<'_>,
) -> Vec<AxisConstraint> {
    constraints
        .iter()
        .filter(|c| {
            if snapshot.get(&c.callsign).is_none() {
                return env.roster.contains(&c.callsign);
            }
            !evaluate_condition(&c.release, &c.callsign, snapshot, history, env).unwrap_or(true)
        })
        .cloned()
        .collect()
}
