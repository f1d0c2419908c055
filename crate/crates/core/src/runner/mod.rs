//! Scenario ingestion and the operational cycle: plan, verify, resolve,
//! issue clearances, advance the ground truth, repeat.

mod episode;
mod log;
mod metrics;
mod scenario;

use serde::{Deserialize, Serialize};

use crate::plans::{Action, ActionId, Condition, Origin};
use crate::units::Callsign;

pub use episode::{initial_plan, replay, run_episode, verify_scenario, Verification, Episode, EpisodeError, EpisodeOptions, EpisodeResult, ReplayReport, GROUND_TRUTH_DRAW};
pub use log::{predicted_paths, EventLog, LogEntry, LogError, PredictedPath, Record, LOG_SCHEMA_VERSION};
pub use metrics::{emit_metrics, EpisodeMetrics, ExitDeviation};
pub use scenario::{
    load_scenario, validate_aircraft, AircraftSpec, EpisodeSpec, Scenario, ScenarioError, SectorSpec, VerificationSpec,
    SCENARIO_SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClearanceId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClearanceStatus {
    /// Trigger holds; waiting for the operator.
    Proposed,
    Approved,
    Issued,
    Completed,
    /// Superseded by a replan before it could be issued.
    Missed,
    Rejected,
}

/// One discrete instruction to one aircraft, bound to its trigger condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clearance {
    pub id: ClearanceId,
    pub callsign: Callsign,
    pub action_id: ActionId,
    pub action: Action,
    pub phraseology: String,
    pub trigger: Condition,
    pub origin: Origin,
    pub plan_revision: u64,
    pub status: ClearanceStatus,
    pub proposed_at: Option<f64>,
    pub issued_at: Option<f64>,
    pub completed_at: Option<f64>,
}

/// Operator commands, applied between cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Approve { id: ClearanceId },
    Modify { id: ClearanceId, action: Action },
    Reject { id: ClearanceId },
    Pause,
    Resume,
    Step { n: u32 },
    Seek { t: f64 },
    Inject { aircraft: AircraftSpec },
}

#[cfg(test)]
mod tests;
