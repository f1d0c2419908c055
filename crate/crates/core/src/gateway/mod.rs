//! Operator-facing interface to a running (or replayed) episode.
//!
//! [`Gateway`] holds the session behind a mutex; commands are applied under
//! the lock, so they always land between two cycles. The HTTP layer in
//! [`http`] is a thin mapping onto these methods.

pub mod http;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::conflict::{ConflictClass, TechnicalSafetyRecord};
use crate::geometry::Point;
use crate::plans::{Action, ActionId, ActionStatus, AirspacePlan, Axis, FlightPlan, Origin, PlanProgress};
use crate::resolver::{DecisionTrace, SearchStats};
use crate::runner::{
    AircraftSpec, Clearance, ClearanceId, ClearanceStatus, Command, Episode, EpisodeError, EventLog, LogEntry,
    PredictedPath, Record,
};
use crate::state::{AircraftState, Snapshot};
use crate::units::Callsign;

/// Version of every payload the gateway serves.
pub const GATEWAY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("t = {t} outside the predicted range [{lo}, {hi}]")]
    Range { t: f64, lo: f64, hi: f64 },
    #[error("{0}")]
    Rejected(String),
    #[error("the session is a read-only replay")]
    ReadOnly,
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Live,
    Replay,
}

/// One planned action with its execution status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionView {
    pub id: ActionId,
    pub axis: Axis,
    pub instruction: String,
    pub trigger: String,
    pub origin: Origin,
    pub status: ActionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotView {
    pub schema_version: u32,
    pub mode: Mode,
    pub cycle: u64,
    pub t: f64,
    /// Revision of the plan in force.
    pub revision: u64,
    pub paused: bool,
    pub finished: Option<String>,
    pub aircraft: Vec<AircraftState>,
    /// Per aircraft, every planned action in chain order.
    pub plans: BTreeMap<Callsign, Vec<ActionView>>,
    /// Clearances waiting for the operator.
    pub proposed: Vec<Clearance>,
    pub alerts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanView {
    pub revision: u64,
    pub plan: FlightPlan,
    pub progress: Option<PlanProgress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceView {
    pub t: f64,
    pub from_revision: u64,
    pub to_revision: u64,
    pub solved: bool,
    pub stats: SearchStats,
    pub trace: DecisionTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineAircraft {
    pub callsign: Callsign,
    pub position: Point,
    pub altitude_ft: f64,
    /// (min_x, min_y, max_x, max_y) over the perturbed rollouts.
    pub envelope: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictMarker {
    pub pair: (Callsign, Callsign),
    pub class: ConflictClass,
    pub t_first: f64,
    pub t_last: f64,
    pub position: Option<Point>,
    /// Label of the strategy that resolved it, if one did.
    pub strategy: Option<String>,
    /// Index into the trace history.
    pub trace: Option<usize>,
}

/// Predicted traffic picture at a future time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineFrame {
    pub schema_version: u32,
    pub t: f64,
    pub revision: u64,
    pub aircraft: Vec<TimelineAircraft>,
    pub conflicts: Vec<ConflictMarker>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub cycle: u64,
    pub t: f64,
    pub revision: u64,
    pub aircraft: usize,
    pub tsr_size: usize,
    pub alerts: usize,
}

/// Recorded episode browsed frame by frame.
struct ReplaySession {
    log: EventLog,
    /// Indices of snapshot entries.
    frames: Vec<usize>,
    cursor: usize,
    paused: bool,
}

impl ReplaySession {
    fn upto(&self) -> &[LogEntry] {
        let end = self.frames.get(self.cursor).map_or(self.log.len(), |i| i + 1);
        &self.log.entries()[..end]
    }
}

enum Session {
    Live(Box<Episode>),
    Replay(ReplaySession),
}

/// Shared handle to a session; cheap to clone.
#[derive(Clone)]
pub struct Gateway {
    session: Arc<Mutex<Session>>,
    events: broadcast::Sender<StreamEvent>,
}

fn latest_verification(entries: &[LogEntry]) -> Option<(f64, u64, &TechnicalSafetyRecord, &BTreeMap<Callsign, PredictedPath>)> {
    entries.iter().rev().find_map(|e| match &e.record {
        Record::Verification { revision, tsr, predicted, .. } => Some((e.t, *revision, tsr, predicted)),
        _ => None,
    })
}

fn latest_plan(entries: &[LogEntry]) -> Option<&AirspacePlan> {
    entries.iter().rev().find_map(|e| match &e.record {
        Record::Plan { plan, .. } => Some(plan.as_ref()),
        _ => None,
    })
}

fn latest_revision(entries: &[LogEntry]) -> u64 {
    latest_plan(entries).map_or(0, |p| p.revision)
}

fn traces(entries: &[LogEntry]) -> Vec<TraceView> {
    entries
        .iter()
        .filter_map(|e| match &e.record {
            Record::Resolution { from_revision, to_revision, solved, trace, stats, .. } => Some(TraceView {
                t: e.t,
                from_revision: *from_revision,
                to_revision: *to_revision,
                solved: *solved,
                stats: *stats,
                trace: trace.clone(),
            }),
            _ => None,
        })
        .collect()
}

fn alerts(entries: &[LogEntry]) -> Vec<String> {
    entries
        .iter()
        .filter_map(|e| match &e.record {
            Record::Alert { message, .. } => Some(message.clone()),
            _ => None,
        })
        .collect()
}

fn plan_summary(plan: &AirspacePlan, snapshot: &Snapshot) -> BTreeMap<Callsign, Vec<ActionView>> {
    let mut out = BTreeMap::new();
    for (cs, fp) in &plan.plans {
        let progress = snapshot.get(cs).map(|s| s.progress).unwrap_or_default();
        let views = Axis::ALL
            .iter()
            .flat_map(|axis| fp.chain(*axis))
            .map(|pa| ActionView {
                id: pa.id,
                axis: pa.axis(),
                instruction: pa.action.phraseology(),
                trigger: pa.trigger.describe(),
                origin: pa.origin,
                status: progress.status(fp, pa.id).unwrap_or(ActionStatus::Pending),
            })
            .collect();
        out.insert(cs.clone(), views);
    }
    out
}

/// Conflicts whose interval covers `t`: those resolved so far (with their
/// strategy) and those in the latest verification.
fn markers(entries: &[LogEntry], t: f64) -> Vec<ConflictMarker> {
    let mut out: BTreeMap<(Callsign, Callsign), ConflictMarker> = BTreeMap::new();
    let mut k = 0;
    for e in entries {
        let Record::Resolution { applied, .. } = &e.record else { continue };
        for step in applied {
            let c = &step.conflict;
            if c.t_first <= t && t <= c.t_last {
                out.insert(
                    c.pair.clone(),
                    ConflictMarker {
                        pair: c.pair.clone(),
                        class: c.class,
                        t_first: c.t_first,
                        t_last: c.t_last,
                        position: None,
                        strategy: Some(step.candidate.label.clone()),
                        trace: Some(k),
                    },
                );
            }
        }
        k += 1;
    }
    if let Some((_, _, tsr, predicted)) = latest_verification(entries) {
        for c in tsr.records.iter().filter(|c| c.t_first <= t && t <= c.t_last) {
            out.entry(c.pair.clone()).or_insert_with(|| ConflictMarker {
                pair: c.pair.clone(),
                class: c.class,
                t_first: c.t_first,
                t_last: c.t_last,
                position: None,
                strategy: None,
                trace: None,
            });
        }
        for m in out.values_mut() {
            m.position = predicted.get(&m.pair.0).and_then(|p| interpolate(&p.nominal, m.t_first)).map(|s| Point::new(s[1], s[2]));
        }
    }
    out.into_values().collect()
}

fn interpolate(n: &[[f64; 4]], t: f64) -> Option<[f64; 4]> {
    let k = n.iter().position(|s| s[0] >= t)?;
    if n[k][0] == t {
        return Some(n[k]);
    }
    if k == 0 {
        return None;
    }
    let (a, b) = (n[k - 1], n[k]);
    let w = (t - a[0]) / (b[0] - a[0]);
    Some([t, a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2]), a[3] + w * (b[3] - a[3])])
}

/// Interpolates the latest predicted paths at `t`.
fn frame_at(entries: &[LogEntry], t: f64) -> Result<TimelineFrame, GatewayError> {
    let (from, revision, _, predicted) =
        latest_verification(entries).ok_or_else(|| GatewayError::NotFound("no verification yet".into()))?;
    let hi = predicted.values().filter_map(|p| p.nominal.last().map(|s| s[0])).fold(from, f64::max);
    if !(t >= from && t <= hi) {
        return Err(GatewayError::Range { t, lo: from, hi });
    }
    let mut aircraft = Vec::new();
    for (cs, path) in predicted {
        let Some(s) = interpolate(&path.nominal, t) else { continue };
        let envelope = path.envelope.iter().rev().find(|e| e[0] <= t).map(|e| [e[1], e[2], e[3], e[4]]);
        aircraft.push(TimelineAircraft { callsign: cs.clone(), position: Point::new(s[1], s[2]), altitude_ft: s[3], envelope });
    }
    Ok(TimelineFrame { schema_version: GATEWAY_SCHEMA_VERSION, t, revision, aircraft, conflicts: markers(entries, t) })
}

fn replay_clearances(entries: &[LogEntry]) -> Vec<Clearance> {
    let mut by_id = BTreeMap::new();
    for e in entries {
        if let Record::Clearance { clearance } = &e.record {
            by_id.insert(clearance.id, clearance.clone());
        }
    }
    by_id.into_values().collect()
}

impl Gateway {
    pub fn live(episode: Episode) -> Gateway {
        Gateway::with(Session::Live(Box::new(episode)))
    }

    pub fn replay(log: EventLog) -> Gateway {
        let frames = log
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e.record, Record::Snapshot { .. }))
            .map(|(i, _)| i)
            .collect();
        Gateway::with(Session::Replay(ReplaySession { log, frames, cursor: 0, paused: false }))
    }

    fn with(s: Session) -> Gateway {
        let (events, _) = broadcast::channel(256);
        Gateway { session: Arc::new(Mutex::new(s)), events }
    }

    fn lock(&self) -> MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn mode(&self) -> Mode {
        match &*self.lock() {
            Session::Live(_) => Mode::Live,
            Session::Replay(_) => Mode::Replay,
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.events.subscribe()
    }

    pub fn snapshot(&self) -> SnapshotView {
        match &*self.lock() {
            Session::Live(ep) => SnapshotView {
                schema_version: GATEWAY_SCHEMA_VERSION,
                mode: Mode::Live,
                cycle: ep.cycle_count(),
                t: ep.time(),
                revision: ep.plan().revision,
                paused: ep.is_paused(),
                finished: ep.finished().map(str::to_string),
                aircraft: ep.truth().snapshot.aircraft.values().cloned().collect(),
                plans: plan_summary(ep.plan(), &ep.truth().snapshot),
                proposed: ep.clearances().iter().filter(|c| c.status == ClearanceStatus::Proposed).cloned().collect(),
                alerts: ep.alerts().to_vec(),
            },
            Session::Replay(r) => {
                let upto = r.upto();
                let (cycle, t, snap) = upto
                    .iter()
                    .rev()
                    .find_map(|e| match &e.record {
                        Record::Snapshot { cycle, snapshot } => Some((*cycle, e.t, snapshot.clone())),
                        _ => None,
                    })
                    .unwrap_or((0, 0.0, Snapshot::default()));
                let plans = latest_plan(upto).map(|p| plan_summary(p, &snap)).unwrap_or_default();
                SnapshotView {
                    schema_version: GATEWAY_SCHEMA_VERSION,
                    mode: Mode::Replay,
                    cycle,
                    t,
                    revision: latest_revision(upto),
                    paused: r.paused,
                    finished: (r.cursor + 1 >= r.frames.len()).then(|| "end of log".to_string()),
                    aircraft: snap.aircraft.into_values().collect(),
                    plans,
                    proposed: replay_clearances(upto).into_iter().filter(|c| c.status == ClearanceStatus::Proposed).collect(),
                    alerts: alerts(upto),
                }
            }
        }
    }

    pub fn plan(&self, cs: &Callsign) -> Result<PlanView, GatewayError> {
        let missing = || GatewayError::NotFound(format!("no plan for {cs}"));
        match &*self.lock() {
            Session::Live(ep) => {
                let fp = ep.plan().get(cs).ok_or_else(missing)?;
                Ok(PlanView {
                    revision: ep.plan().revision,
                    plan: fp.clone(),
                    progress: ep.truth().snapshot.get(cs).map(|s| s.progress),
                })
            }
            Session::Replay(r) => {
                let upto = r.upto();
                let (revision, plan) = upto
                    .iter()
                    .rev()
                    .find_map(|e| match &e.record {
                        Record::Plan { revision, plan, .. } => Some((*revision, plan)),
                        _ => None,
                    })
                    .ok_or_else(missing)?;
                let fp = plan.get(cs).ok_or_else(missing)?;
                let progress = upto.iter().rev().find_map(|e| match &e.record {
                    Record::Snapshot { snapshot, .. } => Some(snapshot.get(cs).map(|s| s.progress)),
                    _ => None,
                });
                Ok(PlanView { revision, plan: fp.clone(), progress: progress.flatten() })
            }
        }
    }

    /// The most recent verification result (before any resolution).
    pub fn tsr(&self) -> TechnicalSafetyRecord {
        self.with_entries(|e| latest_verification(e).map(|v| v.2.clone()).unwrap_or_default())
    }

    pub fn traces(&self) -> Vec<TraceView> {
        self.with_entries(traces)
    }

    fn with_entries<T>(&self, f: impl FnOnce(&[LogEntry]) -> T) -> T {
        match &*self.lock() {
            Session::Live(ep) => f(ep.log().entries()),
            Session::Replay(r) => f(r.upto()),
        }
    }

    /// Predicted picture at absolute time `t`, from the latest verification.
    pub fn timeline(&self, t: f64) -> Result<TimelineFrame, GatewayError> {
        self.with_entries(|e| frame_at(e, t))
    }

    pub fn clearances(&self) -> Vec<Clearance> {
        match &*self.lock() {
            Session::Live(ep) => ep.clearances().to_vec(),
            Session::Replay(r) => replay_clearances(r.upto()),
        }
    }

    pub fn command(&self, cmd: Command) -> Result<String, GatewayError> {
        match &mut *self.lock() {
            Session::Live(ep) => ep.apply(cmd).map_err(GatewayError::Rejected),
            Session::Replay(r) => match cmd {
                Command::Seek { t } => {
                    let lo = r.log.entries().first().map_or(0.0, |e| e.t);
                    let hi = r.frames.last().map_or(lo, |&i| r.log.entries()[i].t);
                    if !(t >= lo && t <= hi) {
                        return Err(GatewayError::Range { t, lo, hi });
                    }
                    let k = r.frames.iter().rposition(|&i| r.log.entries()[i].t <= t + 1e-9).unwrap_or(0);
                    r.cursor = k;
                    Ok(format!("at frame {k}"))
                }
                Command::Pause => {
                    r.paused = true;
                    Ok("paused".into())
                }
                Command::Resume => {
                    r.paused = false;
                    Ok("resumed".into())
                }
                Command::Step { n } => {
                    r.cursor = (r.cursor + n as usize).min(r.frames.len().saturating_sub(1));
                    Ok(format!("at frame {}", r.cursor))
                }
                _ => Err(GatewayError::ReadOnly),
            },
        }
    }

    pub fn approve(&self, id: ClearanceId) -> Result<String, GatewayError> {
        self.command(Command::Approve { id })
    }

    pub fn reject(&self, id: ClearanceId) -> Result<String, GatewayError> {
        self.command(Command::Reject { id })
    }

    pub fn modify(&self, id: ClearanceId, action: Action) -> Result<String, GatewayError> {
        self.command(Command::Modify { id, action })
    }

    pub fn inject(&self, aircraft: AircraftSpec) -> Result<String, GatewayError> {
        self.command(Command::Inject { aircraft })
    }

    /// Runs one cycle (or advances the replay one frame) if the session
    /// is not paused or finished. Returns whether anything happened.
    pub fn tick(&self) -> Result<bool, GatewayError> {
        let event = {
            let mut s = self.lock();
            match &mut *s {
                Session::Live(ep) => {
                    if !ep.wants_cycle() {
                        return Ok(false);
                    }
                    ep.cycle()?;
                    StreamEvent {
                        cycle: ep.cycle_count(),
                        t: ep.time(),
                        revision: ep.plan().revision,
                        aircraft: ep.truth().snapshot.aircraft.len(),
                        tsr_size: latest_verification(ep.log().entries()).map_or(0, |v| v.2.len()),
                        alerts: ep.alerts().len(),
                    }
                }
                Session::Replay(r) => {
                    if r.paused || r.cursor + 1 >= r.frames.len() {
                        return Ok(false);
                    }
                    r.cursor += 1;
                    let upto = r.upto();
                    let e = upto.last().expect("cursor points at a frame");
                    let (cycle, n) = match &e.record {
                        Record::Snapshot { cycle, snapshot } => (*cycle, snapshot.aircraft.len()),
                        _ => (0, 0),
                    };
                    StreamEvent {
                        cycle,
                        t: e.t,
                        revision: latest_revision(upto),
                        aircraft: n,
                        tsr_size: latest_verification(upto).map_or(0, |v| v.2.len()),
                        alerts: alerts(upto).len(),
                    }
                }
            }
        };
        let _ = self.events.send(event);
        Ok(true)
    }

    pub fn is_finished(&self) -> bool {
        match &*self.lock() {
            Session::Live(ep) => ep.finished().is_some(),
            Session::Replay(r) => r.cursor + 1 >= r.frames.len(),
        }
    }

    /// The event log so far (live) or the whole recorded log (replay).
    pub fn log(&self) -> EventLog {
        match &*self.lock() {
            Session::Live(ep) => ep.log().clone(),
            Session::Replay(r) => r.log.clone(),
        }
    }

    /// Takes the episode out of a live gateway once no other handle is alive.
    pub fn into_episode(self) -> Option<Episode> {
        let session = Arc::try_unwrap(self.session).ok()?.into_inner().unwrap_or_else(|p| p.into_inner());
        match session {
            Session::Live(ep) => Some(*ep),
            Session::Replay(_) => None,
        }
    }
}

#[cfg(test)]
mod tests;
