//! Kinematic digital twin: executes condition-gated plans, runs perturbed
//! ensembles and loss-of-communication counterfactuals.

mod perturbation;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conflict::SeparationMinima;
use crate::geometry::{track_deg, LaneDesignation, LaneNetwork, Point};
use crate::plans::{
    evaluate_for, Action, ActionId, AirspacePlan, Axis, EntryState, EvalEnv, FlightPlan, PerformanceParams, Phase,
    PlanError, PlanProgress, PlannedAction,
};
use crate::state::{AircraftState, PairHistory, Snapshot};
use crate::units::Callsign;

pub use perturbation::{Perturbation, PerturbationRanges};

/// Longest horizon any simulation may run.
pub const MAX_HORIZON_S: f64 = 3600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("integrity error for {callsign}: {reason}")]
    Integrity { callsign: Callsign, reason: String },
    #[error("horizon {0} s outside (0, 3600]")]
    Horizon(f64),
    #[error("time step must be positive, got {0}")]
    Step(f64),
    #[error("ensemble needs at least one perturbed rollout")]
    EmptyEnsemble,
}

/// Static context shared by every rollout.
#[derive(Debug, Clone, Copy)]
pub struct World<'a> {
    pub lanes: &'a LaneNetwork,
    pub minima: &'a SeparationMinima,
    pub perf: &'a PerformanceParams,
}

/// An aircraft that will enter the sector later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEntry {
    pub entry_time_s: f64,
    pub state: AircraftState,
}

impl AircraftState {
    /// State of an aircraft entering on the centreline of its route.
    pub fn at_entry(lanes: &LaneNetwork, entry: &EntryState) -> Result<AircraftState, PlanError> {
        let lane = lanes
            .lane(&entry.route, LaneDesignation::Centre)
            .ok_or_else(|| PlanError::UnknownRoute(entry.route.clone()))?;
        let s = entry.along_nm.clamp(0.0, lane.length());
        let position = lane.point_at(s).map_err(|e| PlanError::InvalidCondition(e.to_string()))?;
        Ok(AircraftState {
            callsign: entry.callsign.clone(),
            route: entry.route.clone(),
            lane: LaneDesignation::Centre,
            s_nm: s,
            position,
            altitude_ft: entry.entry_level.feet(),
            ground_speed_kt: entry.ground_speed_kt,
            vertical_rate_fpm: 0.0,
            track_deg: track_deg(lane.direction_at(s)),
            cleared_altitude_ft: entry.entry_level.feet(),
            commanded_speed_kt: entry.ground_speed_kt,
            progress: PlanProgress::default(),
        })
    }
}

/// One sampled instant of an aircraft trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub position: Point,
    pub altitude_ft: f64,
    pub ground_speed_kt: f64,
    pub vertical_rate_fpm: f64,
    pub track_deg: f64,
    pub lane: LaneDesignation,
    pub s_nm: f64,
}

impl Sample {
    pub fn of(t: f64, st: &AircraftState) -> Sample {
        Sample {
            t,
            position: st.position,
            altitude_ft: st.altitude_ft,
            ground_speed_kt: st.ground_speed_kt,
            vertical_rate_fpm: st.vertical_rate_fpm,
            track_deg: st.track_deg,
            lane: st.lane,
            s_nm: st.s_nm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// Trigger held; the instruction is issued.
    Fired,
    /// The pilot's response takes effect.
    Applied,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub id: ActionId,
    pub axis: Axis,
    pub kind: EventKind,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub callsign: Callsign,
    pub route: String,
    pub samples: Vec<Sample>,
    pub events: Vec<ActionEvent>,
    pub exited_at: Option<f64>,
    /// Actions already in progress when the trajectory began.
    #[serde(default)]
    pub active_at_start: BTreeMap<Axis, ActionId>,
}

impl Trajectory {
    pub fn first_time(&self) -> Option<f64> {
        self.samples.first().map(|s| s.t)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    /// Sample at `t`, if the aircraft was in the sector then.
    pub fn at(&self, t: f64, dt: f64) -> Option<&Sample> {
        let t0 = self.first_time()?;
        let i = ((t - t0) / dt).round();
        if i < 0.0 {
            return None;
        }
        self.samples.get(i as usize).filter(|s| (s.t - t).abs() < 1e-6)
    }

    pub fn event_time(&self, id: ActionId, kind: EventKind) -> Option<f64> {
        self.events.iter().find(|e| e.id == id && e.kind == kind).map(|e| e.t)
    }

    /// Actions that had fired but not completed at time `t`.
    pub fn active_at(&self, t: f64) -> BTreeMap<Axis, ActionId> {
        let mut out = BTreeMap::new();
        for (axis, id) in &self.active_at_start {
            if !self.event_time(*id, EventKind::Completed).is_some_and(|c| c <= t + 1e-9) {
                out.insert(*axis, *id);
            }
        }
        for e in self.events.iter().filter(|e| e.kind == EventKind::Fired && e.t <= t + 1e-9) {
            let done = self.event_time(e.id, EventKind::Completed).is_some_and(|c| c <= t + 1e-9);
            if !done {
                out.insert(e.axis, e.id);
            }
        }
        out
    }
}

/// Which simulation a rollout is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RolloutSource {
    Nominal,
    Perturbed { index: usize },
    Counterfactual { cut_s: f64 },
    GroundTruth,
}

impl RolloutSource {
    /// Total order: nominal, perturbed by index, counterfactual by cut time.
    pub fn cmp_key(&self, other: &RolloutSource) -> std::cmp::Ordering {
        let rank = |s: &RolloutSource| match s {
            RolloutSource::Nominal => (0, 0.0),
            RolloutSource::Perturbed { index } => (1, *index as f64),
            RolloutSource::Counterfactual { cut_s } => (2, *cut_s),
            RolloutSource::GroundTruth => (3, 0.0),
        };
        let (a, b) = (rank(self), rank(other));
        a.0.cmp(&b.0).then(a.1.total_cmp(&b.1))
    }
}

impl fmt::Display for RolloutSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RolloutSource::Nominal => write!(f, "nominal"),
            RolloutSource::Perturbed { index } => write!(f, "perturbed({index})"),
            RolloutSource::Counterfactual { cut_s } => write!(f, "counterfactual({cut_s:.0})"),
            RolloutSource::GroundTruth => write!(f, "ground-truth"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub source: RolloutSource,
    pub t0: f64,
    pub dt: f64,
    /// Sorted by callsign.
    pub trajectories: Vec<Trajectory>,
}

impl Rollout {
    pub fn trajectory(&self, cs: &Callsign) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| &t.callsign == cs)
    }

    fn digest(&self, h: &mut Sha256) {
        h.update(self.source.to_string().as_bytes());
        h.update(self.t0.to_bits().to_le_bytes());
        for tr in &self.trajectories {
            h.update(tr.callsign.as_str().as_bytes());
            for s in &tr.samples {
                for v in [s.t, s.position.x, s.position.y, s.altitude_ft, s.ground_speed_kt, s.vertical_rate_fpm] {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
            for e in &tr.events {
                h.update(e.id.0.to_le_bytes());
                h.update([e.kind as u8]);
                h.update(e.t.to_bits().to_le_bytes());
            }
        }
    }

    /// Line-delimited export: one JSON record per sample.
    pub fn export_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for tr in &self.trajectories {
            for s in &tr.samples {
                out.push(
                    serde_json::json!({
                        "t": s.t,
                        "callsign": tr.callsign,
                        "x": s.position.x,
                        "y": s.position.y,
                        "altitude_ft": s.altitude_ft,
                    })
                    .to_string(),
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSet {
    pub plan_revision: u64,
    pub plan_fingerprint: String,
    pub nominal: Rollout,
    pub perturbed: Vec<Rollout>,
    pub counterfactuals: Vec<Rollout>,
}

impl RolloutSet {
    pub fn all(&self) -> impl Iterator<Item = &Rollout> {
        std::iter::once(&self.nominal).chain(self.perturbed.iter()).chain(self.counterfactuals.iter())
    }

    pub fn find(&self, source: &RolloutSource) -> Option<&Rollout> {
        self.all().find(|r| r.source == *source)
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.plan_fingerprint.as_bytes());
        for r in self.all() {
            r.digest(&mut h);
        }
        hex::encode(h.finalize())
    }
}

/// Per-step knobs beyond the plan itself.
#[derive(Clone, Copy, Default)]
pub struct StepOptions<'a> {
    /// Loss of communication: no new trigger fires.
    pub comms_frozen: bool,
    /// Extra permission needed before a triggered action may be issued
    /// (clearance approval).
    pub gate: Option<&'a (dyn Fn(&Callsign, &PlannedAction) -> bool + Sync)>,
}

/// What happened during one step, in processing order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub events: Vec<(Callsign, ActionEvent)>,
    pub entered: Vec<Callsign>,
    pub exited: Vec<Callsign>,
}

impl StepReport {
    /// Actions issued (fired) this step.
    pub fn issued(&self) -> impl Iterator<Item = (&Callsign, ActionId)> {
        self.events.iter().filter(|(_, e)| e.kind == EventKind::Fired).map(|(c, e)| (c, e.id))
    }
}

/// Ordered (observer, other) pairs whose passage history some condition needs.
pub fn watched_pairs(plan: &AirspacePlan) -> BTreeSet<(Callsign, Callsign)> {
    let mut out = BTreeSet::new();
    let mut refs = BTreeSet::new();
    for (cs, fp) in &plan.plans {
        refs.clear();
        for pa in fp.actions() {
            pa.trigger.referenced(&mut refs);
            pa.completion.referenced(&mut refs);
        }
        for c in plan.constraints.iter().filter(|c| &c.callsign == cs) {
            c.release.referenced(&mut refs);
        }
        for o in &refs {
            out.insert((cs.clone(), o.clone()));
        }
    }
    out
}

/// Mutable simulation state: the snapshot, pair history and pending entrants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub snapshot: Snapshot,
    pub history: PairHistory,
    pub scheduled: Vec<ScheduledEntry>,
}

fn integrity(cs: &Callsign, reason: impl Into<String>) -> SimError {
    SimError::Integrity { callsign: cs.clone(), reason: reason.into() }
}

fn switch_lane(lanes: &LaneNetwork, st: &mut AircraftState, route: &str, lane: LaneDesignation) -> Result<(), SimError> {
    if route != st.route {
        return Err(integrity(&st.callsign, format!("cannot join route {route} from {}", st.route)));
    }
    if st.lane == lane {
        return Ok(());
    }
    let target = lanes.lane(route, lane).ok_or_else(|| PlanError::UnknownRoute(route.to_string()))?;
    let proj = target.along_track(st.position);
    st.lane = lane;
    st.s_nm = proj.s;
    st.position = target.point_at(proj.s).map_err(|e| integrity(&st.callsign, e.to_string()))?;
    st.track_deg = track_deg(target.direction_at(proj.s));
    Ok(())
}

fn apply_effect(world: &World<'_>, st: &mut AircraftState, action: &Action) -> Result<(), SimError> {
    match action {
        Action::ClimbTo { level } | Action::DescendTo { level } | Action::MaintainLevel { level } => {
            st.cleared_altitude_ft = level.feet();
        }
        Action::SetSpeed { speed_kt } => {
            st.commanded_speed_kt = speed_kt.clamp(world.perf.min_speed_kt, world.perf.max_speed_kt);
        }
        Action::FlyLane { route, lane } => switch_lane(world.lanes, st, route, *lane)?,
        Action::ResumeNav { .. } => {
            let route = st.route.clone();
            switch_lane(world.lanes, st, &route, LaneDesignation::Centre)?
        }
    }
    Ok(())
}

/// Advances `st` by `dt`; returns true once the aircraft reaches the end of its lane.
fn integrate(world: &World<'_>, st: &mut AircraftState, dt: f64, speed_factor: f64) -> Result<bool, SimError> {
    let lane = world
        .lanes
        .lane(&st.route, st.lane)
        .ok_or_else(|| integrity(&st.callsign, format!("no lane {} on route {}", st.lane, st.route)))?;
    st.ground_speed_kt = st.commanded_speed_kt * speed_factor;
    let s = st.s_nm + st.ground_speed_kt * dt / 3600.0;
    let diff = st.cleared_altitude_ft - st.altitude_ft;
    let minutes = dt / 60.0;
    if diff.abs() < 1e-9 {
        st.vertical_rate_fpm = 0.0;
    } else {
        let rate = if diff > 0.0 { world.perf.climb_rate_fpm } else { world.perf.descent_rate_fpm } * speed_factor;
        let change = diff.abs().min(rate * minutes);
        if change >= diff.abs() - 1e-6 {
            st.altitude_ft = st.cleared_altitude_ft;
        } else {
            st.altitude_ft += change * diff.signum();
        }
        st.vertical_rate_fpm = diff.signum() * change / minutes;
    }
    if s >= lane.length() - 1e-6 {
        st.s_nm = lane.length();
        return Ok(true);
    }
    st.s_nm = s;
    st.position = lane.point_at(s).map_err(|e| integrity(&st.callsign, e.to_string()))?;
    st.track_deg = track_deg(lane.direction_at(s));
    Ok(false)
}

/// Runs trigger, effect and completion processing for one aircraft until it
/// settles at the current instant.
#[allow(clippy::too_many_arguments)]
fn process_plan(
    world: &World<'_>,
    env: &EvalEnv<'_>,
    fp: &FlightPlan,
    st: &mut AircraftState,
    snapshot: &Snapshot,
    history: &PairHistory,
    delay: f64,
    opts: &StepOptions<'_>,
    events: &mut Vec<(Callsign, ActionEvent)>,
) -> Result<(), SimError> {
    let t = snapshot.time_s;
    for axis in Axis::ALL {
        let chain = fp.chain(axis);
        let budget = 3 * chain.len() + 3;
        for _ in 0..budget {
            let cur = *st.progress.get(axis);
            let Some(pa) = chain.get(cur.index) else {
                break;
            };
            let cs = st.callsign.clone();
            let ev = |kind| (cs.clone(), ActionEvent { id: pa.id, axis, kind, t });
            match cur.phase {
                Phase::Pending => {
                    if opts.comms_frozen || !evaluate_for(&pa.trigger, st, snapshot, history, env)? {
                        break;
                    }
                    if opts.gate.is_some_and(|g| !g(&st.callsign, pa)) {
                        break;
                    }
                    events.push(ev(EventKind::Fired));
                    st.progress.get_mut(axis).phase = Phase::Fired { at: t, effect_at: t + delay };
                }
                Phase::Fired { effect_at, .. } => {
                    if t + 1e-9 < effect_at {
                        break;
                    }
                    apply_effect(world, st, &pa.action)?;
                    events.push(ev(EventKind::Applied));
                    st.progress.get_mut(axis).phase = Phase::Applied { at: t };
                }
                Phase::Applied { .. } => {
                    if !evaluate_for(&pa.completion, st, snapshot, history, env)? {
                        break;
                    }
                    events.push(ev(EventKind::Completed));
                    *st.progress.get_mut(axis) = crate::plans::AxisCursor { index: cur.index + 1, phase: Phase::Pending };
                }
            }
        }
    }
    Ok(())
}

impl SimState {
    pub fn new(snapshot: Snapshot, scheduled: Vec<ScheduledEntry>) -> Self {
        let mut scheduled = scheduled;
        scheduled.sort_by(|a, b| a.entry_time_s.total_cmp(&b.entry_time_s).then(a.state.callsign.cmp(&b.state.callsign)));
        SimState { snapshot, history: PairHistory::default(), scheduled }
    }

    pub fn time(&self) -> f64 {
        self.snapshot.time_s
    }

    /// The same state with every plan cursor mapped from `old` onto `new`.
    pub fn rebased(&self, old: &AirspacePlan, new: &AirspacePlan) -> SimState {
        let mut out = self.clone();
        let states = out.snapshot.aircraft.values_mut().chain(out.scheduled.iter_mut().map(|e| &mut e.state));
        for st in states {
            if let (Some(o), Some(n)) = (old.get(&st.callsign), new.get(&st.callsign)) {
                st.progress = st.progress.rebase(o, n);
            }
        }
        out
    }

    fn inject_due(&mut self, report: &mut StepReport) {
        let t = self.snapshot.time_s;
        while self.scheduled.first().is_some_and(|e| e.entry_time_s <= t + 1e-9) {
            let e = self.scheduled.remove(0);
            report.entered.push(e.state.callsign.clone());
            self.snapshot.aircraft.insert(e.state.callsign.clone(), e.state);
        }
    }

    fn observe(&mut self, lanes: &LaneNetwork, watched: &BTreeSet<(Callsign, Callsign)>) {
        for (a, b) in watched {
            self.history.observe(lanes, &self.snapshot, a, b);
        }
    }

    fn process_all(
        &mut self,
        world: &World<'_>,
        plan: &AirspacePlan,
        roster: &BTreeSet<Callsign>,
        pert: &Perturbation,
        opts: &StepOptions<'_>,
        report: &mut StepReport,
    ) -> Result<(), SimError> {
        let env = EvalEnv { lanes: world.lanes, minima: world.minima, roster };
        let callsigns: Vec<Callsign> = self.snapshot.aircraft.keys().cloned().collect();
        for cs in callsigns {
            let Some(fp) = plan.get(&cs) else {
                continue;
            };
            let mut st = self.snapshot.aircraft[&cs].clone();
            process_plan(world, &env, fp, &mut st, &self.snapshot, &self.history, pert.pilot_delay(&cs), opts, &mut report.events)?;
            self.snapshot.aircraft.insert(cs, st);
        }
        Ok(())
    }

    /// Processes the current instant without advancing time: due entrants
    /// are injected and triggers that already hold fire.
    pub fn settle(
        &mut self,
        world: &World<'_>,
        plan: &AirspacePlan,
        pert: &Perturbation,
        opts: &StepOptions<'_>,
    ) -> Result<StepReport, SimError> {
        let watched = watched_pairs(plan);
        let roster = plan.roster();
        let mut report = StepReport::default();
        self.inject_due(&mut report);
        self.observe(world.lanes, &watched);
        self.process_all(world, plan, &roster, pert, opts, &mut report)?;
        Ok(report)
    }

    /// Advances the whole airspace by `dt` seconds.
    pub fn step(
        &mut self,
        world: &World<'_>,
        plan: &AirspacePlan,
        dt: f64,
        pert: &Perturbation,
        opts: &StepOptions<'_>,
    ) -> Result<StepReport, SimError> {
        self.step_with(world, plan, &watched_pairs(plan), &plan.roster(), dt, pert, opts)
    }

    #[allow(clippy::too_many_arguments)]
    fn step_with(
        &mut self,
        world: &World<'_>,
        plan: &AirspacePlan,
        watched: &BTreeSet<(Callsign, Callsign)>,
        roster: &BTreeSet<Callsign>,
        dt: f64,
        pert: &Perturbation,
        opts: &StepOptions<'_>,
    ) -> Result<StepReport, SimError> {
        if !(dt > 0.0) {
            return Err(SimError::Step(dt));
        }
        let mut report = StepReport::default();
        let mut exited = Vec::new();
        for (cs, st) in self.snapshot.aircraft.iter_mut() {
            if integrate(world, st, dt, pert.speed_factor(cs))? {
                exited.push(cs.clone());
            }
        }
        self.snapshot.time_s += dt;
        for cs in exited {
            self.snapshot.aircraft.remove(&cs);
            self.history.mark_departed(&cs);
            report.exited.push(cs);
        }
        self.inject_due(&mut report);
        self.observe(world.lanes, watched);
        self.process_all(world, plan, roster, pert, opts, &mut report)?;
        Ok(report)
    }
}

struct Recorder {
    trajectories: BTreeMap<Callsign, Trajectory>,
}

impl Recorder {
    fn new() -> Self {
        Recorder { trajectories: BTreeMap::new() }
    }

    fn record(&mut self, plan: &AirspacePlan, state: &SimState, report: &StepReport) {
        let t = state.snapshot.time_s;
        for cs in &report.exited {
            if let Some(tr) = self.trajectories.get_mut(cs) {
                tr.exited_at = Some(t);
            }
        }
        for (cs, st) in &state.snapshot.aircraft {
            let tr = self.trajectories.entry(cs.clone()).or_insert_with(|| Trajectory {
                callsign: cs.clone(),
                route: st.route.clone(),
                samples: Vec::new(),
                events: Vec::new(),
                exited_at: None,
                active_at_start: plan
                    .get(cs)
                    .and_then(|fp| crate::plans::active_actions(fp, &st.progress).ok())
                    .map(|m| m.into_iter().map(|(axis, pa)| (axis, pa.id)).collect())
                    .unwrap_or_default(),
            });
            tr.samples.push(Sample::of(t, st));
        }
        for (cs, e) in &report.events {
            if let Some(tr) = self.trajectories.get_mut(cs) {
                tr.events.push(*e);
            }
        }
    }

    fn finish(self, source: RolloutSource, t0: f64, dt: f64) -> Rollout {
        Rollout { source, t0, dt, trajectories: self.trajectories.into_values().collect() }
    }
}

/// Simulation settings for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon_s: f64,
    pub dt_s: f64,
    pub entry_lookahead_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { horizon_s: MAX_HORIZON_S, dt_s: 5.0, entry_lookahead_s: 900.0 }
    }
}

/// Result of [`simulate`]: the rollout plus any states captured on the way.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub rollout: Rollout,
    pub captured: Vec<SimState>,
    pub final_state: SimState,
}

/// Forward-simulates from `start`. Entrants scheduled beyond the lookahead
/// window are ignored. States at the times in `capture_at` are returned.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    world: &World<'_>,
    plan: &AirspacePlan,
    start: &SimState,
    cfg: &RunConfig,
    pert: &Perturbation,
    opts: &StepOptions<'_>,
    source: RolloutSource,
    capture_at: &[f64],
) -> Result<SimOutput, SimError> {
    if !(cfg.horizon_s > 0.0 && cfg.horizon_s <= MAX_HORIZON_S) {
        return Err(SimError::Horizon(cfg.horizon_s));
    }
    if !(cfg.dt_s > 0.0) {
        return Err(SimError::Step(cfg.dt_s));
    }
    let t0 = start.time();
    let mut state = start.clone();
    state.scheduled.retain(|e| e.entry_time_s <= t0 + cfg.entry_lookahead_s + 1e-9);
    let watched = watched_pairs(plan);
    let roster = plan.roster();
    let mut rec = Recorder::new();
    let mut captured = Vec::new();
    let mut pending_captures = capture_at.iter().copied().peekable();

    let report = state.settle(world, plan, pert, opts)?;
    rec.record(plan, &state, &report);
    let steps = (cfg.horizon_s / cfg.dt_s + 1e-9).floor() as usize;
    for i in 0..=steps {
        let t = state.time();
        while pending_captures.peek().is_some_and(|c| *c <= t + 1e-9) {
            let c = pending_captures.next().expect("peeked");
            if (c - t).abs() < cfg.dt_s / 2.0 {
                captured.push(state.clone());
            }
        }
        if i == steps || (state.snapshot.aircraft.is_empty() && state.scheduled.is_empty()) {
            break;
        }
        let report = state.step_with(world, plan, &watched, &roster, cfg.dt_s, pert, opts)?;
        rec.record(plan, &state, &report);
    }
    Ok(SimOutput { rollout: rec.finish(source, t0, cfg.dt_s), captured, final_state: state })
}

/// Loss-of-communication rollout from a cut state: no new trigger fires,
/// actions already issued run to completion, scheduled entrants are left out.
pub fn rollout_counterfactual(
    world: &World<'_>,
    plan: &AirspacePlan,
    cut: &SimState,
    duration_s: f64,
    dt_s: f64,
) -> Result<Rollout, SimError> {
    let source = RolloutSource::Counterfactual { cut_s: cut.time() };
    let mut state = cut.clone();
    state.scheduled.clear();
    let opts = StepOptions { comms_frozen: true, gate: None };
    let pert = Perturbation::nominal();
    if duration_s <= 0.0 {
        let mut rec = Recorder::new();
        rec.record(plan, &state, &StepReport::default());
        return Ok(rec.finish(source, cut.time(), dt_s));
    }
    let cfg = RunConfig { horizon_s: duration_s.min(MAX_HORIZON_S), dt_s, entry_lookahead_s: 0.0 };
    Ok(simulate(world, plan, &state, &cfg, &pert, &opts, source, &[])?.rollout)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub rollouts: usize,
    pub ranges: PerturbationRanges,
    pub seed: u64,
    pub run: RunConfig,
    pub cut_interval_s: f64,
    pub counterfactual_s: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            rollouts: 20,
            ranges: PerturbationRanges::default(),
            seed: 0,
            run: RunConfig::default(),
            cut_interval_s: 300.0,
            counterfactual_s: 900.0,
        }
    }
}

impl EnsembleConfig {
    pub fn cut_times(&self, t0: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if self.cut_interval_s <= 0.0 {
            return vec![t0];
        }
        let mut k = 0.0;
        while k * self.cut_interval_s < self.run.horizon_s - 1e-9 {
            out.push(t0 + k * self.cut_interval_s);
            k += 1.0;
        }
        out
    }

    /// Perturbation for ensemble member `index`.
    pub fn perturbation(&self, index: usize, roster: &BTreeSet<Callsign>) -> Perturbation {
        Perturbation::draw(self.seed, index as u64, self.ranges, roster)
    }
}

/// Nominal run, N perturbed runs and a counterfactual at every cut time,
/// all from the same plan. Deterministic for a given seed.
pub fn simulate_ensemble(
    world: &World<'_>,
    plan: &AirspacePlan,
    start: &SimState,
    cfg: &EnsembleConfig,
) -> Result<RolloutSet, SimError> {
    if cfg.rollouts == 0 {
        return Err(SimError::EmptyEnsemble);
    }
    let roster = plan.roster();
    let cuts = cfg.cut_times(start.time());
    let opts = StepOptions::default();
    let nominal =
        simulate(world, plan, start, &cfg.run, &Perturbation::nominal(), &opts, RolloutSource::Nominal, &cuts)?;
    let perturbed = (0..cfg.rollouts)
        .into_par_iter()
        .map(|i| {
            let pert = cfg.perturbation(i, &roster);
            simulate(world, plan, start, &cfg.run, &pert, &opts, RolloutSource::Perturbed { index: i }, &[])
                .map(|o| o.rollout)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let counterfactuals = nominal
        .captured
        .par_iter()
        .filter(|s| !s.snapshot.aircraft.is_empty())
        .map(|cut| rollout_counterfactual(world, plan, cut, cfg.counterfactual_s, cfg.run.dt_s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RolloutSet {
        plan_revision: plan.revision,
        plan_fingerprint: plan.fingerprint(),
        nominal: nominal.rollout,
        perturbed,
        counterfactuals,
    })
}

#[cfg(test)]
mod tests;
