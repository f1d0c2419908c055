use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

use crate::conflict::{check_separation, detect, TechnicalSafetyRecord};
use crate::geometry::{LaneDesignation, LaneNetwork};
use crate::plans::{
    build_nominal_plan, release_constraints, remaining_to_fix, Action, ActionId, AirspacePlan, AxisDirection, Condition,
    EntryState, EvalEnv, FlightPlan, Origin, PlanError, PlanProgress, PlannedAction, AT_FIX_TOLERANCE_NM,
};
use crate::resolver::{resolve_airspace, ResolutionOutcome, ResolveError, Resolver, StrategyLibrary};
use crate::state::AircraftState;
use crate::twin::{
    simulate_ensemble, EnsembleConfig, Perturbation, ScheduledEntry, SimError, SimState, StepOptions, StepReport, World,
};
use crate::units::{Callsign, FlightLevel};

use super::log::{predicted_paths, EventLog, LogError, Record, LOG_SCHEMA_VERSION};
use super::metrics::{emit_metrics, EpisodeMetrics};
use super::scenario::{validate_aircraft, AircraftSpec, Scenario, ScenarioError};
use super::{Clearance, ClearanceId, ClearanceStatus, Command};

/// Perturbation index of the ground truth; the ensemble uses 0..N.
pub const GROUND_TRUTH_DRAW: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("log has no episode_start record")]
    NoScenario,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpisodeOptions {
    /// Issue resolver manoeuvres without waiting for the operator. Nominal
    /// and fallback actions never wait.
    pub auto_approve: bool,
    /// Approve a clearance left Proposed for this long.
    pub approve_after_s: Option<f64>,
}

/// The live episode: ground truth, current plan, clearances and log.
pub struct Episode {
    scenario: Scenario,
    opts: EpisodeOptions,
    lanes: LaneNetwork,
    library: StrategyLibrary,
    ensemble: EnsembleConfig,
    plan: AirspacePlan,
    truth: SimState,
    truth_pert: Perturbation,
    pending: Vec<AircraftSpec>,
    known: BTreeMap<Callsign, AircraftSpec>,
    clearances: Vec<Clearance>,
    by_action: BTreeMap<ActionId, ClearanceId>,
    approved: BTreeSet<ActionId>,
    log: EventLog,
    cycle: u64,
    next_revision: u64,
    needs_verify: bool,
    last_verify_t: Option<f64>,
    latest_tsr: TechnicalSafetyRecord,
    in_violation: BTreeSet<(Callsign, Callsign)>,
    predicted_exit: BTreeMap<Callsign, f64>,
    missed: BTreeSet<Callsign>,
    alerts: Vec<String>,
    paused: bool,
    step_credit: u32,
    finished: Option<String>,
}

fn ordered(a: &Callsign, b: &Callsign) -> (Callsign, Callsign) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Direction an operator-supplied action would push its axis.
fn action_direction(action: &Action, st: Option<&AircraftState>) -> Option<AxisDirection> {
    match action {
        Action::FlyLane { lane: LaneDesignation::Left, .. } => Some(AxisDirection::Left),
        Action::FlyLane { lane: LaneDesignation::Right, .. } => Some(AxisDirection::Right),
        Action::ClimbTo { .. } => Some(AxisDirection::ClimbOnly),
        Action::DescendTo { .. } => Some(AxisDirection::DescendOnly),
        Action::SetSpeed { speed_kt } => {
            let cur = st?.commanded_speed_kt;
            if *speed_kt < cur {
                Some(AxisDirection::SlowOnly)
            } else if *speed_kt > cur {
                Some(AxisDirection::FastOnly)
            } else {
                None
            }
        }
        _ => None,
    }
}

impl Episode {
    pub fn new(scenario: Scenario, opts: EpisodeOptions) -> Result<Episode, EpisodeError> {
        scenario.validate()?;
        let lanes = scenario.lanes()?;
        let mut pending = scenario.aircraft.clone();
        pending.sort_by(|a, b| a.entry_time_s.total_cmp(&b.entry_time_s).then(a.callsign.cmp(&b.callsign)));
        let known = pending.iter().map(|a| (a.callsign.clone(), a.clone())).collect::<BTreeMap<_, _>>();
        let truth_pert = Perturbation::draw(scenario.seed, GROUND_TRUTH_DRAW, scenario.perturbation, known.keys());
        let mut log = EventLog::default();
        log.push(
            0.0,
            Record::EpisodeStart {
                schema_version: LOG_SCHEMA_VERSION,
                scenario: Box::new(scenario.clone()),
                auto_approve: opts.auto_approve,
                approve_after_s: opts.approve_after_s,
                ground_truth: truth_pert.clone(),
            },
        );
        Ok(Episode {
            ensemble: scenario.ensemble(),
            scenario,
            opts,
            lanes,
            library: StrategyLibrary::default(),
            plan: AirspacePlan::default(),
            truth: SimState::default(),
            truth_pert,
            pending,
            known,
            clearances: Vec::new(),
            by_action: BTreeMap::new(),
            approved: BTreeSet::new(),
            log,
            cycle: 0,
            next_revision: 1,
            needs_verify: true,
            last_verify_t: None,
            latest_tsr: TechnicalSafetyRecord::default(),
            in_violation: BTreeSet::new(),
            predicted_exit: BTreeMap::new(),
            missed: BTreeSet::new(),
            alerts: Vec::new(),
            paused: false,
            step_credit: 0,
            finished: None,
        })
    }

    pub fn time(&self) -> f64 {
        self.truth.time()
    }

    pub fn cycle_count(&self) -> u64 {
        self.cycle
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn lanes(&self) -> &LaneNetwork {
        &self.lanes
    }

    pub fn plan(&self) -> &AirspacePlan {
        &self.plan
    }

    pub fn truth(&self) -> &SimState {
        &self.truth
    }

    pub fn clearances(&self) -> &[Clearance] {
        &self.clearances
    }

    pub fn clearance(&self, id: ClearanceId) -> Option<&Clearance> {
        self.clearances.get(id.0 as usize)
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn latest_tsr(&self) -> &TechnicalSafetyRecord {
        &self.latest_tsr
    }

    pub fn alerts(&self) -> &[String] {
        &self.alerts
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn finished(&self) -> Option<&str> {
        self.finished.as_deref()
    }

    /// Whether the driver should run a cycle now (not finished, and either
    /// running or holding step credit).
    pub fn wants_cycle(&self) -> bool {
        self.finished.is_none() && (!self.paused || self.step_credit > 0)
    }

    fn world(&self) -> World<'_> {
        World { lanes: &self.lanes, minima: &self.scenario.minima, perf: &self.scenario.performance }
    }

    fn bump_revision(&mut self) -> u64 {
        let r = self.next_revision;
        self.next_revision += 1;
        r
    }

    /// Adopts `new` as the current plan, remapping ground-truth cursors.
    fn adopt(&mut self, new: AirspacePlan, reason: &str) {
        let t = self.time();
        self.truth = self.truth.rebased(&self.plan, &new);
        self.plan = new;
        self.next_revision = self.next_revision.max(self.plan.revision + 1);
        for c in &mut self.clearances {
            let gone = self.plan.get(&c.callsign).is_none_or(|fp| fp.find(c.action_id).is_none());
            if gone && matches!(c.status, ClearanceStatus::Proposed | ClearanceStatus::Approved) {
                c.status = ClearanceStatus::Missed;
                self.log.push(t, Record::Clearance { clearance: c.clone() });
            }
        }
        self.log.push(
            t,
            Record::Plan {
                revision: self.plan.revision,
                fingerprint: self.plan.fingerprint(),
                reason: reason.to_string(),
                plan: Box::new(self.plan.clone()),
            },
        );
        self.needs_verify = true;
    }

    fn nominal_plan(&self, plan: &mut AirspacePlan, entry: &EntryState, spec: &AircraftSpec) -> Result<FlightPlan, PlanError> {
        build_nominal_plan(entry, &self.lanes, spec.preferred_level(), &spec.exit, &self.scenario.performance, plan)
    }

    /// Builds nominal plans for aircraft due within the lookahead window.
    fn ingest(&mut self) -> Result<(), EpisodeError> {
        let t = self.time();
        let horizon = t + self.ensemble.run.entry_lookahead_s + 1e-9;
        let due: Vec<AircraftSpec> = self.pending.iter().filter(|a| a.entry_time_s <= horizon).cloned().collect();
        if due.is_empty() {
            return Ok(());
        }
        self.pending.retain(|a| a.entry_time_s > horizon);
        let mut plan = self.plan.clone();
        for spec in &due {
            let entry = spec.entry_state();
            let fp = self.nominal_plan(&mut plan, &entry, spec)?;
            plan.plans.insert(spec.callsign.clone(), fp);
            let state = AircraftState::at_entry(&self.lanes, &entry)?;
            if spec.entry_time_s <= t + 1e-9 {
                self.truth.snapshot.aircraft.insert(spec.callsign.clone(), state);
            } else {
                self.truth.scheduled.push(ScheduledEntry { entry_time_s: spec.entry_time_s, state });
            }
        }
        self.truth.scheduled.sort_by(|a, b| {
            a.entry_time_s.total_cmp(&b.entry_time_s).then(a.state.callsign.cmp(&b.state.callsign))
        });
        plan.revision = self.bump_revision();
        let names: Vec<String> = due.iter().map(|a| a.callsign.to_string()).collect();
        self.adopt(plan, &format!("nominal plans for {}", names.join(", ")));
        Ok(())
    }

    fn release(&mut self) {
        let roster = self.plan.roster();
        let env = EvalEnv { lanes: &self.lanes, minima: &self.scenario.minima, roster: &roster };
        let kept = release_constraints(&self.plan.constraints, &self.truth.snapshot, &self.truth.history, &env);
        if kept.len() != self.plan.constraints.len() {
            let mut plan = self.plan.clone();
            plan.constraints = kept;
            plan.revision = self.bump_revision();
            self.adopt(plan, "axis constraints released");
            // releasing never makes a verified plan unsafe
            self.needs_verify = false;
        }
    }

    /// Flags aircraft that can no longer make their exit level in time and
    /// replans their vertical profile straight to it.
    fn check_coordination(&mut self) -> Result<(), EpisodeError> {
        let t = self.time();
        let perf = self.scenario.performance;
        let mut replans = Vec::new();
        for (cs, st) in &self.truth.snapshot.aircraft {
            let Some(fp) = self.plan.get(cs) else { continue };
            if fp.exit_abandoned || self.missed.contains(cs) {
                continue;
            }
            let remaining = remaining_to_fix(&self.lanes, st, &fp.exit.fix)?;
            if remaining <= 0.0 {
                continue;
            }
            let gap = fp.exit.flight_level.feet() - st.altitude_ft;
            let rate = if gap > 0.0 { perf.climb_rate_fpm } else { perf.descent_rate_fpm };
            let needed = gap.abs() / rate * st.ground_speed_kt / 60.0;
            if needed > remaining + AT_FIX_TOLERANCE_NM {
                replans.push((cs.clone(), st.altitude_ft, st.progress.vertical.index, needed, remaining));
            }
        }
        for (cs, alt, cursor, needed, remaining) in replans {
            self.missed.insert(cs.clone());
            let reason = format!("needs {needed:.1} NM to make exit level, {remaining:.1} NM left");
            self.log.push(t, Record::MissedCoordination { callsign: cs.clone(), reason: reason.clone() });
            let mut plan = self.plan.clone();
            let ids = [ActionId(plan.fresh_id()), ActionId(plan.fresh_id())];
            let fp = plan.plans.get_mut(&cs).expect("checked above");
            let level = fp.exit.flight_level;
            let reached = Condition::ReachedLevel { level };
            fp.vertical.truncate(cursor.min(fp.vertical.len()));
            fp.vertical.push(PlannedAction {
                id: ids[0],
                trigger: Condition::Immediate,
                action: Action::change_level(alt, level),
                completion: reached.clone(),
                origin: Origin::Nominal,
            });
            fp.vertical.push(PlannedAction {
                id: ids[1],
                trigger: reached,
                action: Action::MaintainLevel { level },
                completion: Condition::AtFix { fix: fp.exit.fix.clone(), tolerance_nm: AT_FIX_TOLERANCE_NM },
                origin: Origin::Nominal,
            });
            plan.revision = self.bump_revision();
            self.log.push(t, Record::Replan { callsign: cs.clone(), reason: "missed coordination".into() });
            self.adopt(plan, &format!("{cs} replanned after missed coordination"));
        }
        Ok(())
    }

    fn verify(&mut self) -> Result<(), EpisodeError> {
        let t = self.time();
        let due = self.needs_verify
            || self.last_verify_t.is_none_or(|last| t - last >= self.scenario.episode.reverify_s - 1e-9);
        if !due || self.plan.plans.is_empty() {
            return Ok(());
        }
        self.needs_verify = false;
        self.last_verify_t = Some(t);
        let rollouts = simulate_ensemble(&self.world(), &self.plan, &self.truth, &self.ensemble)?;
        let tsr = detect(&rollouts, &self.scenario.minima, &self.scenario.thresholds);
        for tr in &rollouts.nominal.trajectories {
            if let Some(x) = tr.exited_at {
                self.predicted_exit.entry(tr.callsign.clone()).or_insert(x);
            }
        }
        self.log.push(
            t,
            Record::Verification {
                revision: self.plan.revision,
                rollouts_fingerprint: rollouts.fingerprint(),
                tsr: tsr.clone(),
                predicted: predicted_paths(&rollouts),
            },
        );
        self.latest_tsr = tsr;
        if self.latest_tsr.is_empty() {
            return Ok(());
        }
        self.resolve()
    }

    fn resolve(&mut self) -> Result<(), EpisodeError> {
        let t = self.time();
        let mut base = self.plan.clone();
        base.revision = self.bump_revision() - 1;
        let resolver = Resolver {
            world: self.world(),
            library: &self.library,
            params: &self.scenario.strategy,
            search: self.scenario.search,
            ensemble: &self.ensemble,
            thresholds: &self.scenario.thresholds,
        };
        let res = resolve_airspace(&resolver, &self.plan, &self.truth)?;
        let top = res.trace.nodes.iter().map(|n| n.revision).max().unwrap_or(0).max(res.plan.revision);
        self.next_revision = self.next_revision.max(top + 1);
        self.log.push(
            t,
            Record::Resolution {
                from_revision: self.plan.revision,
                to_revision: res.plan.revision,
                solved: res.is_solved(),
                final_tsr_size: res.final_tsr.len(),
                trace: res.trace.clone(),
                stats: res.stats,
                applied: res.applied.clone(),
            },
        );
        match &res.outcome {
            ResolutionOutcome::Solved => {
                self.latest_tsr = res.final_tsr.clone();
                self.adopt(res.plan, "verified resolution");
                self.needs_verify = false;
            }
            ResolutionOutcome::Fallback { alert } => {
                self.alerts.push(alert.message.clone());
                self.log.push(
                    t,
                    Record::Alert { escalated: alert.escalated, message: alert.message.clone(), fallback: Some(alert.clone()) },
                );
                if !alert.escalated {
                    self.latest_tsr = res.final_tsr.clone();
                    self.adopt(res.plan, "fallback vertical separation");
                    self.needs_verify = false;
                }
            }
        }
        Ok(())
    }

    fn new_clearance(&mut self, cs: &Callsign, pa: &PlannedAction, status: ClearanceStatus) -> ClearanceId {
        let id = ClearanceId(self.clearances.len() as u64);
        self.clearances.push(Clearance {
            id,
            callsign: cs.clone(),
            action_id: pa.id,
            action: pa.action.clone(),
            phraseology: format!("{cs}, {}", pa.action.phraseology()),
            trigger: pa.trigger.clone(),
            origin: pa.origin,
            plan_revision: self.plan.revision,
            status,
            proposed_at: None,
            issued_at: None,
            completed_at: None,
        });
        self.by_action.insert(pa.id, id);
        id
    }

    fn set_status(&mut self, id: ClearanceId, status: ClearanceStatus, t: f64) {
        let c = &mut self.clearances[id.0 as usize];
        c.status = status;
        match status {
            ClearanceStatus::Proposed => c.proposed_at = Some(t),
            ClearanceStatus::Issued => c.issued_at = Some(t),
            ClearanceStatus::Completed => c.completed_at = Some(t),
            _ => {}
        }
        self.log.push(t, Record::Clearance { clearance: c.clone() });
    }

    fn planned_action(&self, cs: &Callsign, id: ActionId) -> Option<PlannedAction> {
        self.plan.get(cs).and_then(|fp| fp.find(id)).map(|(_, _, pa)| pa.clone())
    }

    fn record_step(&mut self, report: &StepReport, proposals: Vec<(Callsign, ActionId)>, exit_levels: &BTreeMap<Callsign, f64>) {
        let t = self.time();
        for (cs, id) in proposals {
            if self.by_action.contains_key(&id) {
                continue;
            }
            if let Some(pa) = self.planned_action(&cs, id) {
                let cid = self.new_clearance(&cs, &pa, ClearanceStatus::Proposed);
                self.set_status(cid, ClearanceStatus::Proposed, t);
            }
        }
        for (cs, e) in &report.events {
            match e.kind {
                crate::twin::EventKind::Fired => {
                    let cid = match self.by_action.get(&e.id) {
                        Some(c) => *c,
                        None => match self.planned_action(cs, e.id) {
                            Some(pa) => self.new_clearance(cs, &pa, ClearanceStatus::Approved),
                            None => continue,
                        },
                    };
                    self.set_status(cid, ClearanceStatus::Issued, t);
                }
                crate::twin::EventKind::Completed => {
                    if let Some(cid) = self.by_action.get(&e.id).copied() {
                        self.set_status(cid, ClearanceStatus::Completed, t);
                    }
                }
                crate::twin::EventKind::Applied => {}
            }
        }
        for cs in &report.exited {
            let level_ft = exit_levels.get(cs).copied().unwrap_or(f64::NAN);
            let spec_level = self.known.get(cs).map_or(level_ft, |a| a.exit.flight_level.feet());
            self.log.push(
                t,
                Record::Exit {
                    callsign: cs.clone(),
                    level_ft,
                    time_deviation_s: self.predicted_exit.get(cs).map(|p| t - p),
                    level_deviation_ft: (level_ft - spec_level).abs(),
                },
            );
        }
        let states: Vec<&AircraftState> = self.truth.snapshot.aircraft.values().collect();
        let mut now = BTreeSet::new();
        let mut fresh = Vec::new();
        for (i, a) in states.iter().enumerate() {
            for b in &states[i + 1..] {
                if check_separation(*a, *b, &self.scenario.minima) {
                    let pair = ordered(&a.callsign, &b.callsign);
                    if !self.in_violation.contains(&pair) {
                        fresh.push((pair.clone(), a.position.distance(b.position), (a.altitude_ft - b.altitude_ft).abs()));
                    }
                    now.insert(pair);
                }
            }
        }
        for (pair, distance_nm, vertical_ft) in fresh {
            self.log.push(t, Record::Violation { pair, distance_nm, vertical_ft });
        }
        self.in_violation = now;
    }

    fn approve_stale(&mut self) {
        let (Some(after), t) = (self.opts.approve_after_s, self.time()) else { return };
        let stale: Vec<ClearanceId> = self
            .clearances
            .iter()
            .filter(|c| c.status == ClearanceStatus::Proposed && c.proposed_at.is_some_and(|p| t - p >= after - 1e-9))
            .map(|c| c.id)
            .collect();
        for id in stale {
            self.approved.insert(self.clearances[id.0 as usize].action_id);
            self.set_status(id, ClearanceStatus::Approved, t);
        }
    }

    /// Advances the ground truth by one cadence, issuing clearances as
    /// their triggers hold (and, unless auto-approving, once approved).
    fn advance(&mut self) -> Result<(), EpisodeError> {
        let dt = self.scenario.episode.dt_s;
        let steps = ((self.scenario.episode.cadence_s / dt).round() as usize).max(1);
        for i in 0..=steps {
            let proposals = Mutex::new(Vec::new());
            let exit_levels: BTreeMap<Callsign, f64> =
                self.truth.snapshot.aircraft.iter().map(|(cs, s)| (cs.clone(), s.altitude_ft)).collect();
            let report = {
                let approved = &self.approved;
                let auto = self.opts.auto_approve;
                let gate = |cs: &Callsign, pa: &PlannedAction| {
                    let needs_operator = matches!(pa.origin, Origin::Manoeuvre { .. });
                    if auto || !needs_operator || approved.contains(&pa.id) {
                        return true;
                    }
                    proposals.lock().expect("proposal lock").push((cs.clone(), pa.id));
                    false
                };
                let opts = StepOptions { comms_frozen: false, gate: Some(&gate) };
                let world = World { lanes: &self.lanes, minima: &self.scenario.minima, perf: &self.scenario.performance };
                if i == 0 {
                    self.truth.settle(&world, &self.plan, &self.truth_pert, &opts)?
                } else {
                    self.truth.step(&world, &self.plan, dt, &self.truth_pert, &opts)?
                }
            };
            let proposals = proposals.into_inner().expect("proposal lock");
            self.record_step(&report, proposals, &exit_levels);
        }
        Ok(())
    }

    /// One pass of the operational cycle.
    pub fn cycle(&mut self) -> Result<(), EpisodeError> {
        if self.finished.is_some() {
            return Ok(());
        }
        let started = Instant::now();
        self.ingest()?;
        self.release();
        self.check_coordination()?;
        self.verify()?;
        self.approve_stale();
        self.advance()?;
        self.cycle += 1;
        if self.paused && self.step_credit > 0 {
            self.step_credit -= 1;
        }
        let t = self.time();
        let wall = started.elapsed().as_secs_f64() * 1000.0;
        self.log.push_timed(t, Record::Snapshot { cycle: self.cycle, snapshot: self.truth.snapshot.clone() }, Some(wall));
        let empty = self.pending.is_empty() && self.truth.snapshot.aircraft.is_empty() && self.truth.scheduled.is_empty();
        if empty {
            self.finish("all aircraft exited");
        } else if t >= self.scenario.episode.horizon_s - 1e-9 {
            self.finish("episode horizon reached");
        }
        Ok(())
    }

    fn finish(&mut self, reason: &str) {
        self.finished = Some(reason.to_string());
        self.log.push(self.time(), Record::EpisodeEnd { reason: reason.to_string() });
    }

    /// Applies an operator command between cycles. Every command, accepted
    /// or not, is logged.
    pub fn apply(&mut self, cmd: Command) -> Result<String, String> {
        let out = self.apply_inner(&cmd);
        let (accepted, detail) = match &out {
            Ok(d) => (true, d.clone()),
            Err(e) => (false, e.clone()),
        };
        let wall = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64() * 1000.0)
            .ok();
        self.log.push_timed(self.time(), Record::Command { cycle: self.cycle, command: cmd, accepted, detail }, wall);
        out
    }

    fn proposed(&self, id: ClearanceId) -> Result<&Clearance, String> {
        let c = self.clearance(id).ok_or_else(|| format!("unknown clearance {}", id.0))?;
        match c.status {
            ClearanceStatus::Proposed => Ok(c),
            s => Err(format!("clearance {} is {s:?}, not Proposed", id.0)),
        }
    }

    /// Replaces one aircraft's plan with a fresh nominal plan from its current state.
    fn replan_from_current(&mut self, cs: &Callsign, reason: &str) -> Result<(), String> {
        let spec = self.known.get(cs).cloned().ok_or_else(|| format!("unknown aircraft {cs}"))?;
        let t = self.time();
        let mut plan = self.plan.clone();
        let entry = match self.truth.snapshot.get(cs) {
            Some(st) => {
                let centre = self.lanes.lane(&st.route, LaneDesignation::Centre).ok_or("route has no centre lane")?;
                EntryState {
                    callsign: cs.clone(),
                    route: st.route.clone(),
                    entry_level: FlightLevel::nearest(st.altitude_ft),
                    ground_speed_kt: st.commanded_speed_kt,
                    along_nm: centre.along_track(st.position).s,
                }
            }
            None => spec.entry_state(),
        };
        let fp = self.nominal_plan(&mut plan, &entry, &spec).map_err(|e| e.to_string())?;
        plan.plans.insert(cs.clone(), fp);
        plan.constraints.retain(|c| &c.callsign != cs);
        plan.revision = self.bump_revision();
        self.log.push(t, Record::Replan { callsign: cs.clone(), reason: reason.to_string() });
        self.adopt(plan, &format!("{cs} replanned: {reason}"));
        if let Some(st) = self.truth.snapshot.aircraft.get_mut(cs) {
            st.progress = PlanProgress::default();
        }
        for e in self.truth.scheduled.iter_mut().filter(|e| &e.state.callsign == cs) {
            e.state.progress = PlanProgress::default();
        }
        Ok(())
    }

    fn apply_inner(&mut self, cmd: &Command) -> Result<String, String> {
        let t = self.time();
        match cmd {
            Command::Approve { id } => {
                let action_id = self.proposed(*id)?.action_id;
                self.approved.insert(action_id);
                self.set_status(*id, ClearanceStatus::Approved, t);
                Ok(format!("clearance {} approved", id.0))
            }
            Command::Reject { id } => {
                let cs = self.proposed(*id)?.callsign.clone();
                self.set_status(*id, ClearanceStatus::Rejected, t);
                self.replan_from_current(&cs, "clearance rejected by operator")?;
                Ok(format!("clearance {} rejected; {cs} will be replanned", id.0))
            }
            Command::Modify { id, action } => {
                let c = self.proposed(*id)?.clone();
                let fp = self.plan.get(&c.callsign).ok_or("aircraft has no plan")?;
                if let Action::FlyLane { route, .. } = action {
                    if route != &fp.route {
                        return Err(format!("{} is not on route {route}", c.callsign));
                    }
                }
                if let Some(level) = action.level() {
                    let s = &self.scenario.strategy;
                    if level < s.level_floor || level > s.level_ceiling {
                        return Err(format!("{level} outside the level band"));
                    }
                }
                if action.axis() != c.action.axis() {
                    return Err("replacement must act on the same axis".into());
                }
                if let Some(dir) = action_direction(action, self.truth.snapshot.get(&c.callsign)) {
                    let footprint = vec![(c.callsign.clone(), dir)];
                    if let Some(v) = crate::plans::violated_constraint(&footprint, &self.plan.constraints) {
                        return Err(format!(
                            "{dir:?} would reverse the {:?} constraint on {} {:?} until {}",
                            v.direction,
                            v.callsign,
                            v.axis,
                            v.release.describe()
                        ));
                    }
                }
                let mut plan = self.plan.clone();
                let new_id = ActionId(plan.fresh_id());
                let fp = plan.plans.get_mut(&c.callsign).expect("checked above");
                let (axis, idx, _) = fp.find(c.action_id).ok_or("action no longer in plan")?;
                let slot = &mut fp.chain_mut(axis)[idx];
                slot.id = new_id;
                slot.action = action.clone();
                slot.origin = Origin::Operator;
                let replacement = slot.clone();
                plan.revision = self.bump_revision();
                self.set_status(*id, ClearanceStatus::Rejected, t);
                self.adopt(plan, &format!("operator modified clearance {}", id.0));
                // the cursor pointed at the replaced action; keep its place
                if let Some(st) = self.truth.snapshot.aircraft.get_mut(&c.callsign) {
                    let cur = st.progress.get_mut(axis);
                    if cur.index == idx {
                        cur.phase = crate::plans::Phase::Pending;
                    }
                }
                self.approved.insert(new_id);
                let cid = self.new_clearance(&c.callsign, &replacement, ClearanceStatus::Approved);
                self.set_status(cid, ClearanceStatus::Approved, t);
                self.log.push(t, Record::Replan { callsign: c.callsign.clone(), reason: "clearance modified by operator".into() });
                Ok(format!("clearance {} replaced by {}", id.0, cid.0))
            }
            Command::Pause => {
                self.paused = true;
                Ok("paused".into())
            }
            Command::Resume => {
                self.paused = false;
                self.step_credit = 0;
                Ok("resumed".into())
            }
            Command::Step { n } => {
                if !self.paused {
                    return Err("step is only valid while paused".into());
                }
                self.step_credit += n;
                Ok(format!("{n} cycle(s) queued"))
            }
            Command::Seek { .. } => Err("seek is only available when replaying a log".into()),
            Command::Inject { aircraft } => {
                validate_aircraft(&self.scenario, aircraft, "inject").map_err(|e| e.to_string())?;
                if self.known.contains_key(&aircraft.callsign) {
                    return Err(format!("callsign {} already in use", aircraft.callsign));
                }
                let mut spec = aircraft.clone();
                spec.entry_time_s = spec.entry_time_s.max(t);
                self.known.insert(spec.callsign.clone(), spec.clone());
                self.pending.push(spec.clone());
                self.pending.sort_by(|a, b| a.entry_time_s.total_cmp(&b.entry_time_s).then(a.callsign.cmp(&b.callsign)));
                self.truth_pert =
                    Perturbation::draw(self.scenario.seed, GROUND_TRUTH_DRAW, self.scenario.perturbation, self.known.keys());
                self.needs_verify = true;
                Ok(format!("{} will enter at {:.0} s", spec.callsign, spec.entry_time_s))
            }
        }
    }

    pub fn into_result(self) -> EpisodeResult {
        let (metrics, report) = emit_metrics(&self.log);
        let exit_code = if metrics.fallbacks > 0 || metrics.escalations > 0 { 2 } else { 0 };
        EpisodeResult { hash: self.log.hash(), log: self.log, metrics, report, exit_code }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub log: EventLog,
    pub hash: String,
    pub metrics: EpisodeMetrics,
    pub report: String,
    /// 0 clean, 2 fallback occurred.
    pub exit_code: i32,
}

/// Runs a whole episode without an operator.
pub fn run_episode(scenario: Scenario, opts: EpisodeOptions) -> Result<EpisodeResult, EpisodeError> {
    let mut ep = Episode::new(scenario, opts)?;
    while ep.finished.is_none() {
        ep.cycle()?;
    }
    Ok(ep.into_result())
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub recorded_hash: String,
    pub replayed_hash: String,
    pub result: EpisodeResult,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.recorded_hash == self.replayed_hash
    }
}

/// Re-runs a logged episode from its embedded scenario, re-applying the
/// logged operator commands at the same cycles.
pub fn replay(log: &EventLog) -> Result<ReplayReport, EpisodeError> {
    let (scenario, opts) = log.scenario().ok_or(EpisodeError::NoScenario)?;
    let commands: Vec<(u64, Command)> = log.commands().map(|(c, cmd)| (c, cmd.clone())).collect();
    let mut ep = Episode::new(scenario.clone(), opts)?;
    let mut queue = commands.into_iter().peekable();
    let mut rejected = log.entries().iter().filter_map(|e| match &e.record {
        Record::Command { cycle, command, accepted: false, .. } => Some((*cycle, command.clone())),
        _ => None,
    });
    let mut rejected_next = rejected.next();
    loop {
        while let Some((_, cmd)) = queue.next_if(|(c, _)| *c == ep.cycle) {
            // rejected commands interleave by cycle too; replay them for an identical log
            while let Some((c, r)) = rejected_next.clone().filter(|(c, _)| *c == ep.cycle) {
                let _ = c;
                let _ = ep.apply(r);
                rejected_next = rejected.next();
            }
            let _ = ep.apply(cmd);
        }
        while let Some((_, r)) = rejected_next.clone().filter(|(c, _)| *c == ep.cycle) {
            let _ = ep.apply(r);
            rejected_next = rejected.next();
        }
        if ep.finished.is_some() {
            break;
        }
        ep.cycle()?;
    }
    let result = ep.into_result();
    Ok(ReplayReport { recorded_hash: log.hash(), replayed_hash: result.hash.clone(), result })
}

/// Nominal plans for the whole traffic sample, verified once from t = 0.
#[derive(Debug, Clone)]
pub struct Verification {
    pub plan: AirspacePlan,
    pub rollouts: crate::twin::RolloutSet,
    pub tsr: TechnicalSafetyRecord,
    /// Present when the nominal plans were unsafe.
    pub resolution: Option<crate::resolver::Resolution>,
}

/// Plans every aircraft nominally, verifies, and resolves if unsafe.
/// Nominal plans for every aircraft of the scenario, and the simulation
/// start with late entrants scheduled.
pub fn initial_plan(scenario: &Scenario, lanes: &LaneNetwork) -> Result<(AirspacePlan, SimState), EpisodeError> {
    let mut plan = AirspacePlan::default();
    let mut start = SimState::default();
    for spec in &scenario.aircraft {
        let entry = spec.entry_state();
        let fp = build_nominal_plan(&entry, lanes, spec.preferred_level(), &spec.exit, &scenario.performance, &mut plan)?;
        plan.plans.insert(spec.callsign.clone(), fp);
        let state = AircraftState::at_entry(lanes, &entry)?;
        if spec.entry_time_s <= 0.0 {
            start.snapshot.aircraft.insert(spec.callsign.clone(), state);
        } else {
            start.scheduled.push(ScheduledEntry { entry_time_s: spec.entry_time_s, state });
        }
    }
    start.scheduled.sort_by(|a, b| a.entry_time_s.total_cmp(&b.entry_time_s).then(a.state.callsign.cmp(&b.state.callsign)));
    plan.revision = 1;
    Ok((plan, start))
}

pub fn verify_scenario(scenario: &Scenario) -> Result<Verification, EpisodeError> {
    scenario.validate()?;
    let lanes = scenario.lanes()?;
    let (plan, start) = initial_plan(scenario, &lanes)?;
    let world = World { lanes: &lanes, minima: &scenario.minima, perf: &scenario.performance };
    let mut ensemble = scenario.ensemble();
    ensemble.run.entry_lookahead_s = ensemble.run.horizon_s;
    let rollouts = simulate_ensemble(&world, &plan, &start, &ensemble)?;
    let tsr = detect(&rollouts, &scenario.minima, &scenario.thresholds);
    let resolution = if tsr.is_empty() {
        None
    } else {
        let library = StrategyLibrary::default();
        let r = Resolver {
            world,
            library: &library,
            params: &scenario.strategy,
            search: scenario.search,
            ensemble: &ensemble,
            thresholds: &scenario.thresholds,
        };
        Some(resolve_airspace(&r, &plan, &start)?)
    };
    Ok(Verification { plan, rollouts, tsr, resolution })
}
