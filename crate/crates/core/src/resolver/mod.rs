//! Backtracking deconfliction: find the earliest conflict, attribute it to
//! the planned actions responsible, try library strategies in priority
//! order and recurse on the verified result.

mod fallback;
mod library;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conflict::{detect, earliest_conflict, ClassThresholds, ConflictError, ConflictRecord, TechnicalSafetyRecord};
use crate::plans::{
    filter_by_axis_constraints, splice, ActionId, AirspacePlan, Axis, AxisConstraint, PlanError,
};
use crate::state::AircraftState;
use crate::twin::{simulate_ensemble, EnsembleConfig, RolloutSet, Sample, SimError, SimState, World};
use crate::units::Callsign;

pub use fallback::{fallback_plan, FallbackAlert, FallbackAssignment};
pub use library::{get_strategies, Candidate, CandidateContext, StrategyKind, StrategyLibrary, StrategyParams};

/// Per aircraft, per axis: the planned action responsible for a conflict.
pub type Attribution = BTreeMap<Callsign, BTreeMap<Axis, ActionId>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResolveError {
    #[error("strategy library: {0}")]
    Library(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Conflict(#[from] ConflictError),
    #[error("cannot attribute conflict {a}/{b} at {t:.0} s: {reason}")]
    Attribution { a: Callsign, b: Callsign, t: f64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    /// Maximum number of strategies stacked on one branch.
    pub d_max: usize,
    /// Cap on candidates tried per node, after filtering.
    pub max_candidates: Option<usize>,
    /// Maximum number of plans evaluated before giving up.
    pub node_budget: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { d_max: 3, max_candidates: None, node_budget: 200 }
    }
}

/// Static inputs to a resolution.
#[derive(Clone, Copy)]
pub struct Resolver<'a> {
    pub world: World<'a>,
    pub library: &'a StrategyLibrary,
    pub params: &'a StrategyParams,
    pub search: SearchParams,
    pub ensemble: &'a EnsembleConfig,
    pub thresholds: &'a ClassThresholds,
}

/// Finds the planned actions active for each aircraft of `conflict` at its
/// first violation, from the rollout that produced it.
pub fn attribute_cause(conflict: &ConflictRecord, rollouts: &RolloutSet) -> Result<Attribution, ResolveError> {
    let fail = |reason: String| ResolveError::Attribution {
        a: conflict.pair.0.clone(),
        b: conflict.pair.1.clone(),
        t: conflict.t_first,
        reason,
    };
    let rollout = rollouts.find(&conflict.source).ok_or_else(|| fail(format!("no rollout {}", conflict.source)))?;
    let mut out = Attribution::new();
    for cs in [&conflict.pair.0, &conflict.pair.1] {
        let tr = rollout.trajectory(cs).ok_or_else(|| fail(format!("{cs} absent from {}", conflict.source)))?;
        let active = tr.active_at(conflict.t_first);
        for axis in [Axis::Lateral, Axis::Vertical] {
            if !active.contains_key(&axis) {
                return Err(fail(format!("{cs} has no active {axis:?} action")));
            }
        }
        out.insert(cs.clone(), active);
    }
    Ok(out)
}

/// Splices every manoeuvre of `cand` in place of the causal actions and
/// registers its axis constraints.
pub fn apply_strategy(
    plan: &AirspacePlan,
    cand: &Candidate,
    causal: &Attribution,
    revision: u64,
) -> Result<AirspacePlan, PlanError> {
    let mut out = plan.clone();
    for m in &cand.manoeuvres {
        let fp = out.plans.get(&m.callsign).ok_or_else(|| PlanError::UnknownCallsign(m.callsign.clone()))?;
        let ids: Vec<ActionId> = causal
            .get(&m.callsign)
            .map(|by_axis| m.axes().iter().filter_map(|a| by_axis.get(a).copied()).collect())
            .unwrap_or_default();
        let spliced = splice(fp, &ids, m)?;
        out.plans.insert(m.callsign.clone(), spliced);
        for (axis, dir) in &m.directions {
            out.register_constraint(AxisConstraint {
                callsign: m.callsign.clone(),
                axis: *axis,
                direction: *dir,
                release: m.release.clone(),
                source: Some(m.id),
            });
        }
    }
    out.next_id = out.next_id.max(cand.next_id);
    out.revision = revision;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub kind: StrategyKind,
    pub priority: u8,
    pub label: String,
}

impl From<&Candidate> for CandidateSummary {
    fn from(c: &Candidate) -> Self {
        CandidateSummary { kind: c.kind, priority: c.priority, label: c.label.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum EdgeResult {
    Accepted,
    Backtracked,
    ApplyError { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEdge {
    pub candidate: CandidateSummary,
    pub result: EdgeResult,
    pub child: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeOutcome {
    Solved,
    DepthLimit,
    Exhausted,
    Budget,
    AttributionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub revision: u64,
    pub plan_fingerprint: String,
    pub tsr_size: usize,
    pub conflict: Option<ConflictRecord>,
    pub candidates: Vec<CandidateSummary>,
    /// Candidates dropped because they would reverse a constrained axis.
    pub filtered_out: Vec<CandidateSummary>,
    pub edges: Vec<TraceEdge>,
    pub outcome: NodeOutcome,
}

/// The full search tree, in visiting order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub nodes: Vec<TraceNode>,
}

impl DecisionTrace {
    /// Labels of the accepted strategies from the root to the solution.
    pub fn accepted_path(&self) -> Vec<&CandidateSummary> {
        let mut out = Vec::new();
        let mut node = self.nodes.first();
        while let Some(n) = node {
            match n.edges.iter().find(|e| e.result == EdgeResult::Accepted) {
                Some(e) => {
                    out.push(&e.candidate);
                    node = e.child.and_then(|c| self.nodes.get(c));
                }
                None => break,
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Ensemble evaluations (one per visited plan).
    pub simulations: usize,
    /// Nodes whose candidates were generated.
    pub expansions: usize,
    pub max_depth: usize,
}

/// One strategy application on the accepted path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedStep {
    pub revision: u64,
    pub candidate: CandidateSummary,
    pub conflict: ConflictRecord,
    pub constraints_before: Vec<AxisConstraint>,
    pub constraints_after: Vec<AxisConstraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ResolutionOutcome {
    Solved,
    Fallback { alert: FallbackAlert },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub outcome: ResolutionOutcome,
    pub plan: AirspacePlan,
    pub root_tsr: TechnicalSafetyRecord,
    /// TSR of the returned plan.
    pub final_tsr: TechnicalSafetyRecord,
    pub final_rollouts_fingerprint: String,
    pub trace: DecisionTrace,
    pub stats: SearchStats,
    pub applied: Vec<AppliedStep>,
}

impl Resolution {
    pub fn is_solved(&self) -> bool {
        self.outcome == ResolutionOutcome::Solved
    }
}

struct Evaluated {
    rollouts: RolloutSet,
    tsr: TechnicalSafetyRecord,
}

enum Branch {
    Solved { plan: AirspacePlan, eval: Evaluated, path: Vec<AppliedStep> },
    Failed,
    Aborted,
}

struct Search<'r, 'a> {
    r: &'r Resolver<'a>,
    root: &'r AirspacePlan,
    start: &'r SimState,
    trace: DecisionTrace,
    stats: SearchStats,
    next_revision: u64,
}

fn state_sample(start: &SimState, cs: &Callsign) -> Option<Sample> {
    let st: &AircraftState = start
        .snapshot
        .get(cs)
        .or_else(|| start.scheduled.iter().find(|e| &e.state.callsign == cs).map(|e| &e.state))?;
    Some(Sample::of(start.time(), st))
}

/// Simulates the ensemble of `plan`, started from `start` rebased from `root`, and detects its conflicts.
pub fn evaluate_plan(
    r: &Resolver<'_>,
    root: &AirspacePlan,
    start: &SimState,
    plan: &AirspacePlan,
) -> Result<(RolloutSet, TechnicalSafetyRecord), ResolveError> {
    let start = start.rebased(root, plan);
    let rollouts = simulate_ensemble(&r.world, plan, &start, r.ensemble)?;
    let tsr = detect(&rollouts, r.world.minima, r.thresholds);
    Ok((rollouts, tsr))
}

/// Library candidates for an attributed conflict: all of them, then those
/// surviving the axis-constraint filter and the candidate cap.
pub fn node_candidates(
    r: &Resolver<'_>,
    start: &SimState,
    plan: &AirspacePlan,
    rollouts: &RolloutSet,
    conflict: &ConflictRecord,
    causal: &Attribution,
) -> (Vec<Candidate>, Vec<Candidate>) {
    let source = rollouts.find(&conflict.source);
    let mut at_start = BTreeMap::new();
    let mut at_conflict = BTreeMap::new();
    for cs in [&conflict.pair.0, &conflict.pair.1] {
        if let Some(s) = state_sample(start, cs) {
            at_start.insert(cs.clone(), s);
        }
        if let Some(s) = source.and_then(|r| r.trajectory(cs).and_then(|t| t.at(conflict.t_first, r.dt))) {
            at_conflict.insert(cs.clone(), *s);
        }
    }
    let ctx = CandidateContext {
        conflict,
        plan,
        lanes: r.world.lanes,
        perf: r.world.perf,
        params: r.params,
        causal,
        at_start,
        at_conflict,
    };
    let all = get_strategies(&ctx, r.library);
    let mut kept = filter_by_axis_constraints(all.clone(), &plan.constraints, (&conflict.pair.0, &conflict.pair.1), |c| {
        c.footprint.clone()
    });
    if let Some(cap) = r.search.max_candidates {
        kept.truncate(cap);
    }
    (all, kept)
}

impl Search<'_, '_> {
    fn evaluate(&mut self, plan: &AirspacePlan) -> Result<Evaluated, ResolveError> {
        self.stats.simulations += 1;
        let (rollouts, tsr) = evaluate_plan(self.r, self.root, self.start, plan)?;
        Ok(Evaluated { rollouts, tsr })
    }

    fn push_node(&mut self, parent: Option<usize>, depth: usize, plan: &AirspacePlan, tsr: &TechnicalSafetyRecord) -> usize {
        let id = self.trace.nodes.len();
        self.trace.nodes.push(TraceNode {
            id,
            parent,
            depth,
            revision: plan.revision,
            plan_fingerprint: plan.fingerprint(),
            tsr_size: tsr.len(),
            conflict: None,
            candidates: Vec::new(),
            filtered_out: Vec::new(),
            edges: Vec::new(),
            outcome: NodeOutcome::Exhausted,
        });
        self.stats.max_depth = self.stats.max_depth.max(depth);
        id
    }

    fn visit(&mut self, plan: AirspacePlan, eval: Evaluated, parent: Option<usize>, depth: usize) -> Result<Branch, ResolveError> {
        let node = self.push_node(parent, depth, &plan, &eval.tsr);
        if eval.tsr.is_empty() {
            self.trace.nodes[node].outcome = NodeOutcome::Solved;
            return Ok(Branch::Solved { plan, eval, path: Vec::new() });
        }
        let mut conflict = earliest_conflict(&eval.tsr)?.clone();
        if depth >= self.r.search.d_max {
            self.trace.nodes[node].conflict = Some(conflict);
            self.trace.nodes[node].outcome = NodeOutcome::DepthLimit;
            return Ok(Branch::Failed);
        }
        let causal = match attribute_cause(&conflict, &eval.rollouts) {
            Ok(c) => c,
            Err(_) => {
                self.trace.nodes[node].conflict = Some(conflict);
                self.trace.nodes[node].outcome = NodeOutcome::AttributionFailed;
                return Ok(Branch::Failed);
            }
        };
        conflict.causal = causal.clone();
        self.stats.expansions += 1;

        let (all, kept) = node_candidates(self.r, self.start, &plan, &eval.rollouts, &conflict, &causal);
        {
            let n = &mut self.trace.nodes[node];
            n.conflict = Some(conflict.clone());
            n.candidates = kept.iter().map(CandidateSummary::from).collect();
            n.filtered_out = all.iter().filter(|c| !kept.contains(c)).map(CandidateSummary::from).collect();
        }

        for cand in &kept {
            if self.stats.simulations >= self.r.search.node_budget {
                self.trace.nodes[node].outcome = NodeOutcome::Budget;
                return Ok(Branch::Aborted);
            }
            let revision = self.next_revision;
            self.next_revision += 1;
            let child_plan = match apply_strategy(&plan, cand, &causal, revision) {
                Ok(p) => p,
                Err(e) => {
                    self.trace.nodes[node].edges.push(TraceEdge {
                        candidate: cand.into(),
                        result: EdgeResult::ApplyError { reason: e.to_string() },
                        child: None,
                    });
                    continue;
                }
            };
            let child_eval = self.evaluate(&child_plan)?;
            let child_id = self.trace.nodes.len();
            let step = AppliedStep {
                revision,
                candidate: cand.into(),
                conflict: conflict.clone(),
                constraints_before: plan.constraints.clone(),
                constraints_after: child_plan.constraints.clone(),
            };
            let branch = self.visit(child_plan, child_eval, Some(node), depth + 1)?;
            let (result, out) = match branch {
                Branch::Solved { plan, eval, mut path } => {
                    path.insert(0, step);
                    (EdgeResult::Accepted, Some(Branch::Solved { plan, eval, path }))
                }
                Branch::Failed => (EdgeResult::Backtracked, None),
                Branch::Aborted => (EdgeResult::Backtracked, Some(Branch::Aborted)),
            };
            self.trace.nodes[node].edges.push(TraceEdge { candidate: cand.into(), result, child: Some(child_id) });
            match out {
                Some(Branch::Aborted) => {
                    self.trace.nodes[node].outcome = NodeOutcome::Budget;
                    return Ok(Branch::Aborted);
                }
                Some(solved) => {
                    self.trace.nodes[node].outcome = NodeOutcome::Solved;
                    return Ok(solved);
                }
                None => {}
            }
        }
        Ok(Branch::Failed)
    }
}

/// Searches for a conflict-free revision of `plan`, starting the simulations
/// from `start`. Falls back to a vertical separation plan when the search
/// fails within the depth limit and node budget.
pub fn resolve_airspace(r: &Resolver<'_>, plan: &AirspacePlan, start: &SimState) -> Result<Resolution, ResolveError> {
    let mut search = Search {
        r,
        root: plan,
        start,
        trace: DecisionTrace::default(),
        stats: SearchStats::default(),
        next_revision: plan.revision + 1,
    };
    let root_eval = search.evaluate(plan)?;
    let root_tsr = root_eval.tsr.clone();
    let root_nominal = root_eval.rollouts.nominal.clone();
    let branch = search.visit(plan.clone(), root_eval, None, 0)?;
    match branch {
        Branch::Solved { plan, eval, path } => Ok(Resolution {
            outcome: ResolutionOutcome::Solved,
            final_rollouts_fingerprint: eval.rollouts.fingerprint(),
            plan,
            root_tsr,
            final_tsr: eval.tsr,
            trace: search.trace,
            stats: search.stats,
            applied: path,
        }),
        Branch::Failed | Branch::Aborted => {
            let conflict = earliest_conflict(&root_tsr)?.clone();
            let revision = search.next_revision;
            let (fb_plan, alert) = fallback_plan(plan, &conflict, start, &root_nominal, r, revision)?;
            let eval = search.evaluate(&fb_plan)?;
            Ok(Resolution {
                outcome: ResolutionOutcome::Fallback { alert },
                final_rollouts_fingerprint: eval.rollouts.fingerprint(),
                plan: fb_plan,
                root_tsr,
                final_tsr: eval.tsr,
                trace: search.trace,
                stats: search.stats,
                applied: Vec::new(),
            })
        }
    }
}

#[cfg(test)]
mod tests;
