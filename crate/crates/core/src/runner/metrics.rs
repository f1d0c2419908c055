use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::plans::Origin;
use crate::units::Callsign;

use super::log::{EventLog, Record};
use super::ClearanceStatus;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExitDeviation {
    /// Actual minus first predicted exit time; `None` if never predicted.
    pub time_s: Option<f64>,
    pub level_ft: f64,
}

/// Episode summary derived purely from the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub cycles: u64,
    pub violations: usize,
    /// Distinct deconfliction manoeuvres (per aircraft) that were issued.
    pub interventions: usize,
    pub resolutions: usize,
    pub fallbacks: usize,
    pub escalations: usize,
    pub missed_coordinations: usize,
    pub node_expansions: usize,
    pub simulations: usize,
    pub max_depth: usize,
    pub strategy_histogram: BTreeMap<String, usize>,
    pub exit_deviation: BTreeMap<Callsign, ExitDeviation>,
    pub wall_ms_mean: f64,
    pub wall_ms_max: f64,
    /// Any fallback or escalation occurred.
    pub failed: bool,
}

/// Computes metrics and a human-readable report from a log.
pub fn emit_metrics(log: &EventLog) -> (EpisodeMetrics, String) {
    let mut m = EpisodeMetrics::default();
    let mut issued: BTreeSet<(Callsign, String)> = BTreeSet::new();
    let mut walls = Vec::new();
    for e in log.entries() {
        match &e.record {
            Record::Snapshot { cycle, .. } => {
                m.cycles = m.cycles.max(*cycle);
                walls.extend(e.wall_ms);
            }
            Record::Violation { .. } => m.violations += 1,
            Record::Clearance { clearance: c } if c.status == ClearanceStatus::Issued => {
                let key = match c.origin {
                    Origin::Nominal => continue,
                    Origin::Manoeuvre { id } => format!("manoeuvre-{}", id.0),
                    Origin::Fallback => "fallback".into(),
                    Origin::Operator => format!("operator-{}", c.action_id.0),
                };
                issued.insert((c.callsign.clone(), key));
            }
            Record::Resolution { stats, applied, solved, .. } => {
                m.resolutions += 1;
                m.node_expansions += stats.expansions;
                m.simulations += stats.simulations;
                m.max_depth = m.max_depth.max(stats.max_depth);
                if *solved {
                    for step in applied {
                        *m.strategy_histogram.entry(step.candidate.kind.id().to_string()).or_default() += 1;
                    }
                }
            }
            Record::Alert { escalated, .. } => {
                if *escalated {
                    m.escalations += 1;
                } else {
                    m.fallbacks += 1;
                }
            }
            Record::MissedCoordination { .. } => m.missed_coordinations += 1,
            Record::Exit { callsign, time_deviation_s, level_deviation_ft, .. } => {
                m.exit_deviation
                    .insert(callsign.clone(), ExitDeviation { time_s: *time_deviation_s, level_ft: *level_deviation_ft });
            }
            _ => {}
        }
    }
    m.interventions = issued.len();
    if !walls.is_empty() {
        m.wall_ms_mean = walls.iter().sum::<f64>() / walls.len() as f64;
        m.wall_ms_max = walls.iter().copied().fold(0.0, f64::max);
    }
    m.failed = m.fallbacks > 0 || m.escalations > 0;
    (m.clone(), report(&m))
}

fn report(m: &EpisodeMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "cycles              {}", m.cycles);
    let _ = writeln!(s, "violations          {}", m.violations);
    let _ = writeln!(s, "interventions       {}", m.interventions);
    let _ = writeln!(s, "resolutions         {}", m.resolutions);
    let _ = writeln!(s, "fallbacks           {}", m.fallbacks);
    let _ = writeln!(s, "escalations         {}", m.escalations);
    let _ = writeln!(s, "missed coordination {}", m.missed_coordinations);
    let _ = writeln!(s, "node expansions     {}", m.node_expansions);
    let _ = writeln!(s, "simulations         {}", m.simulations);
    let _ = writeln!(s, "wall ms/cycle       {:.1} mean, {:.1} max", m.wall_ms_mean, m.wall_ms_max);
    for (k, n) in &m.strategy_histogram {
        let _ = writeln!(s, "strategy {k:<18} {n}");
    }
    for (cs, d) in &m.exit_deviation {
        let t = d.time_s.map_or("-".to_string(), |t| format!("{t:+.0} s"));
        let _ = writeln!(s, "exit {cs:<10} time {t}, level {:.0} ft", d.level_ft);
    }
    if m.failed {
        let _ = writeln!(s, "FAILED: fallback separation was used");
    }
    s
}
