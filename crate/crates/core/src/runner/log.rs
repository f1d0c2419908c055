use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conflict::TechnicalSafetyRecord;
use crate::plans::AirspacePlan;
use crate::resolver::{AppliedStep, DecisionTrace, FallbackAlert, SearchStats};
use crate::state::Snapshot;
use crate::twin::{Perturbation, RolloutSet};
use crate::units::Callsign;

use super::{Clearance, Command, EpisodeOptions, Scenario};

pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Predicted path of one aircraft, sampled once a minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedPath {
    /// (t, x, y, altitude_ft) along the nominal rollout.
    pub nominal: Vec<[f64; 4]>,
    /// (t, min_x, min_y, max_x, max_y) over the perturbed rollouts.
    pub envelope: Vec<[f64; 5]>,
}

const PATH_STEP_S: f64 = 60.0;

pub fn predicted_paths(rollouts: &RolloutSet) -> BTreeMap<Callsign, PredictedPath> {
    let mut out = BTreeMap::new();
    let dt = rollouts.nominal.dt;
    for tr in &rollouts.nominal.trajectories {
        let mut path = PredictedPath { nominal: Vec::new(), envelope: Vec::new() };
        let stride = ((PATH_STEP_S / dt).round() as usize).max(1);
        for s in tr.samples.iter().step_by(stride) {
            path.nominal.push([s.t, s.position.x, s.position.y, s.altitude_ft]);
            let pts = rollouts
                .perturbed
                .iter()
                .filter_map(|r| r.trajectory(&tr.callsign).and_then(|p| p.at(s.t, r.dt)))
                .map(|p| p.position);
            let mut bb = [s.t, f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for p in pts {
                bb[1] = bb[1].min(p.x);
                bb[2] = bb[2].min(p.y);
                bb[3] = bb[3].max(p.x);
                bb[4] = bb[4].max(p.y);
            }
            if bb[1].is_finite() {
                path.envelope.push(bb);
            }
        }
        out.insert(tr.callsign.clone(), path);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    EpisodeStart {
        schema_version: u32,
        scenario: Box<Scenario>,
        auto_approve: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        approve_after_s: Option<f64>,
        ground_truth: Perturbation,
    },
    Plan {
        revision: u64,
        fingerprint: String,
        reason: String,
        plan: Box<AirspacePlan>,
    },
    Verification {
        revision: u64,
        rollouts_fingerprint: String,
        tsr: TechnicalSafetyRecord,
        predicted: BTreeMap<Callsign, PredictedPath>,
    },
    Resolution {
        from_revision: u64,
        to_revision: u64,
        solved: bool,
        final_tsr_size: usize,
        trace: DecisionTrace,
        stats: SearchStats,
        applied: Vec<AppliedStep>,
    },
    Alert {
        escalated: bool,
        message: String,
        fallback: Option<FallbackAlert>,
    },
    Clearance {
        clearance: Clearance,
    },
    Command {
        /// Cycles completed when the command was applied.
        cycle: u64,
        command: Command,
        accepted: bool,
        detail: String,
    },
    Replan {
        callsign: Callsign,
        reason: String,
    },
    MissedCoordination {
        callsign: Callsign,
        reason: String,
    },
    Snapshot {
        cycle: u64,
        snapshot: Snapshot,
    },
    Violation {
        pair: (Callsign, Callsign),
        distance_nm: f64,
        vertical_ft: f64,
    },
    Exit {
        callsign: Callsign,
        level_ft: f64,
        time_deviation_s: Option<f64>,
        level_deviation_ft: f64,
    },
    EpisodeEnd {
        reason: String,
    },
}

impl Record {
    pub fn kind(&self) -> &'static str {
        match self {
            Record::EpisodeStart { .. } => "episode_start",
            Record::Plan { .. } => "plan",
            Record::Verification { .. } => "verification",
            Record::Resolution { .. } => "resolution",
            Record::Alert { .. } => "alert",
            Record::Clearance { .. } => "clearance",
            Record::Command { .. } => "command",
            Record::Replan { .. } => "replan",
            Record::MissedCoordination { .. } => "missed_coordination",
            Record::Snapshot { .. } => "snapshot",
            Record::Violation { .. } => "violation",
            Record::Exit { .. } => "exit",
            Record::EpisodeEnd { .. } => "episode_end",
        }
    }
}

/// One log line. `wall_ms` is informational and excluded from the hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub t: f64,
    #[serde(flatten)]
    pub record: Record,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("timestamps go backwards at seq {0}")]
    NonMonotone(u64),
}

/// Append-only, time-ordered record of an episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    entries: Vec<LogEntry>,
}

impl EventLog {
    pub fn push(&mut self, t: f64, record: Record) -> u64 {
        self.push_timed(t, record, None)
    }

    pub fn push_timed(&mut self, t: f64, record: Record, wall_ms: Option<f64>) -> u64 {
        let t = self.entries.last().map_or(t, |e| t.max(e.t));
        let seq = self.entries.len() as u64;
        self.entries.push(LogEntry { seq, t, record, wall_ms });
        seq
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// SHA-256 over every entry's (seq, t, record), in order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            let body = serde_json::to_vec(&(e.seq, e.t, &e.record)).expect("record serialises");
            h.update((body.len() as u64).to_le_bytes());
            h.update(&body);
        }
        hex::encode(h.finalize())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serialises"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), LogError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn from_reader(r: impl BufRead) -> Result<EventLog, LogError> {
        let mut log = EventLog::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: LogEntry =
                serde_json::from_str(&line).map_err(|err| LogError::Parse { line: i + 1, message: err.to_string() })?;
            if log.entries.last().is_some_and(|p| e.t < p.t) {
                return Err(LogError::NonMonotone(e.seq));
            }
            log.entries.push(e);
        }
        Ok(log)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<EventLog, LogError> {
        EventLog::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn scenario(&self) -> Option<(&Scenario, EpisodeOptions)> {
        self.entries.iter().find_map(|e| match &e.record {
            Record::EpisodeStart { scenario, auto_approve, approve_after_s, .. } => Some((
                scenario.as_ref(),
                EpisodeOptions { auto_approve: *auto_approve, approve_after_s: *approve_after_s },
            )),
            _ => None,
        })
    }

    /// Accepted commands with the cycle count at which they were applied.
    pub fn commands(&self) -> impl Iterator<Item = (u64, &Command)> {
        self.entries.iter().filter_map(|e| match &e.record {
            Record::Command { cycle, command, accepted: true, .. } => Some((*cycle, command)),
            _ => None,
        })
    }
}
