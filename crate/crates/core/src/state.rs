//! Airspace state shared by plan evaluation, simulation and conflict detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{LaneDesignation, LaneNetwork, Point};
use crate::plans::PlanProgress;
use crate::units::Callsign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftState {
    pub callsign: Callsign,
    pub route: String,
    pub lane: LaneDesignation,
    /// Arc length along the assigned lane.
    pub s_nm: f64,
    pub position: Point,
    pub altitude_ft: f64,
    /// Actual ground speed, including any perturbation.
    pub ground_speed_kt: f64,
    pub vertical_rate_fpm: f64,
    pub track_deg: f64,
    pub cleared_altitude_ft: f64,
    /// Speed the aircraft has been instructed to fly, before perturbation.
    pub commanded_speed_kt: f64,
    #[serde(default)]
    pub progress: PlanProgress,
}

/// All aircraft in the sector at one instant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time_s: f64,
    pub aircraft: BTreeMap<Callsign, AircraftState>,
}

impl Snapshot {
    pub fn get(&self, cs: &Callsign) -> Option<&AircraftState> {
        self.aircraft.get(cs)
    }
}

/// Passage bookkeeping for one ordered pair (observer, other).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageRecord {
    /// Sign of the other aircraft's along-track position relative to the
    /// observer when first observed: +1 ahead, -1 behind.
    pub initial_sign: i8,
    pub passed: bool,
    pub departed: bool,
}

/// Pair-passage history, keyed by (observer, other).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairHistory {
    #[serde(with = "pair_map")]
    pub records: BTreeMap<(Callsign, Callsign), PassageRecord>,
}

mod pair_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        observer: Callsign,
        other: Callsign,
        #[serde(flatten)]
        record: PassageRecord,
    }

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<(Callsign, Callsign), PassageRecord>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let v: Vec<Entry> = m
            .iter()
            .map(|((a, b), r)| Entry { observer: a.clone(), other: b.clone(), record: *r })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<(Callsign, Callsign), PassageRecord>, D::Error> {
        let v: Vec<Entry> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.observer, e.other), e.record)).collect())
    }
}

/// Along-track position of `other` relative to `observer`, measured on the
/// observer's lane. Positive when `other` is ahead.
pub fn relative_along_track(lanes: &LaneNetwork, observer: &AircraftState, other: &AircraftState) -> Option<f64> {
    let lane = lanes.lane(&observer.route, observer.lane)?;
    Some(lane.along_track(other.position).s - observer.s_nm)
}

impl PairHistory {
    pub fn get(&self, observer: &Callsign, other: &Callsign) -> Option<&PassageRecord> {
        self.records.get(&(observer.clone(), other.clone()))
    }

    /// Updates the record for (observer, other) from the current snapshot.
    pub fn observe(&mut self, lanes: &LaneNetwork, snapshot: &Snapshot, observer: &Callsign, other: &Callsign) {
        let (Some(me), Some(them)) = (snapshot.get(observer), snapshot.get(other)) else {
            return;
        };
        let Some(rel) = relative_along_track(lanes, me, them) else {
            return;
        };
        if rel.abs() < 1e-9 {
            return;
        }
        let sign: i8 = if rel > 0.0 { 1 } else { -1 };
        let rec = self.records.entry((observer.clone(), other.clone())).or_default();
        if rec.initial_sign == 0 {
            rec.initial_sign = sign;
        } else if sign != rec.initial_sign {
            rec.passed = true;
        }
    }

    /// Marks every record naming `gone` as departed.
    pub fn mark_departed(&mut self, gone: &Callsign) {
        for ((a, b), rec) in self.records.iter_mut() {
            if a == gone || b == gone {
                rec.departed = true;
            }
        }
    }

    /// Forgets passage state for the unordered pair, so a fresh encounter
    /// is tracked from plan adoption.
    pub fn reset_pair(&mut self, a: &Callsign, b: &Callsign) {
        self.records.remove(&(a.clone(), b.clone()));
        self.records.remove(&(b.clone(), a.clone()));
    }
}
