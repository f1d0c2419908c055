//! Separation checks, closest point of approach, the 36-class encounter
//! taxonomy and the Technical Safety Record.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::plans::{ActionId, Axis};
use crate::state::AircraftState;
use crate::twin::{Rollout, RolloutSet, RolloutSource, Sample, Trajectory};
use crate::units::Callsign;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConflictError {
    #[error("trajectories of {0} and {1} do not overlap in time")]
    Disjoint(Callsign, Callsign),
    #[error("technical safety record is empty")]
    EmptyRecord,
    #[error("separation minima must be positive")]
    BadMinima,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparationMinima {
    pub lateral_nm: f64,
    pub vertical_ft: f64,
}

impl Default for SeparationMinima {
    fn default() -> Self {
        SeparationMinima { lateral_nm: 5.0, vertical_ft: 1000.0 }
    }
}

impl SeparationMinima {
    pub fn validate(&self) -> Result<(), ConflictError> {
        if self.lateral_nm > 0.0 && self.vertical_ft > 0.0 {
            Ok(())
        } else {
            Err(ConflictError::BadMinima)
        }
    }
}

/// Thresholds that split the continuous encounter space into classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassThresholds {
    /// |vertical rate| at or below this counts as level.
    pub level_rate_fpm: f64,
    /// Track difference at or below this is parallel.
    pub parallel_max_deg: f64,
    /// Track difference at or above this is head-on.
    pub head_on_min_deg: f64,
    /// |ΔV| at or below this is similar speed.
    pub similar_speed_kt: f64,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        ClassThresholds { level_rate_fpm: 100.0, parallel_max_deg: 45.0, head_on_min_deg: 135.0, similar_speed_kt: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VerticalClass {
    /// Both level.
    LL,
    /// One level, one climbing.
    LA,
    /// One level, one descending.
    LD,
    /// One climbing, one descending.
    AD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LateralClass {
    HO,
    CR,
    P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpeedClass {
    Similar,
    AC1Faster,
    AC2Faster,
}

impl SpeedClass {
    pub fn swapped(self) -> Self {
        match self {
            SpeedClass::AC1Faster => SpeedClass::AC2Faster,
            SpeedClass::AC2Faster => SpeedClass::AC1Faster,
            SpeedClass::Similar => SpeedClass::Similar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConflictClass {
    pub vertical: VerticalClass,
    pub lateral: LateralClass,
    pub speed: SpeedClass,
}

impl ConflictClass {
    pub const fn new(vertical: VerticalClass, lateral: LateralClass, speed: SpeedClass) -> Self {
        ConflictClass { vertical, lateral, speed }
    }

    /// All 36 classes.
    pub fn all() -> Vec<ConflictClass> {
        use LateralClass::*;
        use SpeedClass::*;
        use VerticalClass::*;
        let mut out = Vec::with_capacity(36);
        for v in [LL, LA, LD, AD] {
            for l in [HO, CR, P] {
                for s in [Similar, AC1Faster, AC2Faster] {
                    out.push(ConflictClass::new(v, l, s));
                }
            }
        }
        out
    }
}

impl fmt::Display for ConflictClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, {:?}, {:?})", self.vertical, self.lateral, self.speed)
    }
}

/// The kinematic quantities separation and classification need.
pub trait Kinematic {
    fn position(&self) -> Point;
    fn altitude_ft(&self) -> f64;
    fn vertical_rate_fpm(&self) -> f64;
    fn track_deg(&self) -> f64;
    fn ground_speed_kt(&self) -> f64;
}

macro_rules! kinematic {
    ($t:ty) => {
        impl Kinematic for $t {
            fn position(&self) -> Point {
                self.position
            }
            fn altitude_ft(&self) -> f64 {
                self.altitude_ft
            }
            fn vertical_rate_fpm(&self) -> f64 {
                self.vertical_rate_fpm
            }
            fn track_deg(&self) -> f64 {
                self.track_deg
            }
            fn ground_speed_kt(&self) -> f64 {
                self.ground_speed_kt
            }
        }
    };
}

kinematic!(AircraftState);
kinematic!(Sample);

/// Loss of separation: both the lateral and the vertical minimum are infringed.
pub fn check_separation(a: &impl Kinematic, b: &impl Kinematic, minima: &SeparationMinima) -> bool {
    a.position().distance(b.position()) < minima.lateral_nm && (a.altitude_ft() - b.altitude_ft()).abs() < minima.vertical_ft
}

/// Unsigned difference between two tracks, in [0, 180].
pub fn track_difference_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Classifies the encounter with `a` as AC1 and `b` as AC2.
pub fn classify(a: &impl Kinematic, b: &impl Kinematic, th: &ClassThresholds) -> ConflictClass {
    let sense = |vr: f64| {
        if vr.abs() <= th.level_rate_fpm {
            0
        } else {
            vr.signum() as i8
        }
    };
    let vertical = match (sense(a.vertical_rate_fpm()), sense(b.vertical_rate_fpm())) {
        (0, 0) => VerticalClass::LL,
        (0, 1) | (1, 0) | (1, 1) => VerticalClass::LA,
        (0, -1) | (-1, 0) | (-1, -1) => VerticalClass::LD,
        _ => VerticalClass::AD,
    };
    let theta = track_difference_deg(a.track_deg(), b.track_deg());
    let lateral = if theta <= th.parallel_max_deg {
        LateralClass::P
    } else if theta >= th.head_on_min_deg {
        LateralClass::HO
    } else {
        LateralClass::CR
    };
    let dv = a.ground_speed_kt() - b.ground_speed_kt();
    let speed = if dv.abs() <= th.similar_speed_kt {
        SpeedClass::Similar
    } else if dv > 0.0 {
        SpeedClass::AC1Faster
    } else {
        SpeedClass::AC2Faster
    };
    ConflictClass { vertical, lateral, speed }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cpa {
    pub t: f64,
    pub distance_nm: f64,
    pub vertical_ft: f64,
}

/// Time-aligned sample pairs of two trajectories from the same rollout.
fn aligned<'a>(a: &'a Trajectory, b: &'a Trajectory, dt: f64) -> Vec<(&'a Sample, &'a Sample)> {
    let (Some(a0), Some(b0)) = (a.first_time(), b.first_time()) else {
        return Vec::new();
    };
    let offset = ((b0 - a0) / dt).round() as i64;
    let mut out = Vec::new();
    for (i, sa) in a.samples.iter().enumerate() {
        let j = i as i64 - offset;
        if j < 0 {
            continue;
        }
        match b.samples.get(j as usize) {
            Some(sb) => out.push((sa, sb)),
            None => break,
        }
    }
    out
}

fn cpa_over<'a>(pairs: impl Iterator<Item = (&'a Sample, &'a Sample)>) -> Option<Cpa> {
    let mut best: Option<Cpa> = None;
    for (sa, sb) in pairs {
        let d = sa.position.distance(sb.position);
        if best.is_none_or(|c| d < c.distance_nm) {
            best = Some(Cpa { t: sa.t, distance_nm: d, vertical_ft: (sa.altitude_ft - sb.altitude_ft).abs() });
        }
    }
    best
}

/// Closest point of approach over sampled times: within the first violation
/// window if there is one, otherwise over the whole overlap. Earliest time
/// wins ties.
pub fn compute_cpa(a: &Trajectory, b: &Trajectory, dt: f64, minima: &SeparationMinima) -> Result<Cpa, ConflictError> {
    let pairs = aligned(a, b, dt);
    if pairs.is_empty() {
        return Err(ConflictError::Disjoint(a.callsign.clone(), b.callsign.clone()));
    }
    let window: Vec<_> = pairs
        .iter()
        .skip_while(|(sa, sb)| !check_separation(*sa, *sb, minima))
        .take_while(|(sa, sb)| check_separation(*sa, *sb, minima))
        .copied()
        .collect();
    let over = if window.is_empty() { pairs } else { window };
    Ok(cpa_over(over.into_iter()).expect("non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    /// (AC1, AC2), lexicographically ordered.
    pub pair: (Callsign, Callsign),
    pub t_first: f64,
    pub t_last: f64,
    pub cpa: Cpa,
    pub class: ConflictClass,
    pub source: RolloutSource,
    /// Per aircraft, per axis: the planned action responsible. Filled by the resolver.
    #[serde(default)]
    pub causal: BTreeMap<Callsign, BTreeMap<Axis, ActionId>>,
}

impl ConflictRecord {
    pub fn involves(&self, cs: &Callsign) -> bool {
        &self.pair.0 == cs || &self.pair.1 == cs
    }

    pub fn other(&self, cs: &Callsign) -> &Callsign {
        if &self.pair.0 == cs {
            &self.pair.1
        } else {
            &self.pair.0
        }
    }

    pub fn is_counterfactual(&self) -> bool {
        matches!(self.source, RolloutSource::Counterfactual { .. })
    }
}

/// Priority order: t_first, then pair, then source.
pub fn record_order(a: &ConflictRecord, b: &ConflictRecord) -> Ordering {
    a.t_first.total_cmp(&b.t_first).then_with(|| a.pair.cmp(&b.pair)).then_with(|| a.source.cmp_key(&b.source))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TechnicalSafetyRecord {
    pub plan_revision: u64,
    pub records: Vec<ConflictRecord>,
}

impl TechnicalSafetyRecord {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}

/// One record per contiguous violation interval of each pair in the rollout.
pub fn detect_rollout(rollout: &Rollout, minima: &SeparationMinima, th: &ClassThresholds) -> Vec<ConflictRecord> {
    let trs = &rollout.trajectories;
    let mut out = Vec::new();
    for i in 0..trs.len() {
        for j in i + 1..trs.len() {
            let (a, b) = if trs[i].callsign <= trs[j].callsign { (&trs[i], &trs[j]) } else { (&trs[j], &trs[i]) };
            let pairs = aligned(a, b, rollout.dt);
            let mut k = 0;
            while k < pairs.len() {
                if !check_separation(pairs[k].0, pairs[k].1, minima) {
                    k += 1;
                    continue;
                }
                let start = k;
                while k < pairs.len() && check_separation(pairs[k].0, pairs[k].1, minima) {
                    k += 1;
                }
                let window = &pairs[start..k];
                let cpa = cpa_over(window.iter().copied()).expect("non-empty window");
                let (sa, sb) = window.iter().find(|(sa, _)| sa.t == cpa.t).expect("cpa sample");
                out.push(ConflictRecord {
                    pair: (a.callsign.clone(), b.callsign.clone()),
                    t_first: window[0].0.t,
                    t_last: window[window.len() - 1].0.t,
                    cpa,
                    class: classify(*sa, *sb, th),
                    source: rollout.source,
                    causal: BTreeMap::new(),
                });
            }
        }
    }
    out
}

/// Scans every rollout of the ensemble and compiles the sorted TSR.
pub fn detect(rollouts: &RolloutSet, minima: &SeparationMinima, th: &ClassThresholds) -> TechnicalSafetyRecord {
    let all: Vec<&Rollout> = rollouts.all().collect();
    let mut records: Vec<ConflictRecord> =
        all.par_iter().map(|r| detect_rollout(r, minima, th)).collect::<Vec<_>>().into_iter().flatten().collect();
    records.sort_by(record_order);
    TechnicalSafetyRecord { plan_revision: rollouts.plan_revision, records }
}

pub fn earliest_conflict(tsr: &TechnicalSafetyRecord) -> Result<&ConflictRecord, ConflictError> {
    tsr.records.iter().min_by(|a, b| record_order(a, b)).ok_or(ConflictError::EmptyRecord)
}
