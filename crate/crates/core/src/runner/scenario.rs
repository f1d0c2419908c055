use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conflict::{ClassThresholds, SeparationMinima};
use crate::geometry::{ExitCondition, GeometryError, LaneNetwork, Point, Route, Sector, DEFAULT_LANE_OFFSET_NM};
use crate::plans::{EntryState, PerformanceParams};
use crate::resolver::{SearchParams, StrategyParams};
use crate::twin::{EnsembleConfig, PerturbationRanges, RunConfig, MAX_HORIZON_S};
use crate::units::{Callsign, FlightLevel};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {cause}")]
    Io { path: String, cause: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported schema_version {0} (expected {SCENARIO_SCHEMA_VERSION})")]
    Schema(u32),
    #[error("{location}: unknown {kind} '{name}'")]
    Reference { location: String, kind: &'static str, name: String },
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
    #[error("sector geometry: {0}")]
    Geometry(#[from] GeometryError),
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { location: location.into(), message: message.into() }
}

/// One aircraft of the traffic sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftSpec {
    pub callsign: Callsign,
    pub route: String,
    #[serde(default)]
    pub entry_time_s: f64,
    pub entry_level: FlightLevel,
    /// Preferred flight level; defaults to the entry level.
    #[serde(default)]
    pub pfl: Option<FlightLevel>,
    pub ground_speed_kt: f64,
    pub exit: ExitCondition,
    #[serde(default)]
    pub along_nm: f64,
}

impl AircraftSpec {
    pub fn entry_state(&self) -> EntryState {
        EntryState {
            callsign: self.callsign.clone(),
            route: self.route.clone(),
            entry_level: self.entry_level,
            ground_speed_kt: self.ground_speed_kt,
            along_nm: self.along_nm,
        }
    }

    pub fn preferred_level(&self) -> FlightLevel {
        self.pfl.unwrap_or(self.entry_level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorSpec {
    /// Sector polygon; when empty, the bounding box of all fixes plus 10 NM.
    #[serde(default)]
    pub boundary: Vec<Point>,
    pub routes: Vec<Route>,
    #[serde(default = "default_offset")]
    pub lane_offset_nm: f64,
}

fn default_offset() -> f64 {
    DEFAULT_LANE_OFFSET_NM
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationSpec {
    pub rollouts: usize,
    pub horizon_s: f64,
    pub cut_interval_s: f64,
    pub counterfactual_s: f64,
    pub entry_lookahead_s: f64,
}

impl Default for VerificationSpec {
    fn default() -> Self {
        VerificationSpec {
            rollouts: 20,
            horizon_s: MAX_HORIZON_S,
            cut_interval_s: 300.0,
            counterfactual_s: 900.0,
            entry_lookahead_s: 900.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSpec {
    pub dt_s: f64,
    /// Replanning cadence in simulated seconds.
    pub cadence_s: f64,
    pub horizon_s: f64,
    /// Longest gap between two verifications of an unchanged plan.
    pub reverify_s: f64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec { dt_s: 5.0, cadence_s: 10.0, horizon_s: MAX_HORIZON_S, reverify_s: 60.0 }
    }
}

/// A complete, self-contained episode description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub sector: SectorSpec,
    #[serde(default)]
    pub aircraft: Vec<AircraftSpec>,
    #[serde(default)]
    pub performance: PerformanceParams,
    #[serde(default)]
    pub minima: SeparationMinima,
    #[serde(default)]
    pub thresholds: ClassThresholds,
    #[serde(default)]
    pub perturbation: PerturbationRanges,
    #[serde(default)]
    pub verification: VerificationSpec,
    #[serde(default)]
    pub search: SearchParams,
    #[serde(default)]
    pub strategy: StrategyParams,
    #[serde(default)]
    pub episode: EpisodeSpec,
}

/// Loads and fully validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|cause| ScenarioError::Io { path: path.display().to_string(), cause })?;
    Scenario::from_json(&text)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let version: Option<u32> = serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("schema_version").and_then(|s| s.as_u64()))
            .and_then(|v| u32::try_from(v).ok());
        if let Some(v) = version.filter(|v| *v != SCENARIO_SCHEMA_VERSION) {
            return Err(ScenarioError::Schema(v));
        }
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    /// The sector with its boundary filled in.
    pub fn sector(&self) -> Sector {
        let mut boundary = self.sector.boundary.clone();
        if boundary.is_empty() {
            let pts: Vec<Point> = self.sector.routes.iter().flat_map(|r| r.points()).collect();
            let (mut lo, mut hi) = (Point::new(0.0, 0.0), Point::new(0.0, 0.0));
            if let Some(first) = pts.first() {
                lo = *first;
                hi = *first;
            }
            for p in &pts {
                lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
            }
            let m = 10.0;
            boundary = vec![
                Point::new(lo.x - m, lo.y - m),
                Point::new(hi.x + m, lo.y - m),
                Point::new(hi.x + m, hi.y + m),
                Point::new(lo.x - m, hi.y + m),
            ];
        }
        let exits = self.aircraft.iter().map(|a| a.exit.clone()).collect();
        Sector { boundary, routes: self.sector.routes.clone(), exits }
    }

    pub fn lanes(&self) -> Result<LaneNetwork, ScenarioError> {
        Ok(LaneNetwork::build(&self.sector.routes, self.sector.lane_offset_nm)?)
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        let v = &self.verification;
        EnsembleConfig {
            rollouts: v.rollouts,
            ranges: self.perturbation,
            seed: self.seed,
            run: RunConfig { horizon_s: v.horizon_s, dt_s: self.episode.dt_s, entry_lookahead_s: v.entry_lookahead_s },
            cut_interval_s: v.cut_interval_s,
            counterfactual_s: v.counterfactual_s,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(ScenarioError::Schema(self.schema_version));
        }
        let mut route_ids = BTreeSet::new();
        for (i, r) in self.sector.routes.iter().enumerate() {
            if !route_ids.insert(r.id.as_str()) {
                return Err(invalid(format!("sector.routes[{i}]"), format!("duplicate route id '{}'", r.id)));
            }
        }
        if !(self.sector.lane_offset_nm > 0.0) {
            return Err(invalid("sector.lane_offset_nm", "must be positive"));
        }
        self.sector().validate()?;
        self.lanes()?;
        self.minima.validate().map_err(|e| invalid("minima", e.to_string()))?;
        let st = &self.strategy;
        if st.level_floor > st.level_ceiling {
            return Err(invalid("strategy", "level_floor above level_ceiling"));
        }
        let v = &self.verification;
        if v.rollouts == 0 {
            return Err(invalid("verification.rollouts", "must be at least 1"));
        }
        if !(v.horizon_s > 0.0 && v.horizon_s <= MAX_HORIZON_S) {
            return Err(invalid("verification.horizon_s", format!("must be in (0, {MAX_HORIZON_S}]")));
        }
        let e = &self.episode;
        if !(e.dt_s > 0.0) || !(e.cadence_s >= e.dt_s) {
            return Err(invalid("episode", "need dt_s > 0 and cadence_s >= dt_s"));
        }
        if !(e.horizon_s > 0.0) {
            return Err(invalid("episode.horizon_s", "must be positive"));
        }
        let mut seen = BTreeSet::new();
        for (i, a) in self.aircraft.iter().enumerate() {
            validate_aircraft(self, a, &format!("aircraft[{i}]"))?;
            if !seen.insert(&a.callsign) {
                return Err(invalid(format!("aircraft[{i}].callsign"), format!("duplicate callsign {}", a.callsign)));
            }
        }
        Ok(())
    }
}

/// Checks one aircraft against the scenario's routes, band and performance.
pub fn validate_aircraft(s: &Scenario, a: &AircraftSpec, loc: &str) -> Result<(), ScenarioError> {
    if a.callsign.as_str().is_empty() {
        return Err(invalid(format!("{loc}.callsign"), "empty callsign"));
    }
    let route = s.sector.routes.iter().find(|r| r.id == a.route).ok_or_else(|| ScenarioError::Reference {
        location: format!("{loc}.route"),
        kind: "route",
        name: a.route.clone(),
    })?;
    if route.fix_index(&a.exit.fix).is_none() {
        return Err(ScenarioError::Reference { location: format!("{loc}.exit.fix"), kind: "fix", name: a.exit.fix.clone() });
    }
    if !(a.entry_time_s >= 0.0 && a.entry_time_s.is_finite()) {
        return Err(invalid(format!("{loc}.entry_time_s"), "must be finite and >= 0"));
    }
    let perf = &s.performance;
    if !(a.ground_speed_kt >= perf.min_speed_kt && a.ground_speed_kt <= perf.max_speed_kt) {
        return Err(invalid(
            format!("{loc}.ground_speed_kt"),
            format!("{} outside [{}, {}]", a.ground_speed_kt, perf.min_speed_kt, perf.max_speed_kt),
        ));
    }
    let (lo, hi) = (s.strategy.level_floor, s.strategy.level_ceiling);
    for (field, fl) in [("entry_level", a.entry_level), ("pfl", a.preferred_level()), ("exit.flight_level", a.exit.flight_level)] {
        if fl < lo || fl > hi {
            return Err(invalid(format!("{loc}.{field}"), format!("{fl} outside level band {lo}-{hi}")));
        }
    }
    if a.along_nm < 0.0 {
        return Err(invalid(format!("{loc}.along_nm"), "must be >= 0"));
    }
    Ok(())
}
