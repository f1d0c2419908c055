use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conflict::{ConflictClass, ConflictRecord, LateralClass, LateralClass::*, SpeedClass, VerticalClass};
use crate::geometry::{LaneDesignation, LaneNetwork};
use crate::plans::{
    Action, ActionId, AirspacePlan, Axis, AxisDirection, Condition, Manoeuvre, ManoeuvreId, Origin,
    PerformanceParams, PlannedAction, StrategyFootprint, AT_FIX_TOLERANCE_NM,
};
use crate::twin::Sample;
use crate::units::{Callsign, FlightLevel};

use super::{Attribution, ResolveError};

static DEFAULT_TABLE: &str = include_str!("../../data/strategy_library.json");

/// The deconfliction strategies, in library priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Both aircraft offset to the same side of their centrelines.
    LateralSameSide,
    /// Offsets to opposite sides; a parameterised variant of lateral separation.
    LateralOpposite,
    LevelDescent,
    LevelClimb,
    ExchangeLevels,
    MatchSpeedTrail,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::LateralSameSide,
        StrategyKind::LateralOpposite,
        StrategyKind::LevelDescent,
        StrategyKind::LevelClimb,
        StrategyKind::ExchangeLevels,
        StrategyKind::MatchSpeedTrail,
    ];

    pub fn priority(self) -> u8 {
        match self {
            StrategyKind::LateralSameSide | StrategyKind::LateralOpposite => 1,
            StrategyKind::LevelDescent => 2,
            StrategyKind::LevelClimb => 3,
            StrategyKind::ExchangeLevels => 4,
            StrategyKind::MatchSpeedTrail => 5,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            StrategyKind::LateralSameSide => "lateral-same-side",
            StrategyKind::LateralOpposite => "lateral-opposite",
            StrategyKind::LevelDescent => "level-descent",
            StrategyKind::LevelClimb => "level-climb",
            StrategyKind::ExchangeLevels => "exchange-levels",
            StrategyKind::MatchSpeedTrail => "match-speed-trail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyParams {
    /// Include the Resume phase of lateral manoeuvres.
    pub lateral_resume: bool,
    pub level_floor: FlightLevel,
    pub level_ceiling: FlightLevel,
    pub trail_gap_nm: f64,
    pub speed_tolerance_kt: f64,
}

impl Default for StrategyParams {
    fn default() -> Self {
        StrategyParams {
            lateral_resume: true,
            level_floor: FlightLevel(200),
            level_ceiling: FlightLevel(410),
            trail_gap_nm: 10.0,
            speed_tolerance_kt: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TableRow {
    vertical: VerticalClass,
    lateral: LateralClass,
    speed: SpeedClass,
    strategies: Vec<StrategyKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TableDoc {
    schema_version: u32,
    classes: Vec<TableRow>,
}

/// Ranked strategy lists per conflict class. The table order is the
/// ranking; it follows the default priorities except where a class
/// promotes a strategy (speed control for overtakes).
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyLibrary {
    table: BTreeMap<ConflictClass, Vec<StrategyKind>>,
}

impl Default for StrategyLibrary {
    fn default() -> Self {
        StrategyLibrary::from_json(DEFAULT_TABLE).expect("bundled strategy table is valid")
    }
}

impl StrategyLibrary {
    /// Parses a table; every one of the 36 classes must have a non-empty list.
    pub fn from_json(s: &str) -> Result<Self, ResolveError> {
        let doc: TableDoc = serde_json::from_str(s).map_err(|e| ResolveError::Library(e.to_string()))?;
        if doc.schema_version != 1 {
            return Err(ResolveError::Library(format!("unsupported schema version {}", doc.schema_version)));
        }
        let mut table = BTreeMap::new();
        for row in doc.classes {
            let class = ConflictClass::new(row.vertical, row.lateral, row.speed);
            if row.strategies.is_empty() {
                return Err(ResolveError::Library(format!("no strategies for {class}")));
            }
            if table.insert(class, row.strategies).is_some() {
                return Err(ResolveError::Library(format!("duplicate row for {class}")));
            }
        }
        if let Some(missing) = ConflictClass::all().into_iter().find(|c| !table.contains_key(c)) {
            return Err(ResolveError::Library(format!("no row for {missing}")));
        }
        Ok(StrategyLibrary { table })
    }

    pub fn get(&self, class: &ConflictClass) -> &[StrategyKind] {
        &self.table[class]
    }

    /// Replaces the list for one class (extension point for additional strategies).
    pub fn set(&mut self, class: ConflictClass, list: Vec<StrategyKind>) -> Result<(), ResolveError> {
        if list.is_empty() {
            return Err(ResolveError::Library(format!("no strategies for {class}")));
        }
        self.table.insert(class, list);
        Ok(())
    }
}

/// A concrete, parameterised strategy instance ready to splice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: StrategyKind,
    pub priority: u8,
    pub label: String,
    pub manoeuvres: Vec<Manoeuvre>,
    pub footprint: StrategyFootprint,
    /// First id not used by the manoeuvres.
    pub next_id: u64,
}

/// Everything candidate generation needs to know about one conflict.
pub struct CandidateContext<'a> {
    pub conflict: &'a ConflictRecord,
    pub plan: &'a AirspacePlan,
    pub lanes: &'a LaneNetwork,
    pub perf: &'a PerformanceParams,
    pub params: &'a StrategyParams,
    pub causal: &'a Attribution,
    /// Each aircraft's state when the revised plan takes over (where Immediate triggers fire).
    pub at_start: BTreeMap<Callsign, Sample>,
    /// Each aircraft's sample at the conflict's first violation.
    pub at_conflict: BTreeMap<Callsign, Sample>,
}

struct Ids(u64);

impl Ids {
    fn next(&mut self) -> u64 {
        let v = self.0;
        self.0 += 1;
        v
    }
}

fn opposite(side: LaneDesignation) -> LaneDesignation {
    match side {
        LaneDesignation::Left => LaneDesignation::Right,
        LaneDesignation::Right => LaneDesignation::Left,
        LaneDesignation::Centre => LaneDesignation::Centre,
    }
}

fn side_direction(side: LaneDesignation) -> AxisDirection {
    match side {
        LaneDesignation::Right => AxisDirection::Right,
        _ => AxisDirection::Left,
    }
}

impl CandidateContext<'_> {
    fn pair(&self) -> (&Callsign, &Callsign) {
        (&self.conflict.pair.0, &self.conflict.pair.1)
    }

    fn causal_action(&self, cs: &Callsign, axis: Axis) -> Option<&PlannedAction> {
        let id = self.causal.get(cs)?.get(&axis)?;
        self.plan.get(cs)?.find(*id).map(|(_, _, pa)| pa)
    }

    fn level_at_conflict(&self, cs: &Callsign) -> Option<FlightLevel> {
        self.at_conflict.get(cs).map(|s| FlightLevel::nearest(s.altitude_ft))
    }

    fn in_band(&self, fl: FlightLevel) -> bool {
        fl >= self.params.level_floor && fl <= self.params.level_ceiling
    }

    /// Can `cs` still make its coordinated exit after a detour to `target`?
    fn exit_satisfiable(&self, cs: &Callsign, target: FlightLevel) -> bool {
        let (Some(fp), Some(s)) = (self.plan.get(cs), self.at_conflict.get(cs)) else {
            return false;
        };
        if fp.exit_abandoned {
            return true;
        }
        let Some(remaining) = self
            .lanes
            .route(&fp.route)
            .and_then(|r| r.fix_index(&fp.exit.fix))
            .and_then(|i| self.lanes.lane(&fp.route, s.lane).map(|l| l.vertex_s(i) - s.s_nm))
        else {
            return false;
        };
        let rate = self.perf.climb_rate_fpm.min(self.perf.descent_rate_fpm);
        let travel_ft = (target.feet() - s.altitude_ft).abs() + (target.feet() - fp.exit.flight_level.feet()).abs();
        travel_ft / rate * s.ground_speed_kt / 60.0 <= remaining
    }

    fn movers(&self, target_for: impl Fn(&Callsign) -> Option<FlightLevel>) -> Vec<Callsign> {
        let (a, b) = self.pair();
        let mut v = vec![a.clone(), b.clone()];
        v.sort_by_key(|cs| {
            let ok = target_for(cs).is_some_and(|t| self.exit_satisfiable(cs, t));
            (!ok, cs.clone())
        });
        v
    }

    fn lateral_phases(&self, ids: &mut Ids, cs: &Callsign, other: &Callsign, side: LaneDesignation) -> Option<Vec<PlannedAction>> {
        let c = self.causal_action(cs, Axis::Lateral)?;
        let fp = self.plan.get(cs)?;
        let id = ManoeuvreId(0);
        let passed = Condition::AircraftPassedLaterally { other: other.clone() };
        let origin = Origin::Manoeuvre { id };
        let offset = PlannedAction {
            id: ActionId(ids.next()),
            trigger: Condition::Immediate,
            action: Action::FlyLane { route: fp.route.clone(), lane: side },
            completion: if self.params.lateral_resume { passed.clone() } else { c.completion.clone() },
            origin,
        };
        let mut out = vec![offset];
        if self.params.lateral_resume {
            out.push(PlannedAction {
                id: ActionId(ids.next()),
                trigger: passed,
                action: c.action.clone(),
                completion: c.completion.clone(),
                origin,
            });
        }
        Some(out)
    }

    fn vertical_phases(&self, ids: &mut Ids, cs: &Callsign, other: &Callsign, target: FlightLevel) -> Option<Vec<PlannedAction>> {
        let c = self.causal_action(cs, Axis::Vertical)?;
        let start_alt = self.at_start.get(cs)?.altitude_ft;
        let reached = Condition::ReachedLevel { level: target };
        let passed = Condition::AircraftPassedLaterally { other: other.clone() };
        let origin = Origin::Manoeuvre { id: ManoeuvreId(0) };
        Some(vec![
            PlannedAction {
                id: ActionId(ids.next()),
                trigger: Condition::Immediate,
                action: Action::change_level(start_alt, target),
                completion: reached.clone(),
                origin,
            },
            PlannedAction {
                id: ActionId(ids.next()),
                trigger: reached,
                action: Action::MaintainLevel { level: target },
                completion: passed.clone(),
                origin,
            },
            PlannedAction {
                id: ActionId(ids.next()),
                trigger: passed,
                action: c.action.clone(),
                completion: c.completion.clone(),
                origin,
            },
        ])
    }

    fn speed_phases(&self, ids: &mut Ids, cs: &Callsign, steps: &[(f64, Option<Condition>)]) -> Option<Vec<PlannedAction>> {
        let fp = self.plan.get(cs)?;
        let at_exit = Condition::AtFix { fix: fp.exit.fix.clone(), tolerance_nm: AT_FIX_TOLERANCE_NM };
        let origin = Origin::Manoeuvre { id: ManoeuvreId(0) };
        let mut out: Vec<PlannedAction> = Vec::new();
        for (speed, until) in steps {
            let trigger = out.last().map_or(Condition::Immediate, |p| p.completion.clone());
            out.push(PlannedAction {
                id: ActionId(ids.next()),
                trigger,
                action: Action::SetSpeed { speed_kt: speed.clamp(self.perf.min_speed_kt, self.perf.max_speed_kt) },
                completion: until.clone().unwrap_or_else(|| at_exit.clone()),
                origin,
            });
        }
        Some(out)
    }

    fn manoeuvre(
        &self,
        ids: &mut Ids,
        kind: StrategyKind,
        cs: &Callsign,
        label: String,
        directions: BTreeMap<Axis, AxisDirection>,
        mut phases: Vec<PlannedAction>,
    ) -> Manoeuvre {
        let id = ManoeuvreId(ids.next());
        for p in &mut phases {
            p.origin = Origin::Manoeuvre { id };
        }
        let other = self.conflict.other(cs).clone();
        Manoeuvre {
            id,
            strategy: kind.id().to_string(),
            callsign: cs.clone(),
            counterpart: other.clone(),
            label,
            directions,
            release: Condition::AircraftPassedLaterally { other },
            phases,
        }
    }

    fn lateral(&self, kind: StrategyKind, sides: (LaneDesignation, LaneDesignation), next_id: u64) -> Option<Candidate> {
        let (a, b) = self.pair();
        let mut ids = Ids(next_id);
        let mut ms = Vec::new();
        let mut footprint = Vec::new();
        for (cs, other, side) in [(a, b, sides.0), (b, a, sides.1)] {
            let phases = self.lateral_phases(&mut ids, cs, other, side)?;
            let dir = side_direction(side);
            let label = format!("{cs} fly {side} lane until clear of {other}");
            ms.push(self.manoeuvre(&mut ids, kind, cs, label, [(Axis::Lateral, dir)].into(), phases));
            footprint.push((cs.clone(), dir));
        }
        let label = format!("{}: {a} {}, {b} {}", kind.id(), sides.0, sides.1);
        Some(Candidate { kind, priority: kind.priority(), label, manoeuvres: ms, footprint, next_id: ids.0 })
    }

    fn level_change(&self, kind: StrategyKind, mover: &Callsign, target: FlightLevel, next_id: u64) -> Option<Candidate> {
        let other = self.conflict.other(mover);
        let mut ids = Ids(next_id);
        let dir = if kind == StrategyKind::LevelClimb { AxisDirection::ClimbOnly } else { AxisDirection::DescendOnly };
        let phases = self.vertical_phases(&mut ids, mover, other, target)?;
        let label = format!("{mover} {} to {target} until clear of {other}", if kind == StrategyKind::LevelClimb { "climb" } else { "descend" });
        let m = self.manoeuvre(&mut ids, kind, mover, label.clone(), [(Axis::Vertical, dir)].into(), phases);
        Some(Candidate {
            kind,
            priority: kind.priority(),
            label: format!("{}: {label}", kind.id()),
            manoeuvres: vec![m],
            footprint: vec![(mover.clone(), dir)],
            next_id: ids.0,
        })
    }

    fn level_changes(&self, kind: StrategyKind, next_id: u64) -> Vec<Candidate> {
        let step: i32 = if kind == StrategyKind::LevelClimb { 10 } else { -10 };
        let targets = |cs: &Callsign| -> Vec<FlightLevel> {
            let Some(base) = self.level_at_conflict(self.conflict.other(cs)) else {
                return Vec::new();
            };
            [1, 2].iter().filter_map(|k| base.offset(step * k)).filter(|fl| self.in_band(*fl)).collect()
        };
        let mut out = Vec::new();
        for mover in self.movers(|cs| targets(cs).first().copied()) {
            for t in targets(&mover) {
                out.extend(self.level_change(kind, &mover, t, next_id));
            }
        }
        out
    }

    fn exchange(&self, side: LaneDesignation, climber: &Callsign, next_id: u64) -> Option<Candidate> {
        let kind = StrategyKind::ExchangeLevels;
        let (a, b) = self.pair();
        let descender = self.conflict.other(climber);
        let (la, lb) = (self.level_at_conflict(a)?, self.level_at_conflict(b)?);
        let (up, down) = if la == lb {
            (la.offset(10)?, la.offset(-10)?)
        } else {
            // swap: the lower aircraft takes the higher level and vice versa
            let (hi, lo) = if la > lb { (la, lb) } else { (lb, la) };
            (hi, lo)
        };
        if !self.in_band(up) || !self.in_band(down) {
            return None;
        }
        let lateral_side = |cs: &Callsign| {
            if cs == a || self.conflict.class.lateral == HO {
                side
            } else {
                opposite(side)
            }
        };
        let mut ids = Ids(next_id);
        let mut ms = Vec::new();
        let mut footprint = Vec::new();
        for (cs, target, vdir) in [(climber, up, AxisDirection::ClimbOnly), (descender, down, AxisDirection::DescendOnly)] {
            let other = self.conflict.other(cs);
            let lane = lateral_side(cs);
            let ldir = side_direction(lane);
            let mut phases = self.lateral_phases(&mut ids, cs, other, lane)?;
            phases.extend(self.vertical_phases(&mut ids, cs, other, target)?);
            let label = format!("{cs} fly {lane} lane and change to {target} until clear of {other}");
            ms.push(self.manoeuvre(&mut ids, kind, cs, label, [(Axis::Lateral, ldir), (Axis::Vertical, vdir)].into(), phases));
            footprint.push((cs.clone(), ldir));
            footprint.push((cs.clone(), vdir));
        }
        let label = format!("{}: {climber} up to {up}, {descender} down to {down}, offsets {side}", kind.id());
        Some(Candidate { kind, priority: kind.priority(), label, manoeuvres: ms, footprint, next_id: ids.0 })
    }

    fn exchanges(&self, next_id: u64) -> Vec<Candidate> {
        let (a, b) = self.pair();
        let (Some(la), Some(lb)) = (self.level_at_conflict(a), self.level_at_conflict(b)) else {
            return Vec::new();
        };
        let climbers: Vec<&Callsign> = if la == lb {
            vec![a, b]
        } else if la < lb {
            vec![a]
        } else {
            vec![b]
        };
        let mut out = Vec::new();
        for climber in climbers {
            for side in [LaneDesignation::Left, LaneDesignation::Right] {
                out.extend(self.exchange(side, climber, next_id));
            }
        }
        out
    }

    fn trail(&self, delta_kt: f64, next_id: u64) -> Option<Candidate> {
        let kind = StrategyKind::MatchSpeedTrail;
        let (a, b) = self.pair();
        let (sa, sb) = (self.at_conflict.get(a)?, self.at_conflict.get(b)?);
        let lane_a = self.lanes.lane(&self.plan.get(a)?.route, sa.lane)?;
        let b_ahead = lane_a.along_track(sb.position).s > sa.s_nm;
        let (leader, follower) = if b_ahead { (b, a) } else { (a, b) };
        let lead_speed = self.at_start.get(leader)?.ground_speed_kt;
        let follow_speed = self.at_start.get(follower)?.ground_speed_kt;
        let slowed = lead_speed - delta_kt;
        let dir = if slowed < follow_speed { AxisDirection::SlowOnly } else { AxisDirection::FastOnly };
        let gap = Condition::LateralSeparationExceeds { other: leader.clone(), threshold_nm: self.params.trail_gap_nm };
        let mut ids = Ids(next_id);
        let lead_phases = self.speed_phases(&mut ids, leader, &[(lead_speed, None)])?;
        let follow_phases = self.speed_phases(&mut ids, follower, &[(slowed, Some(gap)), (lead_speed, None)])?;
        let ml = self.manoeuvre(&mut ids, kind, leader, format!("{leader} maintain {lead_speed:.0} kt"), BTreeMap::new(), lead_phases);
        let mf = self.manoeuvre(
            &mut ids,
            kind,
            follower,
            format!("{follower} reduce to {slowed:.0} kt and trail {leader}"),
            [(Axis::Speed, dir)].into(),
            follow_phases,
        );
        let label = format!("{}: {follower} trails {leader} at -{delta_kt:.0} kt", kind.id());
        Some(Candidate {
            kind,
            priority: kind.priority(),
            label,
            manoeuvres: vec![ml, mf],
            footprint: vec![(follower.clone(), dir)],
            next_id: ids.0,
        })
    }

    /// Concrete candidates for one strategy, in parameter order (at most 4).
    pub fn expand(&self, kind: StrategyKind) -> Vec<Candidate> {
        use LaneDesignation::{Left, Right};
        let next_id = self.plan.next_id;
        let mut out: Vec<Candidate> = match kind {
            StrategyKind::LateralSameSide => {
                [(Left, Left), (Right, Right)].into_iter().filter_map(|s| self.lateral(kind, s, next_id)).collect()
            }
            StrategyKind::LateralOpposite => {
                [(Left, Right), (Right, Left)].into_iter().filter_map(|s| self.lateral(kind, s, next_id)).collect()
            }
            StrategyKind::LevelDescent | StrategyKind::LevelClimb => self.level_changes(kind, next_id),
            StrategyKind::ExchangeLevels => self.exchanges(next_id),
            StrategyKind::MatchSpeedTrail => {
                if self.conflict.class.lateral != P {
                    Vec::new()
                } else {
                    let tol = self.params.speed_tolerance_kt;
                    [tol, 2.0 * tol].into_iter().filter_map(|d| self.trail(d, next_id)).collect()
                }
            }
        };
        out.truncate(4);
        out
    }
}

/// Priority-ordered concrete candidates for the conflict.
pub fn get_strategies(ctx: &CandidateContext<'_>, library: &StrategyLibrary) -> Vec<Candidate> {
    library.get(&ctx.conflict.class).iter().flat_map(|k| ctx.expand(*k)).collect()
}
