//! Lane network construction and queries for systemised airspace.
//!
//! All coordinates live in a flat local Cartesian frame measured in nautical
//! miles. A route is a fix-to-fix centreline; each route carries three lanes
//! (Left, Centre, Right) where the outer lanes are miter-joined offsets of the
//! centreline. "Left" is relative to the direction of travel along the route.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::FlightLevel;

/// Default lane offset from the centreline.
pub const DEFAULT_LANE_OFFSET_NM: f64 = 3.5;

/// Smallest interior angle (degrees) accepted at a route turn.
pub const MIN_TURN_INTERIOR_DEG: f64 = 30.0;

const EPS: f64 = 1e-9;

/// Slack on the turn limit so a turn built at exactly the limit survives rounding.
const ANGLE_EPS_DEG: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("route {route} needs at least two fixes")]
    TooFewFixes { route: String },
    #[error("route {route} has a zero-length segment at fix {fix}")]
    ZeroLengthSegment { route: String, fix: String },
    #[error("non-finite coordinate at fix {fix}")]
    NonFinite { fix: String },
    #[error("turn at fix {fix} is too sharp: interior angle {interior_deg:.1} deg < {limit_deg} deg")]
    TurnTooSharp { fix: String, interior_deg: f64, limit_deg: f64 },
    #[error("segment ending at fix {fix} is too short for a {offset_nm} NM lane offset")]
    SegmentTooShort { fix: String, offset_nm: f64 },
    #[error("lane offset must be finite and non-negative, got {0}")]
    BadOffset(f64),
    #[error("along-track position {s} outside lane [0, {length}]")]
    OutOfRange { s: f64, length: f64 },
    #[error("duplicate fix id {0}")]
    DuplicateFix(String),
    #[error("unknown fix {0}")]
    UnknownFix(String),
    #[error("fix {0} lies outside the sector boundary")]
    FixOutsideSector(String),
    #[error("sector boundary needs at least three vertices")]
    DegenerateBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point { x: v[0], y: v[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Point {
        let n = self.norm();
        Point::new(self.x / n, self.y / n)
    }

    /// Unit normal pointing to the left of this direction.
    pub fn left_normal(self) -> Point {
        let d = self.normalized();
        Point::new(-d.y, d.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// Track angle in degrees, clockwise from +y (north), in [0, 360).
pub fn track_deg(direction: Point) -> f64 {
    let deg = direction.x.atan2(direction.y).to_degrees();
    if deg < 0.0 {
        deg + 360.0
    } else {
        deg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub id: String,
    pub position: Point,
}

impl Fix {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        Fix { id: id.into(), position: Point::new(x, y) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: String,
    pub fixes: Vec<Fix>,
}

impl Route {
    pub fn new(id: impl Into<String>, fixes: Vec<Fix>) -> Result<Self, GeometryError> {
        let route = Route { id: id.into(), fixes };
        route.validate()?;
        Ok(route)
    }

    /// Convenience constructor naming fixes `<route>-<index>`.
    pub fn from_points(id: impl Into<String>, pts: &[(f64, f64)]) -> Result<Self, GeometryError> {
        let id = id.into();
        let fixes = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Fix::new(format!("{id}-{i}"), x, y))
            .collect();
        Route::new(id, fixes)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.fixes.len() < 2 {
            return Err(GeometryError::TooFewFixes { route: self.id.clone() });
        }
        for f in &self.fixes {
            if !f.position.is_finite() {
                return Err(GeometryError::NonFinite { fix: f.id.clone() });
            }
        }
        for w in self.fixes.windows(2) {
            if w[0].position.distance(w[1].position) < EPS {
                return Err(GeometryError::ZeroLengthSegment {
                    route: self.id.clone(),
                    fix: w[1].id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<Point> {
        self.fixes.iter().map(|f| f.position).collect()
    }

    pub fn fix_index(&self, fix_id: &str) -> Option<usize> {
        self.fixes.iter().position(|f| f.id == fix_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LaneDesignation {
    Left,
    Centre,
    Right,
}

impl LaneDesignation {
    /// Sign applied to the lane offset: Left is positive (left of travel).
    pub fn sign(self) -> f64 {
        match self {
            LaneDesignation::Left => 1.0,
            LaneDesignation::Centre => 0.0,
            LaneDesignation::Right => -1.0,
        }
    }
}

impl fmt::Display for LaneDesignation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LaneDesignation::Left => "Left",
            LaneDesignation::Centre => "Centre",
            LaneDesignation::Right => "Right",
        };
        f.write_str(s)
    }
}

/// One offset polyline of a route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub route_id: String,
    pub designation: LaneDesignation,
    /// Signed offset in NM (Left positive).
    pub offset: f64,
    pub polyline: Vec<Point>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

/// Result of projecting a point onto a lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    /// Signed distance, positive to the left of travel.
    pub cross_track: f64,
    /// The projection fell beyond one of the lane endpoints.
    pub clamped: bool,
}

impl Lane {
    /// Builds a lane from an explicit polyline. Consecutive points must be distinct.
    pub fn from_polyline(
        route_id: impl Into<String>,
        designation: LaneDesignation,
        offset: f64,
        polyline: Vec<Point>,
    ) -> Self {
        let mut cumulative = Vec::with_capacity(polyline.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in polyline.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        Lane { route_id: route_id.into(), designation, offset, polyline, cumulative }
    }

    /// Restores the cached arc lengths after deserialisation.
    pub fn rebuild(self) -> Self {
        Lane::from_polyline(self.route_id, self.designation, self.offset, self.polyline)
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Arc length at polyline vertex `i`.
    pub fn vertex_s(&self, i: usize) -> f64 {
        self.cumulative[i]
    }

    fn segment_index(&self, s: f64) -> usize {
        let n = self.polyline.len();
        if n < 2 {
            return 0;
        }
        // first segment whose end lies beyond s
        let idx = self.cumulative.partition_point(|&c| c <= s);
        idx.clamp(1, n - 1) - 1
    }

    /// Unit direction of travel at arc length `s` (clamped).
    pub fn direction_at(&self, s: f64) -> Point {
        let i = self.segment_index(s.clamp(0.0, self.length()));
        (self.polyline[i + 1] - self.polyline[i]).normalized()
    }

    pub fn point_at(&self, s: f64) -> Result<Point, GeometryError> {
        let len = self.length();
        if !(-EPS..=len + EPS).contains(&s) {
            return Err(GeometryError::OutOfRange { s, length: len });
        }
        if self.polyline.len() == 1 {
            return Ok(self.polyline[0]);
        }
        let s = s.clamp(0.0, len);
        let i = self.segment_index(s);
        let a = self.polyline[i];
        let b = self.polyline[i + 1];
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let u = (s - self.cumulative[i]) / seg;
        Ok(a + (b - a) * u)
    }

    /// Point at arc length `s` displaced `cross_track` NM to the left.
    pub fn reproject(&self, s: f64, cross_track: f64) -> Result<Point, GeometryError> {
        let p = self.point_at(s)?;
        Ok(p + self.direction_at(s).left_normal() * cross_track)
    }

    pub fn along_track(&self, p: Point) -> Projection {
        if self.polyline.len() < 2 {
            let c = self.polyline.first().copied().unwrap_or_default();
            return Projection { s: 0.0, cross_track: p.distance(c), clamped: true };
        }
        let last = self.polyline.len() - 2;
        let mut best: Option<(f64, usize, f64, f64)> = None; // (dist, seg, u, raw_u)
        for i in 0..=last {
            let a = self.polyline[i];
            let d = self.polyline[i + 1] - a;
            let raw = (p - a).dot(d) / d.dot(d);
            let u = raw.clamp(0.0, 1.0);
            let dist = p.distance(a + d * u);
            if best.is_none_or(|b| dist < b.0 - 1e-12) {
                best = Some((dist, i, u, raw));
            }
        }
        let (dist, i, u, raw) = best.expect("lane has at least one segment");
        let a = self.polyline[i];
        let d = self.polyline[i + 1] - a;
        let side = d.cross(p - a);
        let cross_track = if side < 0.0 { -dist } else { dist };
        let clamped = (i == 0 && raw < 0.0) || (i == last && raw > 1.0);
        Projection { s: self.cumulative[i] + u * d.norm(), cross_track, clamped }
    }

    /// Shortest distance from `p` to any point of the polyline.
    pub fn distance_to(&self, p: Point) -> f64 {
        if self.polyline.len() == 1 {
            return p.distance(self.polyline[0]);
        }
        self.polyline
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Samples every `step` NM, always including vertices and the far end.
    pub fn sample(&self, step: f64) -> Vec<Point> {
        let mut out = self.polyline.clone();
        if step > 0.0 && self.polyline.len() >= 2 {
            let len = self.length();
            let n = (len / step).floor() as usize;
            for k in 1..=n {
                let s = (k as f64 * step).min(len);
                out.push(self.point_at(s).expect("sample within range"));
            }
        }
        out
    }
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = b - a;
    let len2 = d.dot(d);
    if len2 < EPS * EPS {
        return p.distance(a);
    }
    let u = ((p - a).dot(d) / len2).clamp(0.0, 1.0);
    p.distance(a + d * u)
}

/// The three lanes of one route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSet {
    pub left: Lane,
    pub centre: Lane,
    pub right: Lane,
}

impl LaneSet {
    pub fn get(&self, designation: LaneDesignation) -> &Lane {
        match designation {
            LaneDesignation::Left => &self.left,
            LaneDesignation::Centre => &self.centre,
            LaneDesignation::Right => &self.right,
        }
    }
}

/// Interior angle in degrees at the turn a→b→c (180 = straight on).
pub fn interior_angle_deg(a: Point, b: Point, c: Point) -> f64 {
    let u = (a - b).normalized();
    let v = (c - b).normalized();
    u.dot(v).clamp(-1.0, 1.0).acos().to_degrees()
}

fn offset_polyline(route: &Route, offset: f64) -> Result<Vec<Point>, GeometryError> {
    let pts = route.points();
    let n = pts.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let p = pts[i];
        let q = if i == 0 {
            p + (pts[1] - pts[0]).left_normal() * offset
        } else if i == n - 1 {
            p + (pts[n - 1] - pts[n - 2]).left_normal() * offset
        } else {
            let n1 = (pts[i] - pts[i - 1]).left_normal();
            let n2 = (pts[i + 1] - pts[i]).left_normal();
            // miter vertex: the unique point at distance `offset` from both offset lines
            p + (n1 + n2) * (offset / (1.0 + n1.dot(n2)))
        };
        out.push(q);
    }
    if offset > 0.0 {
        for i in 1..n {
            let centre = pts[i] - pts[i - 1];
            let off = out[i] - out[i - 1];
            if off.dot(centre) <= EPS {
                return Err(GeometryError::SegmentTooShort {
                    fix: route.fixes[i].id.clone(),
                    offset_nm: offset,
                });
            }
        }
    }
    Ok(out)
}

/// Builds the Left/Centre/Right lanes of `route` at `offset_nm` either side.
pub fn build_lanes(route: &Route, offset_nm: f64) -> Result<LaneSet, GeometryError> {
    if !offset_nm.is_finite() || offset_nm < 0.0 {
        return Err(GeometryError::BadOffset(offset_nm));
    }
    route.validate()?;
    let pts = route.points();
    for i in 1..pts.len() - 1 {
        let interior = interior_angle_deg(pts[i - 1], pts[i], pts[i + 1]);
        if interior < MIN_TURN_INTERIOR_DEG - ANGLE_EPS_DEG {
            return Err(GeometryError::TurnTooSharp {
                fix: route.fixes[i].id.clone(),
                interior_deg: interior,
                limit_deg: MIN_TURN_INTERIOR_DEG,
            });
        }
    }
    let left = offset_polyline(route, offset_nm)?;
    let right = offset_polyline(route, -offset_nm)?;
    Ok(LaneSet {
        left: Lane::from_polyline(&route.id, LaneDesignation::Left, offset_nm, left),
        centre: Lane::from_polyline(&route.id, LaneDesignation::Centre, 0.0, pts),
        right: Lane::from_polyline(&route.id, LaneDesignation::Right, -offset_nm, right),
    })
}

/// Minimum sampled distance between two lanes, checked in both directions.
pub fn min_lane_spacing(a: &Lane, b: &Lane, sample_step: f64) -> f64 {
    let ab = a.sample(sample_step).into_iter().map(|p| b.distance_to(p)).fold(f64::INFINITY, f64::min);
    let ba = b.sample(sample_step).into_iter().map(|p| a.distance_to(p)).fold(f64::INFINITY, f64::min);
    ab.min(ba)
}

/// A coordinated exit: the fix an aircraft leaves by and the agreed level there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitCondition {
    pub fix: String,
    pub flight_level: FlightLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub boundary: Vec<Point>,
    pub routes: Vec<Route>,
    pub exits: Vec<ExitCondition>,
}

/// Even-odd test, counting points on an edge as inside.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    for i in 0..n {
        if point_segment_distance(p, poly[i], poly[(i + 1) % n]) < 1e-9 {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.y > p.y) != (pj.y > p.y) && p.x < (pj.x - pi.x) * (p.y - pi.y) / (pj.y - pi.y) + pi.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl Sector {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.boundary.len() < 3 {
            return Err(GeometryError::DegenerateBoundary);
        }
        let mut fixes: HashMap<&str, Point> = HashMap::new();
        for r in &self.routes {
            r.validate()?;
            for f in &r.fixes {
                if let Some(prev) = fixes.insert(&f.id, f.position) {
                    if prev.distance(f.position) > EPS {
                        return Err(GeometryError::DuplicateFix(f.id.clone()));
                    }
                }
                if !point_in_polygon(f.position, &self.boundary) {
                    return Err(GeometryError::FixOutsideSector(f.id.clone()));
                }
            }
        }
        for e in &self.exits {
            if !fixes.contains_key(e.fix.as_str()) {
                return Err(GeometryError::UnknownFix(e.fix.clone()));
            }
        }
        Ok(())
    }

    pub fn route(&self, id: &str) -> Option<&Route> {
        self.routes.iter().find(|r| r.id == id)
    }
}

/// Built lane network for every route of a sector.
#[derive(Debug, Clone, Default)]
pub struct LaneNetwork {
    pub offset_nm: f64,
    routes: HashMap<String, (Route, LaneSet)>,
}

impl LaneNetwork {
    pub fn build(routes: &[Route], offset_nm: f64) -> Result<Self, GeometryError> {
        let mut map = HashMap::new();
        for r in routes {
            map.insert(r.id.clone(), (r.clone(), build_lanes(r, offset_nm)?));
        }
        Ok(LaneNetwork { offset_nm, routes: map })
    }

    pub fn lanes(&self, route_id: &str) -> Option<&LaneSet> {
        self.routes.get(route_id).map(|(_, l)| l)
    }

    pub fn lane(&self, route_id: &str, designation: LaneDesignation) -> Option<&Lane> {
        self.lanes(route_id).map(|l| l.get(designation))
    }

    pub fn route(&self, route_id: &str) -> Option<&Route> {
        self.routes.get(route_id).map(|(r, _)| r)
    }

    pub fn route_ids(&self) -> impl Iterator<Item = &String> {
        self.routes.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Intersection of two infinite lines given as point + direction.
    fn line_intersection(p: Point, d: Point, q: Point, e: Point) -> Point {
        let t = (q - p).cross(e) / d.cross(e);
        p + d * t
    }

    #[test]
    fn straight_route_offsets() {
        let r = Route::from_points("R", &[(0.0, 0.0), (20.0, 0.0)]).unwrap();
        let lanes = build_lanes(&r, 3.5).unwrap();
        assert_eq!(lanes.left.polyline, vec![Point::new(0.0, 3.5), Point::new(20.0, 3.5)]);
        assert_eq!(lanes.right.polyline, vec![Point::new(0.0, -3.5), Point::new(20.0, -3.5)]);
    }

    #[test]
    fn right_angle_turn_transition_node() {
        let r = Route::from_points("R", &[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)]).unwrap();
        let lanes = build_lanes(&r, 3.5).unwrap();
        // left offset lines: y = 3.5 along the first leg, x = 6.5 along the second
        let oracle = line_intersection(
            Point::new(0.0, 3.5),
            Point::new(1.0, 0.0),
            Point::new(6.5, 0.0),
            Point::new(0.0, 1.0),
        );
        assert_abs_diff_eq!(oracle.x, 6.5, epsilon = 1e-12);
        assert_abs_diff_eq!(lanes.left.polyline[1].x, oracle.x, epsilon = 1e-12);
        assert_abs_diff_eq!(lanes.left.polyline[1].y, oracle.y, epsilon = 1e-12);
    }

    #[test]
    fn zero_offset_is_centreline() {
        let r = Route::from_points("R", &[(0.0, 0.0), (10.0, 0.0), (15.0, 9.0)]).unwrap();
        let lanes = build_lanes(&r, 0.0).unwrap();
        assert_eq!(lanes.centre.polyline, r.points());
        assert_eq!(lanes.left.polyline, r.points());
    }

    #[test]
    fn sharp_turn_rejected_naming_fix() {
        // interior angle ~11 deg at the middle fix
        let r = Route::from_points("R", &[(0.0, 0.0), (50.0, 0.0), (0.0, 10.0)]).unwrap();
        match build_lanes(&r, 3.5) {
            Err(GeometryError::TurnTooSharp { fix, .. }) => assert_eq!(fix, "R-1"),
            other => panic!("expected TurnTooSharp, got {other:?}"),
        }
    }

    #[test]
    fn turn_at_exactly_the_limit_is_accepted() {
        let a = 150f64.to_radians();
        let r = Route::from_points("R", &[(0.0, 0.0), (60.0, 0.0), (60.0 + 60.0 * a.cos(), 60.0 * a.sin())]).unwrap();
        let lanes = build_lanes(&r, 3.5).unwrap();
        assert!(min_lane_spacing(&lanes.left, &lanes.right, 0.1) >= 7.0 - 1e-6);
    }

    #[test]
    fn short_leg_rejected() {
        let r = Route::from_points("R", &[(0.0, 0.0), (10.0, 0.0), (10.0, 1.0), (0.0, 1.5)]);
        assert!(r.is_ok());
        assert!(matches!(
            build_lanes(&r.unwrap(), 3.5),
            Err(GeometryError::TurnTooSharp { .. } | GeometryError::SegmentTooShort { .. })
        ));
    }

    #[test]
    fn invalid_routes() {
        assert!(matches!(
            Route::from_points("R", &[(0.0, 0.0)]),
            Err(GeometryError::TooFewFixes { .. })
        ));
        assert!(matches!(
            Route::from_points("R", &[(0.0, 0.0), (0.0, 0.0)]),
            Err(GeometryError::ZeroLengthSegment { .. })
        ));
        let r = Route::from_points("R", &[(0.0, 0.0), (1.0, 0.0)]).unwrap();
        assert!(matches!(build_lanes(&r, -1.0), Err(GeometryError::BadOffset(_))));
    }

    #[test]
    fn along_track_examples() {
        let lane = Lane::from_polyline("R", LaneDesignation::Centre, 0.0, vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0)]);
        let p = lane.along_track(Point::new(4.0, 1.0));
        assert_abs_diff_eq!(p.s, 4.0);
        assert_abs_diff_eq!(p.cross_track, 1.0);
        assert!(!p.clamped);

        let p = lane.along_track(Point::new(7.0, 0.0));
        assert_abs_diff_eq!(p.cross_track, 0.0);

        let p = lane.along_track(Point::new(12.0, 0.0));
        assert_abs_diff_eq!(p.s, 10.0);
        assert!(p.clamped);

        let p = lane.along_track(Point::new(3.0, -2.0));
        assert_abs_diff_eq!(p.cross_track, -2.0);
    }

    #[test]
    fn point_at_examples() {
        let lane = Lane::from_polyline("R", LaneDesignation::Centre, 0.0, vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0)]);
        assert_eq!(lane.point_at(3.0).unwrap(), Point::new(3.0, 0.0));
        assert_eq!(lane.point_at(0.0).unwrap(), Point::new(0.0, 0.0));
        assert!(matches!(lane.point_at(10.5), Err(GeometryError::OutOfRange { .. })));
        assert!(lane.point_at(-0.1).is_err());

        let bent = Lane::from_polyline(
            "R",
            LaneDesignation::Centre,
            0.0,
            vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0), Point::new(10.0, 10.0)],
        );
        let p = bent.point_at(15.0).unwrap();
        assert_abs_diff_eq!(p.x, 10.0);
        assert_abs_diff_eq!(p.y, 5.0);
    }

    #[test]
    fn spacing_examples() {
        let r = Route::from_points("R", &[(0.0, 0.0), (20.0, 0.0)]).unwrap();
        let lanes = build_lanes(&r, 3.5).unwrap();
        assert_abs_diff_eq!(min_lane_spacing(&lanes.left, &lanes.right, 0.5), 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(min_lane_spacing(&lanes.left, &lanes.left, 0.5), 0.0);

        let turn = Route::from_points("T", &[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)]).unwrap();
        let lanes = build_lanes(&turn, 3.5).unwrap();
        let dense = min_lane_spacing(&lanes.left, &lanes.right, 0.001);
        assert!(dense >= 7.0 - 1e-6, "dense oracle {dense}");
        assert!(min_lane_spacing(&lanes.left, &lanes.right, 0.1) >= 7.0 - 1e-6);
    }

    #[test]
    fn polygon_membership() {
        let sq = vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0), Point::new(10.0, 10.0), Point::new(0.0, 10.0)];
        assert!(point_in_polygon(Point::new(5.0, 5.0), &sq));
        assert!(point_in_polygon(Point::new(10.0, 5.0), &sq));
        assert!(!point_in_polygon(Point::new(11.0, 5.0), &sq));
    }

    #[test]
    fn track_angles() {
        assert_abs_diff_eq!(track_deg(Point::new(0.0, 1.0)), 0.0);
        assert_abs_diff_eq!(track_deg(Point::new(1.0, 0.0)), 90.0);
        assert_abs_diff_eq!(track_deg(Point::new(-1.0, 0.0)), 270.0);
    }
}
