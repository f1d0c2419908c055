//! Offsets a route into left, centre and right lanes.

use skylane::geometry::{build_lanes, min_lane_spacing, LaneDesignation, Route};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let route = Route::from_points("R1", &[(0.0, 0.0), (0.0, 60.0), (45.0, 100.0), (45.0, 180.0)])?;
    let set = build_lanes(&route, 3.5)?;
    for d in [LaneDesignation::Left, LaneDesignation::Centre, LaneDesignation::Right] {
        let lane = set.get(d);
        println!("{d:<6} {:6.1} NM", lane.length());
        for p in &lane.polyline {
            println!("    ({:7.2}, {:7.2})", p.x, p.y);
        }
    }
    println!("left/centre  {:.3} NM", min_lane_spacing(&set.left, &set.centre, 0.25));
    println!("centre/right {:.3} NM", min_lane_spacing(&set.centre, &set.right, 0.25));
    Ok(())
}
