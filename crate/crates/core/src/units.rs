//! Small unit newtypes shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const FEET_PER_FLIGHT_LEVEL: f64 = 100.0;

/// Pressure altitude in hundreds of feet (FL330 = 33,000 ft).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlightLevel(pub u32);

impl FlightLevel {
    pub fn feet(self) -> f64 {
        f64::from(self.0) * FEET_PER_FLIGHT_LEVEL
    }

    /// Nearest flight level to an altitude in feet.
    pub fn nearest(altitude_ft: f64) -> Self {
        FlightLevel((altitude_ft / FEET_PER_FLIGHT_LEVEL).round().max(0.0) as u32)
    }

    pub fn offset(self, delta: i32) -> Option<Self> {
        let v = i64::from(self.0) + i64::from(delta);
        u32::try_from(v).ok().map(FlightLevel)
    }
}

impl fmt::Display for FlightLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FL{:03}", self.0)
    }
}

/// Aircraft identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Callsign(pub String);

impl Callsign {
    pub fn new(s: impl Into<String>) -> Self {
        Callsign(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Callsign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Callsign {
    fn from(s: &str) -> Self {
        Callsign(s.to_string())
    }
}

/// Nautical miles travelled in `dt_s` seconds at `speed_kt`.
pub fn distance_nm(speed_kt: f64, dt_s: f64) -> f64 {
    speed_kt * dt_s / 3600.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flight_level_conversions() {
        assert_eq!(FlightLevel(330).feet(), 33_000.0);
        assert_eq!(FlightLevel::nearest(32_960.0), FlightLevel(330));
        assert_eq!(FlightLevel(300).offset(-10), Some(FlightLevel(290)));
        assert_eq!(FlightLevel(5).offset(-10), None);
        assert_eq!(FlightLevel(50).to_string(), "FL050");
    }

    #[test]
    fn travel_distance() {
        assert!((distance_nm(480.0, 60.0) - 8.0).abs() < 1e-12);
    }
}
