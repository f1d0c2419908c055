use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::units::Callsign;

/// Sampling ranges for execution uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationRanges {
    /// Speed factors are drawn from [1 - spread, 1 + spread]; at most 0.10.
    pub speed_spread: f64,
    /// Pilot delays are drawn from [0, max]; at most 60 s.
    pub max_pilot_delay_s: f64,
}

impl Default for PerturbationRanges {
    fn default() -> Self {
        PerturbationRanges { speed_spread: 0.05, max_pilot_delay_s: 30.0 }
    }
}

impl PerturbationRanges {
    pub const ZERO: PerturbationRanges = PerturbationRanges { speed_spread: 0.0, max_pilot_delay_s: 0.0 };

    pub fn clamped(self) -> Self {
        PerturbationRanges {
            speed_spread: self.speed_spread.clamp(0.0, 0.10),
            max_pilot_delay_s: self.max_pilot_delay_s.clamp(0.0, 60.0),
        }
    }
}

/// One realisation of execution uncertainty: a speed factor and a pilot
/// response delay per aircraft, fixed for the whole rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub scenario_id: u64,
    pub seed: u64,
    pub ranges: PerturbationRanges,
    pub speed_factor: BTreeMap<Callsign, f64>,
    pub pilot_delay_s: BTreeMap<Callsign, f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Draw for one aircraft. Keyed on the callsign so adding traffic never
/// shifts another aircraft's draw.
fn draw_one(seed: u64, scenario_id: u64, cs: &Callsign, ranges: PerturbationRanges) -> (f64, f64) {
    let key = splitmix64(seed ^ splitmix64(scenario_id.wrapping_add(1)) ^ fnv1a(cs.as_str()));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let factor = if ranges.speed_spread > 0.0 {
        rng.random_range(1.0 - ranges.speed_spread..=1.0 + ranges.speed_spread)
    } else {
        1.0
    };
    let delay = if ranges.max_pilot_delay_s > 0.0 { rng.random_range(0.0..=ranges.max_pilot_delay_s) } else { 0.0 };
    (factor, delay)
}

impl Perturbation {
    /// No perturbation at all.
    pub fn nominal() -> Self {
        Perturbation {
            scenario_id: 0,
            seed: 0,
            ranges: PerturbationRanges::ZERO,
            speed_factor: BTreeMap::new(),
            pilot_delay_s: BTreeMap::new(),
        }
    }

    pub fn draw<'a>(
        seed: u64,
        scenario_id: u64,
        ranges: PerturbationRanges,
        roster: impl IntoIterator<Item = &'a Callsign>,
    ) -> Self {
        let ranges = ranges.clamped();
        let mut speed_factor = BTreeMap::new();
        let mut pilot_delay_s = BTreeMap::new();
        for cs in roster {
            let (f, d) = draw_one(seed, scenario_id, cs, ranges);
            speed_factor.insert(cs.clone(), f);
            pilot_delay_s.insert(cs.clone(), d);
        }
        Perturbation { scenario_id, seed, ranges, speed_factor, pilot_delay_s }
    }

    pub fn speed_factor(&self, cs: &Callsign) -> f64 {
        match self.speed_factor.get(cs) {
            Some(f) => *f,
            None if self.ranges.speed_spread == 0.0 && self.ranges.max_pilot_delay_s == 0.0 => 1.0,
            None => draw_one(self.seed, self.scenario_id, cs, self.ranges).0,
        }
    }

    pub fn pilot_delay(&self, cs: &Callsign) -> f64 {
        match self.pilot_delay_s.get(cs) {
            Some(d) => *d,
            None if self.ranges.speed_spread == 0.0 && self.ranges.max_pilot_delay_s == 0.0 => 0.0,
            None => draw_one(self.seed, self.scenario_id, cs, self.ranges).1,
        }
    }

    /// Fixed per-aircraft values, used for hand-built test perturbations.
    pub fn fixed(speed_factor: BTreeMap<Callsign, f64>, pilot_delay_s: BTreeMap<Callsign, f64>) -> Self {
        Perturbation { scenario_id: 0, seed: 0, ranges: PerturbationRanges::ZERO, speed_factor, pilot_delay_s }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_deterministic_and_bounded() {
        let roster: Vec<Callsign> = ["A", "B", "C"].iter().map(|s| Callsign::from(*s)).collect();
        let a = Perturbation::draw(7, 3, PerturbationRanges::default(), &roster);
        let b = Perturbation::draw(7, 3, PerturbationRanges::default(), &roster);
        assert_eq!(a, b);
        for cs in &roster {
            let f = a.speed_factor(cs);
            assert!((0.95..=1.05).contains(&f));
            assert!((0.0..=30.0).contains(&a.pilot_delay(cs)));
        }
        let c = Perturbation::draw(7, 4, PerturbationRanges::default(), &roster);
        assert_ne!(a.speed_factor, c.speed_factor);
    }

    #[test]
    fn adding_traffic_keeps_existing_draws() {
        let small = vec![Callsign::from("A")];
        let big = vec![Callsign::from("A"), Callsign::from("Z")];
        let a = Perturbation::draw(1, 0, PerturbationRanges::default(), &small);
        let b = Perturbation::draw(1, 0, PerturbationRanges::default(), &big);
        assert_eq!(a.speed_factor(&"A".into()), b.speed_factor(&"A".into()));
        // lazily drawn values agree with eager ones
        assert_eq!(a.speed_factor(&"Z".into()), b.speed_factor(&"Z".into()));
    }

    #[test]
    fn ranges_are_clamped() {
        let r = PerturbationRanges { speed_spread: 0.5, max_pilot_delay_s: 500.0 }.clamped();
        assert_eq!(r.speed_spread, 0.10);
        assert_eq!(r.max_pilot_delay_s, 60.0);
    }
}
