//! Condition-gated planning, ensemble verification and backtracking
//! deconfliction for systemised en-route airspace.

pub mod conflict;
pub mod gateway;
pub mod geometry;
pub mod plans;
pub mod resolver;
pub mod runner;
pub mod state;
pub mod twin;
pub mod units;
