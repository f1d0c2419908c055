//! Resolves the head-on encounter and prints the strategies that were applied.

use skylane::resolver::ResolutionOutcome;
use skylane::runner::{load_scenario, verify_scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/head_on.json");
    let v = verify_scenario(&load_scenario(path)?)?;
    let Some(res) = v.resolution else {
        println!("nominal plans are already safe");
        return Ok(());
    };
    for step in &res.applied {
        println!(
            "rev {}: {} / {} -> {} (priority {})",
            step.revision, step.conflict.pair.0, step.conflict.pair.1, step.candidate.label, step.candidate.priority
        );
    }
    let s = res.stats;
    println!("{} expansions, {} simulations, depth {}", s.expansions, s.simulations, s.max_depth);
    match res.outcome {
        ResolutionOutcome::Solved => println!("solved, final TSR {}", res.final_tsr.len()),
        ResolutionOutcome::Fallback { alert } => println!("fallback: {}", alert.message),
    }
    Ok(())
}
