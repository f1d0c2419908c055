//! Runs a whole episode headless and prints its report.

use skylane::runner::{load_scenario, run_episode, EpisodeOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "five_pairs".into());
    let path = format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let mut scenario = load_scenario(path)?;
    scenario.verification.rollouts = 8;
    let res = run_episode(scenario, EpisodeOptions { auto_approve: true, approve_after_s: None })?;
    print!("{}", res.report);
    println!("violations {}  interventions {}", res.metrics.violations, res.metrics.interventions);
    println!("log hash {}", res.hash);
    Ok(())
}
