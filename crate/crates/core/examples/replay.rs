//! Writes an episode log to disk, reads it back and re-runs it.

use skylane::runner::{load_scenario, replay, run_episode, EpisodeOptions, EventLog};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/crossing.json");
    let mut scenario = load_scenario(path)?;
    scenario.verification.rollouts = 6;
    let res = run_episode(scenario, EpisodeOptions { auto_approve: true, approve_after_s: None })?;

    let file = std::env::temp_dir().join("skylane-replay-example.jsonl");
    res.log.write(&file)?;
    let report = replay(&EventLog::read(&file)?)?;
    println!("recorded {}", report.recorded_hash);
    println!("replayed {}", report.replayed_hash);
    println!("{}", if report.matches() { "match" } else { "MISMATCH" });
    std::fs::remove_file(file)?;
    Ok(())
}
