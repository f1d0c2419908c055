//! Plans a scenario nominally and checks it against the rollout ensemble.

use skylane::runner::{load_scenario, verify_scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "crossing".into());
    let path = format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let v = verify_scenario(&load_scenario(path)?)?;
    println!("{} rollouts", v.rollouts.all().count());
    if v.tsr.is_empty() {
        println!("no conflicts");
    }
    for c in &v.tsr.records {
        println!(
            "{} / {}  {}  first {:.0} s  cpa {:.1} NM {:.0} ft  [{}]",
            c.pair.0, c.pair.1, c.class, c.t_first, c.cpa.distance_nm, c.cpa.vertical_ft, c.source
        );
    }
    Ok(())
}
