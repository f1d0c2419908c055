use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use skylane::gateway::{http, Gateway};
use skylane::geometry::{min_lane_spacing, LaneDesignation};
use skylane::resolver::{Resolution, ResolutionOutcome};
use skylane::runner::{
    load_scenario, replay, run_episode, verify_scenario, Episode, EpisodeOptions, EpisodeResult, EventLog, Scenario,
};

#[derive(Parser)]
#[command(name = "skylane", version, about = "Plan, verify and deconflict lane-based en-route traffic")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an episode.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long)]
        dmax: Option<usize>,
        /// Integration step in seconds.
        #[arg(long)]
        dt: Option<f64>,
        /// Replanning cadence in simulated seconds.
        #[arg(long)]
        cadence: Option<f64>,
        /// Serve the operator interface on this port.
        #[arg(long)]
        serve: Option<u16>,
        /// Issue resolver manoeuvres without operator approval (implied without --serve).
        #[arg(long)]
        auto_approve: bool,
        /// Approve clearances left unanswered for this many simulated seconds.
        #[arg(long, value_name = "S")]
        approve_after: Option<f64>,
        /// Write log.jsonl, metrics.json and report.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan, verify and resolve a scenario once; print the safety record and search trace.
    Verify { scenario: PathBuf },
    /// Re-run a logged episode and compare log hashes.
    Replay { log: PathBuf },
    /// Print the lane network of a scenario.
    Lanes { scenario: PathBuf },
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which would read as a fallback
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Run { scenario, seed, rollouts, dmax, dt, cadence, serve, auto_approve, approve_after, out } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(v) = seed {
                s.seed = v;
            }
            if let Some(v) = rollouts {
                s.verification.rollouts = v;
            }
            if let Some(v) = dmax {
                s.search.d_max = v;
            }
            if let Some(v) = dt {
                s.episode.dt_s = v;
            }
            if let Some(v) = cadence {
                s.episode.cadence_s = v;
            }
            s.validate()?;
            let opts = EpisodeOptions { auto_approve: auto_approve || serve.is_none(), approve_after_s: approve_after };
            let res = match serve {
                Some(port) => run_served(s, opts, port)?,
                None => run_episode(s, opts)?,
            };
            print!("{}", res.report);
            println!("log hash {}", res.hash);
            if let Some(dir) = out {
                write_outputs(&dir, &res)?;
            }
            Ok(res.exit_code as u8)
        }
        Cmd::Verify { scenario } => {
            let s = load_scenario(&scenario)?;
            let v = verify_scenario(&s)?;
            println!("plan revision {} fingerprint {}", v.plan.revision, v.plan.fingerprint());
            println!("rollouts {} fingerprint {}", v.rollouts.all().count(), v.rollouts.fingerprint());
            if v.tsr.is_empty() {
                println!("no conflicts");
            }
            for c in &v.tsr.records {
                println!(
                    "{} / {}  {}  t {:.0}-{:.0} s  cpa {:.1} NM {:.0} ft  [{}]",
                    c.pair.0, c.pair.1, c.class, c.t_first, c.t_last, c.cpa.distance_nm, c.cpa.vertical_ft, c.source
                );
            }
            if let Some(res) = &v.resolution {
                print_trace(res);
            }
            Ok(0)
        }
        Cmd::Replay { log } => {
            let recorded = EventLog::read(&log).with_context(|| format!("reading {}", log.display()))?;
            let rep = replay(&recorded)?;
            println!("recorded {}", rep.recorded_hash);
            println!("replayed {}", rep.replayed_hash);
            if rep.matches() {
                println!("match");
                Ok(0)
            } else {
                println!("MISMATCH");
                Ok(1)
            }
        }
        Cmd::Lanes { scenario } => {
            let s = load_scenario(&scenario)?;
            print_lanes(&s)?;
            Ok(0)
        }
    }
}

fn run_served(s: Scenario, opts: EpisodeOptions, port: u16) -> Result<EpisodeResult> {
    let rt = tokio::runtime::Runtime::new()?;
    let g = Gateway::live(Episode::new(s, opts)?);
    rt.block_on(async {
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(http::serve(g.clone(), port, async {
            let _ = stopped.await;
        }));
        eprintln!("serving on http://127.0.0.1:{port}");
        let driven = http::drive(g.clone(), Duration::from_millis(200)).await;
        let _ = stop.send(());
        server.await??;
        driven?;
        anyhow::Ok(())
    })?;
    drop(rt);
    let ep = g.into_episode().context("gateway still in use")?;
    Ok(ep.into_result())
}

fn print_trace(res: &Resolution) {
    for node in &res.trace.nodes {
        let indent = "  ".repeat(node.depth);
        let conflict = node.conflict.as_ref().map_or("-".to_string(), |c| format!("{} / {} {}", c.pair.0, c.pair.1, c.class));
        println!("{indent}node {} rev {} tsr {} {conflict} -> {:?}", node.id, node.revision, node.tsr_size, node.outcome);
        for edge in &node.edges {
            println!("{indent}  {} ({:?})", edge.candidate.label, edge.result);
        }
    }
    let s = res.stats;
    println!("simulations {} expansions {} max depth {}", s.simulations, s.expansions, s.max_depth);
    match &res.outcome {
        ResolutionOutcome::Solved => println!("solved; final TSR {}", res.final_tsr.len()),
        ResolutionOutcome::Fallback { alert } => println!("FALLBACK: {}", alert.message),
    }
}

fn write_outputs(dir: &Path, res: &EpisodeResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    res.log.write(dir.join("log.jsonl"))?;
    let metrics = serde_json::json!({ "schema_version": 1, "hash": res.hash, "metrics": res.metrics });
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    std::fs::write(dir.join("report.txt"), &res.report)?;
    Ok(())
}

fn print_lanes(s: &Scenario) -> Result<()> {
    let net = s.lanes()?;
    for id in net.route_ids() {
        let set = net.lanes(id).expect("listed route");
        for d in [LaneDesignation::Left, LaneDesignation::Centre, LaneDesignation::Right] {
            let lane = set.get(d);
            let pts: Vec<String> = lane.polyline.iter().map(|p| format!("({:.2}, {:.2})", p.x, p.y)).collect();
            println!("{id} {:<6} {:7.1} NM  {}", d.to_string(), lane.length(), pts.join(" "));
        }
        let spacing = min_lane_spacing(&set.left, &set.centre, 0.5).min(min_lane_spacing(&set.centre, &set.right, 0.5));
        println!("{id} min adjacent spacing {spacing:.3} NM");
    }
    Ok(())
}
