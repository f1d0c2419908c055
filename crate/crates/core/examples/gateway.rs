//! Serves a live episode to the operator interface on port 8080 until it
//! finishes.
//!
//! Try `curl localhost:8080/snapshot` or `curl -N localhost:8080/stream`.

use std::time::Duration;

use skylane::gateway::{http, Gateway};
use skylane::runner::{load_scenario, Episode, EpisodeOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/crossing.json");
    let episode = Episode::new(load_scenario(path)?, EpisodeOptions { auto_approve: false, approve_after_s: Some(120.0) })?;
    let g = Gateway::live(episode);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(http::serve(g.clone(), 8080, async {
        let _ = stopped.await;
    }));
    println!("serving on http://127.0.0.1:8080");
    http::drive(g.clone(), Duration::from_millis(200)).await?;
    let _ = stop.send(());
    server.await??;
    println!("episode finished, log hash {}", g.log().hash());
    Ok(())
}
