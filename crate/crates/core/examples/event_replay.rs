//! Processes the synthetic corpus into a JSONL event log, then rebuilds the
//! state from the file alone and checks it matches.

use std::collections::BTreeMap;

use madp::eval::{run_eval, EvalOptions};
use madp::events::read_events;
use madp::store::Store;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("madp-replay-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("events.jsonl");

    let corpus = madp::fixtures::generate(madp::fixtures::DEFAULT_SEED);
    let options = EvalOptions {
        log_path: Some(path.clone()),
        ..EvalOptions::full()
    };
    let (_, engine) = run_eval(&corpus, &options)?;

    let events = read_events(&path)?;
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &events {
        *kinds.entry(e.payload.kind()).or_default() += 1;
    }
    println!("{} events in {}", events.len(), path.display());
    for (k, n) in &kinds {
        println!("  {k:<24} {n}");
    }
    if let Some(first) = std::fs::read_to_string(&path)?.lines().next() {
        println!("first line: {}...", &first[..first.len().min(120)]);
    }

    let replayed = Store::replay(&events)?;
    println!(
        "replayed store equals live store: {}",
        &replayed == engine.store()
    );
    println!("{}", serde_json::to_string_pretty(&replayed.stats())?);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
