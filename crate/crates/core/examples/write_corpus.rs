//! Writes the synthetic labeled corpus to a directory (default
//! `./madp-corpus`) in the layout `madp eval` and `madp ingest` read.

use madp::fixtures::{generate, DEFAULT_SEED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "madp-corpus".into());
    let seed = args
        .next()
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(DEFAULT_SEED);
    let corpus = generate(seed);
    corpus.write(dir.as_ref())?;
    println!(
        "seed {seed}: {} bundles, {} labeled documents, {} batch files -> {dir}",
        corpus.bundles.len(),
        corpus.truths.len(),
        corpus
            .manifest
            .bundles
            .iter()
            .filter(|b| b.units.len() > 1)
            .count()
    );
    Ok(())
}
