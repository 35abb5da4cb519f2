//! Scores the full pipeline on the synthetic corpus, then again with each
//! deterministic stage replaced by a passthrough.
//!
//! ```text
//! cargo run --release --example evaluate
//! ```

use madp::engine::Stage;
use madp::eval::{run_eval, EvalOptions};
use madp::fixtures::{generate, DEFAULT_SEED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(DEFAULT_SEED);
    let (full, _) = run_eval(&corpus, &EvalOptions::full())?;
    println!("{}", full.to_markdown());

    println!("| ablated | doc accuracy | micro F1 | intervention |");
    println!("|---|---|---|---|");
    for stage in [
        Stage::Classifier,
        Stage::Splitter,
        Stage::Parser,
        Stage::Validator,
    ] {
        let (r, _) = run_eval(&corpus, &EvalOptions::ablating(stage))?;
        println!(
            "| {stage} | {:.1}% | {:.3} | {:.1}% |",
            r.doc_accuracy * 100.0,
            r.micro.f1,
            r.intervention_rate * 100.0
        );
    }
    Ok(())
}
