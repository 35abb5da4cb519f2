//! Trains header signatures on the synthetic corpus and classifies a few
//! first pages, plus one page with no header at all.
//!
//! ```text
//! cargo run --example classify_headers
//! ```

use madp::classify::{classify, header_text};
use madp::config::PipelineConfig;
use madp::fixtures::{generate, DEFAULT_SEED};
use madp::model::Page;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(DEFAULT_SEED);
    let config = PipelineConfig::default();
    let signatures = corpus.train(&config)?;
    println!(
        "{} signatures from {} labeled documents",
        signatures.len(),
        corpus.truths.len()
    );

    for truth in corpus.truths.iter().step_by(17) {
        let bundle = corpus.unit_bundle(&truth.doc_id).expect("labeled document");
        let page = &bundle.pages[0];
        let label = classify(page, &signatures, &config);
        println!(
            "{:<8} header {:?}\n         -> {}:{} ({:.3}), truth {}",
            truth.doc_id,
            header_text(page, config.header_crop_fraction),
            label.supplier_id,
            label.doc_type,
            label.confidence,
            truth.category.key()
        );
    }

    let blank = classify(&Page::new(0), &signatures, &config);
    println!(
        "blank page -> {}:{} ({:.1})",
        blank.supplier_id, blank.doc_type, blank.confidence
    );
    Ok(())
}
