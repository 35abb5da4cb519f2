//! Splits every batch file of the synthetic corpus and compares the
//! detected page ranges with the manifest.

use madp::classify::classify;
use madp::config::PipelineConfig;
use madp::fixtures::{generate, DEFAULT_SEED};
use madp::split::{detect_boundaries, parse_pagination};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(DEFAULT_SEED);
    let config = PipelineConfig::default();
    let signatures = corpus.train(&config)?;

    for footer in [
        "Page 1 of 2",
        "Pag. 2/3",
        "Pagina 3 di 3",
        "Thank you for your business",
    ] {
        println!("{footer:?} -> {:?}", parse_pagination(footer));
    }

    for expected in corpus.manifest.bundles.iter().filter(|b| b.units.len() > 1) {
        let bundle = corpus
            .bundles
            .iter()
            .find(|b| b.doc_id == expected.bundle_id)
            .expect("bundle listed in the manifest");
        let labels: Vec<_> = bundle
            .pages
            .iter()
            .map(|p| classify(p, &signatures, &config))
            .collect();
        let units = detect_boundaries(bundle, &labels, &config)?;
        let got: Vec<(usize, usize)> = units.iter().map(|u| u.page_range).collect();
        let want: Vec<(usize, usize)> = expected.units.iter().map(|u| u.page_range).collect();
        println!(
            "{} ({} pages): {:?} {}",
            bundle.doc_id,
            bundle.pages.len(),
            got,
            if got == want { "ok" } else { "MISMATCH" }
        );
    }
    Ok(())
}
