//! Renders a hand-built two-column page with a table, then a corpus
//! document, and reports the token reduction against naive text.

use madp::fixtures::{generate, DEFAULT_SEED};
use madp::model::{Page, TableGrid, TextBlock};
use madp::parse::{render_markdown, ParserConfig};

fn two_column_page() -> Page {
    let mut page = Page::new(0);
    page.blocks = vec![
        // Right column first, to show that input order does not matter.
        TextBlock::new("Cliente: Rossi S.r.l.", 0.55, 0.20, 0.95, 0.23, 10.0),
        TextBlock::new("Via Roma 1, Milano", 0.55, 0.24, 0.95, 0.27, 10.0),
        TextBlock::new("FATTURA N. 42", 0.05, 0.05, 0.60, 0.09, 16.0),
        TextBlock::new("ACME S.p.A.", 0.05, 0.20, 0.45, 0.23, 10.0),
        TextBlock::new("P.IVA IT01234567890", 0.05, 0.24, 0.45, 0.27, 10.0),
        TextBlock::new("Totale EUR 122,00", 0.05, 0.80, 0.45, 0.83, 12.0),
    ];
    let rows = [
        ["Descrizione", "Qta", "Prezzo"],
        ["Consulenza", "2", "50,00"],
    ];
    page.tables.push(TableGrid::from_rows(
        &rows.map(|r| r.map(String::from).to_vec()),
        0.50,
    ));
    page.footer_text = Some("Pagina 1 di 1".into());
    page
}

fn main() {
    let config = ParserConfig::default();
    let parsed = render_markdown("demo", &[two_column_page()], &config);
    println!("{}\n", parsed.markdown);
    println!("outline: {:?}", parsed.heading_outline);

    let corpus = generate(DEFAULT_SEED);
    let id = &corpus.manifest.token_target[0];
    let bundle = corpus.unit_bundle(id).expect("token-target document");
    let parsed = render_markdown(id, &bundle.pages, &config);
    println!(
        "\n{id}: {} raw tokens -> {} parsed ({:.1}% fewer)",
        parsed.raw_token_count,
        parsed.parsed_token_count,
        parsed.token_reduction() * 100.0
    );
}
