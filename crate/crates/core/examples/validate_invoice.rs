//! Runs the atomic checks on a consistent invoice and on one whose total is
//! off by a cent too many, and shows how each is routed.

use madp::config::PipelineConfig;
use madp::model::{Category, DocType, FieldValue, Schema};
use madp::normalize::normalize;
use madp::validate::{elevate_confidence, route, run_checks};

fn invoice(total: &str) -> Vec<FieldValue> {
    let schema = Schema::invoice();
    [
        ("invoice_number", "INV-2026-0042"),
        ("invoice_date", "15/03/2026"),
        ("due_date", "2026-04-14"),
        ("supplier_vat_id", "IT01234567890"),
        ("currency", "EUR"),
        ("vat_rate", "22%"),
        ("subtotal", "1.000,00"),
        ("tax_amount", "220,00"),
        ("total_amount", total),
        (
            "line_items",
            r#"[{"description":"Bulloni","quantity":"10","unit_price":"60,00","total":"600,00"},
                {"description":"Dadi","quantity":"20","unit_price":"20,00","total":"400,00"}]"#,
        ),
    ]
    .into_iter()
    .map(|(field, raw)| FieldValue {
        field: field.into(),
        raw: raw.into(),
        normalized: normalize(schema.get(field).expect("schema field").kind, raw),
        confidence: 0.9,
        backend_id: "demo".into(),
        prompt_version: "v1".into(),
    })
    .collect()
}

fn main() {
    let schema = Schema::invoice();
    let config = PipelineConfig::default();
    let category = Category::new("ACME", DocType::Invoice);
    for total in ["1.220,00", "1.220,03"] {
        let values = invoice(total);
        let outcomes = run_checks(&values, &schema, &config);
        println!("total {total}");
        for o in &outcomes {
            println!(
                "  {:<24} {:<8} {}",
                o.check_id,
                format!("{:?}", o.status),
                o.detail
            );
        }
        let adjusted = elevate_confidence(&values, &outcomes);
        let raised: Vec<&str> = adjusted
            .iter()
            .zip(&values)
            .filter(|(a, v)| a.confidence > v.confidence)
            .map(|(a, _)| a.field.as_str())
            .collect();
        let decision = route(&adjusted, &[], &outcomes, &schema, &category, &config);
        println!("  raised to 0.99: {raised:?}");
        println!("  route {:?} {:?}\n", decision.route, decision.reasons);
    }
}
