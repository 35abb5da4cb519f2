//! Format and atomic consistency checks, confidence elevation and routing.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::extract::ConsensusRecord;
use crate::model::{Category, FieldKind, FieldValue, RoutingDecision, Schema};
use crate::normalize::{LineItem, Normalized};

/// Confidence given to fields covered only by passing checks.
pub const ELEVATED_CONFIDENCE: f64 = 0.99;

pub const CHECK_ARITHMETIC: &str = "arithmetic.total";
pub const CHECK_LINE_ITEMS: &str = "reconcile.line_items";
pub const CHECK_QUANTITY: &str = "reconcile.quantity";
pub const CHECK_DATE_ORDER: &str = "dates.order";
pub const CHECK_VAT: &str = "vat.rate";
pub const CHECK_CURRENCY: &str = "currency.iso4217";

pub fn format_check_id(field: &str) -> String {
    format!("format.{field}")
}

pub fn is_format_check(check_id: &str) -> bool {
    check_id.starts_with("format.")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check_id: String,
    pub status: CheckStatus,
    pub detail: String,
    pub affected_fields: Vec<String>,
}

impl CheckOutcome {
    fn new(id: &str, status: CheckStatus, detail: impl Into<String>, fields: &[&str]) -> Self {
        CheckOutcome {
            check_id: id.to_string(),
            status,
            detail: detail.into(),
            affected_fields: fields.iter().map(|f| f.to_string()).collect(),
        }
    }

    fn verdict(id: &str, ok: bool, detail: String, fields: &[&str]) -> Self {
        let status = if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Self::new(id, status, detail, fields)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub doc_id: String,
    pub outcomes: Vec<CheckOutcome>,
    pub adjusted: Vec<FieldValue>,
    pub routing: RoutingDecision,
}

impl ValidationReport {
    pub fn failed(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes
            .iter()
            .filter(|o| o.status == CheckStatus::Fail)
    }
}

pub fn iso4217_codes() -> &'static BTreeSet<&'static str> {
    static CODES: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    CODES.get_or_init(|| {
        include_str!("../data/iso4217.txt")
            .split_whitespace()
            .collect()
    })
}

fn it_vat_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(IT)?[0-9]{11}$").unwrap())
}

fn eu_vat_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Z]{2}[0-9A-Z]{2,13}$").unwrap())
}

/// Country of a normalized tax id: its two-letter prefix, else the default.
pub fn tax_country(tax_id: &str, default_country: &str) -> String {
    let prefix: String = tax_id.chars().take(2).collect();
    if prefix.len() == 2 && prefix.chars().all(|c| c.is_ascii_uppercase()) {
        prefix
    } else {
        default_country.to_string()
    }
}

pub fn tax_id_valid(tax_id: &str, default_country: &str) -> bool {
    match tax_country(tax_id, default_country).as_str() {
        "IT" => it_vat_pattern().is_match(tax_id),
        _ => eu_vat_pattern().is_match(tax_id),
    }
}

/// Sum of line totals; a row without a total uses quantity × unit price.
pub fn line_total_sum(rows: &[LineItem]) -> Option<i64> {
    rows.iter()
        .map(|r| {
            r.total_minor.or_else(|| {
                let q = r.quantity_milli?;
                let p = r.unit_price_minor?;
                Some(((q as i128 * p as i128 + 500) / 1000) as i64)
            })
        })
        .sum()
}

struct Fields<'a> {
    values: &'a [FieldValue],
}

impl<'a> Fields<'a> {
    fn get(&self, name: &str) -> Option<&'a Normalized> {
        self.values
            .iter()
            .find(|v| v.field == name)
            .map(|v| &v.normalized)
    }

    fn money(&self, name: &str) -> Option<i64> {
        match self.get(name)? {
            Normalized::Money(m) => Some(m.minor),
            _ => None,
        }
    }

    fn date(&self, name: &str) -> Option<chrono::NaiveDate> {
        match self.get(name)? {
            Normalized::Date(d) => Some(*d),
            _ => None,
        }
    }
}

fn format_outcome(
    value: &FieldValue,
    kind: FieldKind,
    schema_field: &crate::model::FieldSchema,
    config: &PipelineConfig,
) -> CheckOutcome {
    let id = format_check_id(&value.field);
    let f = [value.field.as_str()];
    match &value.normalized {
        Normalized::Missing => CheckOutcome::new(&id, CheckStatus::Skipped, "value missing", &f),
        Normalized::Invalid(reason) => {
            CheckOutcome::new(&id, CheckStatus::Fail, reason.clone(), &f)
        }
        n => {
            if let Some(allowed) = &schema_field.admissible_values {
                let shown = n.display();
                if !allowed.contains(&shown) {
                    return CheckOutcome::new(
                        &id,
                        CheckStatus::Fail,
                        format!("{shown} is not an allowed value"),
                        &f,
                    );
                }
            }
            match (kind, n) {
                (FieldKind::TaxId, Normalized::TaxId(t)) => CheckOutcome::verdict(
                    &id,
                    tax_id_valid(t, &config.default_country),
                    format!(
                        "tax id {t} for country {}",
                        tax_country(t, &config.default_country)
                    ),
                    &f,
                ),
                _ => CheckOutcome::new(&id, CheckStatus::Pass, "well formed", &f),
            }
        }
    }
}

fn has_fields(schema: &Schema, names: &[&str]) -> bool {
    names.iter().all(|n| schema.get(n).is_some())
}

fn skipped(id: &str, fields: &[&str]) -> CheckOutcome {
    CheckOutcome::new(
        id,
        CheckStatus::Skipped,
        "prerequisite field missing",
        fields,
    )
}

/// Runs format checks then the consistency checks that apply to the schema.
/// A check whose inputs are missing or malformed is skipped; checks listed
/// in `disabled_checks` are omitted.
pub fn run_checks(
    values: &[FieldValue],
    schema: &Schema,
    config: &PipelineConfig,
) -> Vec<CheckOutcome> {
    let fields = Fields { values };
    let tol = config.arithmetic_tolerance_minor_units;
    let mut out = Vec::new();

    for sf in schema.fields() {
        if let Some(v) = values.iter().find(|v| v.field == sf.name) {
            out.push(format_outcome(v, sf.kind, sf, config));
        }
    }

    let arith = ["subtotal", "tax_amount", "total_amount"];
    if has_fields(schema, &arith) {
        out.push(match (fields.money("subtotal"), fields.money("tax_amount"), fields.money("total_amount")) {
            (Some(s), Some(t), Some(total)) => {
                let diff = (s + t - total).abs();
                CheckOutcome::verdict(
                    CHECK_ARITHMETIC,
                    diff <= tol,
                    format!("subtotal {s} + tax {t} vs total {total}: off by {diff} minor units (tolerance {tol})"),
                    &arith,
                )
            }
            _ => skipped(CHECK_ARITHMETIC, &arith),
        });
    }

    let recon = ["line_items", "subtotal"];
    if has_fields(schema, &recon) {
        let rows = match fields.get("line_items") {
            Some(Normalized::LineItems(rows)) if !rows.is_empty() => Some(rows),
            _ => None,
        };
        out.push(match (rows, fields.money("subtotal")) {
            (Some(rows), Some(sub)) => match line_total_sum(rows) {
                Some(sum) => {
                    let allowed = tol * (rows.len() as i64).max(1);
                    let diff = (sum - sub).abs();
                    CheckOutcome::verdict(
                        CHECK_LINE_ITEMS,
                        diff <= allowed,
                        format!("{} line totals sum to {sum} vs subtotal {sub} (tolerance {allowed})", rows.len()),
                        &recon,
                    )
                }
                None => CheckOutcome::new(CHECK_LINE_ITEMS, CheckStatus::Skipped, "line item without amount", &recon),
            },
            _ => skipped(CHECK_LINE_ITEMS, &recon),
        });
    }

    let qty = ["line_items", "total_quantity"];
    if has_fields(schema, &qty) {
        let rows = match fields.get("line_items") {
            Some(Normalized::LineItems(rows)) if !rows.is_empty() => Some(rows),
            _ => None,
        };
        let total = match fields.get("total_quantity") {
            Some(Normalized::Quantity(q)) => Some(*q),
            _ => None,
        };
        out.push(match (rows, total) {
            (Some(rows), Some(total)) => {
                match rows.iter().map(|r| r.quantity_milli).sum::<Option<i64>>() {
                    Some(sum) => CheckOutcome::verdict(
                        CHECK_QUANTITY,
                        sum == total,
                        format!("line quantities sum to {sum} vs total {total} (thousandths)"),
                        &qty,
                    ),
                    None => CheckOutcome::new(
                        CHECK_QUANTITY,
                        CheckStatus::Skipped,
                        "line item without quantity",
                        &qty,
                    ),
                }
            }
            _ => skipped(CHECK_QUANTITY, &qty),
        });
    }

    let dates = ["invoice_date", "due_date"];
    if has_fields(schema, &dates) {
        out.push(
            match (fields.date("invoice_date"), fields.date("due_date")) {
                (Some(issued), Some(due)) => CheckOutcome::verdict(
                    CHECK_DATE_ORDER,
                    issued <= due,
                    format!("invoice date {issued} vs due date {due}"),
                    &dates,
                ),
                _ => skipped(CHECK_DATE_ORDER, &dates),
            },
        );
    }

    if has_fields(schema, &["vat_rate"]) {
        let country = match fields.get("supplier_vat_id") {
            Some(Normalized::TaxId(t)) => tax_country(t, &config.default_country),
            _ => config.default_country.clone(),
        };
        out.push(
            match (fields.get("vat_rate"), config.vat_table.get(&country)) {
                (Some(Normalized::Percentage(p)), Some(legal)) => {
                    let ok = legal.iter().any(|r| (r * 100.0).round() as i64 == *p);
                    CheckOutcome::verdict(
                        CHECK_VAT,
                        ok,
                        format!("VAT {} for {country}", Normalized::Percentage(*p).display()),
                        &["vat_rate"],
                    )
                }
                (Some(Normalized::Percentage(_)), None) => CheckOutcome::new(
                    CHECK_VAT,
                    CheckStatus::Skipped,
                    format!("no VAT table for {country}"),
                    &["vat_rate"],
                ),
                _ => skipped(CHECK_VAT, &["vat_rate"]),
            },
        );
    }

    if has_fields(schema, &["currency"]) {
        out.push(match fields.get("currency") {
            Some(Normalized::CurrencyCode(c)) => CheckOutcome::verdict(
                CHECK_CURRENCY,
                iso4217_codes().contains(c.as_str()),
                format!("currency {c}"),
                &["currency"],
            ),
            _ => skipped(CHECK_CURRENCY, &["currency"]),
        });
    }

    out.retain(|o| config.check_enabled(&o.check_id));
    out
}

/// Raises to 0.99 every field that takes part in at least one consistency
/// check and in no failing check. Format checks alone never elevate.
pub fn elevate_confidence(values: &[FieldValue], outcomes: &[CheckOutcome]) -> Vec<FieldValue> {
    values
        .iter()
        .map(|v| {
            let touching: Vec<&CheckOutcome> = outcomes
                .iter()
                .filter(|o| {
                    o.status != CheckStatus::Skipped && o.affected_fields.contains(&v.field)
                })
                .collect();
            let any_fail = touching.iter().any(|o| o.status == CheckStatus::Fail);
            let consistency = touching.iter().any(|o| !is_format_check(&o.check_id));
            let mut v = v.clone();
            if consistency && !any_fail {
                v.confidence = v.confidence.max(ELEVATED_CONFIDENCE);
            }
            v
        })
        .collect()
}

/// auto_accept iff no failing check, no consensus flag and every required
/// field meets its effective threshold.
pub fn route(
    adjusted: &[FieldValue],
    flagged_fields: &[String],
    outcomes: &[CheckOutcome],
    schema: &Schema,
    category: &Category,
    config: &PipelineConfig,
) -> RoutingDecision {
    let mut reasons: Vec<String> = outcomes
        .iter()
        .filter(|o| o.status == CheckStatus::Fail)
        .map(|o| format!("check {} failed: {}", o.check_id, o.detail))
        .collect();
    reasons.extend(
        flagged_fields
            .iter()
            .map(|f| format!("backends disagree on {f}")),
    );
    for sf in schema.fields().iter().filter(|f| f.required) {
        let threshold = config.threshold_for(category, &sf.name);
        let conf = adjusted
            .iter()
            .find(|v| v.field == sf.name)
            .map_or(0.0, |v| v.confidence);
        if conf < threshold {
            reasons.push(format!(
                "{} confidence {conf:.2} below {threshold:.2}",
                sf.name
            ));
        }
    }
    if reasons.is_empty() {
        RoutingDecision::auto_accept()
    } else {
        RoutingDecision::human_review(reasons)
    }
}

pub fn validate(
    doc_id: &str,
    records: &[ConsensusRecord],
    schema: &Schema,
    category: &Category,
    config: &PipelineConfig,
) -> ValidationReport {
    let values: Vec<FieldValue> = records.iter().map(|r| r.chosen.clone()).collect();
    let flagged: Vec<String> = records
        .iter()
        .filter(|r| r.flagged)
        .map(|r| r.field.clone())
        .collect();
    let outcomes = run_checks(&values, schema, config);
    let adjusted = elevate_confidence(&values, &outcomes);
    let routing = route(&adjusted, &flagged, &outcomes, schema, category, config);
    ValidationReport {
        doc_id: doc_id.to_string(),
        outcomes,
        adjusted,
        routing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DocType, Route};
    use crate::normalize::normalize;

    fn value(field: &str, raw: &str, conf: f64) -> FieldValue {
        let schema = Schema::invoice();
        let kind = schema.get(field).map_or(FieldKind::Text, |f| f.kind);
        FieldValue {
            field: field.into(),
            raw: raw.into(),
            normalized: normalize(kind, raw),
            confidence: conf,
            backend_id: "t".into(),
            prompt_version: "v1".into(),
        }
    }

    fn invoice(total: &str, vat: &str, currency: &str, due: &str) -> Vec<FieldValue> {
        vec![
            value("invoice_number", "INV-1", 0.9),
            value("invoice_date", "2026-01-01", 0.9),
            value("due_date", due, 0.9),
            value("supplier_vat_id", "IT01234567890", 0.9),
            value("currency", currency, 0.9),
            value("vat_rate", vat, 0.9),
            value("subtotal", "100.00", 0.7),
            value("tax_amount", "22.00", 0.7),
            value("total_amount", total, 0.7),
        ]
    }

    fn status(outcomes: &[CheckOutcome], id: &str) -> CheckStatus {
        outcomes.iter().find(|o| o.check_id == id).unwrap().status
    }

    fn checks(v: &[FieldValue]) -> Vec<CheckOutcome> {
        run_checks(v, &Schema::invoice(), &PipelineConfig::default())
    }

    #[test]
    fn arithmetic_pass_and_fail() {
        assert_eq!(
            status(
                &checks(&invoice("122.00", "22", "EUR", "2026-02-01")),
                CHECK_ARITHMETIC
            ),
            CheckStatus::Pass
        );
        assert_eq!(
            status(
                &checks(&invoice("123.00", "22", "EUR", "2026-02-01")),
                CHECK_ARITHMETIC
            ),
            CheckStatus::Fail
        );
        assert_eq!(
            status(
                &checks(&invoice("122.02", "22", "EUR", "2026-02-01")),
                CHECK_ARITHMETIC
            ),
            CheckStatus::Pass
        );
        assert_eq!(
            status(
                &checks(&invoice("122.03", "22", "EUR", "2026-02-01")),
                CHECK_ARITHMETIC
            ),
            CheckStatus::Fail
        );
    }

    #[test]
    fn vat_membership() {
        assert_eq!(
            status(
                &checks(&invoice("122.00", "13%", "EUR", "2026-02-01")),
                CHECK_VAT
            ),
            CheckStatus::Fail
        );
        assert_eq!(
            status(
                &checks(&invoice("122.00", "22%", "EUR", "2026-02-01")),
                CHECK_VAT
            ),
            CheckStatus::Pass
        );
    }

    #[test]
    fn currency_and_dates() {
        let out = checks(&invoice("122.00", "22", "EUX", "2026-02-01"));
        assert_eq!(status(&out, CHECK_CURRENCY), CheckStatus::Fail);
        let mut v = invoice("122.00", "22", "EUR", "2026-01-01");
        v[1] = value("invoice_date", "2026-01-10", 0.9);
        assert_eq!(status(&checks(&v), CHECK_DATE_ORDER), CheckStatus::Fail);
    }

    #[test]
    fn missing_prerequisite_skips() {
        let mut v = invoice("122.00", "22", "EUR", "2026-02-01");
        v.retain(|f| f.field != "due_date");
        v.push(FieldValue::missing("due_date", "t", "v1"));
        let out = checks(&v);
        assert_eq!(status(&out, CHECK_DATE_ORDER), CheckStatus::Skipped);
        assert_eq!(status(&out, CHECK_LINE_ITEMS), CheckStatus::Skipped);
    }

    #[test]
    fn tax_id_patterns() {
        assert!(tax_id_valid("IT01234567890", "IT"));
        assert!(tax_id_valid("01234567890", "IT"));
        assert!(!tax_id_valid("IT0123456789", "IT"));
        assert!(tax_id_valid("DE123456789", "IT"));
        assert!(!tax_id_valid("D1", "IT"));
    }

    #[test]
    fn elevation_rules() {
        let pass = elevate_confidence(
            &invoice("122.00", "22", "EUR", "2026-02-01"),
            &checks(&invoice("122.00", "22", "EUR", "2026-02-01")),
        );
        let total = pass.iter().find(|v| v.field == "total_amount").unwrap();
        assert_eq!(total.confidence, 0.99);
        let inv = pass.iter().find(|v| v.field == "invoice_number").unwrap();
        assert_eq!(
            inv.confidence, 0.9,
            "format-only fields keep their confidence"
        );

        let bad = invoice("123.00", "22", "EUR", "2026-02-01");
        let out = elevate_confidence(&bad, &checks(&bad));
        assert_eq!(
            out.iter()
                .find(|v| v.field == "total_amount")
                .unwrap()
                .confidence,
            0.7
        );
    }

    #[test]
    fn routing() {
        let cat = Category::new("ACME", DocType::Invoice);
        let cfg = PipelineConfig::default();
        let mut v = invoice("122.00", "22", "EUR", "2026-02-01");
        for f in &mut v {
            f.confidence = 0.99;
        }
        let out = checks(&v);
        assert_eq!(
            route(&v, &[], &out, &Schema::invoice(), &cat, &cfg).route,
            Route::AutoAccept
        );
        v[0].confidence = 0.80;
        assert_eq!(
            route(&v, &[], &out, &Schema::invoice(), &cat, &cfg).route,
            Route::HumanReview
        );
        v[0].confidence = 0.99;
        let r = route(
            &v,
            &["invoice_number".into()],
            &out,
            &Schema::invoice(),
            &cat,
            &cfg,
        );
        assert_eq!(r.route, Route::HumanReview);
    }

    #[test]
    fn disabled_checks_omitted() {
        let mut cfg = PipelineConfig::default();
        cfg.disabled_checks.insert(CHECK_VAT.into());
        let out = run_checks(
            &invoice("122.00", "13", "EUR", "2026-02-01"),
            &Schema::invoice(),
            &cfg,
        );
        assert!(out.iter().all(|o| o.check_id != CHECK_VAT));
    }

    #[test]
    fn iso_list_loaded() {
        assert!(iso4217_codes().contains("EUR"));
        assert!(!iso4217_codes().contains("EUX"));
    }
}
