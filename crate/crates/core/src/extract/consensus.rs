//! Per-field voting across parallel backend results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{FieldKind, FieldValue, Schema};

use super::ExtractError;

/// Cap on combined confidence; 1.0 is reserved for human confirmation.
pub const CONSENSUS_CAP: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Unanimous,
    Majority,
    Split,
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRecord {
    pub field: String,
    pub chosen: FieldValue,
    pub agreement: Agreement,
    pub flagged: bool,
}

/// `1 - Π(1 - cᵢ)`.
pub fn noisy_or(confidences: &[f64]) -> f64 {
    1.0 - confidences.iter().map(|c| 1.0 - c).product::<f64>()
}

/// Higher confidence wins; equal confidences go to the smaller backend id.
fn better(a: &FieldValue, b: &FieldValue) -> bool {
    a.confidence > b.confidence || (a.confidence == b.confidence && a.backend_id < b.backend_id)
}

fn best<'a>(values: impl IntoIterator<Item = &'a FieldValue>) -> Option<&'a FieldValue> {
    values
        .into_iter()
        .fold(None, |acc: Option<&FieldValue>, v| match acc {
            Some(a) if !better(v, a) => Some(a),
            _ => Some(v),
        })
}

fn vote(field: &str, values: &[&FieldValue], table_field: bool) -> ConsensusRecord {
    if values.len() == 1 {
        return ConsensusRecord {
            field: field.to_string(),
            chosen: values[0].clone(),
            agreement: Agreement::Single,
            flagged: false,
        };
    }
    let mut groups: BTreeMap<String, Vec<&FieldValue>> = BTreeMap::new();
    for v in values {
        groups.entry(v.agreement_key()).or_default().push(v);
    }
    let n = values.len();
    if groups.len() == 1 {
        let group = groups.into_values().next().unwrap();
        let confs: Vec<f64> = group.iter().map(|v| v.confidence).collect();
        let top = confs.iter().copied().fold(0.0, f64::max);
        let mut chosen = best(group.iter().copied()).unwrap().clone();
        chosen.confidence = top.max(noisy_or(&confs).min(CONSENSUS_CAP));
        return ConsensusRecord {
            field: field.to_string(),
            chosen,
            agreement: Agreement::Unanimous,
            flagged: false,
        };
    }
    let majority = groups.values().find(|g| 2 * g.len() > n);
    match majority {
        Some(group) if !table_field => {
            let chosen = best(group.iter().copied()).unwrap().clone();
            ConsensusRecord {
                field: field.to_string(),
                chosen,
                agreement: Agreement::Majority,
                flagged: false,
            }
        }
        _ => ConsensusRecord {
            field: field.to_string(),
            chosen: best(values.iter().copied()).unwrap().clone(),
            agreement: Agreement::Split,
            flagged: true,
        },
    }
}

/// Merges backend results field by field, in schema order followed by any
/// extra fields in name order. Line-item tables never win by majority: any
/// disagreement splits them.
pub fn consensus(
    results: &[(String, Vec<FieldValue>)],
    schema: &Schema,
) -> Result<Vec<ConsensusRecord>, ExtractError> {
    if results.is_empty() {
        return Err(ExtractError::NoResults);
    }
    let mut by_field: BTreeMap<&str, Vec<&FieldValue>> = BTreeMap::new();
    for (_, values) in results {
        for v in values {
            by_field.entry(v.field.as_str()).or_default().push(v);
        }
    }
    let mut order: Vec<&str> = schema
        .fields()
        .iter()
        .map(|f| f.name.as_str())
        .filter(|n| by_field.contains_key(n))
        .collect();
    order.extend(by_field.keys().filter(|k| schema.get(k).is_none()));
    Ok(order
        .into_iter()
        .map(|name| {
            let table = schema
                .get(name)
                .is_some_and(|f| f.kind == FieldKind::LineItems);
            vote(name, &by_field[name], table)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::normalize;

    fn fv(backend: &str, field: &str, raw: &str, conf: f64) -> FieldValue {
        let kind = Schema::invoice()
            .get(field)
            .map_or(FieldKind::Text, |f| f.kind);
        FieldValue {
            field: field.into(),
            raw: raw.into(),
            normalized: normalize(kind, raw),
            confidence: conf,
            backend_id: backend.into(),
            prompt_version: "v1".into(),
        }
    }

    fn run(values: Vec<FieldValue>) -> ConsensusRecord {
        let results: Vec<(String, Vec<FieldValue>)> = values
            .into_iter()
            .map(|v| (v.backend_id.clone(), vec![v]))
            .collect();
        consensus(&results, &Schema::invoice()).unwrap().remove(0)
    }

    #[test]
    fn unanimous_noisy_or_capped() {
        let r = run(vec![
            fv("a", "invoice_number", "INV-123", 0.8),
            fv("b", "invoice_number", "INV-123", 0.7),
            fv("c", "invoice_number", "INV-123", 0.9),
        ]);
        assert_eq!(r.agreement, Agreement::Unanimous);
        // 1 - 0.2*0.3*0.1 = 0.994, capped.
        assert_eq!(r.chosen.confidence, 0.99);
        assert!(!r.flagged);
    }

    #[test]
    fn unanimous_below_cap() {
        let r = run(vec![
            fv("a", "invoice_number", "X", 0.5),
            fv("b", "invoice_number", " x ", 0.5),
        ]);
        assert_eq!(r.agreement, Agreement::Unanimous);
        assert!((r.chosen.confidence - 0.75).abs() < 1e-12);
    }

    #[test]
    fn majority_on_normalized_money() {
        let r = run(vec![
            fv("a", "total_amount", "122.00", 0.6),
            fv("b", "total_amount", "122,00 EUR", 0.7),
            fv("c", "total_amount", "123.00", 0.95),
        ]);
        assert_eq!(r.agreement, Agreement::Majority);
        assert_eq!(r.chosen.raw, "122,00 EUR");
        assert_eq!(r.chosen.confidence, 0.7);
        assert!(!r.flagged);
    }

    #[test]
    fn two_way_disagreement_splits() {
        let r = run(vec![
            fv("b", "invoice_number", "INV-1", 0.8),
            fv("a", "invoice_number", "INV-2", 0.8),
        ]);
        assert_eq!(r.agreement, Agreement::Split);
        assert!(r.flagged);
        assert_eq!(r.chosen.backend_id, "a");
    }

    #[test]
    fn single_passthrough() {
        let r = run(vec![fv("a", "invoice_number", "INV-1", 0.42)]);
        assert_eq!(r.agreement, Agreement::Single);
        assert_eq!(r.chosen.confidence, 0.42);
    }

    #[test]
    fn line_items_never_majority() {
        let rows = r#"[{"description":"A","quantity":"1","total":"10.00"}]"#;
        let other = r#"[{"description":"B","quantity":"1","total":"10.00"}]"#;
        let r = run(vec![
            fv("a", "line_items", rows, 0.9),
            fv("b", "line_items", rows, 0.9),
            fv("c", "line_items", other, 0.9),
        ]);
        assert_eq!(r.agreement, Agreement::Split);
        assert!(r.flagged);
    }

    #[test]
    fn empty_input_is_error() {
        assert_eq!(
            consensus(&[], &Schema::invoice()),
            Err(ExtractError::NoResults)
        );
    }
}
