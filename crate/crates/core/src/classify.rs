//! Header-region document classification.
//!
//! The reference classifier embeds the header crop of a page as a bag of
//! hashed character trigrams and picks the nearest category centroid by
//! cosine similarity. A trained image model can be plugged in instead through
//! [`ExternalClassifier`].

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::endpoint::{EndpointError, JsonEndpoint, RetryError, RetryPolicy};
use crate::model::{CategoryLabel, DocBundle, DocType, Page, RoutingDecision, TextBlock};

/// Number of hash buckets for trigram features (2^16).
pub const HASH_SPACE: u32 = 1 << 16;
/// Best similarity below this is reported as an unknown category.
pub const UNKNOWN_SIMILARITY: f64 = 0.3;

pub type SparseVector = BTreeMap<u32, f64>;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("no labelled examples to train on")]
    EmptyTrainingSet,
    #[error("classifier endpoint unavailable after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: EndpointError },
    #[error("classifier adapter error: {0}")]
    Adapter(String),
    #[error("signature store: {0}")]
    Store(String),
}

impl ClassifyError {
    /// Routing for a document whose classification could not be obtained.
    pub fn fallback_decision(&self) -> RoutingDecision {
        RoutingDecision::fallback(format!("classification failed: {self}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySignature {
    pub supplier_id: String,
    pub doc_type: DocType,
    /// L2-normalized centroid over hashed trigram buckets.
    pub centroid: SparseVector,
    pub sample_count: usize,
}

/// Blocks whose top edge lies strictly above `fraction` of the page height.
pub fn crop_header(page: &Page, fraction: f64) -> Vec<TextBlock> {
    page.blocks
        .iter()
        .filter(|b| b.y0 < fraction)
        .cloned()
        .collect()
}

pub fn header_text(page: &Page, fraction: f64) -> String {
    crop_header(page, fraction)
        .iter()
        .map(|b| b.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn fnv1a(bytes: &[u8]) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for b in bytes {
        hash ^= u32::from(*b);
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

/// Raw (unnormalized) trigram counts of lower-cased, whitespace-collapsed text.
pub fn trigram_counts(text: &str) -> SparseVector {
    let cleaned = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let chars: Vec<char> = format!(" {cleaned} ").chars().collect();
    let mut bag = SparseVector::new();
    if cleaned.is_empty() {
        return bag;
    }
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut len = 0;
        for c in w {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        *bag.entry(fnv1a(&buf[..len]) % HASH_SPACE).or_insert(0.0) += 1.0;
    }
    bag
}

pub fn l2_normalize(v: &mut SparseVector) {
    let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.values_mut().for_each(|x| *x /= norm);
    }
}

pub fn embed(text: &str) -> SparseVector {
    let mut v = trigram_counts(text);
    l2_normalize(&mut v);
    v
}

pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small
        .iter()
        .filter_map(|(k, x)| large.get(k).map(|y| x * y))
        .sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Nearest-centroid classification of a page's header region.
pub fn classify(
    page: &Page,
    signatures: &[CategorySignature],
    config: &PipelineConfig,
) -> CategoryLabel {
    let header = header_text(page, config.header_crop_fraction);
    let query = embed(&header);
    if query.is_empty() {
        return CategoryLabel::unknown(0.0);
    }
    let mut best: Option<(&CategorySignature, f64)> = None;
    for sig in signatures {
        let sim = cosine(&query, &sig.centroid);
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((sig, sim));
        }
    }
    match best {
        Some((sig, sim)) if sim >= UNKNOWN_SIMILARITY => CategoryLabel {
            supplier_id: sig.supplier_id.clone(),
            doc_type: sig.doc_type,
            confidence: sim.clamp(0.0, 1.0),
        },
        Some((_, sim)) => CategoryLabel::unknown(sim),
        None => CategoryLabel::unknown(0.0),
    }
}

/// Builds one signature per distinct (supplier, doc_type) from the header of
/// each example's first page.
pub fn train_signatures(
    labeled: &[(DocBundle, CategoryLabel)],
    config: &PipelineConfig,
) -> Result<Vec<CategorySignature>, ClassifyError> {
    if labeled.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    let mut sums: BTreeMap<(String, DocType), (SparseVector, usize)> = BTreeMap::new();
    for (bundle, label) in labeled {
        let Some(page) = bundle.pages.first() else {
            continue;
        };
        let v = embed(&header_text(page, config.header_crop_fraction));
        let entry = sums
            .entry((label.supplier_id.clone(), label.doc_type))
            .or_default();
        for (k, x) in v {
            *entry.0.entry(k).or_insert(0.0) += x;
        }
        entry.1 += 1;
    }
    if sums.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    Ok(sums
        .into_iter()
        .map(|((supplier_id, doc_type), (mut centroid, n))| {
            // Dividing by n before normalizing would not change the direction.
            l2_normalize(&mut centroid);
            CategorySignature {
                supplier_id,
                doc_type,
                centroid,
                sample_count: n,
            }
        })
        .collect())
}

pub fn save_signatures(path: &Path, signatures: &[CategorySignature]) -> Result<(), ClassifyError> {
    let text = serde_json::to_string_pretty(signatures)
        .map_err(|e| ClassifyError::Store(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| ClassifyError::Store(e.to_string()))
}

pub fn load_signatures(path: &Path) -> Result<Vec<CategorySignature>, ClassifyError> {
    let text = std::fs::read_to_string(path).map_err(|e| ClassifyError::Store(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| ClassifyError::Store(e.to_string()))
}

/// Adapter for a remote header classifier:
/// `POST {header_text, image_ref?}` → `{supplier, doc_type, confidence}`.
pub struct ExternalClassifier {
    endpoint: Arc<dyn JsonEndpoint>,
    retry: RetryPolicy,
}

impl ExternalClassifier {
    pub fn new(endpoint: Arc<dyn JsonEndpoint>, retry: RetryPolicy) -> Self {
        ExternalClassifier { endpoint, retry }
    }

    pub fn classify_external(
        &self,
        page: &Page,
        image_ref: Option<&str>,
        config: &PipelineConfig,
    ) -> Result<CategoryLabel, ClassifyError> {
        let mut body = json!({ "header_text": header_text(page, config.header_crop_fraction) });
        if let Some(r) = image_ref {
            body["image_ref"] = Value::String(r.to_string());
        }
        let response = self
            .retry
            .run(|| self.endpoint.post_json(&body))
            .map_err(|e| match e {
                RetryError::Exhausted { attempts, last } => {
                    ClassifyError::Exhausted { attempts, last }
                }
                RetryError::Fatal(e) => ClassifyError::Adapter(e.to_string()),
            })?;
        parse_label(&response)
    }
}

fn parse_label(v: &Value) -> Result<CategoryLabel, ClassifyError> {
    let field = |name: &str| {
        v.get(name)
            .ok_or_else(|| ClassifyError::Adapter(format!("response missing {name}")))
    };
    let supplier = field("supplier")?
        .as_str()
        .ok_or_else(|| ClassifyError::Adapter("supplier is not a string".into()))?;
    let doc_type: DocType = field("doc_type")?
        .as_str()
        .ok_or_else(|| ClassifyError::Adapter("doc_type is not a string".into()))?
        .parse()
        .map_err(|e: crate::model::ModelError| ClassifyError::Adapter(e.to_string()))?;
    let confidence = field("confidence")?
        .as_f64()
        .ok_or_else(|| ClassifyError::Adapter("confidence is not a number".into()))?;
    CategoryLabel::new(supplier, doc_type, confidence)
        .map_err(|e| ClassifyError::Adapter(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::ScriptedEndpoint;

    fn page_with(blocks: &[(&str, f64)]) -> Page {
        let mut p = Page::new(0);
        for (text, y0) in blocks {
            p.blocks
                .push(TextBlock::new(*text, 0.05, *y0, 0.95, y0 + 0.02, 10.0));
        }
        p
    }

    fn bundle(id: &str, header: &str) -> DocBundle {
        DocBundle {
            doc_id: id.into(),
            source_name: format!("{id}.pdf"),
            pages: vec![page_with(&[(header, 0.05)])],
            received_at: None,
        }
    }

    #[test]
    fn crop_uses_strict_threshold() {
        let p = page_with(&[("a", 0.10), ("b", 0.39), ("c", 0.41)]);
        let kept: Vec<_> = crop_header(&p, 0.4).into_iter().map(|b| b.text).collect();
        assert_eq!(kept, vec!["a", "b"]);
        assert_eq!(crop_header(&p, 1.0).len(), 3);
        assert!(crop_header(&Page::new(0), 0.4).is_empty());
    }

    #[test]
    fn empty_header_is_unknown() {
        let sigs = train_signatures(
            &[(
                bundle("a", "ACME FATTURA"),
                CategoryLabel::new("ACME", DocType::Invoice, 1.0).unwrap(),
            )],
            &PipelineConfig::default(),
        )
        .unwrap();
        let label = classify(
            &page_with(&[("far below", 0.9)]),
            &sigs,
            &PipelineConfig::default(),
        );
        assert_eq!(label, CategoryLabel::unknown(0.0));
    }

    #[test]
    fn identical_header_scores_one() {
        let cfg = PipelineConfig::default();
        let sigs = train_signatures(
            &[
                (
                    bundle("a", "ACME S.p.A. FATTURA N. 1"),
                    CategoryLabel::new("ACME", DocType::Invoice, 1.0).unwrap(),
                ),
                (
                    bundle("b", "Beta Logistica DDT 7"),
                    CategoryLabel::new("BETA", DocType::DeliveryNote, 1.0).unwrap(),
                ),
            ],
            &cfg,
        )
        .unwrap();
        let label = classify(
            &page_with(&[("ACME S.p.A. FATTURA N. 1", 0.05)]),
            &sigs,
            &cfg,
        );
        assert_eq!(label.supplier_id, "ACME");
        assert!((label.confidence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_identical_examples_equal_one() {
        let cfg = PipelineConfig::default();
        let l = CategoryLabel::new("ACME", DocType::Invoice, 1.0).unwrap();
        let one = train_signatures(&[(bundle("a", "ACME FATTURA"), l.clone())], &cfg).unwrap();
        let two = train_signatures(
            &[
                (bundle("a", "ACME FATTURA"), l.clone()),
                (bundle("b", "ACME FATTURA"), l),
            ],
            &cfg,
        )
        .unwrap();
        assert_eq!(one.len(), 1);
        for (k, v) in &one[0].centroid {
            assert!((two[0].centroid[k] - v).abs() < 1e-12);
        }
        assert_eq!(two[0].sample_count, 2);
    }

    #[test]
    fn training_requires_examples() {
        assert!(matches!(
            train_signatures(&[], &PipelineConfig::default()),
            Err(ClassifyError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn cosine_ignores_positive_scaling() {
        let a = trigram_counts("fattura acme");
        let doubled: SparseVector = a.iter().map(|(k, v)| (*k, v * 2.0)).collect();
        let b = trigram_counts("fattura beta");
        assert!((cosine(&a, &b) - cosine(&doubled, &b)).abs() < 1e-12);
    }

    #[test]
    fn external_passthrough() {
        let ep = Arc::new(ScriptedEndpoint::always(Ok(
            json!({"supplier":"ACME","doc_type":"invoice","confidence":0.97}),
        )));
        let c = ExternalClassifier::new(ep.clone(), RetryPolicy::immediate(3));
        let p = page_with(&[("ACME", 0.05), ("footer", 0.95)]);
        let label = c
            .classify_external(&p, Some("img://1"), &PipelineConfig::default())
            .unwrap();
        assert_eq!(
            label,
            CategoryLabel::new("ACME", DocType::Invoice, 0.97).unwrap()
        );
        let sent = &ep.requests()[0];
        assert_eq!(sent["header_text"], "ACME");
        assert_eq!(sent["image_ref"], "img://1");
    }

    #[test]
    fn external_server_errors_route_to_fallback() {
        let ep = Arc::new(ScriptedEndpoint::always(Err(EndpointError::Status(500))));
        let c = ExternalClassifier::new(ep.clone(), RetryPolicy::immediate(3));
        let err = c
            .classify_external(&Page::new(0), None, &PipelineConfig::default())
            .unwrap_err();
        assert!(matches!(err, ClassifyError::Exhausted { attempts: 3, .. }));
        assert_eq!(ep.calls(), 3);
        assert_eq!(
            err.fallback_decision().route,
            crate::model::Route::NonAiFallback
        );
    }

    #[test]
    fn external_missing_confidence_is_adapter_error() {
        let ep = Arc::new(ScriptedEndpoint::always(Ok(
            json!({"supplier":"ACME","doc_type":"invoice"}),
        )));
        let c = ExternalClassifier::new(ep, RetryPolicy::immediate(3));
        let err = c
            .classify_external(&Page::new(0), None, &PipelineConfig::default())
            .unwrap_err();
        assert!(matches!(err, ClassifyError::Adapter(_)));
    }
}
