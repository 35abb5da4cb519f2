//! Batch splitting: partition a bundle's pages into logical documents.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::header_text;
use crate::config::PipelineConfig;
use crate::model::{CategoryLabel, DocBundle, DocType};

/// Bundles longer than this with no head signal are sent to a reviewer.
pub const AMBIGUOUS_PAGE_COUNT: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("expected one label per page ({pages} pages, {labels} labels)")]
    LabelCount { pages: usize, labels: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicalUnit {
    pub unit_id: String,
    /// Inclusive page range within the source bundle.
    pub page_range: (usize, usize),
    pub head_label: CategoryLabel,
}

impl LogicalUnit {
    pub fn page_count(&self) -> usize {
        self.page_range.1 - self.page_range.0 + 1
    }
}

fn pagination_patterns() -> &'static [Regex; 2] {
    static RE: OnceLock<[Regex; 2]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"(?i)\bpag(?:e|ina|\.)?\s*(\d{1,4})\s*(?:of|di|/|von|sur)\s*(\d{1,4})\b")
                .unwrap(),
            Regex::new(r"(?:^|[^\d/.\-])(\d{1,4})\s*/\s*(\d{1,4})(?:$|[^\d/.\-])").unwrap(),
        ]
    })
}

fn head_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(fattura|invoice|rechnung|facture|nota di credito|credit note|ddt|documento di trasporto|delivery note|bolla di consegna|lieferschein|bon de livraison)\b",
        )
        .unwrap()
    })
}

/// Reads `Page N of M`, `Pag. N/M`, `Pagina N di M` or a bare `N / M`.
pub fn parse_pagination(footer_text: &str) -> Option<(u32, u32)> {
    pagination_patterns().iter().find_map(|re| {
        let caps = re.captures(footer_text)?;
        let current: u32 = caps[1].parse().ok()?;
        let total: u32 = caps[2].parse().ok()?;
        (current >= 1 && current <= total).then_some((current, total))
    })
}

/// True when the header region names a document type (title line).
pub fn looks_like_document_head(header: &str) -> bool {
    head_pattern().is_match(header)
}

/// Splits pages into units with the cascade: pagination reset, then a
/// confident non-`other` classification on a page whose header carries a
/// document title, otherwise continue the current unit.
pub fn detect_boundaries(
    bundle: &DocBundle,
    page_labels: &[CategoryLabel],
    config: &PipelineConfig,
) -> Result<Vec<LogicalUnit>, SplitError> {
    if page_labels.len() != bundle.pages.len() {
        return Err(SplitError::LabelCount {
            pages: bundle.pages.len(),
            labels: page_labels.len(),
        });
    }
    let mut starts = vec![0usize];
    for (i, page) in bundle.pages.iter().enumerate().skip(1) {
        let reset = page
            .footer_text
            .as_deref()
            .and_then(parse_pagination)
            .is_some_and(|(current, _)| current == 1);
        let label = &page_labels[i];
        let head = label.confidence >= config.split_confidence
            && label.doc_type != DocType::Other
            && looks_like_document_head(&header_text(page, config.header_crop_fraction));
        if reset || head {
            starts.push(i);
        }
    }
    let last = bundle.pages.len().saturating_sub(1);
    let multi = starts.len() > 1;
    Ok(starts
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let end = starts.get(k + 1).map_or(last, |next| next - 1);
            LogicalUnit {
                unit_id: if multi {
                    format!("{}-u{}", bundle.doc_id, k + 1)
                } else {
                    bundle.doc_id.clone()
                },
                page_range: (start, end),
                head_label: page_labels[start].clone(),
            }
        })
        .collect())
}

/// A long single-unit bundle with no pagination anywhere cannot be trusted
/// to be one document.
pub fn is_ambiguous(bundle: &DocBundle, units: &[LogicalUnit]) -> bool {
    units.len() == 1
        && bundle.pages.len() > AMBIGUOUS_PAGE_COUNT
        && bundle.pages.iter().all(|p| {
            p.footer_text
                .as_deref()
                .and_then(parse_pagination)
                .is_none()
        })
}
