//! Prompt fine-tuning with feedback inheritance: reviewer corrections are
//! classified, turned into new prompt versions (or parser hints) and pushed
//! to similar documents still awaiting a final answer.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{Example, PromptVersion, VersionId};
use crate::model::{Category, DocType, FieldKind, Schema};
use crate::normalize::{is_missing_raw, normalize, MISSING_MARKER};
use crate::parse::{LayoutHint, ParserConfig};
use crate::state::PipelineState;

/// Lines of context kept on each side of the corrected value in an example.
pub const EXCERPT_RADIUS: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum PftfiError {
    #[error("stale prompt version {given} for {category}; head is {head}")]
    Conflict {
        category: String,
        given: VersionId,
        head: VersionId,
    },
    #[error("prompt version {version} for {category} must follow head {head}")]
    BadLineage {
        category: String,
        version: VersionId,
        head: VersionId,
    },
    #[error("prompt store io: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionFeedback {
    pub feedback_id: String,
    pub doc_id: String,
    pub field: String,
    /// Raw extracted value, or the missing marker.
    pub original_value: String,
    pub corrected_value: String,
    pub doc_type: DocType,
    pub supplier_id: String,
    pub reviewer_id: String,
    pub ts: DateTime<Utc>,
}

impl CorrectionFeedback {
    pub fn category(&self) -> Category {
        Category::new(&self.supplier_id, self.doc_type)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Missing,
    Format,
    Value,
    Layout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPattern {
    pub feedback_id: String,
    pub error_class: ErrorClass,
    pub description: String,
}

/// Missing original, then same normal form (format), then table fields
/// (layout), otherwise a wrong value.
pub fn classify_error(fb: &CorrectionFeedback, schema: &Schema) -> ErrorPattern {
    let kind = schema.get(&fb.field).map_or(FieldKind::Text, |f| f.kind);
    let (class, description) = if is_missing_raw(&fb.original_value) {
        (
            ErrorClass::Missing,
            format!("{} was not extracted", fb.field),
        )
    } else {
        let before = normalize(kind, &fb.original_value);
        let after = normalize(kind, &fb.corrected_value);
        if !before.is_invalid() && before.agreement_key() == after.agreement_key() {
            (
                ErrorClass::Format,
                format!(
                    "{} extracted as {:?}, expected format {:?}",
                    fb.field, fb.original_value, fb.corrected_value
                ),
            )
        } else if kind == FieldKind::LineItems {
            (
                ErrorClass::Layout,
                format!("{} table rows were misread", fb.field),
            )
        } else {
            (
                ErrorClass::Value,
                format!(
                    "{} extracted as {:?}, correct value {:?}",
                    fb.field, fb.original_value, fb.corrected_value
                ),
            )
        }
    };
    ErrorPattern {
        feedback_id: fb.feedback_id.clone(),
        error_class: class,
        description,
    }
}

pub fn format_instruction(field: &str, kind: FieldKind) -> String {
    let rule = match kind {
        FieldKind::Date => "dates must be ISO-8601 (YYYY-MM-DD)".to_string(),
        FieldKind::Money => {
            "amounts use a dot decimal separator, two decimals and no thousands separator"
                .to_string()
        }
        FieldKind::Percentage => "percentages are plain numbers without the % sign".to_string(),
        FieldKind::Quantity => "quantities are plain decimal numbers without units".to_string(),
        FieldKind::TaxId => {
            "tax ids carry the country prefix and no spaces or punctuation".to_string()
        }
        FieldKind::CurrencyCode => "currencies are ISO 4217 three-letter codes".to_string(),
        FieldKind::Text | FieldKind::LineItems => format!("copy {field} exactly as printed"),
    };
    format!("{field}: {rule}")
}

/// Up to `EXCERPT_RADIUS` non-empty lines either side of the first line
/// mentioning the corrected (or else the original) value.
pub fn excerpt_around(markdown: &str, needles: &[&str]) -> String {
    let lines: Vec<&str> = markdown.lines().filter(|l| !l.trim().is_empty()).collect();
    let hit = needles
        .iter()
        .filter(|n| !n.trim().is_empty())
        .find_map(|n| {
            let n = n.trim().to_lowercase();
            lines.iter().position(|l| l.to_lowercase().contains(&n))
        });
    let (start, end) = match hit {
        Some(i) => (
            i.saturating_sub(EXCERPT_RADIUS),
            (i + EXCERPT_RADIUS + 1).min(lines.len()),
        ),
        None => (0, (2 * EXCERPT_RADIUS + 1).min(lines.len())),
    };
    lines[start..end].join("\n")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum FeedbackUpdate {
    Prompt { version: PromptVersion },
    Parser { config: ParserConfig },
}

/// Builds the next prompt version (missing/format/value) or parser config
/// (layout). `current` must be the category head.
#[allow(clippy::too_many_arguments)]
pub fn apply_feedback(
    fb: &CorrectionFeedback,
    pattern: &ErrorPattern,
    current: &PromptVersion,
    head: VersionId,
    parser_cfg: &ParserConfig,
    markdown: &str,
    schema: &Schema,
    max_examples: usize,
) -> Result<FeedbackUpdate, PftfiError> {
    if current.version_id != head {
        return Err(PftfiError::Conflict {
            category: current.category.key(),
            given: current.version_id,
            head,
        });
    }
    if pattern.error_class == ErrorClass::Layout {
        let hint = LayoutHint {
            field: fb.field.clone(),
            note: format!(
                "{}: read every table row as one item, in document order",
                fb.field
            ),
            feedback_id: fb.feedback_id.clone(),
        };
        return Ok(FeedbackUpdate::Parser {
            config: parser_cfg.with_hint(&fb.category(), hint),
        });
    }
    let mut next = current.clone();
    next.version_id = current.version_id.next();
    next.parent_version = Some(current.version_id);
    next.created_from = vec![fb.feedback_id.clone()];
    let original = if fb.original_value == MISSING_MARKER {
        ""
    } else {
        fb.original_value.as_str()
    };
    next.examples.push(Example {
        excerpt: excerpt_around(markdown, &[&fb.corrected_value, original]),
        field: fb.field.clone(),
        value: fb.corrected_value.clone(),
    });
    let overflow = next.examples.len().saturating_sub(max_examples);
    next.examples.drain(..overflow);
    if pattern.error_class == ErrorClass::Format {
        let kind = schema.get(&fb.field).map_or(FieldKind::Text, |f| f.kind);
        let line = format_instruction(&fb.field, kind);
        if !next.instruction_lines.contains(&line) {
            next.instruction_lines.push(line);
        }
    }
    Ok(FeedbackUpdate::Prompt { version: next })
}

/// Committed prompt lineages. Version 1 of each category is implicit until
/// the first commit materializes it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptStore {
    lineages: BTreeMap<String, Vec<PromptVersion>>,
}

impl PromptStore {
    pub fn head(&self, category: &Category) -> PromptVersion {
        self.lineages
            .get(&category.key())
            .and_then(|l| l.last().cloned())
            .unwrap_or_else(|| PromptVersion::initial(category.clone()))
    }

    pub fn head_id(&self, category: &Category) -> VersionId {
        self.lineages
            .get(&category.key())
            .and_then(|l| l.last())
            .map_or(VersionId::FIRST, |v| v.version_id)
    }

    /// Every version oldest first, including the implicit v1.
    pub fn versions(&self, category: &Category) -> Vec<PromptVersion> {
        self.lineages
            .get(&category.key())
            .cloned()
            .unwrap_or_else(|| vec![PromptVersion::initial(category.clone())])
    }

    pub fn get(&self, category: &Category, id: VersionId) -> Option<PromptVersion> {
        self.versions(category)
            .into_iter()
            .find(|v| v.version_id == id)
    }

    pub fn categories(&self) -> impl Iterator<Item = &String> {
        self.lineages.keys()
    }

    /// Appends `version` if it directly follows the current head.
    pub fn commit(&mut self, version: PromptVersion) -> Result<(), PftfiError> {
        let head = self.head_id(&version.category);
        if version.version_id != head.next() || version.parent_version != Some(head) {
            return Err(PftfiError::BadLineage {
                category: version.category.key(),
                version: version.version_id,
                head,
            });
        }
        let lineage = self
            .lineages
            .entry(version.category.key())
            .or_insert_with(|| vec![PromptVersion::initial(version.category.clone())]);
        lineage.push(version);
        Ok(())
    }

    /// One directory per category holding `vN.json` files and a `HEAD` file.
    pub fn write_dir(&self, dir: &Path) -> Result<(), PftfiError> {
        let io = |e: std::io::Error| PftfiError::Io(e.to_string());
        for (key, lineage) in &self.lineages {
            let cat_dir = dir.join(key.replace(':', "__"));
            std::fs::create_dir_all(&cat_dir).map_err(io)?;
            for v in lineage {
                let path = cat_dir.join(format!("{}.json", v.version_id));
                if !path.exists() {
                    let text = serde_json::to_string_pretty(v)
                        .map_err(|e| PftfiError::Io(e.to_string()))?;
                    std::fs::write(&path, text).map_err(io)?;
                }
            }
            if let Some(head) = lineage.last() {
                std::fs::write(cat_dir.join("HEAD"), head.version_id.to_string()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<PromptStore, PftfiError> {
        let io = |e: std::io::Error| PftfiError::Io(e.to_string());
        let mut store = PromptStore::default();
        if !dir.exists() {
            return Ok(store);
        }
        let mut cat_dirs: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        cat_dirs.sort();
        for cat_dir in cat_dirs {
            let head: VersionId = std::fs::read_to_string(cat_dir.join("HEAD"))
                .map_err(io)?
                .trim()
                .parse()
                .map_err(PftfiError::Io)?;
            for n in 2..=head.0 {
                let text =
                    std::fs::read_to_string(cat_dir.join(format!("v{n}.json"))).map_err(io)?;
                let v: PromptVersion =
                    serde_json::from_str(&text).map_err(|e| PftfiError::Io(e.to_string()))?;
                store.commit(v)?;
            }
        }
        Ok(store)
    }
}

/// A document as seen by the inheritance scan.
#[derive(Clone, Debug, PartialEq)]
pub struct PendingDoc {
    pub doc_id: String,
    pub category: Category,
    pub state: PipelineState,
    pub flagged_fields: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReextractTask {
    pub doc_id: String,
    pub field: String,
    pub version: VersionId,
    pub feedback_id: String,
}

/// Same-category documents that already hold an extraction, or are under
/// review with the corrected field flagged. Documents not yet extracted
/// pick up the new head on their own.
pub fn inherit(
    fb: &CorrectionFeedback,
    new_version: &PromptVersion,
    pending: &[PendingDoc],
) -> Vec<ReextractTask> {
    let category = fb.category();
    pending
        .iter()
        .filter(|d| d.doc_id != fb.doc_id && d.category == category)
        .filter(|d| match d.state {
            PipelineState::Extracted | PipelineState::Validated => true,
            PipelineState::InReview => d.flagged_fields.contains(&fb.field),
            _ => false,
        })
        .map(|d| ReextractTask {
            doc_id: d.doc_id.clone(),
            field: fb.field.clone(),
            version: new_version.version_id,
            feedback_id: fb.feedback_id.clone(),
        })
        .collect()
}
