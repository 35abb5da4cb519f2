//! Versioned prompt records and deterministic prompt assembly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{Category, FieldKind, Schema};
use crate::parse::ParsedDoc;

use super::ExtractError;

/// Position in a category's prompt lineage, rendered `v1`, `v2`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VersionId(pub u32);

impl VersionId {
    pub const FIRST: VersionId = VersionId(1);

    pub fn next(self) -> VersionId {
        VersionId(self.0 + 1)
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl FromStr for VersionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('v')
            .and_then(|n| n.parse().ok())
            .filter(|n| *n >= 1)
            .map(VersionId)
            .ok_or_else(|| format!("bad version id {s:?}"))
    }
}

impl Serialize for VersionId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VersionId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub excerpt: String,
    pub field: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptVersion {
    pub version_id: VersionId,
    pub category: Category,
    pub parent_version: Option<VersionId>,
    pub instruction_lines: Vec<String>,
    pub examples: Vec<Example>,
    pub created_from: Vec<String>,
}

impl PromptVersion {
    /// The implicit root of every lineage: no examples, no extra instructions.
    pub fn initial(category: Category) -> Self {
        PromptVersion {
            version_id: VersionId::FIRST,
            category,
            parent_version: None,
            instruction_lines: Vec::new(),
            examples: Vec::new(),
            created_from: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub category: Category,
    pub version_id: VersionId,
    pub schema: Schema,
    pub examples: Vec<Example>,
    pub rendered_text: String,
}

pub const DOCUMENT_OPEN: &str = "## Document\n<<<\n";
pub const DOCUMENT_CLOSE: &str = "\n>>>";

const OUTPUT_FORMAT: &str = "Return a single JSON object and nothing else. Use each field name as a key. \
Each value is an object {\"value\": <string or null>, \"confidence\": <number between 0 and 1>}. \
For line_items the value is a JSON array of objects with keys description, quantity, unit_price, total.";

const BASE_INSTRUCTIONS: &[&str] = &[
    "If a field does not appear in the document, return null with confidence 0.",
    "If a value is ambiguous or partially inconsistent, return the most likely reading with a lower confidence.",
    "Copy values as printed; never compute a value that is not shown.",
];

fn doc_type_phrase(category: &Category) -> String {
    let kind = match category.doc_type {
        crate::model::DocType::Invoice => "an invoice",
        crate::model::DocType::DeliveryNote => "a delivery note",
        crate::model::DocType::Other => "a business document",
    };
    format!(
        "The document is {kind} issued by supplier {}.",
        category.supplier_id
    )
}

fn field_line(f: &crate::model::FieldSchema) -> String {
    let mut line = format!(
        "- {} ({}, {})",
        f.name,
        f.kind.as_str(),
        if f.required { "required" } else { "optional" }
    );
    if let Some(values) = &f.admissible_values {
        line.push_str(&format!(
            "; allowed: {}",
            values.iter().cloned().collect::<Vec<_>>().join(", ")
        ));
    }
    if f.kind == FieldKind::Date {
        line.push_str("; format YYYY-MM-DD");
    }
    line
}

/// Renders the prompt for one document. Only the newest `max_examples`
/// examples of the version are included.
pub fn assemble_prompt(
    schema: &Schema,
    parsed: &ParsedDoc,
    version: &PromptVersion,
    max_examples: usize,
) -> Result<PromptBundle, ExtractError> {
    if schema.is_empty() {
        return Err(ExtractError::EmptySchema);
    }
    let skip = version.examples.len().saturating_sub(max_examples);
    let examples: Vec<Example> = version.examples[skip..].to_vec();

    let mut out = String::new();
    out.push_str("## Document type\n");
    out.push_str(&doc_type_phrase(&version.category));
    out.push_str("\n\n## Fields\n");
    for f in schema.fields() {
        out.push_str(&field_line(f));
        out.push('\n');
    }
    out.push_str("\n## Output format\n");
    out.push_str(OUTPUT_FORMAT);
    out.push_str("\n\n");
    if !examples.is_empty() {
        out.push_str("## Examples\n");
        for (i, ex) in examples.iter().enumerate() {
            out.push_str(&format!(
                "### Example {}\n<<<\n{}\n>>>\n{} = {}\n\n",
                i + 1,
                ex.excerpt,
                ex.field,
                ex.value
            ));
        }
    }
    out.push_str("## Instructions\n");
    let notes = parsed.layout_notes.iter().map(|n| format!("Layout: {n}"));
    for line in BASE_INSTRUCTIONS
        .iter()
        .map(|s| s.to_string())
        .chain(version.instruction_lines.iter().cloned())
        .chain(notes)
    {
        out.push_str("- ");
        out.push_str(&line);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(DOCUMENT_OPEN);
    out.push_str(&parsed.markdown);
    out.push_str(DOCUMENT_CLOSE);
    out.push('\n');

    Ok(PromptBundle {
        category: version.category.clone(),
        version_id: version.version_id,
        schema: schema.clone(),
        examples,
        rendered_text: out,
    })
}

/// The document section of a rendered prompt.
pub fn document_section(prompt: &str) -> Option<&str> {
    let start = prompt.rfind(DOCUMENT_OPEN)? + DOCUMENT_OPEN.len();
    let end = prompt[start..].rfind(DOCUMENT_CLOSE)? + start;
    Some(&prompt[start..end])
}

/// Field names listed in the prompt's field section.
pub fn prompt_fields(prompt: &str) -> Vec<(String, String)> {
    let Some(start) = prompt.find("## Fields\n") else {
        return Vec::new();
    };
    prompt[start + "## Fields\n".len()..]
        .lines()
        .take_while(|l| l.starts_with("- "))
        .filter_map(|l| {
            let rest = &l[2..];
            let (name, tail) = rest.split_once(" (")?;
            let kind = tail.split([',', ')']).next()?;
            Some((name.to_string(), kind.to_string()))
        })
        .collect()
}
