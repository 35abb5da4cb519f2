//! Domain types shared by every pipeline stage.
//!
//! Documents enter as [`DocBundle`] values: pages of positioned text blocks
//! and table grids with coordinates normalized to the unit square (origin at
//! the top-left corner).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::Normalized;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("document {0} has no pages")]
    NoPages(String),
    #[error("document {doc_id}: page at position {position} has index {index}")]
    PageIndex {
        doc_id: String,
        position: usize,
        index: usize,
    },
    #[error("document {doc_id}, page {page}: block {block} has invalid bounding box")]
    BlockBounds {
        doc_id: String,
        page: usize,
        block: usize,
    },
    #[error("document {doc_id}, page {page}: table {table} is not rectangular")]
    TableShape {
        doc_id: String,
        page: usize,
        table: usize,
    },
    #[error("invalid category label: {0}")]
    Label(String),
    #[error("invalid category key {0:?}, expected supplier:doc_type")]
    CategoryKey(String),
    #[error("schema declares more than one line_items field")]
    DuplicateLineItems,
    #[error("schema declares field {0} twice")]
    DuplicateField(String),
}

/// A (possibly multi-page, possibly multi-document) input file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocBundle {
    pub doc_id: String,
    pub source_name: String,
    pub pages: Vec<Page>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub received_at: Option<DateTime<Utc>>,
}

impl DocBundle {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.pages.is_empty() {
            return Err(ModelError::NoPages(self.doc_id.clone()));
        }
        for (position, page) in self.pages.iter().enumerate() {
            if page.index != position {
                return Err(ModelError::PageIndex {
                    doc_id: self.doc_id.clone(),
                    position,
                    index: page.index,
                });
            }
            for (i, block) in page.blocks.iter().enumerate() {
                if !block.has_valid_bounds() {
                    return Err(ModelError::BlockBounds {
                        doc_id: self.doc_id.clone(),
                        page: position,
                        block: i,
                    });
                }
            }
            for (i, table) in page.tables.iter().enumerate() {
                if !table.is_rectangular() {
                    return Err(ModelError::TableShape {
                        doc_id: self.doc_id.clone(),
                        page: position,
                        table: i,
                    });
                }
            }
        }
        Ok(())
    }

    /// Copy of the inclusive page range `[start, end]`, re-indexed from 0.
    pub fn slice(&self, doc_id: &str, start: usize, end: usize) -> DocBundle {
        let pages = self.pages[start..=end]
            .iter()
            .enumerate()
            .map(|(i, p)| Page {
                index: i,
                ..p.clone()
            })
            .collect();
        DocBundle {
            doc_id: doc_id.to_string(),
            source_name: self.source_name.clone(),
            pages,
            received_at: self.received_at,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub index: usize,
    #[serde(default)]
    pub blocks: Vec<TextBlock>,
    #[serde(default)]
    pub tables: Vec<TableGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footer_text: Option<String>,
}

impl Page {
    pub fn new(index: usize) -> Self {
        Page {
            index,
            blocks: Vec::new(),
            tables: Vec::new(),
            footer_text: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextBlock {
    pub text: String,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub font_size_hint: f64,
}

impl TextBlock {
    pub fn new(text: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64, font: f64) -> Self {
        TextBlock {
            text: text.into(),
            x0,
            y0,
            x1,
            y1,
            font_size_hint: font,
        }
    }

    pub fn x_center(&self) -> f64 {
        (self.x0 + self.x1) / 2.0
    }

    fn has_valid_bounds(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.x0)
            && unit(self.x1)
            && unit(self.y0)
            && unit(self.y1)
            && self.x0 < self.x1
            && self.y0 < self.y1
            && self.font_size_hint > 0.0
    }
}

/// Row-major table grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<String>,
    pub y0: f64,
}

impl TableGrid {
    pub fn from_rows(rows: &[Vec<String>], y0: f64) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        TableGrid {
            rows: rows.len(),
            cols,
            cells: rows.iter().flatten().cloned().collect(),
            y0,
        }
    }

    pub fn is_rectangular(&self) -> bool {
        self.cells.len() == self.rows * self.cols
    }

    pub fn row(&self, r: usize) -> &[String] {
        &self.cells[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocType {
    Invoice,
    DeliveryNote,
    Other,
}

impl DocType {
    pub fn as_str(self) -> &'static str {
        match self {
            DocType::Invoice => "invoice",
            DocType::DeliveryNote => "delivery_note",
            DocType::Other => "other",
        }
    }
}

impl fmt::Display for DocType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "invoice" => Ok(DocType::Invoice),
            "delivery_note" => Ok(DocType::DeliveryNote),
            "other" => Ok(DocType::Other),
            _ => Err(ModelError::Label(format!("unknown doc_type {s:?}"))),
        }
    }
}

pub const UNKNOWN_SUPPLIER: &str = "unknown";

/// Supplier/document-type pair: the unit of prompt lineage and thresholds.
///
/// Rendered as `supplier:doc_type` in config keys, URLs and file names.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Category {
    pub supplier_id: String,
    pub doc_type: DocType,
}

impl Category {
    pub fn new(supplier_id: impl Into<String>, doc_type: DocType) -> Self {
        Category {
            supplier_id: supplier_id.into(),
            doc_type,
        }
    }

    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.supplier_id, self.doc_type)
    }
}

impl FromStr for Category {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (supplier, doc_type) = s
            .rsplit_once(':')
            .ok_or_else(|| ModelError::CategoryKey(s.to_string()))?;
        if supplier.is_empty() {
            return Err(ModelError::CategoryKey(s.to_string()));
        }
        Ok(Category::new(supplier, doc_type.parse()?))
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryLabel {
    pub supplier_id: String,
    pub doc_type: DocType,
    pub confidence: f64,
}

impl CategoryLabel {
    pub fn new(
        supplier_id: impl Into<String>,
        doc_type: DocType,
        confidence: f64,
    ) -> Result<Self, ModelError> {
        let label = CategoryLabel {
            supplier_id: supplier_id.into(),
            doc_type,
            confidence,
        };
        label.validate()?;
        Ok(label)
    }

    pub fn unknown(confidence: f64) -> Self {
        CategoryLabel {
            supplier_id: UNKNOWN_SUPPLIER.to_string(),
            doc_type: DocType::Other,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(ModelError::Label(format!(
                "confidence {} outside [0,1]",
                self.confidence
            )));
        }
        if self.supplier_id == UNKNOWN_SUPPLIER && self.doc_type != DocType::Other {
            return Err(ModelError::Label(
                "supplier \"unknown\" requires doc_type other".into(),
            ));
        }
        Ok(())
    }

    pub fn is_unknown(&self) -> bool {
        self.supplier_id == UNKNOWN_SUPPLIER
    }

    pub fn category(&self) -> Category {
        Category::new(self.supplier_id.clone(), self.doc_type)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Date,
    Money,
    Percentage,
    CurrencyCode,
    TaxId,
    Text,
    Quantity,
    LineItems,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Date => "date",
            FieldKind::Money => "money",
            FieldKind::Percentage => "percentage",
            FieldKind::CurrencyCode => "currency_code",
            FieldKind::TaxId => "tax_id",
            FieldKind::Text => "text",
            FieldKind::Quantity => "quantity",
            FieldKind::LineItems => "line_items",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    pub kind: FieldKind,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admissible_values: Option<BTreeSet<String>>,
}

impl FieldSchema {
    pub fn new(name: &str, kind: FieldKind, required: bool) -> Self {
        FieldSchema {
            name: name.to_string(),
            kind,
            required,
            admissible_values: None,
        }
    }

    pub fn with_admissible(mut self, values: &[&str]) -> Self {
        self.admissible_values = Some(values.iter().map(|v| v.to_string()).collect());
        self
    }
}

/// Ordered field list for one document type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema(pub Vec<FieldSchema>);

impl Schema {
    pub fn new(fields: Vec<FieldSchema>) -> Result<Self, ModelError> {
        let mut seen = BTreeSet::new();
        let mut line_items = 0;
        for f in &fields {
            if !seen.insert(f.name.clone()) {
                return Err(ModelError::DuplicateField(f.name.clone()));
            }
            if f.kind == FieldKind::LineItems {
                line_items += 1;
            }
        }
        if line_items > 1 {
            return Err(ModelError::DuplicateLineItems);
        }
        Ok(Schema(fields))
    }

    pub fn fields(&self) -> &[FieldSchema] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<&FieldSchema> {
        self.0.iter().find(|f| f.name == name)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Default invoice schema used by the reference pipeline.
    pub fn invoice() -> Self {
        use FieldKind::*;
        Schema(vec![
            FieldSchema::new("invoice_number", Text, true),
            FieldSchema::new("invoice_date", Date, true),
            FieldSchema::new("due_date", Date, false),
            FieldSchema::new("supplier_vat_id", TaxId, true),
            FieldSchema::new("currency", CurrencyCode, true)
                .with_admissible(&["CHF", "EUR", "GBP", "USD"]),
            FieldSchema::new("vat_rate", Percentage, true),
            FieldSchema::new("subtotal", Money, true),
            FieldSchema::new("tax_amount", Money, true),
            FieldSchema::new("total_amount", Money, true),
            FieldSchema::new("line_items", LineItems, false),
        ])
    }

    pub fn delivery_note() -> Self {
        use FieldKind::*;
        Schema(vec![
            FieldSchema::new("delivery_number", Text, true),
            FieldSchema::new("delivery_date", Date, true),
            FieldSchema::new("supplier_vat_id", TaxId, true),
            FieldSchema::new("total_quantity", Quantity, true),
            FieldSchema::new("line_items", LineItems, false),
        ])
    }

    pub fn for_doc_type(doc_type: DocType) -> Option<Self> {
        match doc_type {
            DocType::Invoice => Some(Self::invoice()),
            DocType::DeliveryNote => Some(Self::delivery_note()),
            DocType::Other => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    AutoAccept,
    HumanReview,
    NonAiFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub route: Route,
    pub reasons: Vec<String>,
}

impl RoutingDecision {
    pub fn auto_accept() -> Self {
        RoutingDecision {
            route: Route::AutoAccept,
            reasons: Vec::new(),
        }
    }

    pub fn human_review(reasons: Vec<String>) -> Self {
        RoutingDecision {
            route: Route::HumanReview,
            reasons,
        }
    }

    pub fn fallback(reason: impl Into<String>) -> Self {
        RoutingDecision {
            route: Route::NonAiFallback,
            reasons: vec![reason.into()],
        }
    }
}

/// One extracted field value with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldValue {
    pub field: String,
    pub raw: String,
    pub normalized: Normalized,
    pub confidence: f64,
    pub backend_id: String,
    pub prompt_version: String,
}

impl FieldValue {
    pub fn missing(field: &str, backend_id: &str, prompt_version: &str) -> Self {
        FieldValue {
            field: field.to_string(),
            raw: String::new(),
            normalized: Normalized::Missing,
            confidence: 0.0,
            backend_id: backend_id.to_string(),
            prompt_version: prompt_version.to_string(),
        }
    }

    pub fn is_missing(&self) -> bool {
        self.normalized.is_missing()
    }

    /// Equality key used for voting, correction no-op detection and scoring.
    pub fn agreement_key(&self) -> String {
        match &self.normalized {
            Normalized::Invalid(_) => format!("!{}", self.raw.trim()),
            other => other.agreement_key(),
        }
    }
}
