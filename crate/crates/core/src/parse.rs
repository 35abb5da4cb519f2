//! Layout-aware conversion of a logical unit into markdown.
//!
//! Reading order comes from 1-D gap clustering of block x-centers; tables are
//! emitted as pipe tables in vertical position among the text; running
//! headers/footers repeated across pages are kept once and footer lines are
//! dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::endpoint::{JsonEndpoint, RetryPolicy};
use crate::model::{Category, Page, TableGrid, TextBlock};
use crate::split::LogicalUnit;

/// Blocks starting above this line count as running-header candidates.
pub const HEADER_BAND: f64 = 0.12;
/// Blocks starting below this line count as running-footer candidates.
pub const FOOTER_BAND: f64 = 0.88;
const MAX_HEADING_DEPTH: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutHint {
    pub field: String,
    pub note: String,
    pub feedback_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParserConfig {
    pub column_gap_threshold: f64,
    pub heading_font_ratio: f64,
    pub table_render_style: String,
    pub version: String,
    /// Keyed by category (`supplier:doc_type`).
    #[serde(default)]
    pub layout_hints: BTreeMap<String, Vec<LayoutHint>>,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            column_gap_threshold: 0.15,
            heading_font_ratio: 1.3,
            table_render_style: "pipe".to_string(),
            version: "p1".to_string(),
            layout_hints: BTreeMap::new(),
        }
    }
}

impl ParserConfig {
    pub fn version_number(&self) -> u32 {
        self.version.trim_start_matches('p').parse().unwrap_or(1)
    }

    /// Copy with the hint appended and the version bumped.
    pub fn with_hint(&self, category: &Category, hint: LayoutHint) -> ParserConfig {
        let mut next = self.clone();
        next.layout_hints
            .entry(category.key())
            .or_default()
            .push(hint);
        next.version = format!("p{}", self.version_number() + 1);
        next
    }

    pub fn notes_for(&self, category: &Category) -> Vec<String> {
        self.layout_hints
            .get(&category.key())
            .map(|hints| hints.iter().map(|h| h.note.clone()).collect())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParsedDoc {
    pub unit_id: String,
    pub markdown: String,
    pub heading_outline: Vec<(u8, String)>,
    pub raw_token_count: usize,
    pub parsed_token_count: usize,
    pub parser_config_version: String,
    /// Category layout hints recorded from reviewer feedback.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layout_notes: Vec<String>,
}

impl ParsedDoc {
    /// Fractional token reduction relative to the naive concatenation.
    pub fn token_reduction(&self) -> f64 {
        if self.raw_token_count == 0 {
            0.0
        } else {
            (self.raw_token_count as f64 - self.parsed_token_count as f64)
                / self.raw_token_count as f64
        }
    }
}

fn coord_order(a: &TextBlock, b: &TextBlock) -> std::cmp::Ordering {
    a.y0.total_cmp(&b.y0)
        .then(a.x0.total_cmp(&b.x0))
        .then(a.x1.total_cmp(&b.x1))
        .then(a.y1.total_cmp(&b.y1))
        .then_with(|| a.text.cmp(&b.text))
        .then(a.font_size_hint.total_cmp(&b.font_size_hint))
}

/// Columns left to right, then top to bottom inside each column.
pub fn reading_order(blocks: &[TextBlock], config: &ParserConfig) -> Vec<TextBlock> {
    if blocks.is_empty() {
        return Vec::new();
    }
    let mut by_center: Vec<&TextBlock> = blocks.iter().collect();
    by_center.sort_by(|a, b| {
        a.x_center()
            .total_cmp(&b.x_center())
            .then(coord_order(a, b))
    });
    let mut columns: Vec<Vec<TextBlock>> = vec![vec![by_center[0].clone()]];
    for pair in by_center.windows(2) {
        if pair[1].x_center() - pair[0].x_center() > config.column_gap_threshold {
            columns.push(Vec::new());
        }
        columns.last_mut().unwrap().push(pair[1].clone());
    }
    columns
        .into_iter()
        .flat_map(|mut col| {
            col.sort_by(coord_order);
            col
        })
        .collect()
}

pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

fn is_markup_token(token: &str) -> bool {
    token.chars().all(|c| matches!(c, '|' | '-' | ':')) || token.chars().all(|c| c == '#')
}

/// Whitespace tokens excluding table rules/pipes and heading markers.
pub fn count_content_tokens(markdown: &str) -> usize {
    markdown
        .split_whitespace()
        .filter(|t| !is_markup_token(t))
        .count()
}

/// Baseline text: every block, table cell and footer in input order.
pub fn naive_text(pages: &[Page]) -> String {
    let mut parts: Vec<String> = Vec::new();
    for page in pages {
        for b in &page.blocks {
            parts.push(b.text.clone());
        }
        for t in &page.tables {
            for r in 0..t.rows {
                parts.push(t.row(r).join(" "));
            }
        }
        if let Some(f) = &page.footer_text {
            parts.push(f.clone());
        }
    }
    parts.join("\n")
}

fn escape_cell(cell: &str) -> String {
    let flat = cell.replace(['\n', '\r'], " ");
    let flat = flat.replace('|', "\\|");
    if flat.trim().is_empty() {
        " ".to_string()
    } else {
        flat.trim().to_string()
    }
}

pub fn render_table(table: &TableGrid) -> Option<String> {
    if table.rows == 0 || table.cols == 0 || !table.is_rectangular() {
        return None;
    }
    let line = |cells: &[String]| {
        format!(
            "| {} |",
            cells
                .iter()
                .map(|c| escape_cell(c))
                .collect::<Vec<_>>()
                .join(" | ")
        )
    };
    let mut lines = vec![line(table.row(0))];
    lines.push(format!("|{}|", vec![" --- "; table.cols].join("|")));
    for r in 1..table.rows {
        lines.push(line(table.row(r)));
    }
    Some(lines.join("\n"))
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Band texts that recur on more than one page of the unit.
fn running_texts(pages: &[Page]) -> BTreeSet<String> {
    let mut seen: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (i, page) in pages.iter().enumerate() {
        for b in &page.blocks {
            if b.y0 < HEADER_BAND || b.y0 >= FOOTER_BAND {
                seen.entry(b.text.trim().to_string()).or_default().insert(i);
            }
        }
    }
    seen.into_iter()
        .filter(|(_, p)| p.len() > 1)
        .map(|(t, _)| t)
        .collect()
}

pub fn render_markdown(unit_id: &str, pages: &[Page], config: &ParserConfig) -> ParsedDoc {
    let fonts: Vec<f64> = pages
        .iter()
        .flat_map(|p| p.blocks.iter().map(|b| b.font_size_hint))
        .collect();
    let base = median(fonts.clone());
    let cutoff = base * config.heading_font_ratio;
    let mut heading_sizes: Vec<f64> = fonts
        .into_iter()
        .filter(|f| *f >= cutoff && base > 0.0)
        .collect();
    heading_sizes.sort_by(|a, b| b.total_cmp(a));
    heading_sizes.dedup();
    let level_of = |font: f64| -> Option<u8> {
        if base <= 0.0 || font < cutoff {
            return None;
        }
        let rank = heading_sizes.iter().position(|s| *s == font).unwrap_or(0);
        Some((rank + 1).min(MAX_HEADING_DEPTH) as u8)
    };

    let running = running_texts(pages);
    let mut emitted_running: BTreeSet<String> = BTreeSet::new();
    let mut elements: Vec<String> = Vec::new();
    let mut outline = Vec::new();

    for page in pages {
        let ordered = reading_order(&page.blocks, config);
        let mut tables: Vec<&TableGrid> = page.tables.iter().collect();
        tables.sort_by(|a, b| a.y0.total_cmp(&b.y0));
        let mut pending = tables.into_iter().peekable();
        for block in ordered {
            while let Some(t) = pending.next_if(|t| t.y0 < block.y0) {
                elements.extend(render_table(t));
            }
            let text = block.text.trim();
            if text.is_empty() {
                continue;
            }
            if running.contains(text) && !emitted_running.insert(text.to_string()) {
                continue;
            }
            match level_of(block.font_size_hint) {
                Some(level) => {
                    outline.push((level, text.to_string()));
                    elements.push(format!("{} {}", "#".repeat(level as usize), text));
                }
                None => elements.push(text.to_string()),
            }
        }
        for t in pending {
            elements.extend(render_table(t));
        }
    }

    let markdown = elements.join("\n\n");
    ParsedDoc {
        unit_id: unit_id.to_string(),
        raw_token_count: count_tokens(&naive_text(pages)),
        parsed_token_count: count_content_tokens(&markdown),
        markdown,
        heading_outline: outline,
        parser_config_version: config.version.clone(),
        layout_notes: Vec::new(),
    }
}

/// Passthrough used when the parser stage is ablated.
pub fn render_naive(unit_id: &str, pages: &[Page], config: &ParserConfig) -> ParsedDoc {
    let text = naive_text(pages);
    let tokens = count_tokens(&text);
    ParsedDoc {
        unit_id: unit_id.to_string(),
        markdown: text,
        heading_outline: Vec::new(),
        raw_token_count: tokens,
        parsed_token_count: tokens,
        parser_config_version: format!("{}-naive", config.version),
        layout_notes: Vec::new(),
    }
}

/// Remote layout engine: `POST {unit_id, pages}` → `{markdown}`.
pub struct ExternalParser {
    endpoint: Arc<dyn JsonEndpoint>,
    retry: RetryPolicy,
}

/// Result of an external parse; `fallback` is set when the reference
/// renderer had to be used instead.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalParse {
    pub parsed: ParsedDoc,
    pub fallback: Option<String>,
}

impl ExternalParser {
    pub fn new(endpoint: Arc<dyn JsonEndpoint>, retry: RetryPolicy) -> Self {
        ExternalParser { endpoint, retry }
    }

    pub fn parse_external(
        &self,
        unit: &LogicalUnit,
        pages: &[Page],
        config: &ParserConfig,
    ) -> ExternalParse {
        let body = json!({ "unit_id": unit.unit_id, "pages": pages });
        let outcome = self
            .retry
            .run(|| self.endpoint.post_json(&body))
            .map_err(|e| e.to_string())
            .and_then(|v| {
                v.get("markdown")
                    .and_then(|m| m.as_str())
                    .map(str::to_string)
                    .ok_or_else(|| "response has no markdown string".to_string())
            })
            .and_then(|m| {
                if m.trim().is_empty() {
                    Err("external parser returned empty markdown".to_string())
                } else {
                    Ok(m)
                }
            });
        match outcome {
            Ok(markdown) => ExternalParse {
                parsed: ParsedDoc {
                    unit_id: unit.unit_id.clone(),
                    raw_token_count: count_tokens(&naive_text(pages)),
                    parsed_token_count: count_content_tokens(&markdown),
                    heading_outline: outline_of(&markdown),
                    markdown,
                    parser_config_version: format!("external/{}", config.version),
                    layout_notes: Vec::new(),
                },
                fallback: None,
            },
            Err(reason) => {
                log::warn!("external parser failed for {}: {reason}", unit.unit_id);
                ExternalParse {
                    parsed: render_markdown(&unit.unit_id, pages, config),
                    fallback: Some(reason),
                }
            }
        }
    }
}

fn outline_of(markdown: &str) -> Vec<(u8, String)> {
    markdown
        .lines()
        .filter_map(|l| {
            let hashes = l.chars().take_while(|c| *c == '#').count();
            (1..=6).contains(&hashes).then(|| {
                (
                    hashes.min(MAX_HEADING_DEPTH) as u8,
                    l[hashes..].trim().to_string(),
                )
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::{EndpointError, ScriptedEndpoint};
    use crate::model::{CategoryLabel, DocType};

    fn block(text: &str, x0: f64, y0: f64, x1: f64) -> TextBlock {
        TextBlock::new(text, x0, y0, x1, y0 + 0.02, 10.0)
    }

    fn texts(blocks: &[TextBlock]) -> Vec<&str> {
        blocks.iter().map(|b| b.text.as_str()).collect()
    }

    #[test]
    fn stacked_blocks_top_first() {
        let blocks = vec![block("bottom", 0.1, 0.5, 0.9), block("top", 0.1, 0.1, 0.9)];
        assert_eq!(
            texts(&reading_order(&blocks, &ParserConfig::default())),
            vec!["top", "bottom"]
        );
    }

    #[test]
    fn two_columns_left_then_right() {
        // Left centers 0.25, right center 0.65: gap 0.4 > 0.15.
        let blocks = vec![
            block("R1", 0.5, 0.2, 0.8),
            block("L2", 0.1, 0.5, 0.4),
            block("L1", 0.1, 0.1, 0.4),
        ];
        assert_eq!(
            texts(&reading_order(&blocks, &ParserConfig::default())),
            vec!["L1", "L2", "R1"]
        );
        assert!(reading_order(&[], &ParserConfig::default()).is_empty());
    }

    #[test]
    fn single_block_counts() {
        let mut p = Page::new(0);
        p.blocks.push(block("Hello world", 0.1, 0.5, 0.9));
        let doc = render_markdown("u", &[p], &ParserConfig::default());
        assert_eq!(doc.markdown, "Hello world");
        assert_eq!(doc.raw_token_count, 2);
        assert_eq!(doc.parsed_token_count, 2);
    }

    #[test]
    fn pipe_table_rendering() {
        let t = TableGrid::from_rows(
            &[
                vec!["Qty".into(), "Price".into()],
                vec!["1".into(), "10.00".into()],
            ],
            0.5,
        );
        let md = render_table(&t).unwrap();
        assert_eq!(md.lines().next().unwrap(), "| Qty | Price |");
        assert_eq!(md, "| Qty | Price |\n| --- | --- |\n| 1 | 10.00 |");
        assert_eq!(count_content_tokens(&md), 4);
    }

    #[test]
    fn headings_by_font_rank() {
        let mut p = Page::new(0);
        p.blocks
            .push(TextBlock::new("ACME", 0.1, 0.02, 0.9, 0.05, 16.0));
        p.blocks
            .push(TextBlock::new("FATTURA", 0.1, 0.15, 0.9, 0.18, 14.0));
        for i in 0..4 {
            p.blocks
                .push(block(&format!("line {i}"), 0.1, 0.3 + i as f64 * 0.05, 0.9));
        }
        let doc = render_markdown("u", &[p], &ParserConfig::default());
        assert!(doc.markdown.starts_with("# ACME\n\n## FATTURA"));
        assert_eq!(
            doc.heading_outline,
            vec![(1, "ACME".into()), (2, "FATTURA".into())]
        );
        // Heading markers are not content tokens.
        assert_eq!(doc.parsed_token_count, doc.raw_token_count);
    }

    #[test]
    fn tables_interleave_by_position() {
        let mut p = Page::new(0);
        p.blocks.push(block("before", 0.1, 0.1, 0.9));
        p.blocks.push(block("after", 0.1, 0.8, 0.9));
        p.tables.push(TableGrid::from_rows(
            &[vec!["A".into()], vec!["1".into()]],
            0.5,
        ));
        let md = render_markdown("u", &[p], &ParserConfig::default()).markdown;
        let a = md.find("before").unwrap();
        let t = md.find("| A |").unwrap();
        let b = md.find("after").unwrap();
        assert!(a < t && t < b, "{md}");
    }

    #[test]
    fn running_headers_kept_once_and_footers_dropped() {
        let pages: Vec<Page> = (0..3)
            .map(|i| {
                let mut p = Page::new(i);
                p.blocks
                    .push(block("ACME S.p.A. Via Roma 1", 0.1, 0.03, 0.9));
                p.blocks.push(block(&format!("body {i}"), 0.1, 0.5, 0.9));
                p.blocks
                    .push(block("Documento informatico", 0.1, 0.92, 0.9));
                p.footer_text = Some(format!("Pagina {} di 3", i + 1));
                p
            })
            .collect();
        let doc = render_markdown("u", &pages, &ParserConfig::default());
        assert_eq!(doc.markdown.matches("ACME S.p.A.").count(), 1);
        assert_eq!(doc.markdown.matches("Documento informatico").count(), 1);
        assert!(!doc.markdown.contains("Pagina"));
        assert!(doc.parsed_token_count < doc.raw_token_count);
    }

    #[test]
    fn hint_bumps_version() {
        let cfg = ParserConfig::default();
        let cat = Category::new("ACME", DocType::Invoice);
        let next = cfg.with_hint(
            &cat,
            LayoutHint {
                field: "line_items".into(),
                note: "one row per item".into(),
                feedback_id: "fb-1".into(),
            },
        );
        assert_eq!(next.version, "p2");
        assert_eq!(next.notes_for(&cat), vec!["one row per item".to_string()]);
        assert!(cfg.notes_for(&cat).is_empty());
    }

    fn unit() -> (LogicalUnit, Vec<Page>) {
        let mut p = Page::new(0);
        p.blocks.push(block("Hello world", 0.1, 0.5, 0.9));
        (
            LogicalUnit {
                unit_id: "u1".into(),
                page_range: (0, 0),
                head_label: CategoryLabel::unknown(0.0),
            },
            vec![p],
        )
    }

    #[test]
    fn external_passthrough() {
        let ep = Arc::new(ScriptedEndpoint::always(Ok(
            json!({"markdown": "# Fixed\n\ntext"}),
        )));
        let (u, pages) = unit();
        let out = ExternalParser::new(ep, RetryPolicy::immediate(3)).parse_external(
            &u,
            &pages,
            &ParserConfig::default(),
        );
        assert_eq!(out.parsed.markdown, "# Fixed\n\ntext");
        assert!(out.fallback.is_none());
        assert_eq!(out.parsed.heading_outline, vec![(1, "Fixed".into())]);
    }

    #[test]
    fn external_down_falls_back_to_reference() {
        let ep = Arc::new(ScriptedEndpoint::always(Err(EndpointError::Transport(
            "refused".into(),
        ))));
        let (u, pages) = unit();
        let out = ExternalParser::new(ep, RetryPolicy::immediate(3)).parse_external(
            &u,
            &pages,
            &ParserConfig::default(),
        );
        assert_eq!(out.parsed.markdown, "Hello world");
        assert!(out.fallback.is_some());
    }

    #[test]
    fn external_empty_markdown_is_failure() {
        let ep = Arc::new(ScriptedEndpoint::always(Ok(json!({"markdown": "  "}))));
        let (u, pages) = unit();
        let out = ExternalParser::new(ep, RetryPolicy::immediate(3)).parse_external(
            &u,
            &pages,
            &ParserConfig::default(),
        );
        assert_eq!(out.parsed.markdown, "Hello world");
        assert!(out.fallback.unwrap().contains("empty"));
    }
}
