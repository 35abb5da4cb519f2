//! Canonical forms for extracted values.
//!
//! Money is kept as integer minor units (hundredths), percentages as
//! hundredths of a percent and quantities as thousandths, so every comparison
//! downstream is exact.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::FieldKind;

/// Placeholder used in feedback records when the original value was absent.
pub const MISSING_MARKER: &str = "<missing>";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Money {
    pub minor: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currency: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineItem {
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity_milli: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_price_minor: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_minor: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Normalized {
    Missing,
    /// Present but unparseable for its kind; the reason is kept for review.
    Invalid(String),
    Text(String),
    Date(NaiveDate),
    Money(Money),
    Percentage(i64),
    CurrencyCode(String),
    TaxId(String),
    Quantity(i64),
    LineItems(Vec<LineItem>),
}

impl Normalized {
    pub fn is_missing(&self) -> bool {
        matches!(self, Normalized::Missing)
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self, Normalized::Invalid(_))
    }

    /// String form used to test two values for equality.
    ///
    /// Text compares case-folded with collapsed whitespace; money compares on
    /// minor units only (the currency is its own field).
    pub fn agreement_key(&self) -> String {
        match self {
            Normalized::Missing => String::new(),
            Normalized::Invalid(reason) => format!("!{reason}"),
            Normalized::Text(s) => fold_text(s),
            Normalized::Date(d) => d.format("%Y-%m-%d").to_string(),
            Normalized::Money(m) => m.minor.to_string(),
            Normalized::Percentage(p) => format!("{p}%"),
            Normalized::CurrencyCode(c) => c.clone(),
            Normalized::TaxId(t) => t.clone(),
            Normalized::Quantity(q) => format!("q{q}"),
            Normalized::LineItems(rows) => rows
                .iter()
                .map(|r| {
                    format!(
                        "{}|{}|{}|{}",
                        fold_text(&r.description),
                        opt(r.quantity_milli),
                        opt(r.unit_price_minor),
                        opt(r.total_minor)
                    )
                })
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }

    /// Human-readable canonical rendering (ISO dates, dot decimals).
    pub fn display(&self) -> String {
        match self {
            Normalized::Missing => MISSING_MARKER.to_string(),
            Normalized::Invalid(reason) => format!("invalid: {reason}"),
            Normalized::Text(s) => s.clone(),
            Normalized::Date(d) => d.format("%Y-%m-%d").to_string(),
            Normalized::Money(m) => match &m.currency {
                Some(c) => format!("{} {c}", format_scaled(m.minor, 2)),
                None => format_scaled(m.minor, 2),
            },
            Normalized::Percentage(p) => format!("{}%", format_scaled(*p, 2)),
            Normalized::CurrencyCode(c) => c.clone(),
            Normalized::TaxId(t) => t.clone(),
            Normalized::Quantity(q) => format_scaled(*q, 3),
            Normalized::LineItems(rows) => format!("{} line items", rows.len()),
        }
    }
}

fn opt(v: Option<i64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn fold_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn format_scaled(value: i64, scale: u32) -> String {
    let factor = 10i64.pow(scale);
    let sign = if value < 0 { "-" } else { "" };
    let abs = value.unsigned_abs() as i64;
    if scale == 0 {
        return format!("{sign}{abs}");
    }
    format!(
        "{sign}{}.{:0width$}",
        abs / factor,
        abs % factor,
        width = scale as usize
    )
}

/// True for raw strings that denote an absent value.
pub fn is_missing_raw(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t == MISSING_MARKER || t.eq_ignore_ascii_case("null")
}

/// Normalizes a raw extracted string according to the field kind.
pub fn normalize(kind: FieldKind, raw: &str) -> Normalized {
    if is_missing_raw(raw) {
        return Normalized::Missing;
    }
    let raw = raw.trim();
    match kind {
        FieldKind::Text => Normalized::Text(raw.to_string()),
        FieldKind::Date => parse_date(raw)
            .map(Normalized::Date)
            .unwrap_or_else(|| Normalized::Invalid(format!("unrecognised date {raw:?}"))),
        FieldKind::Money => parse_money(raw)
            .map(Normalized::Money)
            .unwrap_or_else(|| Normalized::Invalid(format!("unrecognised amount {raw:?}"))),
        FieldKind::Percentage => parse_decimal(raw.trim_end_matches('%').trim(), 2)
            .map(Normalized::Percentage)
            .unwrap_or_else(|| Normalized::Invalid(format!("unrecognised percentage {raw:?}"))),
        FieldKind::CurrencyCode => {
            let code = raw.to_uppercase();
            if code.len() == 3 && code.chars().all(|c| c.is_ascii_uppercase()) {
                Normalized::CurrencyCode(code)
            } else {
                Normalized::Invalid(format!("not a three-letter code {raw:?}"))
            }
        }
        FieldKind::TaxId => {
            let id: String = raw
                .chars()
                .filter(|c| !matches!(c, ' ' | '.' | '-'))
                .collect::<String>()
                .to_uppercase();
            if id.is_empty() {
                Normalized::Missing
            } else {
                Normalized::TaxId(id)
            }
        }
        FieldKind::Quantity => parse_decimal(strip_unit(raw), 3)
            .map(Normalized::Quantity)
            .unwrap_or_else(|| Normalized::Invalid(format!("unrecognised quantity {raw:?}"))),
        FieldKind::LineItems => match parse_line_items(raw) {
            Ok(rows) => Normalized::LineItems(rows),
            Err(e) => Normalized::Invalid(e),
        },
    }
}

fn strip_unit(raw: &str) -> &str {
    raw.trim_end_matches(|c: char| c.is_alphabetic() || c.is_whitespace())
}

const DATE_FORMATS: &[&str] = &["%Y-%m-%d", "%d/%m/%Y", "%d.%m.%Y", "%d-%m-%Y", "%Y/%m/%d"];

/// Day-first European formats plus ISO; a trailing time part is ignored.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let s = raw.trim();
    let s = s.split(['T', ' ']).next().unwrap_or(s);
    DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
}

/// Parses amounts such as `1.234,56 €`, `EUR 1,234.56` or `122`.
pub fn parse_money(raw: &str) -> Option<Money> {
    let mut currency = None;
    let mut rest = String::new();
    for token in raw.split_whitespace() {
        let upper = token.to_uppercase();
        if upper.len() == 3 && upper.chars().all(|c| c.is_ascii_uppercase()) {
            currency = Some(upper);
        } else {
            rest.push_str(token);
        }
    }
    let mut number = String::new();
    for c in rest.chars() {
        match c {
            '€' => currency = Some("EUR".into()),
            '$' => currency = Some("USD".into()),
            '£' => currency = Some("GBP".into()),
            _ => number.push(c),
        }
    }
    let minor = parse_decimal(&number, 2)?;
    Some(Money { minor, currency })
}

/// Parses a decimal number into an integer scaled by `10^scale`.
///
/// Both `.` and `,` are accepted as decimal separators. When both occur the
/// last one is the decimal separator; a single separator followed by exactly
/// three digits is read as a thousands separator.
pub fn parse_decimal(raw: &str, scale: u32) -> Option<i64> {
    let s: String = raw
        .trim()
        .chars()
        .filter(|c| !matches!(c, ' ' | '\'' | '\u{a0}'))
        .collect();
    let (negative, s) = match s.strip_prefix('-') {
        Some(rest) => (true, rest.to_string()),
        None => (false, s.strip_prefix('+').unwrap_or(&s).to_string()),
    };
    if s.is_empty()
        || !s
            .chars()
            .all(|c| c.is_ascii_digit() || c == '.' || c == ',')
    {
        return None;
    }
    let last_dot = s.rfind('.');
    let last_comma = s.rfind(',');
    let decimal_at = match (last_dot, last_comma) {
        (Some(d), Some(c)) => Some(d.max(c)),
        (Some(p), None) | (None, Some(p)) => {
            let sep = s.as_bytes()[p] as char;
            let count = s.matches(sep).count();
            let trailing = s.len() - p - 1;
            if count > 1 || trailing == 3 {
                None
            } else {
                Some(p)
            }
        }
        (None, None) => None,
    };
    let (int_part, frac_part) = match decimal_at {
        Some(p) => (&s[..p], &s[p + 1..]),
        None => (s.as_str(), ""),
    };
    let int_digits: String = int_part.chars().filter(char::is_ascii_digit).collect();
    if frac_part.contains(['.', ',']) {
        return None;
    }
    if int_digits.is_empty() && frac_part.is_empty() {
        return None;
    }
    if frac_part.len() > scale as usize {
        // Refuse to silently round extra precision away.
        if frac_part[scale as usize..].chars().any(|c| c != '0') {
            return None;
        }
    }
    let mut frac: String = frac_part.chars().take(scale as usize).collect();
    while frac.len() < scale as usize {
        frac.push('0');
    }
    let int_value: i64 = if int_digits.is_empty() {
        0
    } else {
        int_digits.parse().ok()?
    };
    let frac_value: i64 = if frac.is_empty() {
        0
    } else {
        frac.parse().ok()?
    };
    let value = int_value
        .checked_mul(10i64.pow(scale))?
        .checked_add(frac_value)?;
    Some(if negative { -value } else { value })
}

fn scalar_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

fn pick<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter()
        .find_map(|k| obj.get(*k))
        .filter(|v| !v.is_null())
}

/// Parses a JSON array of line-item objects.
pub fn parse_line_items(raw: &str) -> Result<Vec<LineItem>, String> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| format!("line items are not JSON: {e}"))?;
    let rows = value
        .as_array()
        .ok_or_else(|| "line items must be a JSON array".to_string())?;
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let obj = row
                .as_object()
                .ok_or_else(|| format!("line item {i} is not an object"))?;
            let description = pick(obj, &["description", "desc", "item"])
                .and_then(scalar_to_string)
                .map(|s| s.trim().to_string())
                .unwrap_or_default();
            let num = |keys: &[&str], scale: u32| -> Result<Option<i64>, String> {
                match pick(obj, keys).and_then(scalar_to_string) {
                    None => Ok(None),
                    Some(s) => {
                        let cleaned = if scale == 2 {
                            parse_money(&s).map(|m| m.minor)
                        } else {
                            parse_decimal(strip_unit(&s), scale)
                        };
                        cleaned
                            .map(Some)
                            .ok_or_else(|| format!("line item {i}: bad number {s:?}"))
                    }
                }
            };
            Ok(LineItem {
                description,
                quantity_milli: num(&["quantity", "qty"], 3)?,
                unit_price_minor: num(&["unit_price", "price"], 2)?,
                total_minor: num(&["total", "line_total", "amount"], 2)?,
            })
        })
        .collect()
}
