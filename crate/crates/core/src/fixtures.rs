//! Synthetic labeled corpus: 20 supplier categories with 5 documents each.
//!
//! Roles by document index within a category:
//! 0. scripted review case (error or low-confidence answer, categories 0-14),
//! 1. two-column header block (invoice categories 0-9),
//! 2. three-page document tuned for token reduction,
//! 3. plain single page,
//! 4. batch member (categories 0-9, paired into five two-document batches).

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::eval::{Corpus, GroundTruth, ManifestBundle, ManifestUnit, CORPUS_BACKEND};
use crate::extract::backend::Sidecar;
use crate::model::{Category, DocBundle, DocType, Page, TableGrid, TextBlock};
use crate::parse::{count_tokens, naive_text, render_markdown, ParserConfig};

pub const DEFAULT_SEED: u64 = 7;
pub const DOCS_PER_CATEGORY: usize = 5;
/// Token reduction the three-page documents are built for.
pub const TOKEN_TARGET: f64 = 0.35;
/// Confidence the scripted backend reports on the document number of the
/// low-confidence review cases.
pub const LOW_CONFIDENCE: f64 = 0.6;
const SCRIPTED_CONFIDENCE: f64 = 0.95;
/// Categories whose first document is a scripted review case.
const FLAGGED_CATEGORIES: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Lang {
    It,
    En,
}

struct Supplier {
    id: &'static str,
    name: &'static str,
    address: &'static str,
    vat_id: &'static str,
    doc_type: DocType,
    lang: Lang,
    currency: &'static str,
    /// Hundredths of a percent.
    vat_rate: i64,
    prefix: &'static str,
}

#[allow(clippy::too_many_arguments)]
const fn sup(
    id: &'static str,
    name: &'static str,
    address: &'static str,
    vat_id: &'static str,
    doc_type: DocType,
    lang: Lang,
    currency: &'static str,
    vat_rate: i64,
    prefix: &'static str,
) -> Supplier {
    Supplier {
        id,
        name,
        address,
        vat_id,
        doc_type,
        lang,
        currency,
        vat_rate,
        prefix,
    }
}

use DocType::{DeliveryNote as Dn, Invoice as Inv};
use Lang::{En, It};

const SUPPLIERS: [Supplier; 20] = [
    sup(
        "ROSSI_FORNITURE",
        "Rossi Forniture S.r.l.",
        "Via Roma 12, 20121 Milano",
        "IT01234567890",
        Inv,
        It,
        "EUR",
        2200,
        "RF",
    ),
    sup(
        "BIANCHI_METALLI",
        "Bianchi Metalli S.p.A.",
        "Corso Francia 88, 10138 Torino",
        "IT02345678901",
        Inv,
        It,
        "EUR",
        2200,
        "BM",
    ),
    sup(
        "VERDI_ELETTRONICA",
        "Verdi Elettronica S.n.c.",
        "Viale Europa 5, 40127 Bologna",
        "IT03456789012",
        Inv,
        It,
        "EUR",
        2200,
        "VE",
    ),
    sup(
        "NORDLAB_GMBH",
        "Nordlab GmbH",
        "Hafenstrasse 21, 20457 Hamburg",
        "DE123456789",
        Inv,
        En,
        "EUR",
        1900,
        "NL",
    ),
    sup(
        "ALPINE_TOOLS_AG",
        "Alpine Tools AG",
        "Bahnhofplatz 3, 6003 Luzern",
        "CHE123456789",
        Inv,
        En,
        "CHF",
        810,
        "AT",
    ),
    sup(
        "LOMBARDA_CARTA",
        "Cartiera Lombarda S.r.l.",
        "Via dei Mulini 4, 24121 Bergamo",
        "IT04567890123",
        Inv,
        It,
        "EUR",
        1000,
        "CL",
    ),
    sup(
        "TECNOFER_SPA",
        "Tecnofer S.p.A.",
        "Via Emilia Ovest 140, 41123 Modena",
        "IT05678901234",
        Inv,
        En,
        "EUR",
        2200,
        "TF",
    ),
    sup(
        "GALLO_TRASPORTI",
        "Gallo Trasporti S.r.l.",
        "Via Appia Nuova 301, 00179 Roma",
        "IT06789012345",
        Inv,
        It,
        "EUR",
        2200,
        "GT",
    ),
    sup(
        "BRIXIA_PLAST",
        "Brixia Plast S.r.l.",
        "Via Orzinuovi 77, 25125 Brescia",
        "IT07890123456",
        Inv,
        It,
        "EUR",
        2200,
        "BP",
    ),
    sup(
        "ORION_SOFTWARE",
        "Orion Software S.r.l.",
        "Piazza Castello 9, 50122 Firenze",
        "IT08901234567",
        Inv,
        En,
        "EUR",
        2200,
        "OS",
    ),
    sup(
        "MARINO_ALIMENTARI",
        "Marino Alimentari S.r.l.",
        "Via Caracciolo 15, 80122 Napoli",
        "IT09012345678",
        Inv,
        It,
        "EUR",
        1000,
        "MA",
    ),
    sup(
        "FERRO_UTENSILI",
        "Ferro Utensili S.a.s.",
        "Via Nazionale 210, 35127 Padova",
        "IT10123456789",
        Inv,
        It,
        "EUR",
        2200,
        "FU",
    ),
    sup(
        "ADRIA_CHIMICA",
        "Adria Chimica S.p.A.",
        "Riva del Mandracchio 2, 34121 Trieste",
        "IT11234567890",
        Inv,
        It,
        "EUR",
        2200,
        "AC",
    ),
    sup(
        "THAMES_SUPPLY_LTD",
        "Thames Supply Ltd",
        "14 Wharf Road, London N1 7GR",
        "GB123456789",
        Inv,
        En,
        "GBP",
        2000,
        "TS",
    ),
    sup(
        "COSTA_LOGISTICA",
        "Costa Logistica S.r.l.",
        "Via del Porto 33, 16126 Genova",
        "IT12345678901",
        Dn,
        It,
        "EUR",
        2200,
        "CO",
    ),
    sup(
        "PIAVE_LEGNAMI",
        "Legnami del Piave S.r.l.",
        "Via Feltrina 58, 31100 Treviso",
        "IT13456789012",
        Dn,
        It,
        "EUR",
        2200,
        "PL",
    ),
    sup(
        "DOLOMITI_IMBALLI",
        "Imballi Dolomiti S.r.l.",
        "Via Brennero 101, 38121 Trento",
        "IT14567890123",
        Dn,
        It,
        "EUR",
        2200,
        "DI",
    ),
    sup(
        "RHEIN_PARTS_GMBH",
        "Rhein Parts GmbH",
        "Industriestrasse 8, 50735 Koeln",
        "DE234567890",
        Dn,
        En,
        "EUR",
        1900,
        "RP",
    ),
    sup(
        "SARDA_TESSUTI",
        "Tessuti Sardi S.r.l.",
        "Viale Trieste 45, 09123 Cagliari",
        "IT15678901234",
        Dn,
        It,
        "EUR",
        2200,
        "ST",
    ),
    sup(
        "ETNA_CERAMICHE",
        "Ceramiche Etna S.r.l.",
        "Via Etnea 400, 95128 Catania",
        "IT16789012345",
        Dn,
        It,
        "EUR",
        2200,
        "EC",
    ),
];

const PRODUCTS: [&str; 16] = [
    "Viti M6 zincate",
    "Cavo rame 2.5 mm",
    "Guanti nitrile taglia L",
    "Pallet legno 120x80",
    "Nastro adesivo 50 mm",
    "Toner laser nero",
    "Carta A4 80 g",
    "Olio idraulico 5 l",
    "Bulloni M10 inox",
    "Sensore di prossimita",
    "Filtro aria industriale",
    "Cartone doppia onda",
    "Lampada LED 18 W",
    "Tubo PVC 40 mm",
    "Vernice epossidica grigia",
    "Cuscinetto a sfere 6204",
];

const LEGAL_WORDS: &str = "Merce viaggiante a rischio e pericolo del committente salvo diverso accordo scritto tra le parti \
    I pagamenti effettuati oltre il termine concordato comportano interessi di mora nella misura prevista dalla legge \
    Per ogni controversia il foro competente in via esclusiva e quello della sede legale del fornitore \
    Le contestazioni sulla merce ricevuta devono pervenire entro otto giorni dal ricevimento";

#[derive(Clone, Debug)]
struct Item {
    description: String,
    quantity: i64,
    price_minor: i64,
}

impl Item {
    fn total_minor(&self) -> i64 {
        self.quantity * self.price_minor
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Flagged,
    TwoColumn,
    TokenTarget,
    Plain,
    BatchMember,
}

fn role_of(category: usize, k: usize) -> Role {
    match k {
        0 if category < FLAGGED_CATEGORIES => Role::Flagged,
        1 if category < 10 => Role::TwoColumn,
        2 => Role::TokenTarget,
        4 if category < 10 => Role::BatchMember,
        _ => Role::Plain,
    }
}

/// Error answers for invoice categories 0-4, low-confidence answers for the
/// other flagged documents.
fn is_error_case(category: usize) -> bool {
    category < 5
}

struct LogicalDoc {
    doc_id: String,
    supplier: &'static Supplier,
    number: String,
    date: NaiveDate,
    due: Option<NaiveDate>,
    order_ref: String,
    items: Vec<Item>,
    pages: usize,
    two_column: bool,
    paginate: bool,
    legal_words: usize,
}

fn money(minor: i64, lang: Lang) -> String {
    let (int, frac) = (minor / 100, minor % 100);
    let digits = int.to_string();
    let mut grouped = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push(if lang == It { '.' } else { ',' });
        }
        grouped.push(c);
    }
    match lang {
        It => format!("{grouped},{frac:02}"),
        En => format!("{grouped}.{frac:02}"),
    }
}

fn percent(hundredths: i64, lang: Lang) -> String {
    let whole = hundredths / 100;
    let frac = hundredths % 100;
    if frac == 0 {
        format!("{whole}%")
    } else {
        let sep = if lang == It { ',' } else { '.' };
        format!(
            "{whole}{sep}{}%",
            format!("{frac:02}").trim_end_matches('0')
        )
    }
}

fn date(d: NaiveDate, lang: Lang) -> String {
    match lang {
        It => d.format("%d/%m/%Y").to_string(),
        En => d.format("%Y-%m-%d").to_string(),
    }
}

impl LogicalDoc {
    fn lang(&self) -> Lang {
        self.supplier.lang
    }

    fn is_invoice(&self) -> bool {
        self.supplier.doc_type == DocType::Invoice
    }

    fn subtotal(&self) -> i64 {
        self.items.iter().map(Item::total_minor).sum()
    }

    fn tax(&self) -> i64 {
        (self.subtotal() * self.supplier.vat_rate + 5000) / 10_000
    }

    fn total_quantity(&self) -> i64 {
        self.items.iter().map(|i| i.quantity).sum()
    }

    fn line_items_json(&self) -> String {
        let lang = self.lang();
        let rows: Vec<Value> = self
            .items
            .iter()
            .map(|i| {
                if self.is_invoice() {
                    json!({
                        "description": i.description,
                        "quantity": i.quantity.to_string(),
                        "unit_price": money(i.price_minor, lang),
                        "total": money(i.total_minor(), lang),
                    })
                } else {
                    json!({ "description": i.description, "quantity": i.quantity.to_string() })
                }
            })
            .collect();
        Value::Array(rows).to_string()
    }

    /// Field values exactly as printed.
    fn printed_fields(&self) -> BTreeMap<String, Option<String>> {
        let lang = self.lang();
        let s = |v: String| Some(v);
        let mut f = BTreeMap::new();
        if self.is_invoice() {
            f.insert("invoice_number".into(), s(self.number.clone()));
            f.insert("invoice_date".into(), s(date(self.date, lang)));
            f.insert("due_date".into(), self.due.map(|d| date(d, lang)));
            f.insert("supplier_vat_id".into(), s(self.supplier.vat_id.into()));
            f.insert("currency".into(), s(self.supplier.currency.into()));
            f.insert("vat_rate".into(), s(percent(self.supplier.vat_rate, lang)));
            f.insert("subtotal".into(), s(money(self.subtotal(), lang)));
            f.insert("tax_amount".into(), s(money(self.tax(), lang)));
            f.insert(
                "total_amount".into(),
                s(money(self.subtotal() + self.tax(), lang)),
            );
        } else {
            f.insert("delivery_number".into(), s(self.number.clone()));
            f.insert("delivery_date".into(), s(date(self.date, lang)));
            f.insert("supplier_vat_id".into(), s(self.supplier.vat_id.into()));
            f.insert(
                "total_quantity".into(),
                s(self.total_quantity().to_string()),
            );
        }
        f.insert("line_items".into(), s(self.line_items_json()));
        f
    }

    fn labels(&self) -> Labels {
        match (self.lang(), self.is_invoice()) {
            (It, true) => Labels {
                title: "FATTURA",
                number: "Numero fattura",
                date: "Data fattura",
                due: "Scadenza",
                vat_id: "Partita IVA",
                currency: "Valuta",
                vat_rate: "Aliquota IVA",
                subtotal: "Imponibile",
                tax: "Importo IVA",
                total: "Totale documento",
                quantity: "Colli totali",
                order_ref: "Riferimento ordine",
                continued: "Segue elenco articoli",
                columns: &["Descrizione", "Quantità", "Prezzo unitario", "Importo"],
            },
            (En, true) => Labels {
                title: "INVOICE",
                number: "Invoice number",
                date: "Invoice date",
                due: "Due date",
                vat_id: "VAT number",
                currency: "Currency",
                vat_rate: "VAT rate",
                subtotal: "Subtotal",
                tax: "VAT amount",
                total: "Total due",
                quantity: "Total quantity",
                order_ref: "Order reference",
                continued: "Items continued",
                columns: &["Description", "Qty", "Unit price", "Amount"],
            },
            (It, false) => Labels {
                title: "DOCUMENTO DI TRASPORTO",
                number: "Numero DDT",
                date: "Data DDT",
                vat_id: "Partita IVA",
                quantity: "Colli totali",
                order_ref: "Riferimento ordine",
                continued: "Segue elenco articoli",
                columns: &["Descrizione", "Quantità"],
                ..Labels::EMPTY
            },
            (En, false) => Labels {
                title: "DELIVERY NOTE",
                number: "Delivery note number",
                date: "Delivery date",
                vat_id: "VAT number",
                quantity: "Total quantity",
                order_ref: "Order reference",
                continued: "Items continued",
                columns: &["Item", "Quantity"],
                ..Labels::EMPTY
            },
        }
    }

    fn render(&self) -> Vec<Page> {
        let lang = self.lang();
        let l = self.labels();
        let full =
            |text: String, y: f64, font: f64| TextBlock::new(text, 0.06, y, 0.94, y + 0.025, font);
        let per_page = self.items.len().div_ceil(self.pages);
        let legal: String = LEGAL_WORDS
            .split_whitespace()
            .cycle()
            .take(self.legal_words)
            .collect::<Vec<_>>()
            .join(" ");
        let mut pages = Vec::new();
        for (p, chunk) in self.items.chunks(per_page.max(1)).enumerate() {
            let mut page = Page::new(p);
            page.blocks.push(TextBlock::new(
                self.supplier.name,
                0.06,
                0.03,
                0.94,
                0.06,
                16.0,
            ));
            page.blocks
                .push(full(self.supplier.address.to_string(), 0.065, 9.0));
            page.blocks.push(full(
                format!("{}: {}", l.vat_id, self.supplier.vat_id),
                0.09,
                9.0,
            ));
            let table_y = if p == 0 {
                page.blocks
                    .push(TextBlock::new(l.title, 0.06, 0.15, 0.94, 0.19, 18.0));
                let mut y = 0.22;
                if self.two_column {
                    let left =
                        |t: String, y: f64| TextBlock::new(t, 0.06, y, 0.46, y + 0.025, 10.0);
                    let right =
                        |t: String, y: f64| TextBlock::new(t, 0.54, y, 0.94, y + 0.025, 10.0);
                    page.blocks.push(left(format!("{}:", l.number), y));
                    page.blocks.push(right(format!("{}:", l.order_ref), y));
                    page.blocks.push(left(self.number.clone(), y + 0.035));
                    page.blocks.push(right(self.order_ref.clone(), y + 0.035));
                    y += 0.07;
                } else {
                    page.blocks
                        .push(full(format!("{}: {}", l.number, self.number), y, 10.0));
                    y += 0.035;
                }
                let mut lines = vec![format!("{}: {}", l.date, date(self.date, lang))];
                if self.is_invoice() {
                    if let Some(d) = self.due {
                        lines.push(format!("{}: {}", l.due, date(d, lang)));
                    }
                    lines.push(format!("{}: {}", l.currency, self.supplier.currency));
                    lines.push(format!(
                        "{}: {}",
                        l.vat_rate,
                        percent(self.supplier.vat_rate, lang)
                    ));
                }
                for line in lines {
                    page.blocks.push(full(line, y, 10.0));
                    y += 0.035;
                }
                0.45
            } else {
                page.blocks.push(full(l.continued.to_string(), 0.15, 10.0));
                0.2
            };
            let mut rows = vec![l.columns.iter().map(|c| c.to_string()).collect::<Vec<_>>()];
            for it in chunk {
                let mut row = vec![it.description.clone(), it.quantity.to_string()];
                if self.is_invoice() {
                    row.push(money(it.price_minor, lang));
                    row.push(money(it.total_minor(), lang));
                }
                rows.push(row);
            }
            page.tables.push(TableGrid::from_rows(&rows, table_y));
            if p + 1 == self.pages {
                let mut y = 0.72;
                let totals = if self.is_invoice() {
                    vec![
                        format!("{}: {}", l.subtotal, money(self.subtotal(), lang)),
                        format!("{}: {}", l.tax, money(self.tax(), lang)),
                        format!("{}: {}", l.total, money(self.subtotal() + self.tax(), lang)),
                    ]
                } else {
                    vec![format!("{}: {}", l.quantity, self.total_quantity())]
                };
                for t in totals {
                    page.blocks.push(full(t, y, 10.0));
                    y += 0.035;
                }
            }
            if !legal.is_empty() {
                page.blocks
                    .push(TextBlock::new(legal.clone(), 0.06, 0.9, 0.94, 0.94, 7.0));
            }
            if self.paginate {
                page.footer_text = Some(match lang {
                    It => format!("Pagina {} di {}", p + 1, self.pages),
                    En => format!("Page {} of {}", p + 1, self.pages),
                });
            }
            pages.push(page);
        }
        pages
    }

    /// Footer length that brings the parser's token reduction to the target.
    fn tune_legal_words(&mut self, target: f64) {
        self.legal_words = 0;
        let pages = self.render();
        let raw = count_tokens(&naive_text(&pages)) as f64;
        let parsed = render_markdown(&self.doc_id, &pages, &ParserConfig::default())
            .parsed_token_count as f64;
        let n = self.pages as f64;
        let denom = (n - 1.0) - target * n;
        if denom <= 0.0 {
            return;
        }
        let words = (target * raw - raw + parsed) / denom;
        self.legal_words = words.round().max(0.0) as usize;
    }

    fn category(&self) -> Category {
        Category::new(self.supplier.id, self.supplier.doc_type)
    }

    fn truth(&self) -> GroundTruth {
        GroundTruth {
            doc_id: self.doc_id.clone(),
            category: self.category(),
            fields: self.printed_fields(),
        }
    }
}

struct Labels {
    title: &'static str,
    number: &'static str,
    date: &'static str,
    due: &'static str,
    vat_id: &'static str,
    currency: &'static str,
    vat_rate: &'static str,
    subtotal: &'static str,
    tax: &'static str,
    total: &'static str,
    quantity: &'static str,
    order_ref: &'static str,
    continued: &'static str,
    columns: &'static [&'static str],
}

impl Labels {
    const EMPTY: Labels = Labels {
        title: "",
        number: "",
        date: "",
        due: "",
        vat_id: "",
        currency: "",
        vat_rate: "",
        subtotal: "",
        tax: "",
        total: "",
        quantity: "",
        order_ref: "",
        continued: "",
        columns: &[],
    };
}

fn answer(fields: &BTreeMap<String, Option<String>>, low_field: Option<&str>) -> Value {
    let obj: serde_json::Map<String, Value> = fields
        .iter()
        .map(|(k, v)| {
            let conf = if Some(k.as_str()) == low_field {
                LOW_CONFIDENCE
            } else {
                SCRIPTED_CONFIDENCE
            };
            let entry = match v {
                Some(raw) => json!({"value": raw, "confidence": conf}),
                None => json!({"value": null, "confidence": 0.0}),
            };
            (k.clone(), entry)
        })
        .collect();
    Value::Object(obj)
}

fn scripted(doc: &LogicalDoc, category: usize) -> Sidecar {
    let fields = doc.printed_fields();
    let mut keys = BTreeMap::new();
    if is_error_case(category) {
        let mut wrong = fields.clone();
        let off_by_one = money(doc.subtotal() + doc.tax() + 100, doc.lang());
        wrong.insert("total_amount".into(), Some(off_by_one));
        keys.insert("v1".to_string(), answer(&wrong, None));
    } else {
        let number = if doc.is_invoice() {
            "invoice_number"
        } else {
            "delivery_number"
        };
        keys.insert("*".to_string(), answer(&fields, Some(number)));
    }
    Sidecar {
        doc_id: doc.doc_id.clone(),
        backends: BTreeMap::from([(CORPUS_BACKEND.to_string(), keys)]),
    }
}

fn received(i: usize) -> Option<DateTime<Utc>> {
    let start = DateTime::parse_from_rfc3339("2026-01-31T09:00:00Z")
        .ok()?
        .with_timezone(&Utc);
    Some(start + Duration::minutes(i as i64))
}

/// Deterministic corpus for `seed`.
pub fn generate(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs: Vec<(usize, Role, LogicalDoc)> = Vec::new();
    for (c, supplier) in SUPPLIERS.iter().enumerate() {
        for k in 0..DOCS_PER_CATEGORY {
            let role = role_of(c, k);
            let seq = 100 + 17 * c + 3 * k;
            let date = NaiveDate::from_ymd_opt(2026, 1, 1).expect("valid date")
                + Duration::days((3 * c + 5 * k) as i64 % 28);
            let number = match supplier.doc_type {
                DocType::Invoice => format!("{}-2026-{seq:04}", supplier.prefix),
                _ => format!("{}{seq:05}", supplier.prefix),
            };
            let pages = match role {
                Role::TokenTarget => 3,
                Role::BatchMember if c % 2 == 0 => 2,
                _ => 1,
            };
            let items = (0..pages * 3)
                .map(|_| Item {
                    description: PRODUCTS.choose(&mut rng).expect("products").to_string(),
                    quantity: rng.gen_range(1..=12),
                    price_minor: rng.gen_range(150..=25_000),
                })
                .collect();
            let mut doc = LogicalDoc {
                doc_id: match role {
                    Role::BatchMember => format!("batch-{}-u{}", c / 2 + 1, c % 2 + 1),
                    _ => format!("c{:02}-{}", c + 1, k + 1),
                },
                supplier,
                number,
                date,
                due: (supplier.doc_type == DocType::Invoice && k % 2 == 0)
                    .then(|| date + Duration::days(30)),
                order_ref: format!("PO-{}", 4000 + seq),
                items,
                pages,
                two_column: role == Role::TwoColumn,
                paginate: pages > 1 || role == Role::BatchMember,
                legal_words: 0,
            };
            if role == Role::TokenTarget {
                doc.tune_legal_words(TOKEN_TARGET);
            }
            docs.push((c, role, doc));
        }
    }

    let mut corpus = Corpus::default();
    let mut batches: BTreeMap<String, Vec<&LogicalDoc>> = BTreeMap::new();
    for (c, role, doc) in &docs {
        corpus.truths.push(doc.truth());
        match role {
            Role::BatchMember => {
                batches
                    .entry(format!("batch-{}", c / 2 + 1))
                    .or_default()
                    .push(doc);
                continue;
            }
            Role::Flagged => {
                corpus.sidecars.push(scripted(doc, *c));
                corpus.manifest.flagged.push(doc.doc_id.clone());
            }
            Role::TwoColumn => corpus.manifest.two_column.push(doc.doc_id.clone()),
            Role::TokenTarget => corpus.manifest.token_target.push(doc.doc_id.clone()),
            Role::Plain => {}
        }
        corpus.bundles.push(DocBundle {
            doc_id: doc.doc_id.clone(),
            source_name: format!("{}.pdf", doc.doc_id),
            pages: doc.render(),
            received_at: received(corpus.bundles.len()),
        });
        corpus.manifest.bundles.push(ManifestBundle {
            bundle_id: doc.doc_id.clone(),
            units: vec![ManifestUnit {
                doc_id: doc.doc_id.clone(),
                page_range: (0, doc.pages - 1),
            }],
        });
    }
    for (bundle_id, members) in batches {
        let mut pages = Vec::new();
        let mut units = Vec::new();
        for doc in members {
            let start = pages.len();
            for mut p in doc.render() {
                p.index = pages.len();
                pages.push(p);
            }
            units.push(ManifestUnit {
                doc_id: doc.doc_id.clone(),
                page_range: (start, pages.len() - 1),
            });
        }
        corpus.bundles.push(DocBundle {
            doc_id: bundle_id.clone(),
            source_name: format!("{bundle_id}.pdf"),
            pages,
            received_at: received(corpus.bundles.len()),
        });
        corpus
            .manifest
            .bundles
            .push(ManifestBundle { bundle_id, units });
    }
    corpus
}
