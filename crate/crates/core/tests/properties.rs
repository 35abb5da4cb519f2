mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, OnceLock};

use chrono::NaiveDate;
use proptest::prelude::*;
use proptest::sample::subsequence;
use proptest::test_runner::FileFailurePersistence;

use madp::classify::{classify, crop_header, header_text, CategorySignature};
use madp::config::PipelineConfig;
use madp::eval::{categories_ok, per_category, Corpus};
use madp::events::{EventLog, EventPayload};
use madp::extract::consensus::noisy_or;
use madp::extract::{assemble_prompt, PromptVersion, VersionId};
use madp::extract::{consensus, Agreement};
use madp::model::{
    Category, DocBundle, DocType, FieldKind, FieldValue, Page, Route, Schema, TableGrid, TextBlock,
};
use madp::normalize::{format_scaled, normalize, parse_date, parse_money, Normalized};
use madp::parse::{reading_order, render_markdown, ParserConfig};
use madp::pftfi::{
    apply_feedback, classify_error, CorrectionFeedback, FeedbackUpdate, PromptStore,
};
use madp::split::{detect_boundaries, looks_like_document_head, parse_pagination};
use madp::state::PipelineState;
use madp::store::{Store, TaskStatus};
use madp::sustain::{ai_footprint, human_footprint, scenario_report, ScenarioParams};
use madp::validate::{elevate_confidence, route, run_checks, CheckStatus};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: Some(Box::new(FileFailurePersistence::Off)),
        ..ProptestConfig::default()
    }
}

fn fixture() -> &'static (Corpus, Vec<CategorySignature>) {
    static F: OnceLock<(Corpus, Vec<CategorySignature>)> = OnceLock::new();
    F.get_or_init(|| {
        let corpus = common::corpus();
        let sigs = corpus.train(&PipelineConfig::default()).unwrap();
        (corpus, sigs)
    })
}

const WORDS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "Fattura", "totale", "IVA", "42", "EUR", "riga",
];

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(WORDS).prop_map(str::to_string)
}

fn block() -> impl Strategy<Value = TextBlock> {
    (
        prop::collection::vec(word(), 1..4),
        0.0..0.8f64,
        0.02..0.2f64,
        0.0..0.95f64,
        prop::sample::select(vec![9.0, 10.0, 10.0, 12.0, 16.0]),
    )
        .prop_map(|(w, x0, width, y0, font)| {
            TextBlock::new(w.join(" "), x0, y0, x0 + width, y0 + 0.02, font)
        })
}

fn table() -> impl Strategy<Value = TableGrid> {
    (1..4usize, 1..5usize).prop_flat_map(|(rows, cols)| {
        (
            prop::collection::vec(prop::option::weighted(0.8, word()), rows * cols),
            0.0..1.0f64,
        )
            .prop_map(move |(cells, y0)| TableGrid {
                rows,
                cols,
                cells: cells.into_iter().map(Option::unwrap_or_default).collect(),
                y0,
            })
    })
}

fn page() -> impl Strategy<Value = Page> {
    (
        prop::collection::vec(block(), 0..12),
        prop::collection::vec(table(), 0..3),
    )
        .prop_map(|(blocks, tables)| Page {
            index: 0,
            blocks,
            tables,
            footer_text: None,
        })
}

fn value(field: &str, kind: FieldKind, raw: &str, confidence: f64) -> FieldValue {
    FieldValue {
        field: field.into(),
        raw: raw.into(),
        normalized: normalize(kind, raw),
        confidence,
        backend_id: "b0".into(),
        prompt_version: "v1".into(),
    }
}

/// Invoice field values from minor-unit amounts, with per-field confidences.
fn invoice(
    subtotal: i64,
    rate_bp: i64,
    total_delta: i64,
    confs: &[f64],
    due_offset: i64,
) -> Vec<FieldValue> {
    let tax = subtotal * rate_bp / 10_000;
    let schema = Schema::invoice();
    let issued = NaiveDate::from_ymd_opt(2026, 3, 1).unwrap();
    let due = issued + chrono::Duration::days(due_offset);
    let raws = [
        ("invoice_number", "INV-7".to_string()),
        ("invoice_date", issued.to_string()),
        ("due_date", due.to_string()),
        ("supplier_vat_id", "IT01234567890".to_string()),
        ("currency", "EUR".to_string()),
        ("vat_rate", format!("{}%", rate_bp / 100)),
        ("subtotal", format_scaled(subtotal, 2)),
        ("tax_amount", format_scaled(tax, 2)),
        (
            "total_amount",
            format_scaled(subtotal + tax + total_delta, 2),
        ),
    ];
    raws.iter()
        .zip(confs.iter().cycle())
        .map(|((f, r), c)| value(f, schema.get(f).unwrap().kind, r, *c))
        .collect()
}

fn rate() -> impl Strategy<Value = i64> {
    prop::sample::select(vec![0i64, 400, 500, 1000, 2200, 700, 1900])
}

proptest! {
    #![proptest_config(cases(256))]

    // ------------------------------------------------------------ classifier

    #[test]
    fn crop_header_is_monotone(p in page(), a in 0.001..=1.0f64, b in 0.001..=1.0f64) {
        let (f1, f2) = if a <= b { (a, b) } else { (b, a) };
        let small = crop_header(&p, f1);
        let large = crop_header(&p, f2);
        let expected: Vec<TextBlock> = p.blocks.iter().filter(|b| b.y0 < f1).cloned().collect();
        prop_assert_eq!(&small, &expected);
        // Subsequence of the larger crop.
        let mut it = large.iter();
        for blk in &small {
            prop_assert!(it.any(|x| x == blk));
        }
    }

    #[test]
    fn duplicating_header_blocks_keeps_the_category(idx in 0usize..100, copies in 2usize..5) {
        let (corpus, sigs) = fixture();
        let config = PipelineConfig::default();
        let truth = &corpus.truths[idx % corpus.truths.len()];
        let first = corpus.unit_bundle(&truth.doc_id).unwrap().pages[0].clone();
        let mut dup = first.clone();
        dup.blocks = first
            .blocks
            .iter()
            .flat_map(|b| std::iter::repeat_n(b.clone(), copies))
            .collect();
        let before = classify(&first, sigs, &config);
        let after = classify(&dup, sigs, &config);
        prop_assert_eq!((before.supplier_id, before.doc_type), (after.supplier_id, after.doc_type));
    }

    // ------------------------------------------------------------ splitter

    #[test]
    fn split_recovers_concatenated_documents(picks in prop::collection::vec(0usize..100, 1..5)) {
        let (corpus, sigs) = fixture();
        let config = PipelineConfig::default();
        let docs: Vec<DocBundle> = picks
            .iter()
            .map(|i| corpus.unit_bundle(&corpus.truths[i % corpus.truths.len()].doc_id).unwrap())
            .collect();
        let mut pages = Vec::new();
        let mut heads = Vec::new();
        for d in &docs {
            heads.push(pages.len());
            pages.extend(d.pages.iter().cloned());
        }
        for (i, p) in pages.iter_mut().enumerate() {
            p.index = i;
        }
        let bundle = DocBundle {
            doc_id: "mix".into(),
            source_name: "mix.pdf".into(),
            pages,
            received_at: None,
        };
        let labels: Vec<_> = bundle.pages.iter().map(|p| classify(p, sigs, &config)).collect();
        let units = detect_boundaries(&bundle, &labels, &config).unwrap();

        // Partition: contiguous, ordered, covering.
        let mut next = 0;
        for u in &units {
            prop_assert_eq!(u.page_range.0, next);
            prop_assert!(u.page_range.1 >= u.page_range.0);
            next = u.page_range.1 + 1;
        }
        prop_assert_eq!(next, bundle.pages.len());

        let signalled = heads.iter().skip(1).all(|&h| {
            let p = &bundle.pages[h];
            let reset = p.footer_text.as_deref().and_then(parse_pagination).is_some_and(|(c, _)| c == 1);
            let head = labels[h].confidence >= config.split_confidence
                && labels[h].doc_type != DocType::Other
                && looks_like_document_head(&header_text(p, config.header_crop_fraction));
            reset || head
        });
        if signalled {
            let starts: Vec<usize> = units.iter().map(|u| u.page_range.0).collect();
            prop_assert_eq!(starts, heads);
        }
    }

    // ------------------------------------------------------------ parser

    #[test]
    fn reading_order_ignores_input_order(
        (blocks, shuffled) in prop::collection::vec(block(), 0..15)
            .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()))
    ) {
        let config = ParserConfig::default();
        prop_assert_eq!(reading_order(&blocks, &config), reading_order(&shuffled, &config));
        let page = |b: Vec<TextBlock>| Page { index: 0, blocks: b, tables: Vec::new(), footer_text: None };
        prop_assert_eq!(
            render_markdown("u", &[page(blocks.clone())], &config).markdown,
            render_markdown("u", &[page(shuffled)], &config).markdown
        );
    }

    #[test]
    fn tables_survive_and_tokens_do_not_inflate(pages in prop::collection::vec(page(), 1..4)) {
        let config = ParserConfig::default();
        let parsed = render_markdown("u", &pages, &config);
        for t in pages.iter().flat_map(|p| &p.tables) {
            for cell in t.cells.iter().filter(|c| !c.trim().is_empty()) {
                prop_assert!(parsed.markdown.contains(cell.as_str()), "cell {} lost", cell);
            }
        }
        let rows: usize = pages.iter().flat_map(|p| &p.tables).map(|t| t.rows).sum();
        prop_assert!(parsed.parsed_token_count <= parsed.raw_token_count + 3 * rows);
    }

    // ------------------------------------------------------------ consensus

    #[test]
    fn unanimous_confidence_is_bounded(confs in prop::collection::vec(0.0..=1.0f64, 2..6)) {
        let results: Vec<(String, Vec<FieldValue>)> = confs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut v = value("invoice_number", FieldKind::Text, "INV-9", *c);
                v.backend_id = format!("b{i}");
                (format!("b{i}"), vec![v])
            })
            .collect();
        let rec = consensus(&results, &Schema::invoice()).unwrap().remove(0);
        let top = confs.iter().copied().fold(0.0, f64::max);
        prop_assert_eq!(rec.agreement, Agreement::Unanimous);
        prop_assert!(rec.chosen.confidence >= top);
        prop_assert!(rec.chosen.confidence <= 0.99f64.max(top));
        if top <= 0.99 {
            prop_assert!(rec.chosen.confidence <= 0.99);
        }
        prop_assert!((noisy_or(&confs) - (1.0 - confs.iter().map(|c| 1.0 - c).product::<f64>())).abs() < 1e-12);
    }

    // ------------------------------------------------------------ validator

    #[test]
    fn elevation_never_lowers_confidence(
        subtotal in 0i64..5_000_000,
        rate_bp in rate(),
        delta in -50i64..50,
        confs in prop::collection::vec(0.0..=1.0f64, 9),
        due in -30i64..60,
    ) {
        let values = invoice(subtotal, rate_bp, delta, &confs, due);
        let outcomes = run_checks(&values, &Schema::invoice(), &PipelineConfig::default());
        let adjusted = elevate_confidence(&values, &outcomes);
        prop_assert_eq!(adjusted.len(), values.len());
        for (before, after) in values.iter().zip(&adjusted) {
            prop_assert_eq!(&before.field, &after.field);
            prop_assert!(after.confidence >= before.confidence);
        }
    }

    #[test]
    fn perturbed_totals_are_caught(
        subtotal in 0i64..5_000_000,
        rate_bp in rate(),
        magnitude in 3i64..1_000_000,
        negative in any::<bool>(),
    ) {
        let delta = if negative { -magnitude } else { magnitude };
        let values = invoice(subtotal, rate_bp, delta, &[0.9], 10);
        let outcomes = run_checks(&values, &Schema::invoice(), &PipelineConfig::default());
        let total = outcomes.iter().find(|o| o.check_id == "arithmetic.total").unwrap();
        prop_assert_eq!(total.status, CheckStatus::Fail);
    }

    #[test]
    fn routing_is_total(
        subtotal in 0i64..5_000_000,
        rate_bp in rate(),
        delta in -5i64..5,
        confs in prop::collection::vec(0.0..=1.0f64, 9),
        flagged in prop::option::of(Just("total_amount".to_string())),
    ) {
        let schema = Schema::invoice();
        let config = PipelineConfig::default();
        let values = invoice(subtotal, rate_bp, delta, &confs, 10);
        let outcomes = run_checks(&values, &schema, &config);
        let adjusted = elevate_confidence(&values, &outcomes);
        let flagged: Vec<String> = flagged.into_iter().collect();
        let category = Category::new("SUP", DocType::Invoice);
        let d = route(&adjusted, &flagged, &outcomes, &schema, &category, &config);
        match d.route {
            Route::AutoAccept => prop_assert!(d.reasons.is_empty()),
            Route::HumanReview => prop_assert!(!d.reasons.is_empty()),
            Route::NonAiFallback => prop_assert!(false, "validator never falls back"),
        }
        let failing = outcomes.iter().any(|o| o.status == CheckStatus::Fail);
        if failing || !flagged.is_empty() {
            prop_assert_eq!(d.route, Route::HumanReview);
        }
    }

    // ------------------------------------------------------------ normalization

    #[test]
    fn money_round_trips(minor in -1_000_000_000i64..1_000_000_000) {
        let m = parse_money(&format_scaled(minor, 2)).unwrap();
        prop_assert_eq!(m.minor, minor);
        match normalize(FieldKind::Money, &format!("EUR {}", format_scaled(minor, 2))) {
            Normalized::Money(m) => prop_assert_eq!(m.minor, minor),
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn dates_round_trip(days in 0i64..20_000) {
        let d = NaiveDate::from_ymd_opt(1990, 1, 1).unwrap() + chrono::Duration::days(days);
        prop_assert_eq!(parse_date(&d.format("%Y-%m-%d").to_string()), Some(d));
        prop_assert_eq!(parse_date(&d.format("%d/%m/%Y").to_string()), Some(d));
        prop_assert_eq!(normalize(FieldKind::Date, &d.format("%d.%m.%Y").to_string()), Normalized::Date(d));
    }

    // ------------------------------------------------------------ prompts

    #[test]
    fn lineages_stay_rooted_and_versions_immutable(values in prop::collection::vec("[A-Z]{2}-[0-9]{1,5}", 1..8)) {
        let category = Category::new("SUP", DocType::Invoice);
        let schema = Schema::invoice();
        let parsed = render_markdown("d", &[], &ParserConfig::default());
        let mut store = PromptStore::default();
        let mut rendered: Vec<(VersionId, String)> = vec![(
            VersionId::FIRST,
            assemble_prompt(&schema, &parsed, &store.head(&category), 3).unwrap().rendered_text,
        )];
        for (i, v) in values.iter().enumerate() {
            let fb = CorrectionFeedback {
                feedback_id: format!("fb-{i}"),
                doc_id: format!("d{i}"),
                field: "invoice_number".into(),
                original_value: "X".into(),
                corrected_value: v.clone(),
                doc_type: DocType::Invoice,
                supplier_id: "SUP".into(),
                reviewer_id: "r".into(),
                ts: chrono::DateTime::UNIX_EPOCH,
            };
            let pattern = classify_error(&fb, &schema);
            let head = store.head(&category);
            let update = apply_feedback(&fb, &pattern, &head, head.version_id, &ParserConfig::default(), "", &schema, 3).unwrap();
            let FeedbackUpdate::Prompt { version } = update else {
                prop_assert!(false, "text field produced a parser update");
                unreachable!()
            };
            store.commit(version.clone()).unwrap();
            rendered.push((version.version_id, assemble_prompt(&schema, &parsed, &version, 3).unwrap().rendered_text));
            // A stale head is refused.
            prop_assert!(apply_feedback(&fb, &pattern, &head, store.head_id(&category), &ParserConfig::default(), "", &schema, 3).is_err());
        }
        for (id, text) in &rendered {
            let v: PromptVersion = store.get(&category, *id).unwrap();
            prop_assert_eq!(&assemble_prompt(&schema, &parsed, &v, 3).unwrap().rendered_text, text);
        }
        let versions = store.versions(&category);
        let mut seen = BTreeSet::new();
        let mut cur = Some(store.head_id(&category));
        while let Some(id) = cur {
            prop_assert!(seen.insert(id), "cycle at {}", id);
            cur = store.get(&category, id).unwrap().parent_version;
        }
        prop_assert!(seen.contains(&VersionId::FIRST));
        prop_assert_eq!(seen.len(), versions.len());
    }

    // ------------------------------------------------------------ sustainability

    #[test]
    fn footprints_are_linear_and_additive(fte in 0.0..50.0f64, invoices in 0u64..1_000_000, frac in 0.0..=1.0f64) {
        let p = ScenarioParams {
            invoices_per_year: invoices,
            fte,
            ai_processed_fraction: frac,
            ..ScenarioParams::default()
        };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        let h1 = human_footprint(fte, &p).unwrap();
        let h2 = human_footprint(2.0 * fte, &p).unwrap();
        let a1 = ai_footprint(invoices as f64, &p);
        let a2 = ai_footprint(2.0 * invoices as f64, &p);
        for (x1, x2) in [(h1.co2_kg, h2.co2_kg), (h1.energy_kwh, h2.energy_kwh), (h1.water_l, h2.water_l),
                         (a1.co2_kg, a2.co2_kg), (a1.energy_kwh, a2.energy_kwh), (a1.water_l, a2.water_l)] {
            prop_assert!(close(2.0 * x1, x2));
        }
        let r = scenario_report(&p).unwrap();
        prop_assert_eq!(r.total.co2_kg, r.human.co2_kg + r.ai.co2_kg);
        prop_assert_eq!(r.total.energy_kwh, r.human.energy_kwh + r.ai.energy_kwh);
        prop_assert_eq!(r.total.water_l, r.human.water_l + r.ai.water_l);
    }

    // ------------------------------------------------------------ evaluation

    #[test]
    fn category_scores_bound_and_average(
        outcomes in prop::collection::vec(prop::collection::vec(any::<bool>(), 5), 1..20),
    ) {
        let results: Vec<(Category, bool)> = outcomes
            .iter()
            .enumerate()
            .flat_map(|(c, docs)| {
                let cat = Category::new(format!("S{c:02}"), DocType::Invoice);
                docs.iter().map(move |ok| (cat.clone(), *ok))
            })
            .collect();
        let n = outcomes.len() as f64;
        let score = categories_ok(&results).unwrap();
        let correct = results.iter().filter(|(_, ok)| *ok).count();
        let accuracy = correct as f64 / results.len() as f64;
        prop_assert!(score <= n + 1e-9);
        prop_assert_eq!((score - n).abs() < 1e-9, correct == results.len());
        let per: BTreeMap<String, f64> = per_category(&results);
        let mean = per.values().sum::<f64>() / per.len() as f64;
        prop_assert!((mean - accuracy).abs() < 1e-9);
    }
}

#[test]
fn signatures_classify_their_own_training_pages() {
    let (corpus, sigs) = fixture();
    let config = PipelineConfig::default();
    let mut hits = 0;
    for t in &corpus.truths {
        let page = &corpus.unit_bundle(&t.doc_id).unwrap().pages[0];
        let label = classify(page, sigs, &config);
        hits += usize::from(
            label.supplier_id == t.category.supplier_id && label.doc_type == t.category.doc_type,
        );
    }
    assert_eq!((hits, corpus.truths.len()), (100, 100));
}

#[test]
fn single_unit_bundles_stay_whole() {
    let (corpus, sigs) = fixture();
    let config = PipelineConfig::default();
    for t in &corpus.truths {
        let b = corpus.unit_bundle(&t.doc_id).unwrap();
        let labels: Vec<_> = b.pages.iter().map(|p| classify(p, sigs, &config)).collect();
        let units = detect_boundaries(&b, &labels, &config).unwrap();
        assert_eq!(units.len(), 1, "{}", t.doc_id);
        assert_eq!(units[0].page_range, (0, b.pages.len() - 1));
    }
}

// ---------------------------------------------------------------- engine

#[derive(Clone, Debug)]
enum Answer {
    Clean,
    LowNumber,
    WrongNumber,
}

#[derive(Clone, Debug)]
enum Action {
    Run,
    Correct(usize),
    Confirm(usize),
}

fn answer_kind() -> impl Strategy<Value = Answer> {
    prop_oneof![
        Just(Answer::Clean),
        Just(Answer::LowNumber),
        Just(Answer::WrongNumber)
    ]
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        1 => Just(Action::Run),
        3 => (0usize..64).prop_map(Action::Correct),
        1 => (0usize..64).prop_map(Action::Confirm),
    ]
}

proptest! {
    #![proptest_config(cases(48))]

    /// Random review sessions: the live store always equals a replay of the
    /// log, extractions always follow a parse, corrections follow their
    /// feedback, and inheritance leaves no flagged same-category document on
    /// an old prompt.
    #[test]
    fn review_sessions_replay_exactly(
        docs in subsequence((0..15usize).collect::<Vec<_>>(), 2..10),
        answers in prop::collection::vec(answer_kind(), 10),
        fixed in prop::collection::vec(any::<bool>(), 10),
        actions in prop::collection::vec(action(), 1..12),
    ) {
        let (corpus, _) = fixture();
        let pool: Vec<&str> = corpus
            .truths
            .iter()
            .filter(|t| t.fields.get("invoice_number").is_some_and(Option::is_some))
            .filter(|t| ["c01-", "c02-", "c03-"].iter().any(|p| t.doc_id.starts_with(p)))
            .map(|t| t.doc_id.as_str())
            .collect();
        let mut ids: Vec<String> = Vec::new();
        for i in &docs {
            let id = pool[i % pool.len()].to_string();
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let backend = common::scripted();
        for (k, id) in ids.iter().enumerate() {
            let t = common::truth(corpus, id);
            let number = t.fields["invoice_number"].clone().unwrap();
            let first = match answers[k] {
                Answer::Clean => common::answer(t, &[]),
                Answer::LowNumber => common::answer(t, &[("invoice_number", &number, 0.6)]),
                Answer::WrongNumber => common::answer(t, &[("invoice_number", "ZZ-0000", 0.6)]),
            };
            backend.script(id, "v1", first);
            if fixed[k] {
                backend.script(id, "*", common::answer(t, &[]));
            } else {
                backend.script(id, "*", common::answer(t, &[("invoice_number", &number, 0.6)]));
            }
        }

        let violations: Arc<Mutex<Vec<String>>> = Arc::default();
        let sink = violations.clone();
        let feedback_seen: Arc<Mutex<BTreeSet<String>>> = Arc::default();
        let fb = feedback_seen.clone();
        let mut engine = common::engine(corpus, backend, EventLog::in_memory()).with_observer(move |e, store| {
            match &e.payload {
                EventPayload::Extracted { .. } if store.doc(&e.doc_id).is_none_or(|d| d.parsed.is_none()) => {
                    sink.lock().unwrap().push(format!("{} extracted without markdown", e.doc_id));
                }
                EventPayload::FeedbackRecorded { feedback, .. } => {
                    fb.lock().unwrap().insert(feedback.feedback_id.clone());
                }
                EventPayload::Corrected { feedback_id, .. } if !fb.lock().unwrap().contains(feedback_id) => {
                    sink.lock().unwrap().push(format!("{} corrected before its feedback", e.doc_id));
                }
                _ => {}
            }
        });
        for id in &ids {
            engine.ingest(common::bundle(corpus, id)).unwrap();
        }
        engine.run_all(2).unwrap();
        for a in actions {
            let open: Vec<String> = engine
                .store()
                .queue(Some(TaskStatus::Pending))
                .into_iter()
                .map(|t| t.doc_id)
                .collect();
            match a {
                Action::Run => {
                    engine.run_all(2).unwrap();
                }
                Action::Correct(i) if !open.is_empty() => {
                    let id = open[i % open.len()].clone();
                    let truth = common::truth(corpus, &id).fields["invoice_number"].clone().unwrap();
                    let category = engine.store().doc(&id).unwrap().category();
                    if engine.correct(&id, "invoice_number", &truth, "rev").is_ok() {
                        let head = engine.store().prompts.head_id(&category).to_string();
                        for d in engine.store().docs() {
                            if d.doc_id != id
                                && d.category() == category
                                && d.state == PipelineState::InReview
                                && d.flagged_fields.iter().any(|f| f == "invoice_number")
                            {
                                let version = d
                                    .records
                                    .iter()
                                    .find(|r| r.field == "invoice_number")
                                    .map(|r| r.chosen.prompt_version.clone());
                                prop_assert_eq!(version.as_deref(), Some(head.as_str()), "{} left behind", d.doc_id);
                            }
                        }
                    }
                }
                Action::Confirm(i) if !open.is_empty() => {
                    let id = open[i % open.len()].clone();
                    engine.confirm(&id, "rev", Some(12.0)).unwrap();
                }
                _ => {}
            }
            let replayed = Store::replay(engine.events()).unwrap();
            prop_assert!(&replayed == engine.store(), "replay diverged");
        }
        for d in engine.store().units() {
            prop_assert!(
                matches!(d.state, PipelineState::Accepted | PipelineState::InReview | PipelineState::Fallback),
                "{} stuck in {}",
                d.doc_id,
                d.state
            );
        }
        let v = violations.lock().unwrap();
        prop_assert!(v.is_empty(), "{:?}", *v);
    }
}

#[test]
fn file_log_replays_to_the_live_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let (corpus, _) = fixture();
    let options = madp::eval::EvalOptions {
        log_path: Some(path.clone()),
        ..madp::eval::EvalOptions::full()
    };
    let (_, engine) = madp::eval::run_eval(corpus, &options).unwrap();
    let events = madp::events::read_events(&path).unwrap();
    assert_eq!(events.as_slice(), engine.events());
    assert!(Store::replay(&events).unwrap() == *engine.store());
}

proptest! {
    #![proptest_config(cases(512))]

    #[test]
    fn block_coordinates_survive_the_log(b in block(), shift in 0.0..0.05f64) {
        let mut moved = b.clone();
        moved.y0 += shift;
        moved.y1 += shift;
        let text = serde_json::to_string(&moved).unwrap();
        let back: TextBlock = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, moved);
    }
}
