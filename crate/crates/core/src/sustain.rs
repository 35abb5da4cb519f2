//! Operational and environmental scenario accounting.

use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCENARIOS: [&str; 3] = ["manual", "pure_ai", "ai_hitl"];

/// Office energy per worker from floor area alone (160 kWh/m² × 10 m²).
pub const OFFICE_KWH_PER_FTE_YEAR: f64 = 1600.0;

#[derive(Debug, Error, PartialEq)]
pub enum SustainError {
    #[error("{field} must be non-negative, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("pue must be at least 1, got {0}")]
    Pue(f64),
    #[error("ai_processed_fraction must lie in [0, 1], got {0}")]
    Fraction(f64),
    #[error("unknown scenario {0:?}; expected manual, pure_ai or ai_hitl")]
    UnknownScenario(String),
    #[error("scenario {0} processes invoices with zero FTE")]
    ZeroFte(String),
    #[error("scenario parameters: {0}")]
    Json(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub name: String,
    pub invoices_per_year: u64,
    pub fte: f64,
    pub queries_per_invoice: f64,
    pub wh_per_query: f64,
    pub pue: f64,
    pub co2_kg_per_kwh: f64,
    pub water_ml_per_query: f64,
    pub co2_kg_per_worker_day: f64,
    pub working_days: u32,
    pub water_l_per_worker_day: f64,
    pub energy_kwh_per_fte_year: f64,
    pub ai_processed_fraction: f64,
    /// Reported figures, echoed and never computed.
    pub accuracy: Option<f64>,
    pub review_rate: Option<f64>,
    pub avg_processing_seconds: Option<f64>,
    pub nominal_invoices_per_fte: Option<f64>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            name: "custom".into(),
            invoices_per_year: 100_000,
            fte: 0.0,
            queries_per_invoice: 2.0,
            wh_per_query: 0.5,
            pue: 1.5,
            co2_kg_per_kwh: 0.3,
            water_ml_per_query: 34.0,
            co2_kg_per_worker_day: 3.5,
            working_days: 220,
            water_l_per_worker_day: 20.0,
            energy_kwh_per_fte_year: 2150.0,
            ai_processed_fraction: 0.0,
            accuracy: None,
            review_rate: None,
            avg_processing_seconds: None,
            nominal_invoices_per_fte: None,
        }
    }
}

impl ScenarioParams {
    /// Preset for `manual`, `pure_ai` or `ai_hitl`.
    pub fn named(name: &str) -> Result<Self, SustainError> {
        let (fte, fraction, accuracy, review, seconds, nominal) = match name {
            "manual" => (23.0, 0.0, 0.95, 1.0, 120.0, 4500.0),
            "pure_ai" => (4.0, 1.0, 0.85, 0.0, 6.0, 25_000.0),
            "ai_hitl" => (7.0, 1.0, 0.985, 0.15, 18.0, 15_000.0),
            other => return Err(SustainError::UnknownScenario(other.to_string())),
        };
        Ok(ScenarioParams {
            name: name.to_string(),
            fte,
            ai_processed_fraction: fraction,
            accuracy: Some(accuracy),
            review_rate: Some(review),
            avg_processing_seconds: Some(seconds),
            nominal_invoices_per_fte: Some(nominal),
            ..ScenarioParams::default()
        })
    }

    pub fn from_json(text: &str) -> Result<Self, SustainError> {
        let p: ScenarioParams =
            serde_json::from_str(text).map_err(|e| SustainError::Json(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SustainError> {
        let fields = [
            ("fte", self.fte),
            ("queries_per_invoice", self.queries_per_invoice),
            ("wh_per_query", self.wh_per_query),
            ("co2_kg_per_kwh", self.co2_kg_per_kwh),
            ("water_ml_per_query", self.water_ml_per_query),
            ("co2_kg_per_worker_day", self.co2_kg_per_worker_day),
            ("water_l_per_worker_day", self.water_l_per_worker_day),
            ("energy_kwh_per_fte_year", self.energy_kwh_per_fte_year),
        ];
        for (field, value) in fields {
            if value.is_nan() || value < 0.0 {
                return Err(SustainError::Negative { field, value });
            }
        }
        if self.pue.is_nan() || self.pue < 1.0 {
            return Err(SustainError::Pue(self.pue));
        }
        if !(0.0..=1.0).contains(&self.ai_processed_fraction) {
            return Err(SustainError::Fraction(self.ai_processed_fraction));
        }
        Ok(())
    }
}

/// Annual footprint in kg CO₂, kWh and litres.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub co2_kg: f64,
    pub energy_kwh: f64,
    pub water_l: f64,
}

impl Add for Footprint {
    type Output = Footprint;
    fn add(self, o: Footprint) -> Footprint {
        Footprint {
            co2_kg: self.co2_kg + o.co2_kg,
            energy_kwh: self.energy_kwh + o.energy_kwh,
            water_l: self.water_l + o.water_l,
        }
    }
}

impl Sub for Footprint {
    type Output = Footprint;
    fn sub(self, o: Footprint) -> Footprint {
        Footprint {
            co2_kg: self.co2_kg - o.co2_kg,
            energy_kwh: self.energy_kwh - o.energy_kwh,
            water_l: self.water_l - o.water_l,
        }
    }
}

pub fn human_footprint(fte: f64, p: &ScenarioParams) -> Result<Footprint, SustainError> {
    if fte.is_nan() || fte < 0.0 {
        return Err(SustainError::Negative {
            field: "fte",
            value: fte,
        });
    }
    let days = f64::from(p.working_days);
    Ok(Footprint {
        co2_kg: fte * p.co2_kg_per_worker_day * days,
        energy_kwh: fte * p.energy_kwh_per_fte_year,
        water_l: fte * p.water_l_per_worker_day * days,
    })
}

pub fn ai_footprint(invoices: f64, p: &ScenarioParams) -> Footprint {
    let queries = invoices.max(0.0) * p.queries_per_invoice;
    let energy_kwh = queries * p.wh_per_query * p.pue / 1000.0;
    Footprint {
        co2_kg: energy_kwh * p.co2_kg_per_kwh,
        energy_kwh,
        water_l: queries * p.water_ml_per_query / 1000.0,
    }
}

/// Half-up rounding to `decimals` places. The nudge keeps values such as
/// 54.35, stored as 54.34999…, on the intended side.
pub fn round_display(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = x.abs() * scale;
    let nudge = 1e-9 * scaled.max(1.0);
    (scaled + 0.5 + nudge).floor().copysign(x) / scale
}

/// Machine-readable remark on a report value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub code: String,
    pub metric: Option<String>,
    pub printed: Option<f64>,
    pub computed: Option<f64>,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerInvoice {
    pub co2_g: f64,
    pub energy_wh: f64,
    pub water_l: f64,
}

/// Values at table precision: tons, MWh and m³ to one decimal, grams and
/// Wh to one decimal, litres to two.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplayRow {
    pub co2_tons: f64,
    pub energy_mwh: f64,
    pub water_m3: f64,
    pub co2_g_per_invoice: f64,
    pub energy_wh_per_invoice: f64,
    pub water_l_per_invoice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub invoices_per_year: u64,
    pub fte: f64,
    pub human: Footprint,
    pub ai: Footprint,
    pub total: Footprint,
    pub co2_tons: f64,
    pub energy_mwh: f64,
    pub water_m3: f64,
    pub per_invoice: Option<PerInvoice>,
    pub display: DisplayRow,
    pub accuracy: Option<f64>,
    pub notes: Vec<Note>,
}

impl ScenarioReport {
    /// `5.4 t / 15.2 MWh / 37.6 m³`
    pub fn summary(&self) -> String {
        format!(
            "{:.1} t / {:.1} MWh / {:.1} m³",
            self.display.co2_tons, self.display.energy_mwh, self.display.water_m3
        )
    }
}

/// Published table figures per named scenario: totals (t, MWh, m³) then
/// per-invoice (g, Wh, L).
fn printed_row(name: &str) -> Option<[f64; 6]> {
    match name {
        "manual" => Some([17.7, 49.5, 101.2, 177.1, 494.5, 1.01]),
        "pure_ai" => Some([3.1, 8.7, 17.5, 31.0, 87.0, 0.18]),
        "ai_hitl" => Some([5.4, 15.2, 37.6, 54.4, 152.0, 0.38]),
        _ => None,
    }
}

const ROW_METRICS: [(&str, i32); 6] = [
    ("co2_tons", 1),
    ("energy_mwh", 1),
    ("water_m3", 1),
    ("co2_g_per_invoice", 1),
    ("energy_wh_per_invoice", 1),
    ("water_l_per_invoice", 2),
];

pub fn scenario_report(p: &ScenarioParams) -> Result<ScenarioReport, SustainError> {
    p.validate()?;
    let invoices = p.invoices_per_year as f64;
    let human = human_footprint(p.fte, p)?;
    let ai = ai_footprint(invoices * p.ai_processed_fraction, p);
    let total = human + ai;
    let per_invoice = (p.invoices_per_year > 0).then(|| PerInvoice {
        co2_g: total.co2_kg * 1000.0 / invoices,
        energy_wh: total.energy_kwh * 1000.0 / invoices,
        water_l: total.water_l / invoices,
    });
    let pi = per_invoice.unwrap_or(PerInvoice {
        co2_g: 0.0,
        energy_wh: 0.0,
        water_l: 0.0,
    });
    let raw = [
        total.co2_kg / 1000.0,
        total.energy_kwh / 1000.0,
        total.water_l / 1000.0,
        pi.co2_g,
        pi.energy_wh,
        pi.water_l,
    ];
    let shown: Vec<f64> = raw
        .iter()
        .zip(ROW_METRICS)
        .map(|(v, (_, dp))| round_display(*v, dp))
        .collect();
    let display = DisplayRow {
        co2_tons: shown[0],
        energy_mwh: shown[1],
        water_m3: shown[2],
        co2_g_per_invoice: shown[3],
        energy_wh_per_invoice: shown[4],
        water_l_per_invoice: shown[5],
    };
    let mut notes = Vec::new();
    if p.fte > 0.0 && p.energy_kwh_per_fte_year > OFFICE_KWH_PER_FTE_YEAR {
        let surplus = p.energy_kwh_per_fte_year - OFFICE_KWH_PER_FTE_YEAR;
        notes.push(Note {
            code: "equipment_overhead".into(),
            metric: Some("energy_mwh".into()),
            printed: None,
            computed: Some(surplus),
            message: format!(
                "per-FTE energy includes {surplus:.0} kWh/year equipment overhead above the {OFFICE_KWH_PER_FTE_YEAR:.0} kWh office floor-area figure"
            ),
        });
    }
    if let Some(printed) = printed_row(&p.name).filter(|_| is_default_model(p)) {
        // Per-invoice unit per annual unit: t to g, MWh to Wh, m3 to L.
        const PER_INVOICE_SCALE: [f64; 3] = [1e6, 1e6, 1e3];
        for (i, ((metric, dp), (shown, printed_v))) in ROW_METRICS
            .iter()
            .zip(shown.iter().zip(printed))
            .enumerate()
        {
            let ulp = 10f64.powi(-dp);
            if (shown - printed_v).abs() <= ulp / 2.0 {
                continue;
            }
            let from_rounded_total = i >= 3 && invoices > 0.0 && {
                let basis = printed[i - 3] * PER_INVOICE_SCALE[i - 3] / invoices;
                (round_display(basis, *dp) - printed_v).abs() <= ulp / 2.0
            };
            let (code, message) = if from_rounded_total {
                (
                    "rounded_basis",
                    format!(
                        "{metric}: computed {shown}; the reference table prints {printed_v}, derived from its rounded annual total"
                    ),
                )
            } else if (shown - printed_v).abs() <= ulp + 1e-9 {
                (
                    "display_rounding",
                    format!(
                        "{metric}: computed {shown} where the reference table prints {printed_v}"
                    ),
                )
            } else {
                (
                    "table_discrepancy",
                    format!(
                        "{metric}: computed {shown} where the reference table prints {printed_v}"
                    ),
                )
            };
            notes.push(Note {
                code: code.into(),
                metric: Some((*metric).into()),
                printed: Some(printed_v),
                computed: Some(*shown),
                message,
            });
        }
    }
    Ok(ScenarioReport {
        scenario: p.name.clone(),
        invoices_per_year: p.invoices_per_year,
        fte: p.fte,
        human,
        ai,
        total,
        co2_tons: raw[0],
        energy_mwh: raw[1],
        water_m3: raw[2],
        per_invoice,
        display,
        accuracy: p.accuracy,
        notes,
    })
}

/// True when `p` carries the preset's FTE, fraction and default factors,
/// i.e. the published row applies to it.
fn is_default_model(p: &ScenarioParams) -> bool {
    let Ok(preset) = ScenarioParams::named(&p.name) else {
        return false;
    };
    let d = ScenarioParams::default();
    p.fte == preset.fte
        && p.ai_processed_fraction == preset.ai_processed_fraction
        && p.invoices_per_year == d.invoices_per_year
        && p.queries_per_invoice == d.queries_per_invoice
        && p.wh_per_query == d.wh_per_query
        && p.pue == d.pue
        && p.co2_kg_per_kwh == d.co2_kg_per_kwh
        && p.water_ml_per_query == d.water_ml_per_query
        && p.co2_kg_per_worker_day == d.co2_kg_per_worker_day
        && p.working_days == d.working_days
        && p.water_l_per_worker_day == d.water_l_per_worker_day
        && p.energy_kwh_per_fte_year == d.energy_kwh_per_fte_year
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    /// Baseline minus scenario, in the footprint unit.
    pub absolute: f64,
    /// Reduction relative to the baseline, rounded to whole percent.
    pub percent: Option<i64>,
}

fn delta(scenario: f64, baseline: f64) -> Delta {
    let absolute = baseline - scenario;
    Delta {
        absolute,
        percent: (baseline != 0.0).then(|| round_display(absolute / baseline * 100.0, 0) as i64),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    pub scenario: String,
    pub baseline: String,
    pub co2_kg: Delta,
    pub energy_kwh: Delta,
    pub water_l: Delta,
}

impl Savings {
    /// `12.3 t (-69%)`-style cells at table precision.
    pub fn display(&self) -> [String; 3] {
        let cell = |d: &Delta, unit: &str| {
            let v = round_display(d.absolute / 1000.0, 1);
            match d.percent {
                Some(p) => format!("{v:.1} {unit} (-{p}%)"),
                None => format!("{v:.1} {unit}"),
            }
        };
        [
            cell(&self.co2_kg, "t"),
            cell(&self.energy_kwh, "MWh"),
            cell(&self.water_l, "m³"),
        ]
    }
}

/// Savings of `a` against the baseline `b`.
pub fn savings(a: &ScenarioReport, b: &ScenarioReport) -> Savings {
    Savings {
        scenario: a.scenario.clone(),
        baseline: b.scenario.clone(),
        co2_kg: delta(a.total.co2_kg, b.total.co2_kg),
        energy_kwh: delta(a.total.energy_kwh, b.total.energy_kwh),
        water_l: delta(a.total.water_l, b.total.water_l),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EquivalenceFactors {
    pub kg_co2_per_tree_year: f64,
    pub t_co2_per_car_year: f64,
    pub mwh_per_home_year: f64,
    pub l_water_per_person_day: f64,
}

impl Default for EquivalenceFactors {
    fn default() -> Self {
        EquivalenceFactors {
            kg_co2_per_tree_year: 12_300.0 / 61.0,
            t_co2_per_car_year: 12.3 / 3.0,
            mwh_per_home_year: 34.2 / 11.0,
            l_water_per_person_day: 63_600.0 / 424.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equivalences {
    pub trees: i64,
    pub cars: i64,
    pub homes: i64,
    pub person_water_days: i64,
}

pub fn equivalences(s: &Savings, f: &EquivalenceFactors) -> Equivalences {
    let whole = |x: f64| round_display(x, 0) as i64;
    Equivalences {
        trees: whole(s.co2_kg.absolute / f.kg_co2_per_tree_year),
        cars: whole(s.co2_kg.absolute / 1000.0 / f.t_co2_per_car_year),
        homes: whole(s.energy_kwh.absolute / 1000.0 / f.mwh_per_home_year),
        person_water_days: whole(s.water_l.absolute / f.l_water_per_person_day),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperationalRow {
    pub scenario: String,
    pub fte: f64,
    pub invoices_per_fte: f64,
    pub invoices_per_fte_display: i64,
    pub nominal_invoices_per_fte: Option<f64>,
    /// Computed over nominal, minus one, in percent.
    pub deviation_pct: Option<f64>,
    /// The FTE count covers the workload at the nominal rate.
    pub consistent: bool,
    pub accuracy: Option<f64>,
    pub review_rate: Option<f64>,
    pub avg_processing_seconds: Option<f64>,
    pub notes: Vec<Note>,
}

pub fn operational_table(params: &[ScenarioParams]) -> Result<Vec<OperationalRow>, SustainError> {
    params
        .iter()
        .map(|p| {
            p.validate()?;
            let invoices = p.invoices_per_year as f64;
            if p.fte == 0.0 && invoices > 0.0 {
                return Err(SustainError::ZeroFte(p.name.clone()));
            }
            let per_fte = if p.fte == 0.0 { 0.0 } else { invoices / p.fte };
            let shown = round_display(per_fte, 0) as i64;
            let nominal = p.nominal_invoices_per_fte.filter(|n| *n > 0.0);
            let deviation = nominal.map(|n| (per_fte / n - 1.0) * 100.0);
            let consistent = nominal.is_none_or(|n| p.fte + 1e-9 >= invoices / n);
            let mut notes = Vec::new();
            if let Some(n) = nominal.filter(|n| (*n - shown as f64).abs() >= 1.0) {
                notes.push(Note {
                    code: "nominal_rate".into(),
                    metric: Some("invoices_per_fte".into()),
                    printed: Some(n),
                    computed: Some(shown as f64),
                    message: format!(
                        "{} invoices over {} FTE is {shown} per FTE; nominal rate {n:.0} ({:+.1}%)",
                        p.invoices_per_year,
                        p.fte,
                        deviation.unwrap_or(0.0)
                    ),
                });
            }
            Ok(OperationalRow {
                scenario: p.name.clone(),
                fte: p.fte,
                invoices_per_fte: per_fte,
                invoices_per_fte_display: shown,
                nominal_invoices_per_fte: nominal,
                deviation_pct: deviation,
                consistent,
                accuracy: p.accuracy,
                review_rate: p.review_rate,
                avg_processing_seconds: p.avg_processing_seconds,
                notes,
            })
        })
        .collect()
}

/// All three presets with savings against `manual`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenarios: Vec<ScenarioReport>,
    pub savings: Vec<Savings>,
    pub equivalences: Equivalences,
    pub operational: Vec<OperationalRow>,
}

pub fn comparison() -> Result<Comparison, SustainError> {
    let params: Vec<ScenarioParams> = SCENARIOS
        .iter()
        .map(|n| ScenarioParams::named(n))
        .collect::<Result<_, _>>()?;
    let scenarios: Vec<ScenarioReport> = params
        .iter()
        .map(scenario_report)
        .collect::<Result<_, _>>()?;
    let baseline = &scenarios[0];
    let savings: Vec<Savings> = scenarios[1..]
        .iter()
        .map(|s| savings(s, baseline))
        .collect();
    let hitl = savings
        .iter()
        .find(|s| s.scenario == "ai_hitl")
        .expect("ai_hitl preset present");
    Ok(Comparison {
        equivalences: equivalences(hitl, &EquivalenceFactors::default()),
        operational: operational_table(&params)?,
        scenarios,
        savings,
    })
}

/// Plain-text tables for terminal output.
pub fn render_comparison(c: &Comparison) -> String {
    let mut out = String::new();
    out.push_str("scenario   fte   CO2 (t)  energy (MWh)  water (m3)  g CO2/inv  Wh/inv  L/inv\n");
    for r in &c.scenarios {
        let d = &r.display;
        out.push_str(&format!(
            "{:<9} {:>4} {:>9.1} {:>13.1} {:>11.1} {:>10.1} {:>7.1} {:>6.2}\n",
            r.scenario,
            r.fte,
            d.co2_tons,
            d.energy_mwh,
            d.water_m3,
            d.co2_g_per_invoice,
            d.energy_wh_per_invoice,
            d.water_l_per_invoice
        ));
    }
    out.push('\n');
    for s in &c.savings {
        let [co2, energy, water] = s.display();
        out.push_str(&format!(
            "savings {} vs {}: {co2}, {energy}, {water}\n",
            s.scenario, s.baseline
        ));
    }
    let e = &c.equivalences;
    out.push_str(&format!(
        "equivalent to {} trees, {} cars, {} homes, {} person-days of drinking water\n\n",
        e.trees, e.cars, e.homes, e.person_water_days
    ));
    out.push_str("scenario   invoices/FTE  nominal  consistent\n");
    for o in &c.operational {
        out.push_str(&format!(
            "{:<9} {:>13} {:>8} {:>11}\n",
            o.scenario,
            o.invoices_per_fte_display,
            o.nominal_invoices_per_fte
                .map_or("-".into(), |n| format!("{n:.0}")),
            o.consistent
        ));
    }
    for note in c
        .scenarios
        .iter()
        .flat_map(|r| r.notes.iter().map(move |n| (r, n)))
    {
        out.push_str(&format!(
            "note [{}] {}: {}\n",
            note.1.code, note.0.scenario, note.1.message
        ));
    }
    out
}
