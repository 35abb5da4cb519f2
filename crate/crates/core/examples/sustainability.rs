//! Annual footprints of the three operating scenarios, the savings of the
//! reviewed pipeline over manual processing, and a custom scenario.

use madp::sustain::{
    comparison, equivalences, render_comparison, savings, scenario_report, EquivalenceFactors,
    ScenarioParams,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{}", render_comparison(&comparison()?));

    let manual = scenario_report(&ScenarioParams::named("manual")?)?;
    let hitl = scenario_report(&ScenarioParams::named("ai_hitl")?)?;
    let s = savings(&hitl, &manual);
    let e = equivalences(&s, &EquivalenceFactors::default());
    println!(
        "ai_hitl saves {:.0} kg CO2 ({:?}%): about {} trees, {} cars, {} homes, {} person-days of water",
        s.co2_kg.absolute, s.co2_kg.percent, e.trees, e.cars, e.homes, e.person_water_days
    );

    // Twice the volume with the same review team.
    let custom = ScenarioParams {
        name: "double_volume".into(),
        invoices_per_year: 200_000,
        ..ScenarioParams::named("ai_hitl")?
    };
    let r = scenario_report(&custom)?;
    println!("{}: {}", r.scenario, r.summary());
    for n in &r.notes {
        println!("  note [{}] {}", n.code, n.message);
    }
    Ok(())
}
