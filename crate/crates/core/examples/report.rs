//! Renders a maintenance report for a detected leak with the built-in
//! template.

use aquasentinel::harness::{bundled_network, run_pipeline, ExperimentConfig};
use aquasentinel::hydraulics::{LeakKind, LeakScenario};
use aquasentinel::localization::{co_anomalous, localize};
use aquasentinel::reporting::{render_report, DEFAULT_TEMPLATE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = bundled_network();
    let cfg = ExperimentConfig::default();
    let leak = LeakScenario::constant("C10", LeakKind::ConstantGt25, 0.3, 432);
    let run = run_pipeline(&cfg, &net, Some(&leak), 9)?;

    let set: Vec<String> = co_anomalous(&run.events, cfg.rtca.persist).into_iter().collect();
    let localization = localize(&net, &set)?;
    let report = render_report(&run.events, &localization, &net, DEFAULT_TEMPLATE)?;
    println!("{}", report.text);
    println!("inputs digest {}", report.inputs_digest);
    Ok(())
}
