//! Localizes a leak from detector events: the upstream-most anomalous node
//! implicates the conduits that feed it.

use aquasentinel::harness::{bundled_network, run_pipeline, ExperimentConfig};
use aquasentinel::hydraulics::{LeakKind, LeakScenario};
use aquasentinel::localization::{co_anomalous, localize};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = bundled_network();
    let cfg = ExperimentConfig::default();
    for (conduit, kind, fraction) in [
        ("C03", LeakKind::Constant5to15, 0.1),
        ("C14", LeakKind::ConstantGt25, 0.3),
        ("C20", LeakKind::ConstantLt5, 0.04),
    ] {
        let leak = LeakScenario::constant(conduit, kind, fraction, 432);
        let run = run_pipeline(&cfg, &net, Some(&leak), 5)?;
        let set: Vec<String> = co_anomalous(&run.events, cfg.rtca.persist).into_iter().collect();
        let result = localize(&net, &set)?;
        println!("leak on {conduit}: anomalous {set:?}");
        println!("  sources {:?}, ranked segments {:?}", result.sources, result.segments);
    }
    Ok(())
}
