//! Runs the full pipeline on one leak scenario and prints the detector's
//! confirmed events.

use aquasentinel::harness::{bundled_network, run_pipeline, ExperimentConfig};
use aquasentinel::hydraulics::{LeakKind, LeakScenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = bundled_network();
    let cfg = ExperimentConfig::default();
    let leak = LeakScenario::constant("C08", LeakKind::ConstantLt5, 0.03, 432);

    let run = run_pipeline(&cfg, &net, Some(&leak), 2024)?;
    println!("leak starts at step {} on {}", leak.start_step, leak.conduit_id);
    for e in &run.events {
        println!(
            "step {:>4} node {:>4} confidence {:.3} e_rt {:.4} e_c {:.4}",
            e.detected_at, e.node, e.confidence, e.e_rt, e.e_c
        );
    }
    match run.events.iter().map(|e| e.detected_at).min() {
        Some(t) => println!("first confirmation {} steps after onset", t as i64 - leak.start_step as i64),
        None => println!("not detected"),
    }
    Ok(())
}
