//! Runs every leak case on the bundled network and prints the summary.

use aquasentinel::harness::{run_evaluation, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::default(),
    };
    let started = std::time::Instant::now();
    let (cases, report) = run_evaluation(&cfg)?;
    for c in cases.iter().filter(|c| !c.detected || c.detection_delay > 10) {
        println!("{} delay={} events={}", c.case_id, c.detection_delay, c.events.len());
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("{} cases in {:.1?}", cases.len(), started.elapsed());
    Ok(())
}
