//! Simulates a day on the bundled network, then the same day with a leak on
//! conduit C05, and compares node flows.

use aquasentinel::harness::{bundled_network, demand_patterns, DemandConfig};
use aquasentinel::hydraulics::{junction_residuals, simulate_detailed, LeakKind, LeakScenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = bundled_network();
    let patterns = demand_patterns(&net, &DemandConfig::default(), 7, 0);
    let leak = LeakScenario::constant("C05", LeakKind::Constant15to25, 0.2, 72);

    let baseline = simulate_detailed(&net, &patterns, 0, 144, None)?;
    let leaking = simulate_detailed(&net, &patterns, 0, 144, Some(&leak))?;

    // Mass balance holds on the split network, leak junction included.
    let worst = leaking
        .states
        .iter()
        .zip(leaking.demands.iter().zip(&leaking.leaks))
        .flat_map(|(s, (d, l))| junction_residuals(&leaking.network, s, d, l))
        .fold(0.0, f64::max);
    println!("worst junction imbalance over the day: {worst:.2e} m3/s");

    let t = 100;
    let lost = leaking.leaks[t].iter().sum::<f64>();
    println!("leak flow at step {t}: {lost:.5} m3/s");
    println!("{:>5} {:>10} {:>10} {:>8}", "node", "baseline", "leaking", "change");
    for (v, node) in net.nodes().iter().enumerate() {
        let b = baseline.states[t].frame.states[v].flow;
        let l = leaking.states[t].frame.states[v].flow;
        if b != l {
            println!("{:>5} {b:>10.5} {l:>10.5} {:>7.1}%", node.id, 100.0 * (l - b) / b);
        }
    }
    Ok(())
}
