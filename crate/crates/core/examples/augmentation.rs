//! Reconstructs unmonitored nodes from a sparse sensor set and compares the
//! virtual sensors against the simulated truth.

use std::collections::BTreeMap;

use aquasentinel::augmentation::{augment, physics_residual, AugmentationConfig, Provenance};
use aquasentinel::harness::{bundled_network, demand_patterns, DemandConfig};
use aquasentinel::hydraulics::simulate;
use aquasentinel::placement::{score_nodes, select_sensors, PlacementConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = bundled_network();
    let patterns = demand_patterns(&net, &DemandConfig::default(), 3, 0);
    let truth = simulate(&net, &patterns, 144, None)?;

    let placement = PlacementConfig::for_network(&net);
    let selected = select_sensors(&score_nodes(&net, &truth, &placement)?, &net, &placement).selected;
    let sensors: Vec<usize> = selected.iter().map(|id| net.node_idx(id)).collect::<Result<_, _>>()?;
    println!("sensors: {selected:?}");

    let cfg = AugmentationConfig {
        lambda_smooth: 1e-6,
        max_iters: 2000,
        tol: 1e-16,
        rel_tol: 1e-10,
        ..Default::default()
    }
    .with_scales_from(&truth);

    let t = 60;
    let frame = &truth.frames[t];
    let readings: BTreeMap<_, _> = sensors.iter().map(|&v| (v, frame.states[v])).collect();
    // The optimizer only knows the expected demand, not the realized noise.
    let demands: Vec<f64> = patterns.iter().map(|p| p.expected(t)).collect();
    let result = augment(&net, &readings, &demands, &cfg)?;

    println!(
        "objective {:.3e} after {} iterations (converged: {}), physics residual {:.3e}",
        result.residual,
        result.iterations,
        result.converged,
        physics_residual(&net, &result.frame, &demands)
    );
    println!("{:>5} {:>10} {:>10} {:>8}", "node", "truth", "inferred", "error");
    for (v, node) in net.nodes().iter().enumerate() {
        if result.provenance[v] == Provenance::Inferred {
            let a = frame.states[v].flow;
            let b = result.frame.states[v].flow;
            println!("{:>5} {a:>10.5} {b:>10.5} {:>7.2}%", node.id, 100.0 * (b - a) / a);
        }
    }
    Ok(())
}
