//! Fits the expert ensemble on a training week and tracks how the gate
//! reweights experts while forecasting the next day.

use aquasentinel::forecasting::{Ensemble, GateConfig, DEFAULT_PERIOD};
use aquasentinel::harness::{bundled_network, demand_patterns, DemandConfig};
use aquasentinel::hydraulics::{simulate_detailed, StateFrame};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = bundled_network();
    let demand = DemandConfig::default();
    let train = simulate_detailed(&net, &demand_patterns(&net, &demand, 11, 0), 0, 1008, None)?
        .to_timeseries(net.node_count());
    let next = simulate_detailed(&net, &demand_patterns(&net, &demand, 11, 1), 1008, 144, None)?
        .to_timeseries(net.node_count());

    let gate = GateConfig {
        lambda: 20.0,
        ..Default::default()
    };
    let mut ensemble = Ensemble::with_default_experts(&gate, DEFAULT_PERIOD)?;
    ensemble.fit(&train, &net)?;
    println!("experts: {:?}", ensemble.expert_names());

    let mut history: Vec<StateFrame> = train.frames.clone();
    let outfall = net.node_idx("OUT")?;
    let mut abs_err = 0.0;
    for (i, actual) in next.frames.iter().enumerate() {
        let forecast = ensemble.predict(&history, &net)?;
        abs_err += (forecast.combined.states[outfall].flow - actual.states[outfall].flow).abs();
        ensemble.observe(&forecast, actual, false)?;
        history.push(StateFrame {
            t: 1008 + i,
            states: actual.states.clone(),
        });
        if i % 24 == 0 {
            let w: Vec<String> = forecast.weights.iter().map(|w| format!("{w:.3}")).collect();
            println!("step {:>3}: weights [{}]", i, w.join(", "));
        }
    }
    let mean_flow = next.frames.iter().map(|f| f.states[outfall].flow).sum::<f64>() / next.len() as f64;
    println!(
        "outfall one-step MAE {:.2e} m3/s ({:.3}% of mean flow)",
        abs_err / next.len() as f64,
        100.0 * abs_err / next.len() as f64 / mean_flow
    );
    Ok(())
}
