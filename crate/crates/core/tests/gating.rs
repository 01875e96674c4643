mod common;

use std::sync::Arc;

use aquasentinel::forecasting::{
    expert_by_name, gate_weights, update_gate, Ensemble, Expert, GateConfig, GateState,
};
use aquasentinel::harness::{bundled_network, demand_patterns, DemandConfig};
use aquasentinel::hydraulics::{simulate, TimeSeries};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{direct_softmax, Oracle};

#[test]
fn weights_match_literal_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6A7E);
    for _ in 0..1000 {
        let k = rng.random_range(1..8);
        let losses: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
        let lambda = rng.random_range(0.0..20.0);
        let got = gate_weights(&losses, lambda).unwrap();
        let want = direct_softmax(&losses, lambda);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "{losses:?} λ={lambda}: {got:?} vs {want:?}");
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn ema_reference_step() {
    let mut g = GateState::new(1, &GateConfig { lambda: 5.0, beta: 0.2 }).unwrap();
    g.smoothed_loss = vec![0.5];
    let next = update_gate(&g, &[1.0]).unwrap();
    assert!((next.smoothed_loss[0] - 0.6).abs() < 1e-15);
    assert_eq!(next.weights, vec![1.0]);
}

proptest! {
    #[test]
    fn common_shift_is_invisible(
        raw in prop::collection::vec(0u32..256, 1..8),
        shift in 0u32..64,
        lambda in prop::sample::select(vec![0.5, 1.0, 2.0, 4.0]),
    ) {
        // Dyadic losses and shifts keep every subtraction exact.
        let losses: Vec<f64> = raw.iter().map(|&x| x as f64 / 64.0).collect();
        let shifted: Vec<f64> = losses.iter().map(|l| l + shift as f64 / 8.0).collect();
        prop_assert_eq!(gate_weights(&losses, lambda).unwrap(), gate_weights(&shifted, lambda).unwrap());
    }

    #[test]
    fn lower_loss_never_gets_less_weight(
        losses in prop::collection::vec(0.0f64..5.0, 2..8),
        lambda in 0.0f64..30.0,
    ) {
        let w = gate_weights(&losses, lambda).unwrap();
        for i in 0..losses.len() {
            for j in 0..losses.len() {
                if losses[i] < losses[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn ema_is_convex_combination(
        prev in prop::collection::vec(0.0f64..10.0, 1..6),
        beta in 0.01f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let losses: Vec<f64> = prev.iter().map(|_| rng.random_range(0.0..10.0)).collect();
        let mut g = GateState::new(prev.len(), &GateConfig { lambda: 3.0, beta }).unwrap();
        g.smoothed_loss = prev.clone();
        g.update(&losses).unwrap();
        for ((s, p), l) in g.smoothed_loss.iter().zip(&prev).zip(&losses) {
            prop_assert!((s - ((1.0 - beta) * p + beta * l)).abs() <= 1e-12);
        }
    }
}

#[test]
fn planted_exact_expert_dominates() {
    let net = bundled_network();
    let demand = DemandConfig::default();
    let patterns = demand_patterns(&net, &demand, 17, 0);
    let series = simulate(&net, &patterns, 600, None).unwrap();
    let truth = Arc::new(series.frames.clone());
    let training = TimeSeries {
        dt: series.dt,
        frames: series.frames[..300].to_vec(),
    };

    let experts: Vec<Box<dyn Expert>> = vec![
        expert_by_name("persistence", demand.period).unwrap(),
        Box::new(Oracle {
            name: "noisy",
            truth: truth.clone(),
            noise: 0.05,
            seed: 3,
        }),
        Box::new(Oracle {
            name: "planted",
            truth: truth.clone(),
            noise: 0.0,
            seed: 0,
        }),
        expert_by_name("graph_smoothed", demand.period).unwrap(),
    ];
    let mut ens = Ensemble::new(experts, &GateConfig { lambda: 5.0, beta: 0.1 }).unwrap();
    ens.fit(&training, &net).unwrap();

    for t in 300..500 {
        let f = ens.predict(&truth[..t], &net).unwrap();
        ens.observe(&f, &truth[t], false).unwrap();
    }
    let w = &ens.gate().weights;
    let planted = w[2];
    for (i, x) in w.iter().enumerate() {
        if i != 2 {
            assert!(planted > *x, "weights {w:?}");
        }
    }
    assert_eq!(ens.gate().smoothed_loss[2], 0.0);
}
