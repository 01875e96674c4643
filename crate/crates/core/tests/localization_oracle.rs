mod common;

use std::collections::BTreeSet;

use aquasentinel::localization::{co_anomalous, localize};
use aquasentinel::rtca::AnomalyEvent;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_sources, random_dag};

#[test]
fn sources_match_upstream_filtering_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x10C);
    let mut multi = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=12);
        let p = rng.random_range(0.15..0.7);
        let net = random_dag(&mut rng, n, p);
        let set: BTreeSet<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
        let ids: Vec<String> = set.iter().map(|&v| net.node(v).id.clone()).collect();

        let got = localize(&net, &ids).unwrap();
        let want = brute_sources(&net, &set);
        assert_eq!(got.sources.iter().cloned().collect::<BTreeSet<_>>(), want);
        multi += usize::from(want.len() > 1);

        // Every implicated conduit touches a source: feeding it, or leaving
        // it when the source has no parent.
        let expected: BTreeSet<String> = want
            .iter()
            .flat_map(|s| {
                let v = net.node_idx(s).unwrap();
                let cs = if net.in_conduits(v).is_empty() {
                    net.out_conduits(v)
                } else {
                    net.in_conduits(v)
                };
                cs.iter().map(|&c| net.conduit(c).id.clone()).collect::<Vec<_>>()
            })
            .collect();
        assert_eq!(got.segments.iter().cloned().collect::<BTreeSet<_>>(), expected);
        let flows: Vec<f64> = got.ranked_candidates.iter().map(|c| c.flow).collect();
        assert!(flows.windows(2).all(|w| w[0] >= w[1]));
    }
    assert!(multi > 10);
}

proptest! {
    #[test]
    fn grace_window_keeps_early_confirmations(times in prop::collection::vec(0usize..50, 1..12), grace in 0usize..10) {
        let events: Vec<AnomalyEvent> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| AnomalyEvent { node: format!("V{i}"), detected_at: t, confidence: 1.0, e_rt: 0.0, e_c: 0.0 })
            .collect();
        let t0 = *times.iter().min().unwrap();
        let set = co_anomalous(&events, grace);
        for (i, &t) in times.iter().enumerate() {
            prop_assert_eq!(set.contains(&format!("V{i}")), t <= t0 + grace);
        }
    }
}
