mod common;

use aquasentinel::rtca::{DetectorState, Status};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_error_signal, random_rtca_config, rtca_batch, rtca_streaming};

#[test]
fn streaming_equals_batch_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EC7);
    let mut confirmed_configs = 0;
    for _ in 0..20 {
        let cfg = random_rtca_config(&mut rng);
        let (y, y_hat) = random_error_signal(&mut rng, 10_000);
        let t0 = rng.random_range(0..50);
        let stream = rtca_streaming(&y, &y_hat, t0, &cfg);
        let batch = rtca_batch(&y, &y_hat, t0, &cfg);
        for (i, (s, b)) in stream.iter().zip(&batch).enumerate() {
            assert_eq!(s, b, "step {i} of {cfg:?}");
        }
        confirmed_configs += usize::from(stream.iter().any(|r| r.status == Status::Confirmed));
    }
    assert!(confirmed_configs >= 10, "only {confirmed_configs} configs reached confirmation");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn confirmation_needs_persist_consecutive_exceedances(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = random_rtca_config(&mut rng);
        let (y, y_hat) = random_error_signal(&mut rng, 2000);
        let mut state = DetectorState::default();
        let mut run = 0;
        let mut events = 0;
        for (t, (&a, &b)) in y.iter().zip(&y_hat).enumerate() {
            let out = state.step("n", a, b, &cfg, t).unwrap();
            prop_assert!(out.tau_c >= out.tau_rt);
            let exceed = t > cfg.warmup_steps && out.e_rt > out.tau_rt && out.e_c > out.tau_c;
            run = if exceed { run + 1 } else { 0 };
            if out.status == Status::Confirmed {
                prop_assert!(run >= cfg.persist);
            }
            if let Some(e) = out.event {
                events += 1;
                prop_assert_eq!(run, cfg.persist);
                prop_assert!(e.detected_at >= cfg.warmup_steps + cfg.persist);
                prop_assert!((0.0..=1.0).contains(&e.confidence));
            }
        }
        prop_assert!(events <= y.len());
    }
}
