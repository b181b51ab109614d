use asap::driver::{synthetic_environment, Driver, Policy, RunConfig};
use asap::environment::{make_shifting_suite, SuiteSpec};
use asap::Error;

fn config() -> RunConfig {
    let spec = SuiteSpec { dim: 6, num_aux: 5, aligned_index: 1, alignment_cos: 0.8, seed: 4 };
    let (mut env, _) = make_shifting_suite(spec, 3, 120).unwrap();
    env.gradient_noise_std = 0.02;
    let mut cfg = RunConfig::synthetic(200, env);
    cfg.seed = 17;
    cfg
}

#[test]
fn split_run_matches_uninterrupted_run() {
    for policy in Policy::ALL {
        let cfg = config();
        let mut whole = Driver::initialize(&cfg, policy, synthetic_environment(&cfg).unwrap()).unwrap();
        whole.run_to_end().unwrap();

        let mut first = Driver::initialize(&cfg, policy, synthetic_environment(&cfg).unwrap()).unwrap();
        for _ in 0..100 {
            first.run_turn().unwrap();
        }
        let blob = first.checkpoint();
        let mut second = Driver::resume(&cfg, synthetic_environment(&cfg).unwrap(), &blob).unwrap();
        second.run_to_end().unwrap();

        let mut joined = first.trace().records.clone();
        joined.extend(second.trace().records.iter().cloned());
        assert_eq!(joined.len(), 200);
        for (a, b) in joined.iter().zip(&whole.trace().records) {
            assert_eq!(a.selected, b.selected, "{policy} turn {}", a.turn);
            assert_eq!(a.estimate_after.to_bits(), b.estimate_after.to_bits(), "{policy} turn {}", a.turn);
            assert_eq!(a.target_loss_after.to_bits(), b.target_loss_after.to_bits(), "{policy} turn {}", a.turn);
        }
        assert_eq!(second.state(), whole.state());
    }
}

#[test]
fn resume_rejects_other_config() {
    let cfg = config();
    let mut d = Driver::initialize(&cfg, Policy::Ucb, synthetic_environment(&cfg).unwrap()).unwrap();
    d.run_turn().unwrap();
    let blob = d.checkpoint();
    let mut other = cfg.clone();
    other.beta = 0.3;
    let env = synthetic_environment(&other).unwrap();
    assert!(matches!(Driver::resume(&other, env, &blob), Err(Error::Checkpoint(_))));
}

#[test]
fn truncated_blob_is_rejected() {
    let cfg = config();
    let d = Driver::initialize(&cfg, Policy::Ucb, synthetic_environment(&cfg).unwrap()).unwrap();
    let blob = d.checkpoint();
    let env = synthetic_environment(&cfg).unwrap();
    assert!(matches!(Driver::resume(&cfg, env, &blob[..blob.len() / 2]), Err(Error::Checkpoint(_))));
}
