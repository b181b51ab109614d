//! Interrupts a run, serializes it, and continues from the checkpoint.

use asap::driver::{synthetic_environment, Driver, Policy, RunConfig};
use asap::environment::{make_aligned_suite, SuiteSpec};

fn main() -> asap::Result<()> {
    let spec = SuiteSpec { dim: 4, num_aux: 3, aligned_index: 2, alignment_cos: 0.8, seed: 7 };
    let (env, _) = make_aligned_suite(spec)?;
    let cfg = RunConfig::synthetic(200, env);

    let mut first = Driver::initialize(&cfg, Policy::Ucb, synthetic_environment(&cfg)?)?;
    for _ in 0..100 {
        first.run_turn()?;
    }
    let blob = first.checkpoint();
    println!("checkpoint after turn {}: {} bytes", first.state().turn(), blob.len());

    let mut resumed = Driver::resume(&cfg, synthetic_environment(&cfg)?, &blob)?;
    resumed.run_to_end()?;

    let mut whole = Driver::initialize(&cfg, Policy::Ucb, synthetic_environment(&cfg)?)?;
    whole.run_to_end()?;
    let same = resumed.state() == whole.state()
        && resumed.trace().records.iter().zip(&whole.trace().records[100..]).all(|(a, b)| a == b);
    println!("resumed run matches uninterrupted run: {same}");
    Ok(())
}
