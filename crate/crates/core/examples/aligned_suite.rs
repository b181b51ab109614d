//! Builds a synthetic suite with one aligned auxiliary and lets the
//! scheduler find it.

use asap::driver::{run, RunConfig};
use asap::environment::{make_aligned_suite, SuiteSpec};

fn main() -> asap::Result<()> {
    let spec = SuiteSpec { dim: 8, num_aux: 8, aligned_index: 3, alignment_cos: 0.9, seed: 1 };
    let (env, certificate) = make_aligned_suite(spec)?;
    certificate.verify(&env, 1e-6)?;
    for (arm, c) in certificate.cosines.iter().enumerate() {
        println!("arm {arm}: cosine at start {c:+.3}");
    }

    let trace = run(&RunConfig::synthetic(500, env))?;
    println!("selection counts: {:?}", trace.selection_counts());
    println!("final target loss: {:.4e}", trace.final_target_loss().unwrap_or(f64::NAN));
    Ok(())
}
