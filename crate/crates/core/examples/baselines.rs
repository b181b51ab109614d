//! All policies on a suite whose aligned auxiliary changes halfway through.

use asap::driver::{run_policy, Policy, RunConfig};
use asap::environment::{make_shifting_suite, SuiteSpec};

fn main() -> asap::Result<()> {
    let seeds = 0..10;
    let mut totals = vec![0.0; Policy::ALL.len()];
    for seed in seeds.clone() {
        let spec = SuiteSpec { dim: 8, num_aux: 8, aligned_index: 3, alignment_cos: 0.9, seed };
        let (env, _) = make_shifting_suite(spec, 5, 251)?;
        let mut cfg = RunConfig::synthetic(500, env);
        cfg.seed = seed;
        for (total, policy) in totals.iter_mut().zip(Policy::ALL) {
            *total += run_policy(&cfg, policy)?.final_target_loss().unwrap_or(f64::NAN);
        }
    }
    let n = seeds.count() as f64;
    println!("mean final target loss over {n} seeds");
    for (total, policy) in totals.iter().zip(Policy::ALL) {
        println!("{:>20}: {:.4}", policy.name(), total / n);
    }
    Ok(())
}
