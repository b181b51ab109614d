//! UCB selection on a hand-driven three-arm pool.

use asap::bandit::{ArmId, PolicyState};

fn main() -> asap::Result<()> {
    let means = [0.2, 0.5, 0.4];
    let mut state = PolicyState::with_initial_estimates(&[0.0, 0.0, 0.0], 40, 0.3)?;
    for _ in 0..40 {
        let turn = state.advance_turn()?;
        let scores = state.ucb_scores();
        let arm = state.select_arm()?;
        let estimate = state.update_estimate(arm, means[arm.index()])?;
        if turn <= 5 || turn % 10 == 0 {
            let shown: Vec<String> = scores.iter().map(|s| format!("{s:.3}")).collect();
            println!("turn {turn:>2}: bounds [{}] -> arm {arm}, estimate {estimate:.3}", shown.join(", "));
        }
    }
    let plays: Vec<u64> = state.arms().iter().map(|a| a.plays).collect();
    println!("plays per arm: {plays:?}");
    let estimates: Vec<f64> = state.arms().iter().map(|a| a.estimate).collect();
    let best = asap::bandit::argmax_lowest_index(&estimates).unwrap_or(ArmId(0));
    println!("highest estimate: arm {best} ({:.3}), true means {means:?}", estimates[best.index()]);
    Ok(())
}
