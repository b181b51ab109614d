//! Reward arithmetic: gradient summaries, alignment, and the mixing schedule.

use asap::reward::{alignment_reward, summarize_gradients, AlphaSchedule, RewardComponents};

fn main() -> asap::Result<()> {
    let target = [1.0, 2.0, -0.5];
    for (name, aux) in [("parallel", [2.0, 4.0, -1.0]), ("orthogonal", [2.0, -1.0, 0.0]), ("opposed", [-1.0, -2.0, 0.5])] {
        let s = summarize_gradients(&aux, &target)?;
        println!("{name:>10}: dot {:>6.2}  cos {:>5.2}", s.dot, alignment_reward(&s));
    }

    let horizon = 100;
    let schedules = [
        ("linear", AlphaSchedule::linear(0.5, 0.0)),
        ("exponential", AlphaSchedule::exponential(0.5, 0.0, 0.97)),
        ("constant", AlphaSchedule::constant(0.5)),
    ];
    let s = summarize_gradients(&[0.9, 1.7, -0.2], &target)?;
    for (name, schedule) in schedules {
        let rewards: Vec<String> = [0, 25, 50, 100]
            .iter()
            .map(|&t| {
                let alpha = schedule.alpha_at(t, horizon)?;
                let r = RewardComponents::compute(0.8, &s, alpha)?;
                Ok(format!("t={t}: {:.3}", r.combined))
            })
            .collect::<asap::Result<_>>()?;
        println!("{name:>11}: {}", rewards.join("  "));
    }
    Ok(())
}
