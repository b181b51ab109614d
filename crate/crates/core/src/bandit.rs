//! Non-stationary UCB policy over a pool of auxiliary datasets.
//!
//! Each arm carries a play count `n_a` and an exponentially smoothed reward
//! estimate `R̂_a`. Selection at turn `t` maximizes
//!
//! ```text
//! ucb_a = R̂_a + sqrt(2 ln t / n_a)        (+inf when n_a = 0)
//! ```
//!
//! and the pulled arm's estimate moves toward the observed reward with
//! `R̂_a <- (1 - β) R̂_a + β R`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of an auxiliary dataset within the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArmId(pub usize);

impl ArmId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-arm bandit statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmStats {
    /// Times the arm has been played, including the initialization probe.
    pub plays: u64,
    /// Smoothed reward estimate.
    pub estimate: f64,
}

impl ArmStats {
    pub fn new(plays: u64, estimate: f64) -> Self {
        Self { plays, estimate }
    }
}

/// Upper confidence bound of one arm at `turn`.
///
/// Unplayed arms score `+inf`. `turn` must be at least 1 so the logarithm is
/// non-negative.
pub fn ucb_score(stats: &ArmStats, turn: u64) -> f64 {
    debug_assert!(turn >= 1, "ucb_score needs turn >= 1");
    if stats.plays == 0 {
        return f64::INFINITY;
    }
    stats.estimate + (2.0 * (turn as f64).ln() / stats.plays as f64).sqrt()
}

/// Index of the largest score; the lowest index wins ties.
///
/// Returns `None` for an empty slice. NaN scores never win.
pub fn argmax_lowest_index(scores: &[f64]) -> Option<ArmId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            None if !s.is_nan() => best = Some((i, s)),
            Some((_, b)) if s > b => best = Some((i, s)),
            _ => {}
        }
    }
    best.map(|(i, _)| ArmId(i))
}

/// How observed rewards are mapped before they enter the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Rewards are used as observed.
    #[default]
    Raw,
    /// Rewards are rescaled to `[-1, 1]` using the running minimum and
    /// maximum of every reward observed so far.
    RunningMinmax,
}

/// Running state behind [`Normalization`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardScale {
    pub mode: Normalization,
    /// Observed `(min, max)`, `None` until the first observation.
    pub range: Option<(f64, f64)>,
}

impl RewardScale {
    pub fn new(mode: Normalization) -> Self {
        Self { mode, range: None }
    }

    /// Records `raw` and returns the value fed to the estimate update.
    pub fn apply(&mut self, raw: f64) -> f64 {
        match self.mode {
            Normalization::Raw => raw,
            Normalization::RunningMinmax => {
                let (lo, hi) = match self.range {
                    None => (raw, raw),
                    Some((lo, hi)) => (lo.min(raw), hi.max(raw)),
                };
                self.range = Some((lo, hi));
                if hi > lo {
                    (2.0 * (raw - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
                } else {
                    0.0
                }
            }
        }
    }
}

/// The decision-making state: one [`ArmStats`] per arm plus the turn clock.
///
/// A single decision loop owns and mutates this value.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    arms: Vec<ArmStats>,
    turn: u64,
    horizon: u64,
    smoothing: f64,
    scale: RewardScale,
}

pub const DEFAULT_SMOOTHING: f64 = 0.1;

impl PolicyState {
    /// A pool of `num_arms` unplayed arms.
    pub fn new(num_arms: usize, horizon: u64, smoothing: f64) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::config("arm pool is empty"));
        }
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(Error::config(format!(
                "smoothing factor {smoothing} outside [0, 1]"
            )));
        }
        Ok(Self {
            arms: vec![ArmStats::default(); num_arms],
            turn: 0,
            horizon,
            smoothing,
            scale: RewardScale::default(),
        })
    }

    /// Pool whose arms have each been probed once, with the given initial
    /// estimates.
    pub fn with_initial_estimates(estimates: &[f64], horizon: u64, smoothing: f64) -> Result<Self> {
        let mut state = Self::new(estimates.len(), horizon, smoothing)?;
        for (arm, &e) in estimates.iter().enumerate() {
            state.seed_arm(ArmId(arm), e)?;
        }
        Ok(state)
    }

    pub fn with_normalization(mut self, mode: Normalization) -> Self {
        self.scale = RewardScale::new(mode);
        self
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn arms(&self) -> &[ArmStats] {
        &self.arms
    }

    pub fn arm(&self, arm: ArmId) -> Result<&ArmStats> {
        self.arms
            .get(arm.0)
            .ok_or_else(|| Error::config(format!("arm {arm} outside pool of {}", self.arms.len())))
    }

    pub fn turn(&self) -> u64 {
        self.turn
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn scale(&self) -> &RewardScale {
        &self.scale
    }

    pub fn total_plays(&self) -> u64 {
        self.arms.iter().map(|a| a.plays).sum()
    }

    /// Initialization probe: sets `n_a = 1` and the initial estimate. The
    /// observed value passes through the reward normalization.
    pub fn seed_arm(&mut self, arm: ArmId, initial: f64) -> Result<f64> {
        if !initial.is_finite() {
            return Err(Error::RewardDomain(format!(
                "initial reward {initial} for arm {arm} is not finite"
            )));
        }
        let value = self.scale.apply(initial);
        let stats = self.arm_mut(arm)?;
        stats.plays = 1;
        stats.estimate = value;
        Ok(value)
    }

    /// Moves the clock to the next turn and returns it.
    pub fn advance_turn(&mut self) -> Result<u64> {
        if self.turn >= self.horizon {
            return Err(Error::config(format!(
                "horizon {} exhausted",
                self.horizon
            )));
        }
        self.turn += 1;
        Ok(self.turn)
    }

    /// UCB of every arm at the current turn.
    pub fn ucb_scores(&self) -> Vec<f64> {
        let turn = self.turn.max(1);
        self.arms.iter().map(|a| ucb_score(a, turn)).collect()
    }

    /// Arm with the highest bound at the current turn (lowest index on ties).
    pub fn select_arm(&self) -> Result<ArmId> {
        if self.turn == 0 {
            return Err(Error::config("select_arm called before the first turn"));
        }
        self.select_with_scores(&mut Vec::with_capacity(self.arms.len()))
    }

    /// [`select_arm`](Self::select_arm), writing the scores into `scores`.
    pub fn select_with_scores(&self, scores: &mut Vec<f64>) -> Result<ArmId> {
        if self.turn == 0 {
            return Err(Error::config("select_arm called before the first turn"));
        }
        scores.clear();
        scores.extend(self.arms.iter().map(|a| ucb_score(a, self.turn)));
        argmax_lowest_index(scores).ok_or_else(|| Error::config("arm pool is empty"))
    }

    /// Exponential-smoothing update of one arm; also counts the play.
    ///
    /// Returns the new estimate. Other arms are untouched.
    pub fn update_estimate(&mut self, arm: ArmId, observed: f64) -> Result<f64> {
        if !observed.is_finite() {
            return Err(Error::RewardDomain(format!(
                "observed reward {observed} for arm {arm} is not finite"
            )));
        }
        let beta = self.smoothing;
        let stats = self.arm_mut(arm)?;
        stats.estimate = (1.0 - beta) * stats.estimate + beta * observed;
        stats.plays += 1;
        Ok(stats.estimate)
    }

    /// Normalizes `raw` according to the configured mode, then updates.
    pub fn record_reward(&mut self, arm: ArmId, raw: f64) -> Result<f64> {
        if !raw.is_finite() {
            return Err(Error::RewardDomain(format!(
                "observed reward {raw} for arm {arm} is not finite"
            )));
        }
        self.arm(arm)?;
        let value = self.scale.apply(raw);
        self.update_estimate(arm, value)
    }

    fn arm_mut(&mut self, arm: ArmId) -> Result<&mut ArmStats> {
        let k = self.arms.len();
        self.arms
            .get_mut(arm.0)
            .ok_or_else(|| Error::config(format!("arm {arm} outside pool of {k}")))
    }
}

pub const CHECKPOINT_FORMAT: &str = "asap-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyBlob {
    format: String,
    version: u32,
    num_arms: usize,
    turn: u64,
    horizon: u64,
    smoothing: f64,
    normalization: Normalization,
    reward_range: Option<(f64, f64)>,
    arms: Vec<(u64, f64)>,
}

impl PolicyState {
    /// Canonical JSON encoding of the full state. Floats round-trip exactly.
    pub fn checkpoint(&self) -> String {
        let blob = PolicyBlob {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            num_arms: self.arms.len(),
            turn: self.turn,
            horizon: self.horizon,
            smoothing: self.smoothing,
            normalization: self.scale.mode,
            reward_range: self.scale.range,
            arms: self.arms.iter().map(|a| (a.plays, a.estimate)).collect(),
        };
        serde_json::to_string(&blob).expect("policy blob serializes")
    }

    /// Inverse of [`checkpoint`](Self::checkpoint). Rejects unknown versions
    /// and blobs whose contents violate the state invariants.
    pub fn restore(blob: &str) -> Result<Self> {
        let raw: PolicyBlob =
            serde_json::from_str(blob).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if raw.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format tag {:?}", raw.format)));
        }
        if raw.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                raw.version
            )));
        }
        if raw.num_arms == 0 || raw.num_arms != raw.arms.len() {
            return Err(Error::Checkpoint(format!(
                "declared {} arms, found {}",
                raw.num_arms,
                raw.arms.len()
            )));
        }
        if raw.turn > raw.horizon {
            return Err(Error::Checkpoint(format!(
                "turn {} beyond horizon {}",
                raw.turn, raw.horizon
            )));
        }
        if !(0.0..=1.0).contains(&raw.smoothing) {
            return Err(Error::Checkpoint(format!("smoothing {} outside [0, 1]", raw.smoothing)));
        }
        if raw.arms.iter().any(|&(_, e)| !e.is_finite()) {
            return Err(Error::Checkpoint("non-finite arm estimate".into()));
        }
        Ok(Self {
            arms: raw.arms.into_iter().map(|(p, e)| ArmStats::new(p, e)).collect(),
            turn: raw.turn,
            horizon: raw.horizon,
            smoothing: raw.smoothing,
            scale: RewardScale {
                mode: raw.normalization,
                range: raw.reward_range,
            },
        })
    }
}
