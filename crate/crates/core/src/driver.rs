//! The selection loop: probe every arm once, then for each turn select an
//! arm, train jointly on target and selected auxiliary, score the turn and
//! update the pulled arm's estimate.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{argmax_lowest_index, ArmId, Normalization, PolicyState, DEFAULT_SMOOTHING};
use crate::environment::{Environment, EnvironmentConfig, Mixing, SyntheticEnvironment, TrainRequest};
use crate::error::{Error, Result};
use crate::reward::{combine, AlphaSchedule, RewardComponents};
use crate::trace;

/// Which parameters the convergence reward's loss is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmEval {
    /// Loss at θ_{t-1}, the one already computed for the gradient step.
    #[default]
    PreUpdate,
    /// Loss at θ_t, one extra evaluation per turn.
    PostUpdate,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: u64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub pm_eval: PmEval,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,
    #[serde(default)]
    pub alpha_schedule: AlphaSchedule,
    /// `None` means the environment is an external trainer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentConfig>,
}

fn default_beta() -> f64 {
    DEFAULT_SMOOTHING
}

impl RunConfig {
    /// Defaults with an external environment.
    pub fn external(horizon: u64) -> Self {
        Self {
            horizon,
            beta: DEFAULT_SMOOTHING,
            pm_eval: PmEval::default(),
            normalization: Normalization::default(),
            seed: 0,
            trace_path: None,
            alpha_schedule: AlphaSchedule::default(),
            environment: None,
        }
    }

    pub fn synthetic(horizon: u64, environment: EnvironmentConfig) -> Self {
        Self {
            environment: Some(environment),
            ..Self::external(horizon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config(format!("beta {} outside [0, 1]", self.beta)));
        }
        self.alpha_schedule.validate()?;
        if let Some(env) = &self.environment {
            env.validate()?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring `trace_path`.
    pub fn digest(&self) -> String {
        let canonical = RunConfig {
            trace_path: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("run config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Arm-selection rule. `Ucb` is the scheduler; the rest are baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Ucb,
    UniformRandom,
    RoundRobin,
    /// The arm with the best initial estimate, forever.
    FixedBestInitial,
    /// Mean of every auxiliary gradient each turn. The record's arm cycles
    /// round-robin and only carries bookkeeping.
    AllMixed,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Ucb,
        Policy::UniformRandom,
        Policy::RoundRobin,
        Policy::FixedBestInitial,
        Policy::AllMixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Ucb => "ucb",
            Policy::UniformRandom => "uniform_random",
            Policy::RoundRobin => "round_robin",
            Policy::FixedBestInitial => "fixed_best_initial",
            Policy::AllMixed => "all_mixed",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown policy {s:?}")))
    }
}

/// Initialization probe of one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitRecord {
    pub arm: ArmId,
    pub loss: f64,
    pub cosine: f64,
    pub estimate0: f64,
}

/// Audit record of one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnRecord {
    pub turn: u64,
    /// Bounds at the start of the turn, before the play is counted.
    pub ucb_scores: Vec<f64>,
    pub selected: ArmId,
    pub loss_target: f64,
    pub loss_aux: f64,
    pub reward: RewardComponents,
    pub estimate_after: f64,
    pub plays_after: u64,
    pub target_loss_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub config_digest: String,
    pub policy: Policy,
    pub init_records: Vec<InitRecord>,
    pub records: Vec<TurnRecord>,
}

impl Trace {
    pub fn num_arms(&self) -> usize {
        self.init_records.len()
    }

    /// Times each arm was selected during the loop.
    pub fn selection_counts(&self) -> Vec<u64> {
        let mut counts = vec![0; self.num_arms()];
        for r in &self.records {
            counts[r.selected.0] += 1;
        }
        counts
    }

    pub fn selections(&self) -> Vec<ArmId> {
        self.records.iter().map(|r| r.selected).collect()
    }

    pub fn final_target_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.target_loss_after)
    }
}

/// One run of the loop against an [`Environment`].
pub struct Driver<E> {
    config: RunConfig,
    policy: Policy,
    state: PolicyState,
    env: E,
    rng: ChaCha8Rng,
    fixed_arm: ArmId,
    trace: Trace,
    scheduler_time: Duration,
}

impl<E: Environment> Driver<E> {
    /// Probes every arm at the initial parameters (no update) and seeds the
    /// estimates with the even mix of convergence and alignment.
    pub fn initialize(config: &RunConfig, policy: Policy, mut env: E) -> Result<Self> {
        config.validate()?;
        let k = env.num_arms();
        let mut state = PolicyState::new(k, config.horizon, config.beta)?.with_normalization(config.normalization);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init_records = Vec::with_capacity(k);
        for arm in (0..k).map(ArmId) {
            let probe = env.probe(arm, &mut rng)?;
            let components = RewardComponents::compute(probe.loss_aux, &probe.summary, 0.5)?;
            let estimate0 = state.seed_arm(arm, components.combined)?;
            init_records.push(InitRecord {
                arm,
                loss: probe.loss_aux,
                cosine: components.pt,
                estimate0,
            });
        }
        let initial: Vec<f64> = init_records.iter().map(|r| r.estimate0).collect();
        let fixed_arm = argmax_lowest_index(&initial).expect("pool is non-empty");
        Ok(Self {
            trace: Trace {
                config_digest: config.digest(),
                policy,
                init_records,
                records: Vec::with_capacity(config.horizon.min(1 << 20) as usize),
            },
            config: config.clone(),
            policy,
            state,
            env,
            rng,
            fixed_arm,
            scheduler_time: Duration::ZERO,
        })
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }

    pub fn environment(&self) -> &E {
        &self.env
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn is_finished(&self) -> bool {
        self.state.turn() >= self.config.horizon
    }

    /// Time spent in selection, reward computation and the estimate update,
    /// excluding environment evaluations.
    pub fn scheduler_time(&self) -> Duration {
        self.scheduler_time
    }

    fn choose(&mut self, turn: u64, scores: &mut Vec<f64>) -> Result<ArmId> {
        let k = self.state.num_arms();
        if self.policy == Policy::Ucb {
            return self.state.select_with_scores(scores);
        }
        scores.clear();
        scores.extend(self.state.ucb_scores());
        Ok(match self.policy {
            Policy::Ucb => unreachable!(),
            Policy::UniformRandom => ArmId(self.rng.random_range(0..k)),
            Policy::RoundRobin | Policy::AllMixed => ArmId(((turn - 1) % k as u64) as usize),
            Policy::FixedBestInitial => self.fixed_arm,
        })
    }

    /// Executes the next turn and returns its record.
    pub fn run_turn(&mut self) -> Result<&TurnRecord> {
        let started = Instant::now();
        let turn = self.state.advance_turn()?;
        let mut scores = Vec::with_capacity(self.state.num_arms());
        let arm = self.choose(turn, &mut scores)?;
        let mut scheduler = started.elapsed();

        let request = TrainRequest {
            turn,
            arm,
            mixing: if self.policy == Policy::AllMixed {
                Mixing::AllAuxiliaries
            } else {
                Mixing::Selected
            },
            post_update_loss: self.config.pm_eval == PmEval::PostUpdate,
        };
        let obs = self.env.train(&request, &mut self.rng)?;

        let started = Instant::now();
        let diverged = |e: Error| match e {
            Error::RewardDomain(detail) => Error::Divergence {
                turn,
                arm: arm.0,
                detail,
            },
            other => other,
        };
        let pm_loss = match self.config.pm_eval {
            PmEval::PreUpdate => obs.loss_aux,
            PmEval::PostUpdate => obs
                .loss_aux_post
                .ok_or_else(|| Error::config("environment did not report the post-update loss"))?,
        };
        let alpha = self.config.alpha_schedule.alpha_at(turn, self.config.horizon)?;
        let reward = RewardComponents::compute(pm_loss, &obs.summary, alpha).map_err(diverged)?;
        let estimate_after = self.state.record_reward(arm, reward.combined).map_err(diverged)?;
        let plays_after = self.state.arms()[arm.0].plays;
        scheduler += started.elapsed();
        self.scheduler_time += scheduler;

        self.trace.records.push(TurnRecord {
            turn,
            ucb_scores: scores,
            selected: arm,
            loss_target: obs.loss_target,
            loss_aux: obs.loss_aux,
            reward,
            estimate_after,
            plays_after,
            target_loss_after: obs.target_loss_after,
        });
        Ok(self.trace.records.last().expect("just pushed"))
    }

    /// Runs the remaining turns.
    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.run_turn()?;
        }
        Ok(())
    }

    /// Serializes everything needed to continue this run: policy state,
    /// environment parameters, RNG position and initialization probes.
    pub fn checkpoint(&self) -> String {
        let blob = DriverBlob {
            format: DRIVER_FORMAT.to_string(),
            version: DRIVER_VERSION,
            config_digest: self.trace.config_digest.clone(),
            policy: self.policy,
            policy_state: self.state.checkpoint(),
            parameters: self.env.parameters().map(<[f64]>::to_vec),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            fixed_arm: self.fixed_arm.0,
            init: self
                .trace
                .init_records
                .iter()
                .map(|r| (r.loss, r.cosine, r.estimate0))
                .collect(),
        };
        serde_json::to_string(&blob).expect("driver blob serializes")
    }

    /// Continues a run from [`checkpoint`](Self::checkpoint). The returned
    /// driver's trace holds the initialization probes and only the turns
    /// executed after resuming.
    pub fn resume(config: &RunConfig, mut env: E, blob: &str) -> Result<Self> {
        config.validate()?;
        let raw: DriverBlob = serde_json::from_str(blob).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if raw.format != DRIVER_FORMAT || raw.version != DRIVER_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {:?} v{}",
                raw.format, raw.version
            )));
        }
        let digest = config.digest();
        if raw.config_digest != digest {
            return Err(Error::Checkpoint("checkpoint belongs to a different configuration".into()));
        }
        let state = PolicyState::restore(&raw.policy_state)?;
        if state.num_arms() != env.num_arms() || raw.init.len() != env.num_arms() {
            return Err(Error::Checkpoint("arm count does not match the environment".into()));
        }
        env.restore(raw.parameters.as_deref(), state.turn())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let pos = raw
            .rng_word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng position".into()))?;
        rng.set_word_pos(pos);
        Ok(Self {
            config: config.clone(),
            policy: raw.policy,
            trace: Trace {
                config_digest: digest,
                policy: raw.policy,
                init_records: raw
                    .init
                    .iter()
                    .enumerate()
                    .map(|(a, &(loss, cosine, estimate0))| InitRecord {
                        arm: ArmId(a),
                        loss,
                        cosine,
                        estimate0,
                    })
                    .collect(),
                records: Vec::new(),
            },
            state,
            env,
            rng,
            fixed_arm: ArmId(raw.fixed_arm),
            scheduler_time: Duration::ZERO,
        })
    }
}

const DRIVER_FORMAT: &str = "asap-run";
const DRIVER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DriverBlob {
    format: String,
    version: u32,
    config_digest: String,
    policy: Policy,
    policy_state: String,
    parameters: Option<Vec<f64>>,
    rng_word_pos: String,
    fixed_arm: usize,
    init: Vec<(f64, f64, f64)>,
}

/// Builds the synthetic environment named by `config`.
pub fn synthetic_environment(config: &RunConfig) -> Result<SyntheticEnvironment> {
    let env = config
        .environment
        .clone()
        .ok_or_else(|| Error::config("run needs a synthetic environment; external trainers use `serve`"))?;
    SyntheticEnvironment::new(env)
}

/// Runs [`Policy::Ucb`] on the synthetic environment; see [`run_policy`].
pub fn run(config: &RunConfig) -> Result<Trace> {
    run_policy(config, Policy::Ucb)
}

/// Runs one of the baseline policies on the synthetic environment.
pub fn run_baseline(config: &RunConfig, policy: Policy) -> Result<Trace> {
    run_policy(config, policy)
}

/// Full run. When `config.trace_path` is set the trace is written there,
/// including the partial trace of a run that diverged.
pub fn run_policy(config: &RunConfig, policy: Policy) -> Result<Trace> {
    let env = synthetic_environment(config)?;
    let mut driver = Driver::initialize(config, policy, env)?;
    let outcome = driver.run_to_end();
    if let Some(path) = &config.trace_path {
        trace::write_trace(path, driver.trace(), config)?;
    }
    outcome?;
    Ok(driver.into_trace())
}

/// Initial estimate for a probe: the even mix used before the loop starts.
pub fn initial_estimate(loss: f64, cosine: f64) -> Result<f64> {
    combine(-loss, cosine, 0.5)
}
