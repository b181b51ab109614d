//! Synthetic training environment: diagonal quadratic tasks with analytic
//! losses and gradients, a plain gradient-descent model, and constructors for
//! suites with a known gradient-alignment geometry.
//!
//! A task's loss is `½ Σ λᵢ (θᵢ − cᵢ)²` and its gradient `λ ⊙ (θ − c)`.
//! The driver talks to environments only through the [`Environment`] trait,
//! so scripted reward tables and real trainers plug into the same loop.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bandit::ArmId;
use crate::error::{Error, Result};
use crate::reward::{alignment_reward, summarize_gradients, GradientSummary};

pub const DEFAULT_LEARNING_RATE: f64 = 0.05;

/// Model parameters θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension { expected, found });
    }
    Ok(())
}

/// A convex quadratic stand-in for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub label: String,
    pub center: Vec<f64>,
    /// Diagonal curvature λ.
    pub curvature: Vec<f64>,
}

impl SyntheticTask {
    pub fn new(label: impl Into<String>, center: Vec<f64>, curvature: Vec<f64>) -> Result<Self> {
        let task = Self {
            label: label.into(),
            center,
            curvature,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.center.len(), self.curvature.len())?;
        if self.center.is_empty() {
            return Err(Error::config(format!("task {:?} has dimension 0", self.label)));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::config(format!("task {:?} has a non-finite center", self.label)));
        }
        if self.curvature.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::config(format!(
                "task {:?} has a negative or non-finite curvature",
                self.label
            )));
        }
        if self.curvature.iter().all(|&l| l == 0.0) {
            return Err(Error::config(format!("task {:?} has zero curvature", self.label)));
        }
        Ok(())
    }

    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        let sum: f64 = theta
            .iter()
            .zip(&self.center)
            .zip(&self.curvature)
            .map(|((&t, &c), &l)| l * (t - c) * (t - c))
            .sum();
        Ok(0.5 * sum)
    }

    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(theta, &mut out)?;
        Ok(out)
    }

    pub fn gradient_into(&self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), theta.len())?;
        check_dim(self.dim(), out.len())?;
        for (((o, &t), &c), &l) in out.iter_mut().zip(theta).zip(&self.center).zip(&self.curvature) {
            *o = l * (t - c);
        }
        Ok(())
    }
}

/// One gradient-descent step on the summed gradients.
pub fn joint_step(
    theta: &ParameterVector,
    grad_target: &[f64],
    grad_aux: &[f64],
    learning_rate: f64,
) -> Result<ParameterVector> {
    let mut next = theta.clone();
    apply_step(&mut next.0, grad_target, grad_aux, learning_rate)?;
    Ok(next)
}

fn apply_step(theta: &mut [f64], grad_target: &[f64], grad_aux: &[f64], lr: f64) -> Result<()> {
    check_dim(theta.len(), grad_target.len())?;
    check_dim(theta.len(), grad_aux.len())?;
    for ((t, &gt), &ga) in theta.iter_mut().zip(grad_target).zip(grad_aux) {
        *t -= lr * (gt + ga);
    }
    Ok(())
}

/// At the start of `at_turn`, the tasks behind two arms trade places.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeChange {
    pub at_turn: u64,
    pub swap: [usize; 2],
}

/// Target task, auxiliary pool and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub dim: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of zero-mean Gaussian noise added to every
    /// gradient entry; 0 gives exact full-batch gradients.
    #[serde(default)]
    pub gradient_noise_std: f64,
    pub theta0: ParameterVector,
    pub target: SyntheticTask,
    pub auxiliaries: Vec<SyntheticTask>,
    #[serde(default)]
    pub regime_changes: Vec<RegimeChange>,
}

fn default_learning_rate() -> f64 {
    DEFAULT_LEARNING_RATE
}

impl EnvironmentConfig {
    pub fn num_arms(&self) -> usize {
        self.auxiliaries.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("environment dimension must be positive"));
        }
        if self.auxiliaries.is_empty() {
            return Err(Error::config("auxiliary pool is empty"));
        }
        check_dim(self.dim, self.theta0.dim())?;
        if self.theta0.0.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("theta0 has non-finite entries"));
        }
        for task in std::iter::once(&self.target).chain(&self.auxiliaries) {
            task.validate()?;
            check_dim(self.dim, task.dim())?;
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.gradient_noise_std >= 0.0 && self.gradient_noise_std.is_finite()) {
            return Err(Error::config("gradient noise std must be non-negative"));
        }
        let k = self.auxiliaries.len();
        for rc in &self.regime_changes {
            if rc.swap.iter().any(|&i| i >= k) {
                return Err(Error::config(format!(
                    "regime change at turn {} swaps arms outside the pool",
                    rc.at_turn
                )));
            }
        }
        Ok(())
    }

    /// Largest step size for which descent of every joint objective is
    /// guaranteed: `1 / max_i(λ_target,i + λ_aux,i)`.
    pub fn max_safe_learning_rate(&self) -> f64 {
        let worst = self
            .auxiliaries
            .iter()
            .flat_map(|a| a.curvature.iter().zip(&self.target.curvature).map(|(x, y)| x + y))
            .fold(0.0, f64::max);
        if worst > 0.0 {
            1.0 / worst
        } else {
            f64::INFINITY
        }
    }

    pub fn step_size_is_safe(&self) -> bool {
        self.learning_rate < self.max_safe_learning_rate()
    }
}

/// Request for a synthetic suite with a planted alignment pattern at θ₀.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSpec {
    pub dim: usize,
    pub num_aux: usize,
    pub aligned_index: usize,
    pub alignment_cos: f64,
    pub seed: u64,
}

/// Gradient cosines actually achieved at θ₀, one per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryCertificate {
    pub aligned_index: usize,
    pub requested_cos: f64,
    pub cosines: Vec<f64>,
}

impl GeometryCertificate {
    /// Re-derives the cosines from `config` and compares within `tol`.
    pub fn verify(&self, config: &EnvironmentConfig, tol: f64) -> Result<()> {
        let got = cosines_at_theta0(config)?;
        check_dim(self.cosines.len(), got.len())?;
        for (arm, (a, b)) in self.cosines.iter().zip(&got).enumerate() {
            if (a - b).abs() > tol {
                return Err(Error::Construction(format!(
                    "arm {arm}: certificate cosine {a} but geometry gives {b}"
                )));
            }
        }
        Ok(())
    }
}

/// Cosine between each auxiliary gradient and the target gradient at θ₀.
pub fn cosines_at_theta0(config: &EnvironmentConfig) -> Result<Vec<f64>> {
    let theta = config.theta0.as_slice();
    let gt = config.target.gradient(theta)?;
    config
        .auxiliaries
        .iter()
        .map(|a| Ok(alignment_reward(&summarize_gradients(&a.gradient(theta)?, &gt)?)))
        .collect()
}

fn unit(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn curvature_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(0.5..1.5)).collect()
}

/// Random unit vector orthogonal to the unit vector `u`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, u: &[f64]) -> Vec<f64> {
    loop {
        let mut w = gaussian_vec(rng, u.len());
        let p = dot(&w, u);
        w.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        if unit(&mut w) > 1e-6 {
            return w;
        }
    }
}

/// Random unit vector whose component along the unit vector `u` is ≤ 0.
fn opposing_unit(rng: &mut ChaCha8Rng, u: &[f64]) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, u.len());
        let p = dot(&v, u);
        let shift = p + p.abs();
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= shift * y);
        if unit(&mut v) > 1e-6 {
            return v;
        }
    }
}

/// Builds a target and `num_aux` auxiliary tasks so that at θ₀ = 0 the
/// designated auxiliary's gradient has cosine `alignment_cos` with the
/// target's gradient while every other auxiliary's cosine is ≤ 0.
///
/// Every auxiliary starts with the same loss as the target, so the initial
/// estimates differ only through alignment. The aligned auxiliary shares the
/// target's curvature; the rest draw curvature uniformly from `[0.5, 1.5)`.
pub fn make_aligned_suite(spec: SuiteSpec) -> Result<(EnvironmentConfig, GeometryCertificate)> {
    let SuiteSpec {
        dim,
        num_aux,
        aligned_index,
        alignment_cos,
        seed,
    } = spec;
    if dim < 2 {
        return Err(Error::Construction(format!("dimension {dim} < 2 leaves no room for misalignment")));
    }
    if num_aux == 0 {
        return Err(Error::Construction("auxiliary pool is empty".into()));
    }
    if aligned_index >= num_aux {
        return Err(Error::Construction(format!(
            "aligned index {aligned_index} outside pool of {num_aux}"
        )));
    }
    if !(alignment_cos > 0.0 && alignment_cos <= 1.0) {
        return Err(Error::Construction(format!("alignment cosine {alignment_cos} outside (0, 1]")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta0 = ParameterVector::zeros(dim);
    let target_curv = curvature_vec(&mut rng, dim);
    let mut u0 = gaussian_vec(&mut rng, dim);
    while unit(&mut u0) < 1e-6 {
        u0 = gaussian_vec(&mut rng, dim);
    }
    // unit-norm target gradient at θ₀
    let target = task_from_gradient("target", &theta0, &u0, target_curv.clone());
    let target_loss = target.loss(theta0.as_slice())?;

    let mut auxiliaries = Vec::with_capacity(num_aux);
    for arm in 0..num_aux {
        let (direction, curvature) = if arm == aligned_index {
            let w = orthogonal_unit(&mut rng, &u0);
            let s = (1.0 - alignment_cos * alignment_cos).max(0.0).sqrt();
            let g: Vec<f64> = u0.iter().zip(&w).map(|(a, b)| alignment_cos * a + s * b).collect();
            (g, target_curv.clone())
        } else {
            let g = opposing_unit(&mut rng, &u0);
            (g, curvature_vec(&mut rng, dim))
        };
        // rescale so the auxiliary's loss at θ₀ equals the target's
        let unit_loss: f64 = 0.5 * direction.iter().zip(&curvature).map(|(g, l)| g * g / l).sum::<f64>();
        let scale = (target_loss / unit_loss).sqrt();
        let g: Vec<f64> = direction.iter().map(|x| x * scale).collect();
        auxiliaries.push(task_from_gradient(&format!("aux-{arm}"), &theta0, &g, curvature));
    }

    let config = EnvironmentConfig {
        dim,
        learning_rate: DEFAULT_LEARNING_RATE,
        seed,
        gradient_noise_std: 0.0,
        theta0,
        target,
        auxiliaries,
        regime_changes: Vec::new(),
    };
    config.validate()?;

    let cosines = cosines_at_theta0(&config)?;
    for (arm, &c) in cosines.iter().enumerate() {
        let ok = if arm == aligned_index {
            (c - alignment_cos).abs() <= 1e-6
        } else {
            c <= 0.0
        };
        if !ok {
            return Err(Error::Construction(format!("arm {arm} realized cosine {c}")));
        }
    }
    let certificate = GeometryCertificate {
        aligned_index,
        requested_cos: alignment_cos,
        cosines,
    };
    Ok((config, certificate))
}

/// [`make_aligned_suite`] whose aligned task moves from `spec.aligned_index`
/// to `new_aligned_index` at the start of `switch_turn`.
pub fn make_shifting_suite(
    spec: SuiteSpec,
    new_aligned_index: usize,
    switch_turn: u64,
) -> Result<(EnvironmentConfig, GeometryCertificate)> {
    if new_aligned_index >= spec.num_aux || new_aligned_index == spec.aligned_index {
        return Err(Error::Construction(format!(
            "arm {new_aligned_index} cannot take over alignment from arm {}",
            spec.aligned_index
        )));
    }
    let (mut config, cert) = make_aligned_suite(spec)?;
    config.regime_changes.push(RegimeChange {
        at_turn: switch_turn,
        swap: [spec.aligned_index, new_aligned_index],
    });
    Ok((config, cert))
}

/// Task with curvature `λ` whose gradient at `theta` is exactly `grad`.
fn task_from_gradient(label: &str, theta: &ParameterVector, grad: &[f64], curvature: Vec<f64>) -> SyntheticTask {
    let center = theta
        .0
        .iter()
        .zip(grad)
        .zip(&curvature)
        .map(|((t, g), l)| t - g / l)
        .collect();
    SyntheticTask {
        label: label.to_string(),
        center,
        curvature,
    }
}

/// Initialization-probe measurements for one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub loss_aux: f64,
    pub summary: GradientSummary,
}

/// How the auxiliary gradient enters the joint update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    /// Only the selected auxiliary.
    Selected,
    /// The mean gradient over every auxiliary.
    AllAuxiliaries,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRequest {
    pub turn: u64,
    pub arm: ArmId,
    pub mixing: Mixing,
    /// Also evaluate the selected auxiliary's loss after the update.
    pub post_update_loss: bool,
}

/// What one training turn reports back to the scheduler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Target loss before the update.
    pub loss_target: f64,
    /// Selected auxiliary's loss before the update.
    pub loss_aux: f64,
    pub loss_aux_post: Option<f64>,
    /// Selected auxiliary gradient vs. target gradient, before the update.
    pub summary: GradientSummary,
    pub target_loss_after: f64,
}

/// The model plus its datasets, as seen by the decision loop.
pub trait Environment {
    fn num_arms(&self) -> usize;

    /// Measures one arm at the current parameters without updating them.
    fn probe(&mut self, arm: ArmId, rng: &mut dyn RngCore) -> Result<Probe>;

    /// Computes gradients at the current parameters, applies one joint
    /// update and reports the measurements.
    fn train(&mut self, request: &TrainRequest, rng: &mut dyn RngCore) -> Result<Observation>;

    /// Current parameters, for environments that hold them.
    fn parameters(&self) -> Option<&[f64]> {
        None
    }

    /// Resets internal state to `parameters` after `completed_turns` turns.
    fn restore(&mut self, _parameters: Option<&[f64]>, _completed_turns: u64) -> Result<()> {
        Ok(())
    }
}

/// Counts live auxiliary-gradient buffers and the peak reached.
#[derive(Debug, Clone, Default)]
pub struct ResidencyTracker {
    inner: Arc<(AtomicUsize, AtomicUsize)>,
}

impl ResidencyTracker {
    pub fn live(&self) -> usize {
        self.inner.0.load(Ordering::Relaxed)
    }

    pub fn peak(&self) -> usize {
        self.inner.1.load(Ordering::Relaxed)
    }

    fn lease(&self, dim: usize) -> AuxGradient {
        let live = self.inner.0.fetch_add(1, Ordering::Relaxed) + 1;
        self.inner.1.fetch_max(live, Ordering::Relaxed);
        AuxGradient {
            values: vec![0.0; dim],
            tracker: self.clone(),
        }
    }
}

/// An auxiliary gradient buffer; dropping it releases the memory.
struct AuxGradient {
    values: Vec<f64>,
    tracker: ResidencyTracker,
}

impl Drop for AuxGradient {
    fn drop(&mut self) {
        self.tracker.inner.0.fetch_sub(1, Ordering::Relaxed);
    }
}

/// [`Environment`] over an [`EnvironmentConfig`].
#[derive(Debug, Clone)]
pub struct SyntheticEnvironment {
    config: EnvironmentConfig,
    theta: Vec<f64>,
    /// `slots[arm]` is the auxiliary task currently behind `arm`.
    slots: Vec<usize>,
    grad_target: Vec<f64>,
    noise: Option<Normal<f64>>,
    residency: ResidencyTracker,
}

impl SyntheticEnvironment {
    pub fn new(config: EnvironmentConfig) -> Result<Self> {
        config.validate()?;
        if !config.step_size_is_safe() {
            log::warn!(
                "learning rate {} is not below the descent bound {}",
                config.learning_rate,
                config.max_safe_learning_rate()
            );
        }
        let noise = if config.gradient_noise_std > 0.0 {
            Some(Normal::new(0.0, config.gradient_noise_std).map_err(|e| Error::config(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            theta: config.theta0.0.clone(),
            slots: (0..config.num_arms()).collect(),
            grad_target: vec![0.0; config.dim],
            noise,
            residency: ResidencyTracker::default(),
            config,
        })
    }

    pub fn config(&self) -> &EnvironmentConfig {
        &self.config
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn residency(&self) -> &ResidencyTracker {
        &self.residency
    }

    pub fn target_loss(&self) -> Result<f64> {
        self.config.target.loss(&self.theta)
    }

    /// Task currently behind `arm`.
    pub fn task(&self, arm: ArmId) -> Result<&SyntheticTask> {
        let slot = self
            .slots
            .get(arm.0)
            .ok_or_else(|| Error::config(format!("arm {arm} outside pool")))?;
        Ok(&self.config.auxiliaries[*slot])
    }

    fn apply_regime_changes(&mut self, turn: u64) {
        for rc in &self.config.regime_changes {
            if rc.at_turn == turn {
                self.slots.swap(rc.swap[0], rc.swap[1]);
            }
        }
    }

    fn perturb(&self, grad: &mut [f64], rng: &mut dyn RngCore) {
        if let Some(noise) = &self.noise {
            for g in grad.iter_mut() {
                *g += noise.sample(rng);
            }
        }
    }

    fn target_gradient(&mut self, rng: &mut dyn RngCore) -> Result<()> {
        let mut g = std::mem::take(&mut self.grad_target);
        self.config.target.gradient_into(&self.theta, &mut g)?;
        self.perturb(&mut g, rng);
        self.grad_target = g;
        Ok(())
    }

    fn aux_gradient(&self, slot: usize, rng: &mut dyn RngCore) -> Result<AuxGradient> {
        let mut g = self.residency.lease(self.config.dim);
        self.config.auxiliaries[slot].gradient_into(&self.theta, &mut g.values)?;
        self.perturb(&mut g.values, rng);
        Ok(g)
    }
}

fn finite_or_diverged(value: f64, turn: u64, arm: ArmId, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence {
            turn,
            arm: arm.0,
            detail: format!("{what} is {value}"),
        })
    }
}

fn summary_or_diverged(grad_aux: &[f64], grad_target: &[f64], turn: u64, arm: ArmId) -> Result<GradientSummary> {
    summarize_gradients(grad_aux, grad_target).map_err(|e| match e {
        Error::RewardDomain(_) => Error::Divergence {
            turn,
            arm: arm.0,
            detail: "non-finite gradient".into(),
        },
        other => other,
    })
}

impl Environment for SyntheticEnvironment {
    fn num_arms(&self) -> usize {
        self.config.num_arms()
    }

    fn probe(&mut self, arm: ArmId, rng: &mut dyn RngCore) -> Result<Probe> {
        self.task(arm)?;
        let slot = self.slots[arm.0];
        self.target_gradient(rng)?;
        let ga = self.aux_gradient(slot, rng)?;
        let summary = summary_or_diverged(&ga.values, &self.grad_target, 0, arm)?;
        let loss = self.config.auxiliaries[slot].loss(&self.theta)?;
        Ok(Probe {
            loss_aux: finite_or_diverged(loss, 0, arm, "auxiliary loss")?,
            summary,
        })
    }

    fn train(&mut self, req: &TrainRequest, rng: &mut dyn RngCore) -> Result<Observation> {
        let (turn, arm) = (req.turn, req.arm);
        self.task(arm)?;
        self.apply_regime_changes(turn);
        let slot = self.slots[arm.0];
        let lr = self.config.learning_rate;

        let loss_target = finite_or_diverged(self.config.target.loss(&self.theta)?, turn, arm, "target loss")?;
        let loss_aux = finite_or_diverged(
            self.config.auxiliaries[slot].loss(&self.theta)?,
            turn,
            arm,
            "auxiliary loss",
        )?;
        self.target_gradient(rng)?;

        let summary = match req.mixing {
            Mixing::Selected => {
                let ga = self.aux_gradient(slot, rng)?;
                let summary = summary_or_diverged(&ga.values, &self.grad_target, turn, arm)?;
                apply_step(&mut self.theta, &self.grad_target, &ga.values, lr)?;
                summary
            }
            Mixing::AllAuxiliaries => {
                let k = self.config.num_arms();
                let mut mean = vec![0.0; self.config.dim];
                let mut selected = None;
                for (a, &s) in self.slots.iter().enumerate() {
                    let ga = self.aux_gradient(s, rng)?;
                    if a == arm.0 {
                        selected = Some(summary_or_diverged(&ga.values, &self.grad_target, turn, arm)?);
                    }
                    mean.iter_mut().zip(&ga.values).for_each(|(m, g)| *m += g / k as f64);
                }
                apply_step(&mut self.theta, &self.grad_target, &mean, lr)?;
                selected.expect("selected arm is in the pool")
            }
        };

        let loss_aux_post = if req.post_update_loss {
            let post = self.config.auxiliaries[slot].loss(&self.theta)?;
            Some(finite_or_diverged(post, turn, arm, "post-update auxiliary loss")?)
        } else {
            None
        };
        let target_loss_after =
            finite_or_diverged(self.config.target.loss(&self.theta)?, turn, arm, "post-update target loss")?;
        Ok(Observation {
            loss_target,
            loss_aux,
            loss_aux_post,
            summary,
            target_loss_after,
        })
    }

    fn parameters(&self) -> Option<&[f64]> {
        Some(&self.theta)
    }

    fn restore(&mut self, parameters: Option<&[f64]>, completed_turns: u64) -> Result<()> {
        let theta = parameters.ok_or_else(|| Error::Checkpoint("missing model parameters".into()))?;
        check_dim(self.config.dim, theta.len())?;
        self.theta = theta.to_vec();
        self.slots = (0..self.config.num_arms()).collect();
        for turn in 1..=completed_turns {
            self.apply_regime_changes(turn);
        }
        Ok(())
    }
}

/// [`Environment`] replaying fixed numbers: probes per arm and a callback
/// producing each turn's observation.
pub struct ScriptedEnvironment<F> {
    probes: Vec<Probe>,
    respond: F,
}

impl<F> ScriptedEnvironment<F>
where
    F: FnMut(u64, ArmId) -> Observation,
{
    pub fn new(probes: Vec<Probe>, respond: F) -> Self {
        Self { probes, respond }
    }
}

impl<F> Environment for ScriptedEnvironment<F>
where
    F: FnMut(u64, ArmId) -> Observation,
{
    fn num_arms(&self) -> usize {
        self.probes.len()
    }

    fn probe(&mut self, arm: ArmId, _rng: &mut dyn RngCore) -> Result<Probe> {
        self.probes
            .get(arm.0)
            .copied()
            .ok_or_else(|| Error::config(format!("no probe scripted for arm {arm}")))
    }

    fn train(&mut self, req: &TrainRequest, _rng: &mut dyn RngCore) -> Result<Observation> {
        Ok((self.respond)(req.turn, req.arm))
    }
}

/// Observation carrying a chosen reward: loss `-r` and cosine `r`, so the
/// combined reward equals `r` for every `α` when `r ∈ [-1, 1]`.
pub fn observation_with_reward(r: f64) -> Observation {
    Observation {
        loss_target: f64::NAN,
        loss_aux: -r,
        loss_aux_post: Some(-r),
        summary: GradientSummary {
            dot: r,
            norm_aux: 1.0,
            norm_target: 1.0,
        },
        target_loss_after: f64::NAN,
    }
}

/// Probe whose initial estimate `0.5·(-loss) + 0.5·cos` equals `r`.
pub fn probe_with_reward(r: f64) -> Probe {
    let o = observation_with_reward(r);
    Probe {
        loss_aux: o.loss_aux,
        summary: o.summary,
    }
}
