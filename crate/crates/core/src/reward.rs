//! Composite reward: a convergence term (negated auxiliary loss) mixed with
//! an alignment term (cosine between auxiliary and target gradients) under a
//! decaying weight `α`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as a vanished gradient.
pub const EPS_ZERO: f64 = 1e-12;

/// Slack allowed on `|dot| <= ‖a‖‖t‖` for externally computed summaries.
pub const CAUCHY_SCHWARZ_TOLERANCE: f64 = 1e-9;

/// Sufficient statistics of an (auxiliary, target) gradient pair.
///
/// Structured parameters are flattened by concatenating each parameter
/// tensor, in registration order, row-major, before the reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientSummary {
    pub dot: f64,
    pub norm_aux: f64,
    pub norm_target: f64,
}

impl GradientSummary {
    /// Validated constructor for summaries received from outside the crate.
    pub fn new(dot: f64, norm_aux: f64, norm_target: f64) -> Result<Self> {
        let s = Self {
            dot,
            norm_aux,
            norm_target,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dot.is_finite() && self.norm_aux.is_finite() && self.norm_target.is_finite()) {
            return Err(Error::RewardDomain(format!("non-finite gradient summary {self:?}")));
        }
        if self.norm_aux < 0.0 || self.norm_target < 0.0 {
            return Err(Error::RewardDomain(format!("negative gradient norm in {self:?}")));
        }
        let bound = self.norm_aux * self.norm_target;
        if self.dot.abs() > bound + CAUCHY_SCHWARZ_TOLERANCE * bound.max(1.0) {
            return Err(Error::RewardDomain(format!(
                "|dot| exceeds product of norms in {self:?}"
            )));
        }
        Ok(())
    }
}

/// Dot product and Euclidean norms of two flattened gradients.
pub fn summarize_gradients(grad_aux: &[f64], grad_target: &[f64]) -> Result<GradientSummary> {
    if grad_aux.len() != grad_target.len() {
        return Err(Error::Dimension {
            expected: grad_target.len(),
            found: grad_aux.len(),
        });
    }
    if grad_aux.is_empty() {
        return Err(Error::Dimension {
            expected: 1,
            found: 0,
        });
    }
    let (mut dot, mut aa, mut tt) = (0.0, 0.0, 0.0);
    for (&a, &t) in grad_aux.iter().zip(grad_target) {
        dot += a * t;
        aa += a * a;
        tt += t * t;
    }
    let s = GradientSummary {
        dot,
        norm_aux: aa.sqrt(),
        norm_target: tt.sqrt(),
    };
    if !(s.dot.is_finite() && s.norm_aux.is_finite() && s.norm_target.is_finite()) {
        return Err(Error::RewardDomain("non-finite gradient entries".into()));
    }
    Ok(s)
}

/// Negated loss.
pub fn convergence_reward(loss: f64) -> Result<f64> {
    if !loss.is_finite() {
        return Err(Error::RewardDomain(format!("loss {loss} is not finite")));
    }
    Ok(-loss)
}

/// Gradient cosine, clamped to `[-1, 1]`; 0 when either gradient vanished.
pub fn alignment_reward(g: &GradientSummary) -> f64 {
    if g.norm_aux < EPS_ZERO || g.norm_target < EPS_ZERO {
        return 0.0;
    }
    (g.dot / (g.norm_aux * g.norm_target)).clamp(-1.0, 1.0)
}

/// `alpha * pm + (1 - alpha) * pt`.
pub fn combine(pm: f64, pt: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("mixing weight {alpha} outside [0, 1]")));
    }
    Ok(alpha * pm + (1.0 - alpha) * pt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Exponential,
    Constant,
}

/// Decay of the convergence weight `α` over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSchedule {
    pub kind: ScheduleKind,
    pub alpha0: f64,
    #[serde(default)]
    pub alpha_min: f64,
    /// Per-turn factor for the exponential kind.
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_decay() -> f64 {
    0.99
}

impl Default for AlphaSchedule {
    /// Linear from 0.5 at turn 0 to 0.0 at the horizon.
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            alpha0: 0.5,
            alpha_min: 0.0,
            decay: default_decay(),
        }
    }
}

impl AlphaSchedule {
    pub fn linear(alpha0: f64, alpha_min: f64) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            alpha0,
            alpha_min,
            ..Self::default()
        }
    }

    pub fn exponential(alpha0: f64, alpha_min: f64, decay: f64) -> Self {
        Self {
            kind: ScheduleKind::Exponential,
            alpha0,
            alpha_min,
            decay,
        }
    }

    pub fn constant(alpha0: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            alpha0,
            alpha_min: alpha0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha0) {
            return Err(Error::config(format!("alpha0 {} outside [0, 1]", self.alpha0)));
        }
        if !(0.0..=self.alpha0).contains(&self.alpha_min) {
            return Err(Error::config(format!(
                "alpha_min {} outside [0, alpha0]",
                self.alpha_min
            )));
        }
        if self.kind == ScheduleKind::Exponential && !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config(format!("decay {} outside (0, 1]", self.decay)));
        }
        Ok(())
    }

    /// `α` at `turn` of a run lasting `horizon` turns.
    pub fn alpha_at(&self, turn: u64, horizon: u64) -> Result<f64> {
        if horizon == 0 {
            return Err(Error::config("alpha schedule needs a positive horizon"));
        }
        Ok(match self.kind {
            ScheduleKind::Linear => {
                let frac = 1.0 - turn as f64 / horizon as f64;
                self.alpha_min.max(self.alpha0 * frac)
            }
            ScheduleKind::Exponential => {
                let exp = i32::try_from(turn).unwrap_or(i32::MAX);
                self.alpha_min.max(self.alpha0 * self.decay.powi(exp))
            }
            ScheduleKind::Constant => self.alpha0,
        })
    }
}

/// One turn's reward, kept in component form for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    /// Convergence term.
    pub pm: f64,
    /// Alignment term.
    pub pt: f64,
    pub combined: f64,
    pub alpha: f64,
}

impl RewardComponents {
    pub fn compute(loss: f64, summary: &GradientSummary, alpha: f64) -> Result<Self> {
        let pm = convergence_reward(loss)?;
        let pt = alignment_reward(summary);
        Ok(Self {
            pm,
            pt,
            combined: combine(pm, pt, alpha)?,
            alpha,
        })
    }
}
