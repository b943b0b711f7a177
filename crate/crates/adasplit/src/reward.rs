//! Reward components, the curriculum penalty schedule, and discounted
//! returns.
//!
//! Per allocation step three components are combined:
//! `r = r_loss + lambda_o * r_ort + r_creat`, where `r_loss` is the softmax
//! share of the chosen sub-sequence's affinity to the item, `r_ort`
//! penalizes overlap between sub-sequence representations, and `r_creat`
//! charges the current curriculum penalty when a new sub-sequence is
//! created. Rewards are computed from detached values: gradients never flow
//! through them, only through the action log-probabilities.

use crate::autodiff::TensorId;
use crate::error::{Error, Result};

/// How the creation penalty evolves with the number of create actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// `a1 * t` after `t` creates.
    Linear,
    /// `b1 ^ t` after `t` creates.
    Exponential,
    /// Constant at the configured initial value.
    Keep,
    /// No penalty at all.
    None,
}

impl Schedule {
    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Linear => "linear",
            Schedule::Exponential => "exponential",
            Schedule::Keep => "keep",
            Schedule::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Schedule::Linear),
            "exponential" => Ok(Schedule::Exponential),
            "keep" => Ok(Schedule::Keep),
            "none" => Ok(Schedule::None),
            other => Err(Error::Config(format!(
                "unknown schedule '{other}' (expected linear, exponential, keep, none)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RewardConfig {
    /// Weight of the orthogonality reward.
    pub lambda_o: f64,
    /// Return decay in (0, 1].
    pub lambda_d: f64,
    pub schedule: Schedule,
    /// Linear schedule slope, > 0.
    pub a1: f64,
    /// Exponential schedule base, > 0.
    pub b1: f64,
    /// Penalty value for the `keep` schedule.
    pub initial_lambda: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda_o: 0.1,
            lambda_d: 0.9,
            schedule: Schedule::Exponential,
            a1: 0.1,
            b1: 1.1,
            initial_lambda: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d > 0.0 && self.lambda_d <= 1.0) {
            return Err(Error::Config(format!(
                "lambda_d must be in (0, 1], got {}",
                self.lambda_d
            )));
        }
        if self.a1 <= 0.0 || self.b1 <= 0.0 {
            return Err(Error::Config(format!(
                "schedule parameters must be positive (a1 {}, b1 {})",
                self.a1, self.b1
            )));
        }
        if !self.lambda_o.is_finite() || !self.initial_lambda.is_finite() {
            return Err(Error::Config("reward weights must be finite".into()));
        }
        Ok(())
    }
}

/// Penalty value after `t_a` create actions. The exponential schedule
/// grows from `initial_lambda` (1.0 by default) by a factor `b1` per
/// create; the allocation reward is a softmax share bounded by 1, so the
/// starting penalty decides whether creating can ever pay off.
pub fn update_lambda(t_a: usize, config: &RewardConfig) -> f64 {
    match config.schedule {
        Schedule::Linear => config.a1 * t_a as f64,
        Schedule::Exponential => config.initial_lambda * config.b1.powi(t_a as i32),
        Schedule::Keep => config.initial_lambda,
        Schedule::None => 0.0,
    }
}

/// Softmax share of the chosen sub-sequence's inner product with the item.
/// `reps` are the post-update representations of the current step; always
/// in (0, 1].
pub fn allocation_reward(reps: &[Vec<f64>], item: &[f64], action: usize) -> f64 {
    assert!(action < reps.len(), "allocation reward index {action} out of {} reps", reps.len());
    let dots: Vec<f64> = reps
        .iter()
        .map(|p| p.iter().zip(item.iter()).map(|(&a, &b)| a * b).sum())
        .collect();
    let max = dots.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp_sum: f64 = dots.iter().map(|&d| (d - max).exp()).sum();
    (dots[action] - max).exp() / exp_sum
}

/// Mean absolute pairwise inner product between representations, negated.
/// Zero for a single sub-sequence.
pub fn orthogonality_reward(reps: &[Vec<f64>]) -> f64 {
    let h = reps.len();
    if h < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..h {
        for j in i + 1..h {
            let dot: f64 = reps[i].iter().zip(reps[j].iter()).map(|(&a, &b)| a * b).sum();
            total += dot.abs();
        }
    }
    -total / ((h * (h - 1)) as f64 / 2.0)
}

/// Zero for allocation to an existing sub-sequence (0-based `action < h`),
/// minus the current penalty for the create action (`action == h`).
pub fn creation_penalty(action: usize, num_subseqs: usize, lambda: f64) -> f64 {
    if action < num_subseqs {
        0.0
    } else {
        -lambda
    }
}

/// Backward recursion: `ret[t] = r[t] + lambda_d * ret[t+1]`.
pub fn discounted_returns(rewards: &[f64], lambda_d: f64) -> Vec<f64> {
    assert!(
        lambda_d > 0.0 && lambda_d <= 1.0,
        "lambda_d must be in (0, 1], got {lambda_d}"
    );
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + lambda_d * acc;
        returns[t] = acc;
    }
    returns
}

/// One allocation step of an episode: the sampled action, its
/// log-probability (tape node plus detached value), and the reward
/// components.
#[derive(Clone, Debug)]
pub struct StepRecord {
    /// 0-based action; `num_subseqs_before` means "create".
    pub action: usize,
    pub was_create: bool,
    pub log_prob: TensorId,
    pub log_prob_value: f64,
    pub r_loss: f64,
    pub r_ort: f64,
    pub r_creat: f64,
    /// Combined `r_loss + lambda_o * r_ort + r_creat`.
    pub reward: f64,
}

/// Per-step records of one episode plus the discounted returns.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub returns: Vec<f64>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: StepRecord) {
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Compute returns from the recorded rewards.
    pub fn finalize(&mut self, lambda_d: f64) {
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.reward).collect();
        self.returns = discounted_returns(&rewards, lambda_d);
    }
}
