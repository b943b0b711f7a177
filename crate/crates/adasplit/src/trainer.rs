//! Episode rollouts, the joint recommendation + policy-gradient loss, and
//! the optimization loop.
//!
//! Each training sample (user, history prefix, target) becomes one episode
//! on a fresh tape: the history is encoded, every item is routed by the
//! sampled policy, rewards are recorded as detached values, and finally the
//! target itself is routed to produce the sub-sequence representation the
//! recommendation loss scores against. The policy loss is the
//! score-function estimator `-sum_t return_t * log pi(a_t)`; returns are
//! constants with respect to differentiation.
//!
//! Episodes in a batch run independently; their gradients are averaged,
//! clipped at a global norm, and applied with one Adam step.

use std::collections::HashSet;
use std::time::Instant;

use crate::allocator::{self, AllocatorConfig, SelectionMode};
use crate::autodiff::{kernels, Adam, GradStore, Tape, TensorId};
use crate::dataio::{train_samples, SequenceDataset, Split};
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions, EvalSetup, Phase};
use crate::model::{Model, ModelDims, TapeBinding};
use crate::reward::{
    allocation_reward, creation_penalty, orthogonality_reward, RewardConfig, StepRecord,
    Trajectory,
};
use crate::rng::Rng;

/// Denominator of the recommendation softmax: the full catalog or the
/// target plus `k` uniformly sampled distinct non-target items.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegSampling {
    Full,
    Sampled(usize),
}

impl NegSampling {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(NegSampling::Full);
        }
        s.parse::<usize>()
            .map(NegSampling::Sampled)
            .map_err(|_| Error::Config(format!("neg_sample_size must be 'full' or an integer, got '{s}'")))
    }

    pub fn name(&self) -> String {
        match self {
            NegSampling::Full => "full".to_string(),
            NegSampling::Sampled(k) => k.to_string(),
        }
    }
}

/// Optional transformation of the discounted returns before the policy
/// loss is formed. All variants are closed-form batch statistics; none
/// involves learned parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReturnBaseline {
    /// Raw returns (the literal score-function estimator).
    None,
    /// Subtract the batch mean and divide by the batch deviation.
    Batch,
    /// Center returns within each action class (create vs extend), then
    /// divide by the batch deviation. The absolute penalty level cancels
    /// and only its growth across an episode steers the policy, which
    /// keeps the create action trainable: under raw returns its class
    /// mean sits strictly below the extend class in every reachable model
    /// state (the allocation reward is a softmax share whose denominator
    /// grows with every create), so an uninformed policy deterministically
    /// saturates against creating.
    ActionClass,
}

impl ReturnBaseline {
    pub fn name(&self) -> &'static str {
        match self {
            ReturnBaseline::None => "none",
            ReturnBaseline::Batch => "batch",
            ReturnBaseline::ActionClass => "action-class",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ReturnBaseline::None),
            "batch" => Ok(ReturnBaseline::Batch),
            "action-class" => Ok(ReturnBaseline::ActionClass),
            other => Err(Error::Config(format!(
                "unknown return_baseline '{other}' (expected none, batch, action-class)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub neg_sampling: NegSampling,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub reward: RewardConfig,
    pub allocator: AllocatorConfig,
    pub grad_clip: f64,
    pub patience: usize,
    pub return_baseline: ReturnBaseline,
    /// Epochs at the start of training during which the policy-gradient
    /// term is dropped from the joint loss (beta treated as zero) and
    /// items are allocated similarity-greedily (nearest representation, or
    /// a fresh one when that would be nearer). The allocation rewards
    /// carry no signal until sub-sequence representations differentiate,
    /// and an uninformed policy otherwise saturates against the create
    /// action within the first epoch; the warm-up lets the recommender
    /// organize coherent sub-sequences before the policy takes over.
    pub rl_warmup_epochs: usize,
    /// Cosine threshold below which the warm-up router opens a new
    /// sub-sequence instead of joining the nearest one.
    pub warmup_tau: f64,
    /// Internal: set by the training loop during warm-up epochs.
    pub greedy_allocation: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.reward.validate()
    }

    pub fn eval_setup(&self) -> EvalSetup {
        EvalSetup {
            encoder: self.encoder,
            allocator: self.allocator,
            reward: self.reward,
        }
    }
}

/// One training episode input.
#[derive(Clone, Debug)]
pub struct EpisodeSample {
    pub user: usize,
    pub history: Vec<usize>,
    pub target: usize,
}

/// A completed rollout: the tape holding the episode graph, the final
/// state, the trajectory, and (when the target step ran) the target
/// routing.
pub struct Rollout {
    pub tape: Tape,
    pub bound: TapeBinding,
    pub state: allocator::EpisodeState,
    pub trajectory: Trajectory,
    pub target: Option<allocator::TargetAllocation>,
    pub target_item: usize,
}

/// Record one applied action into the trajectory from detached values.
///
/// The allocation reward scores the chosen sub-sequence at its
/// representation of the current step: the pre-update value for an
/// existing sub-sequence, or the just-initialized representation for a
/// freshly created one (which has no earlier value). The orthogonality
/// term looks at the post-action partition.
fn record_step(
    tape: &Tape,
    state: &allocator::EpisodeState,
    pre_update_rep: Option<Vec<f64>>,
    lambda_at_action: f64,
    lambda_o: f64,
    action: usize,
    was_create: bool,
    subseqs_before: usize,
    log_prob: TensorId,
    item_vec: TensorId,
) -> StepRecord {
    let mut rep_values: Vec<Vec<f64>> = state.reps.iter().map(|&r| tape.value(r).to_vec()).collect();
    let item_values = tape.value(item_vec);
    let landed = if was_create { state.num_subseqs() - 1 } else { action };
    let r_ort = orthogonality_reward(&rep_values);
    if let Some(pre) = pre_update_rep {
        rep_values[landed] = pre;
    }
    let r_loss = allocation_reward(&rep_values, item_values, landed);
    let r_creat = creation_penalty(action, subseqs_before, lambda_at_action);
    StepRecord {
        action,
        was_create,
        log_prob,
        log_prob_value: tape.scalar_value(log_prob),
        r_loss,
        r_ort,
        r_creat,
        reward: r_loss + lambda_o * r_ort + r_creat,
    }
}


/// Warm-up router: online spherical clustering over raw item embeddings.
/// Each sub-sequence keeps the running mean of its members' raw
/// embeddings; an item joins the mean it is most cosine-similar to, or
/// opens a new sub-sequence when nothing is similar enough.
struct WarmupRouter {
    means: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

impl WarmupRouter {
    fn new() -> Self {
        WarmupRouter {
            means: vec![Vec::new()],
            counts: vec![0],
        }
    }

    fn choose(&self, raw_item: &[f64], h_max: usize, tau: f64) -> usize {
        let norm = |x: &[f64]| kernels::dot(x, x).sqrt().max(1e-12);
        let item_norm = norm(raw_item);
        let mut best = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        for (i, mean) in self.means.iter().enumerate() {
            let cos = if mean.is_empty() {
                // the initial sub-sequence before any member arrived
                -1.0
            } else {
                kernels::dot(mean, raw_item) / (norm(mean) * item_norm)
            };
            if cos > best_cos {
                best_cos = cos;
                best = i;
            }
        }
        if best_cos < tau && self.means.len() < h_max {
            self.means.len()
        } else {
            best
        }
    }

    fn apply(&mut self, action: usize, raw_item: &[f64]) {
        if action == self.means.len() {
            self.means.push(raw_item.to_vec());
            self.counts.push(1);
            return;
        }
        let mean = &mut self.means[action];
        if mean.is_empty() {
            *mean = raw_item.to_vec();
            self.counts[action] = 1;
            return;
        }
        let n = self.counts[action] as f64;
        for (m, &x) in mean.iter_mut().zip(raw_item) {
            *m = (n * *m + x) / (n + 1.0);
        }
        self.counts[action] += 1;
    }
}

/// Build the target-allocation record for a pre-chosen action.
fn target_allocation_for_action(
    tape: &mut Tape,
    model: &Model,
    bound: &TapeBinding,
    config: &TrainConfig,
    state: &mut allocator::EpisodeState,
    item_vec: TensorId,
    action: usize,
) -> allocator::TargetAllocation {
    let dist = allocator::step_distribution(tape, model, bound, &config.allocator, state, item_vec);
    let was_create = dist.create_index() == Some(action);
    let log_prob = allocator::pick_log_prob(tape, &dist, action);
    let rep_for_scoring = if was_create {
        allocator::update_subseq_rep(
            tape,
            model,
            bound,
            config.allocator.updater,
            state.user_vec,
            None,
            item_vec,
            0,
        )
        .0
    } else {
        state.reps[action]
    };
    allocator::TargetAllocation {
        action,
        was_create,
        rep_for_scoring,
        log_prob,
        prob_values: dist.prob_values.clone(),
    }
}

fn rollout_inner(
    model: &Model,
    sample: &EpisodeSample,
    config: &TrainConfig,
    rng: &mut Rng,
    include_target: bool,
) -> Rollout {
    assert!(!sample.history.is_empty(), "episode needs at least one history item");
    let mut tape = Tape::new();
    let bound = TapeBinding::mount(&mut tape, model, true);
    let enc = encoder::encode(&mut tape, model, &bound, &sample.history, sample.user, &config.encoder);
    let mut state = allocator::init_episode(enc.user_vec, &config.reward);
    let mut trajectory = Trajectory::new();
    let mut router = config.greedy_allocation.then(WarmupRouter::new);
    let dim = model.dims.dim;
    let raw_emb = |item: usize| -> &[f64] {
        &model.params.get("item_embedding").values[item * dim..(item + 1) * dim]
    };

    for t in 0..sample.history.len() {
        let v = tape.gather(enc.vectors, &[t]);
        let lambda_at = state.lambda;
        let before = state.num_subseqs();
        let dist = allocator::step_distribution(&mut tape, model, &bound, &config.allocator, &mut state, v);
        let action = match router.as_mut() {
            Some(router) => {
                let raw = raw_emb(sample.history[t]);
                let action = router.choose(raw, config.allocator.h_max, config.warmup_tau);
                router.apply(action, raw);
                action
            }
            None => rng.categorical(&dist.prob_values),
        };
        let was_create = dist.create_index() == Some(action);
        let log_prob = allocator::pick_log_prob(&mut tape, &dist, action);
        let pre_rep = (!was_create).then(|| tape.value(state.reps[action]).to_vec());
        allocator::apply_action(
            &mut tape,
            model,
            &bound,
            &config.allocator,
            &config.reward,
            &mut state,
            action,
            v,
            t,
        );
        trajectory.push(record_step(
            &tape, &state, pre_rep, lambda_at, config.reward.lambda_o, action, was_create, before, log_prob, v,
        ));
    }

    let target = if include_target {
        // target step: raw item embedding, no positional or contextual
        // encoding
        let item_table = bound.get(model, "item_embedding");
        let v_target = tape.gather(item_table, &[sample.target]);
        let lambda_at = state.lambda;
        let before = state.num_subseqs();
        let target = if let Some(router) = router.as_mut() {
            let raw = raw_emb(sample.target);
            let action = router.choose(raw, config.allocator.h_max, config.warmup_tau);
            router.apply(action, raw);
            target_allocation_for_action(&mut tape, model, &bound, config, &mut state, v_target, action)
        } else {
            allocator::allocate_target(
                &mut tape,
                model,
                &bound,
                &config.allocator,
                &mut state,
                v_target,
                SelectionMode::Sample,
                rng,
            )
        };
        let pre_rep = (!target.was_create).then(|| tape.value(state.reps[target.action]).to_vec());
        allocator::apply_action(
            &mut tape,
            model,
            &bound,
            &config.allocator,
            &config.reward,
            &mut state,
            target.action,
            v_target,
            sample.history.len(),
        );
        trajectory.push(record_step(
            &tape,
            &state,
            pre_rep,
            lambda_at,
            config.reward.lambda_o,
            target.action,
            target.was_create,
            before,
            target.log_prob,
            v_target,
        ));
        Some(target)
    } else {
        None
    };
    trajectory.finalize(config.reward.lambda_d);

    Rollout {
        tape,
        bound,
        state,
        trajectory,
        target,
        target_item: sample.target,
    }
}

/// Roll one episode with sampled actions over the history items only.
pub fn rollout_episode(
    model: &Model,
    sample: &EpisodeSample,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Rollout {
    rollout_inner(model, sample, config, rng, false)
}

/// Roll a full training episode: history items plus the target-allocation
/// step whose log-probability joins the trajectory.
pub fn rollout_with_target(
    model: &Model,
    sample: &EpisodeSample,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Rollout {
    rollout_inner(model, sample, config, rng, true)
}

/// Re-roll an episode with a fixed action sequence (no sampling). Used by
/// gradient checks: the returns are supplied as frozen constants so the
/// loss is a deterministic function of the parameters.
pub fn replay_episode(
    model: &Model,
    sample: &EpisodeSample,
    actions: &[usize],
    config: &TrainConfig,
) -> Rollout {
    assert_eq!(
        actions.len(),
        sample.history.len() + 1,
        "need one action per history item plus the target"
    );
    let mut tape = Tape::new();
    let bound = TapeBinding::mount(&mut tape, model, true);
    let enc = encoder::encode(&mut tape, model, &bound, &sample.history, sample.user, &config.encoder);
    let mut state = allocator::init_episode(enc.user_vec, &config.reward);
    let mut trajectory = Trajectory::new();

    for t in 0..sample.history.len() {
        let v = tape.gather(enc.vectors, &[t]);
        let lambda_at = state.lambda;
        let before = state.num_subseqs();
        let dist = allocator::step_distribution(&mut tape, model, &bound, &config.allocator, &mut state, v);
        let action = actions[t];
        let was_create = dist.create_index() == Some(action);
        let log_prob = allocator::pick_log_prob(&mut tape, &dist, action);
        let pre_rep = (!was_create).then(|| tape.value(state.reps[action]).to_vec());
        allocator::apply_action(
            &mut tape,
            model,
            &bound,
            &config.allocator,
            &config.reward,
            &mut state,
            action,
            v,
            t,
        );
        trajectory.push(record_step(
            &tape, &state, pre_rep, lambda_at, config.reward.lambda_o, action, was_create, before, log_prob, v,
        ));
    }

    let item_table = bound.get(model, "item_embedding");
    let v_target = tape.gather(item_table, &[sample.target]);
    let lambda_at = state.lambda;
    let before = state.num_subseqs();
    let action = actions[sample.history.len()];
    let target = target_allocation_for_action(&mut tape, model, &bound, config, &mut state, v_target, action);
    let was_create = target.was_create;
    let log_prob = target.log_prob;
    let pre_rep = (!was_create).then(|| tape.value(state.reps[action]).to_vec());
    allocator::apply_action(
        &mut tape,
        model,
        &bound,
        &config.allocator,
        &config.reward,
        &mut state,
        action,
        v_target,
        sample.history.len(),
    );
    trajectory.push(record_step(
        &tape, &state, pre_rep, lambda_at, config.reward.lambda_o, action, was_create, before, log_prob, v_target,
    ));
    trajectory.finalize(config.reward.lambda_d);

    Rollout {
        tape,
        bound,
        state,
        trajectory,
        target: Some(target),
        target_item: sample.target,
    }
}

/// Score-function loss `-sum_t return_t * log pi(a_t)`. The returns enter
/// as plain scale factors, so no gradient flows through them.
pub fn rl_loss(tape: &mut Tape, trajectory: &Trajectory) -> TensorId {
    assert_eq!(
        trajectory.steps.len(),
        trajectory.returns.len(),
        "trajectory must be finalized before building the loss"
    );
    rl_loss_frozen(tape, trajectory, &trajectory.returns.clone())
}

/// Same estimator with an explicit return vector, for replays where the
/// returns must stay frozen at values from another rollout.
pub fn rl_loss_frozen(tape: &mut Tape, trajectory: &Trajectory, returns: &[f64]) -> TensorId {
    assert_eq!(trajectory.steps.len(), returns.len(), "one return per step");
    let mut acc: Option<TensorId> = None;
    for (step, &ret) in trajectory.steps.iter().zip(returns.iter()) {
        let term = tape.scale(step.log_prob, -ret);
        acc = Some(match acc {
            None => term,
            Some(prev) => tape.add(prev, term),
        });
    }
    acc.unwrap_or_else(|| tape.scalar(0.0))
}

/// Cross-entropy of the target under softmax scores of the routed
/// representation against the catalog (full or sampled denominator).
pub fn seq_loss(
    tape: &mut Tape,
    model: &Model,
    bound: &TapeBinding,
    rep: TensorId,
    target: usize,
    neg_sampling: NegSampling,
    rng: &mut Rng,
) -> TensorId {
    let num_items = model.dims.num_items;
    assert!(target < num_items, "target item {target} outside catalog of {num_items}");
    let table = bound.get(model, "item_embedding");
    let (scores, target_col) = match neg_sampling {
        NegSampling::Full => (tape.matmul_bt(rep, table), target),
        NegSampling::Sampled(k) => {
            let k = k.min(num_items - 1);
            let mut ids = Vec::with_capacity(k + 1);
            let mut seen = HashSet::with_capacity(k + 1);
            ids.push(target);
            seen.insert(target);
            while ids.len() < k + 1 {
                let cand = rng.below(num_items);
                if seen.insert(cand) {
                    ids.push(cand);
                }
            }
            let rows = tape.gather(table, &ids);
            (tape.matmul_bt(rep, rows), 0)
        }
    };
    let probs = tape.softmax(scores);
    let log_probs = tape.log(probs);
    let (_, n) = tape.shape(log_probs);
    let mut onehot = vec![0.0; n];
    onehot[target_col] = 1.0;
    let mask = tape.constant(onehot, 1, n);
    let picked = tape.mul(log_probs, mask);
    let summed = tape.sum(picked);
    tape.neg(summed)
}

/// Loss components and allocator statistics for one optimization step.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub l_seq: f64,
    pub l_rl: f64,
    pub total: f64,
    pub mean_len: f64,
    pub mean_final_h: f64,
    pub create_rate: f64,
}

/// Run a batch of episodes, backpropagate the joint loss, and apply one
/// Adam step. Gradients are averaged over the batch and clipped.
pub fn joint_step(
    model: &mut Model,
    batch: &[EpisodeSample],
    config: &TrainConfig,
    adam: &mut Adam,
    rng: &mut Rng,
) -> Result<LossBreakdown> {
    assert!(!batch.is_empty(), "joint_step on an empty batch");
    let mut rollouts: Vec<Rollout> = batch
        .iter()
        .map(|s| rollout_with_target(model, s, config, rng))
        .collect();

    if config.greedy_allocation {
        // warm-up imitation: uniform unit returns turn the score-function
        // loss into the cross-entropy of the router's actions
        for rollout in &mut rollouts {
            for ret in &mut rollout.trajectory.returns {
                *ret = 1.0;
            }
        }
    } else {
        apply_return_baseline(&mut rollouts, config.return_baseline);
    }

    let mut grads = GradStore::zeros_like(&model.params);
    let mut sum_seq = 0.0;
    let mut sum_rl = 0.0;
    let mut sum_len = 0.0;
    let mut sum_h = 0.0;
    let mut creates = 0usize;
    let mut steps = 0usize;
    for rollout in &mut rollouts {
        let Rollout {
            tape,
            bound,
            state,
            trajectory,
            target,
            target_item,
        } = rollout;
        let target = target.as_ref().expect("joint_step rollouts include the target step");
        let l_seq = seq_loss(tape, model, bound, target.rep_for_scoring, *target_item, config.neg_sampling, rng);
        let l_rl = rl_loss(tape, trajectory);
        let scaled_rl = tape.scale(l_rl, config.beta);
        let total = tape.add(l_seq, scaled_rl);

        let seq_val = tape.scalar_value(l_seq);
        let rl_val = tape.scalar_value(l_rl);
        if !seq_val.is_finite() || !rl_val.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss in batch: l_seq={seq_val} l_rl={rl_val}"
            )));
        }
        sum_seq += seq_val;
        sum_rl += rl_val;
        sum_len += trajectory.len() as f64;
        sum_h += state.num_subseqs() as f64;
        creates += trajectory.steps.iter().filter(|s| s.was_create).count();
        steps += trajectory.len();

        tape.backward(total);
        for (idx, leaf, _) in bound.iter() {
            grads.accumulate(idx, tape.grad(leaf));
        }
    }

    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    grads.clip_global_norm(config.grad_clip);
    adam.step(&mut model.params, &grads)?;

    let l_seq = sum_seq / n;
    let l_rl = sum_rl / n;
    Ok(LossBreakdown {
        l_seq,
        l_rl,
        total: l_seq + config.beta * l_rl,
        mean_len: sum_len / n,
        mean_final_h: sum_h / n,
        create_rate: creates as f64 / steps.max(1) as f64,
    })
}

/// Apply the configured return transformation across the whole batch.
fn apply_return_baseline(rollouts: &mut [Rollout], baseline: ReturnBaseline) {
    if baseline == ReturnBaseline::None {
        return;
    }
    let all: Vec<f64> = rollouts
        .iter()
        .flat_map(|r| r.trajectory.returns.iter().copied())
        .collect();
    if all.len() < 2 {
        return;
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / all.len() as f64;
    let std = var.sqrt().max(1e-8);
    match baseline {
        ReturnBaseline::None => {}
        ReturnBaseline::Batch => {
            for rollout in rollouts {
                for ret in &mut rollout.trajectory.returns {
                    *ret = (*ret - mean) / std;
                }
            }
        }
        ReturnBaseline::ActionClass => {
            let mut sums = [0.0f64; 2];
            let mut counts = [0usize; 2];
            for rollout in rollouts.iter() {
                for (step, &ret) in rollout.trajectory.steps.iter().zip(&rollout.trajectory.returns) {
                    let class = usize::from(step.was_create);
                    sums[class] += ret;
                    counts[class] += 1;
                }
            }
            let class_mean = |c: usize| {
                if counts[c] > 0 {
                    sums[c] / counts[c] as f64
                } else {
                    mean
                }
            };
            let means = [class_mean(0), class_mean(1)];
            for rollout in rollouts.iter_mut() {
                let classes: Vec<usize> = rollout
                    .trajectory
                    .steps
                    .iter()
                    .map(|s| usize::from(s.was_create))
                    .collect();
                for (ret, class) in rollout.trajectory.returns.iter_mut().zip(classes) {
                    *ret = (*ret - means[class]) / std;
                }
            }
        }
    }
}

/// One line of the structured training log.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_seq: f64,
    pub l_rl: f64,
    pub total: f64,
    pub val_ndcg5: f64,
    pub val_mrr5: f64,
    pub val_ndcg10: f64,
    pub val_mrr10: f64,
    pub mean_h: f64,
    pub create_rate: f64,
    pub wall_ms: u128,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} l_seq={:.6} l_rl={:.6} total={:.6} val_ndcg5={:.4} val_mrr5={:.4} val_ndcg10={:.4} val_mrr10={:.4} mean_h={:.4} create_rate={:.4} wall_ms={}",
            self.epoch,
            self.l_seq,
            self.l_rl,
            self.total,
            self.val_ndcg5,
            self.val_mrr5,
            self.val_ndcg10,
            self.val_mrr10,
            self.mean_h,
            self.create_rate,
            self.wall_ms
        )
    }
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: Model,
    /// Parameters after the last epoch, for callers whose validation
    /// signal is too flat or noisy for checkpoint selection.
    pub final_model: Model,
    pub best_epoch: usize,
    pub best_val_ndcg10: f64,
    pub records: Vec<EpochRecord>,
}

/// Full optimization loop with per-epoch validation, best-checkpoint
/// tracking, and early stopping on validation NDCG@10.
pub fn train(
    dataset: &SequenceDataset,
    split: &Split,
    config: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = ModelDims {
        num_users: dataset.num_users(),
        num_items: dataset.num_items(),
        dim: config.encoder.dim,
        max_len: config.encoder.max_len,
        num_blocks: config.encoder.num_blocks,
        encoder_mode: config.encoder.mode,
        updater: config.allocator.updater,
    };
    let mut model = Model::init(dims, config.seed);
    let mut adam = Adam::with_defaults(&model.params, config.lr);
    let mut rng = Rng::new(config.seed ^ 0x7261_696e_6572_0001);
    let samples = train_samples(split);
    if samples.is_empty() && config.epochs > 0 {
        return Err(Error::Data("no training samples after splitting".into()));
    }

    let mut best_model = model.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut records = Vec::new();

    let max_len = config.encoder.max_len;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut epoch_config = *config;
        if epoch <= config.rl_warmup_epochs {
            epoch_config.greedy_allocation = true;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        rng.shuffle(&mut order);

        let mut sums = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<EpisodeSample> = chunk
                .iter()
                .map(|&idx| {
                    let s = samples[idx];
                    let entry = split.entry(s.user).unwrap();
                    let full = &entry.train[..s.prefix_len];
                    let start = full.len().saturating_sub(max_len);
                    EpisodeSample {
                        user: s.user,
                        history: full[start..].to_vec(),
                        target: entry.train[s.prefix_len],
                    }
                })
                .collect();
            let breakdown = joint_step(&mut model, &batch, &epoch_config, &mut adam, &mut rng)?;
            sums.l_seq += breakdown.l_seq;
            sums.l_rl += breakdown.l_rl;
            sums.mean_final_h += breakdown.mean_final_h;
            sums.create_rate += breakdown.create_rate;
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        let l_seq = sums.l_seq / nb;
        let l_rl = sums.l_rl / nb;

        let val = eval::evaluate(
            &model,
            &config.eval_setup(),
            dataset,
            split,
            Phase::Valid,
            &EvalOptions::default(),
        )?;
        let record = EpochRecord {
            epoch,
            l_seq,
            l_rl,
            total: l_seq + epoch_config.beta * l_rl,
            val_ndcg5: val.report.ndcg5,
            val_mrr5: val.report.mrr5,
            val_ndcg10: val.report.ndcg10,
            val_mrr10: val.report.mrr10,
            mean_h: sums.mean_final_h / nb,
            create_rate: sums.create_rate / nb,
            wall_ms: started.elapsed().as_millis(),
        };
        if let Some(cb) = progress.as_mut() {
            cb(&record);
        }
        records.push(record);

        if val.report.ndcg10 > best_val {
            best_val = val.report.ndcg10;
            best_model = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        final_model: model,
        best_epoch,
        best_val_ndcg10: if best_val.is_finite() { best_val } else { 0.0 },
        records,
    })
}
