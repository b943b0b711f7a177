//! Full-ranking next-item evaluation with NDCG@K and MRR@K, plus the
//! per-candidate allocation scoring used at prediction time.
//!
//! For each evaluated user the allocator replays the input sequence with
//! argmax actions, then every candidate item is routed by the policy and
//! scored as the inner product with its target sub-sequence representation.
//! The whole catalog is ranked (no sampled negatives); ties break by item
//! id ascending. Metrics use the single-relevant-item convention:
//! `NDCG@k = 1/log2(rank+1)` and `MRR@k = 1/rank` inside the cutoff, else 0.
//!
//! The candidate loop runs on a tape-free f64 path for speed; tests pin it
//! against a per-candidate recomputation through the tape ops.

use std::collections::HashSet;

use crate::allocator::{self, AllocatorConfig, UpdaterKind};
use crate::autodiff::{kernels, Tape};
use crate::dataio::{SequenceDataset, Split};
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::{Model, TapeBinding};
use crate::reward::RewardConfig;

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1 && k >= 1, "rank and k must be >= 1");
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn mrr_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1 && k >= 1, "rank and k must be >= 1");
    if rank <= k {
        1.0 / rank as f64
    } else {
        0.0
    }
}

/// Aggregate ranking metrics in percent, plus allocator statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub mrr5: f64,
    pub mrr10: f64,
    pub users: usize,
    pub mean_final_h: f64,
}

impl MetricReport {
    fn from_ranks(ranks: &[usize], mean_final_h: f64) -> MetricReport {
        let n = ranks.len().max(1) as f64;
        let sum = |f: &dyn Fn(usize) -> f64| ranks.iter().map(|&r| f(r)).sum::<f64>();
        MetricReport {
            ndcg5: 100.0 * sum(&|r| ndcg_at_k(r, 5)) / n,
            ndcg10: 100.0 * sum(&|r| ndcg_at_k(r, 10)) / n,
            mrr5: 100.0 * sum(&|r| mrr_at_k(r, 5)) / n,
            mrr10: 100.0 * sum(&|r| mrr_at_k(r, 10)) / n,
            users: ranks.len(),
            mean_final_h,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "ndcg5={:.4} mrr5={:.4} ndcg10={:.4} mrr10={:.4} users={} mean_h={:.4}",
            self.ndcg5, self.mrr5, self.ndcg10, self.mrr10, self.users, self.mean_final_h
        )
    }
}

/// One allocation decision in a replayed episode, for trace export.
#[derive(Clone, Debug)]
pub struct TraceStep {
    pub step: usize,
    /// 0-based action index; `num_subseqs` before the step means "create".
    pub action: usize,
    pub num_subseqs_after: usize,
    pub probs: Vec<f64>,
}

/// Detached allocator state after replaying an input sequence.
#[derive(Clone, Debug)]
pub struct EpisodeSnapshot {
    pub reps: Vec<Vec<f64>>,
    pub cells: Vec<Option<Vec<f64>>>,
    pub user_vec: Vec<f64>,
    pub members: Vec<Vec<usize>>,
    /// Chosen sub-sequence index per input position.
    pub assignments: Vec<usize>,
    pub trace: Vec<TraceStep>,
}

impl EpisodeSnapshot {
    pub fn num_subseqs(&self) -> usize {
        self.reps.len()
    }
}

/// All configuration evaluation needs besides the model itself.
#[derive(Clone, Copy, Debug)]
pub struct EvalSetup {
    pub encoder: EncoderConfig,
    pub allocator: AllocatorConfig,
    pub reward: RewardConfig,
}

/// Replay an input sequence with argmax actions and detach the state.
pub fn run_argmax_history(
    model: &Model,
    setup: &EvalSetup,
    items: &[usize],
    user: usize,
) -> EpisodeSnapshot {
    let mut tape = Tape::new();
    let bound = TapeBinding::mount(&mut tape, model, false);
    let enc = encoder::encode(&mut tape, model, &bound, items, user, &setup.encoder);
    let mut state = allocator::init_episode(enc.user_vec, &setup.reward);
    let mut assignments = Vec::with_capacity(items.len());
    let mut trace = Vec::with_capacity(items.len());
    for t in 0..items.len() {
        let v = tape.gather(enc.vectors, &[t]);
        let dist = allocator::step_distribution(&mut tape, model, &bound, &setup.allocator, &mut state, v);
        let action = dist.argmax();
        let was_create = dist.create_index() == Some(action);
        allocator::apply_action(
            &mut tape,
            model,
            &bound,
            &setup.allocator,
            &setup.reward,
            &mut state,
            action,
            v,
            t,
        );
        let landed = if was_create { state.num_subseqs() - 1 } else { action };
        assignments.push(landed);
        trace.push(TraceStep {
            step: t,
            action,
            num_subseqs_after: state.num_subseqs(),
            probs: dist.prob_values.clone(),
        });
    }
    EpisodeSnapshot {
        reps: state.reps.iter().map(|&r| tape.value(r).to_vec()).collect(),
        cells: state
            .cells
            .iter()
            .map(|c| c.map(|id| tape.value(id).to_vec()))
            .collect(),
        user_vec: tape.value(state.user_vec).to_vec(),
        members: state.members.clone(),
        assignments,
        trace,
    }
}

/// Tape-free forward of the configured updater for a brand-new
/// sub-sequence seeded with the user embedding.
fn fresh_rep_values(model: &Model, updater: UpdaterKind, user_vec: &[f64], item: &[f64]) -> Vec<f64> {
    let d = model.dims.dim;
    let p = |name: &str| -> &[f64] { &model.params.get(name).values };
    match updater {
        UpdaterKind::AttentionGru => {
            let z = kernels::sigmoid(kernels::dot(item, p("gru.w_z")) + kernels::dot(user_vec, p("gru.u_z")));
            let r = kernels::sigmoid(kernels::dot(item, p("gru.w_r")) + kernels::dot(user_vec, p("gru.u_r")));
            let gated: Vec<f64> = user_vec.iter().map(|&x| r * x).collect();
            let vw = kernels::matmul(item, p("gru.w"), 1, d, d, false);
            let gu = kernels::matmul(&gated, p("gru.u"), 1, d, d, false);
            (0..d)
                .map(|k| z * user_vec[k] + (1.0 - z) * (vw[k] + gu[k]).tanh())
                .collect()
        }
        UpdaterKind::Lstm => {
            let gate = |w: &str, u: &str, b: &str| -> Vec<f64> {
                let vw = kernels::matmul(item, p(w), 1, d, d, false);
                let pu = kernels::matmul(user_vec, p(u), 1, d, d, false);
                let bias = p(b);
                (0..d).map(|k| vw[k] + pu[k] + bias[k]).collect()
            };
            let i: Vec<f64> = gate("lstm.w_i", "lstm.u_i", "lstm.b_i").iter().map(|&x| kernels::sigmoid(x)).collect();
            let o: Vec<f64> = gate("lstm.w_o", "lstm.u_o", "lstm.b_o").iter().map(|&x| kernels::sigmoid(x)).collect();
            let c: Vec<f64> = gate("lstm.w_c", "lstm.u_c", "lstm.b_c").iter().map(|&x| x.tanh()).collect();
            // fresh cell is zero, so the forget path contributes nothing
            (0..d).map(|k| o[k] * (i[k] * c[k]).tanh()).collect()
        }
        UpdaterKind::AveragePooling => item.to_vec(),
    }
}

/// Route one candidate through the policy (argmax) and return its score
/// plus the chosen sub-sequence index.
fn score_one_candidate(
    model: &Model,
    setup: &EvalSetup,
    snapshot: &EpisodeSnapshot,
    item: &[f64],
) -> (f64, usize) {
    let d = model.dims.dim;
    let h = snapshot.num_subseqs();
    let p = |name: &str| -> &[f64] { &model.params.get(name).values };

    // global state
    let mut weights: Vec<f64> = snapshot.reps.iter().map(|r| kernels::dot(r, item)).collect();
    kernels::softmax_row(&mut weights);
    let mut joined = vec![0.0; 2 * d];
    for (w, rep) in weights.iter().zip(snapshot.reps.iter()) {
        for k in 0..d {
            joined[k] += w * rep[k];
        }
    }
    joined[d..].copy_from_slice(item);
    let global = kernels::matmul(&joined, p("state.w0"), 1, 2 * d, d, false);
    let gs = kernels::matmul(&global, p("state.w_s"), 1, d, d, false);

    // policy score per sub-sequence
    let h2 = model.dims.policy_hidden();
    let mut logits = Vec::with_capacity(h + 1);
    for rep in &snapshot.reps {
        let ps = kernels::matmul(rep, p("state.w_p"), 1, d, d, false);
        let mut s = gs.clone();
        s.extend_from_slice(&ps);
        let mut l1 = kernels::matmul(&s, p("policy.w1"), 1, 2 * d, d, false);
        for (x, b) in l1.iter_mut().zip(p("policy.b1")) {
            *x = (*x + b).max(0.0);
        }
        let mut l2 = kernels::matmul(&l1, p("policy.w2"), 1, d, h2, false);
        for (x, b) in l2.iter_mut().zip(p("policy.b2")) {
            *x += b;
        }
        let l3 = kernels::dot(&l2, p("policy.w3")) + p("policy.b3")[0];
        logits.push(kernels::sigmoid(l3));
    }
    if h < setup.allocator.h_max {
        logits.push(setup.allocator.epsilon);
    }
    let mut probs = logits;
    kernels::softmax_row(&mut probs);
    let mut action = 0;
    for (i, &pv) in probs.iter().enumerate() {
        if pv > probs[action] {
            action = i;
        }
    }
    if action == h {
        // create: score against the user embedding updated with the item
        let rep = fresh_rep_values(model, setup.allocator.updater, &snapshot.user_vec, item);
        (kernels::dot(&rep, item), action)
    } else {
        (kernels::dot(&snapshot.reps[action], item), action)
    }
}

/// Score every candidate against the replayed state. Returns scores
/// aligned with `candidates`.
pub fn score_candidates(
    model: &Model,
    setup: &EvalSetup,
    snapshot: &EpisodeSnapshot,
    candidates: &[usize],
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Config("empty candidate set".into()));
    }
    let d = model.dims.dim;
    let table = &model.params.get("item_embedding").values;
    Ok(candidates
        .iter()
        .map(|&c| score_one_candidate(model, setup, snapshot, &table[c * d..(c + 1) * d]).0)
        .collect())
}

/// 1-based rank of `target` under descending score with ties broken by
/// item id ascending. `excluded` items are skipped (the target never is).
pub fn rank_of_target(scores: &[f64], target: usize, excluded: Option<&HashSet<usize>>) -> usize {
    let ts = scores[target];
    let mut rank = 1;
    for (j, &s) in scores.iter().enumerate() {
        if j == target {
            continue;
        }
        if let Some(ex) = excluded {
            if ex.contains(&j) {
                continue;
            }
        }
        if s > ts || (s == ts && j < target) {
            rank += 1;
        }
    }
    rank
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Valid,
    Test,
}

impl Phase {
    pub fn parse(s: &str) -> Result<Phase> {
        match s {
            "valid" => Ok(Phase::Valid),
            "test" => Ok(Phase::Test),
            other => Err(Error::Config(format!("unknown phase '{other}' (expected valid, test)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    /// Exclude items from the user's input sequence (except the target)
    /// from candidate ranking. Off by default.
    pub exclude_seen: bool,
    pub collect_ranks: bool,
    pub collect_traces: bool,
}

pub struct EvalOutcome {
    pub report: MetricReport,
    pub popularity: MetricReport,
    /// (user, rank) pairs when requested.
    pub ranks: Option<Vec<(usize, usize)>>,
    /// (user, trace) pairs when requested.
    pub traces: Option<Vec<(usize, Vec<TraceStep>)>>,
}

/// Global training-set item frequencies; the sanity-floor ranker.
pub fn popularity_scores(dataset: &SequenceDataset, split: &Split) -> Vec<f64> {
    let mut counts = vec![0.0; dataset.num_items()];
    for entry in split.users.iter().flatten() {
        for &item in &entry.train {
            counts[item] += 1.0;
        }
    }
    counts
}

/// Full-catalog ranking evaluation of the model and the popularity
/// baseline on the same split.
pub fn evaluate(
    model: &Model,
    setup: &EvalSetup,
    dataset: &SequenceDataset,
    split: &Split,
    phase: Phase,
    opts: &EvalOptions,
) -> Result<EvalOutcome> {
    let max_len = model.dims.max_len;
    let pop = popularity_scores(dataset, split);
    let mut ranks = Vec::new();
    let mut pop_ranks = Vec::new();
    let mut per_user = opts.collect_ranks.then(Vec::new);
    let mut traces = opts.collect_traces.then(Vec::new);
    let mut h_sum = 0.0;
    for (user, entry) in split.users.iter().enumerate() {
        let Some(entry) = entry else { continue };
        let (mut input, target) = match phase {
            Phase::Valid => (entry.train.clone(), entry.valid_target),
            Phase::Test => (split.test_input(user).unwrap(), entry.test_target),
        };
        if input.len() > max_len {
            input = input[input.len() - max_len..].to_vec();
        }
        let snapshot = run_argmax_history(model, setup, &input, user);
        let candidates: Vec<usize> = (0..dataset.num_items()).collect();
        let scores = score_candidates(model, setup, &snapshot, &candidates)?;
        let excluded: Option<HashSet<usize>> = opts.exclude_seen.then(|| {
            input.iter().copied().filter(|&i| i != target).collect()
        });
        let rank = rank_of_target(&scores, target, excluded.as_ref());
        ranks.push(rank);
        pop_ranks.push(rank_of_target(&pop, target, excluded.as_ref()));
        h_sum += snapshot.num_subseqs() as f64;
        if let Some(v) = per_user.as_mut() {
            v.push((user, rank));
        }
        if let Some(v) = traces.as_mut() {
            v.push((user, snapshot.trace.clone()));
        }
    }
    let mean_h = h_sum / ranks.len().max(1) as f64;
    Ok(EvalOutcome {
        report: MetricReport::from_ranks(&ranks, mean_h),
        popularity: MetricReport::from_ranks(&pop_ranks, 0.0),
        ranks: per_user,
        traces,
    })
}
